"""Correlation metrics, evaluation views, and report/scatter files."""

import numpy as np
import pytest
import scipy.stats

import bepredict.evaluation as ev
import bepredict.models as md
import bepredict.nn as nn
from bepredict.numcore import RngStream

TINY = nn.EncoderConfig(d_e=8, d=8, heads=2, blocks=1)


def abe_meta():
    return md.ModelMeta(mode="protospacer_pam", window=(1, 20),
                        editor_id="ABE-t0", editor_kind="ABE", dtype="float64")


# --- correlation metrics ---------------------------------------------------


def test_rank_average_hand_values():
    assert ev.rank_average(np.asarray([3.0, 1.0, 2.0])).tolist() == [3.0, 1.0, 2.0]
    assert ev.rank_average(np.asarray([1.0, 2.0, 2.0, 5.0])).tolist() == [1.0, 2.5, 2.5, 4.0]
    assert ev.rank_average(np.asarray([7.0, 7.0, 7.0])).tolist() == [2.0, 2.0, 2.0]


def test_rank_average_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.integers(0, 6, size=15).astype(np.float64)  # plenty of ties
        assert np.allclose(ev.rank_average(x), scipy.stats.rankdata(x))


def test_pearson_hand_values():
    assert ev.pearson(np.asarray([1.0, 2, 3]), np.asarray([2.0, 4, 6])) == pytest.approx(1.0)
    assert ev.pearson(np.asarray([1.0, 2, 3]), np.asarray([3.0, 2, 1])) == pytest.approx(-1.0)
    x = np.asarray([1.0, 2.0, 4.0, 7.0])
    y = np.asarray([2.0, 1.0, 5.0, 6.0])
    assert ev.pearson(x, y) == pytest.approx(scipy.stats.pearsonr(x, y).statistic, abs=1e-12)


def test_pearson_degenerate_inputs():
    with pytest.raises(ev.DegenerateInput):
        ev.pearson(np.asarray([1.0]), np.asarray([2.0]))
    with pytest.raises(ev.DegenerateInput):
        ev.pearson(np.asarray([1.0, 1.0]), np.asarray([1.0, 2.0]))
    with pytest.raises(ev.DegenerateInput):
        ev.pearson(np.asarray([1.0, 2.0]), np.asarray([1.0, 2.0, 3.0]))


def test_spearman_matches_scipy():
    assert ev.spearman(np.asarray([1.0, 2, 3]), np.asarray([1.0, 8, 27])) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.integers(0, 5, size=12).astype(np.float64)
        y = rng.normal(size=12)
        assert ev.spearman(x, y) == pytest.approx(
            scipy.stats.spearmanr(x, y).statistic, abs=1e-12
        )


# --- views -----------------------------------------------------------------


def make_rows():
    # two references, each one wild-type row plus two edited rows
    def row(ref, out, wild, pred, obs):
        return ev.PredictionRow("ABE-t0", ref, out, wild, pred, obs)

    return [
        row("r1", "AAAA", True, 0.5, 0.4),
        row("r1", "GAAA", False, 0.3, 0.5),
        row("r1", "AGAA", False, 0.2, 0.1),
        row("r2", "CCAA", True, 0.7, 0.8),
        row("r2", "CCGA", False, 0.2, 0.15),
        row("r2", "CCAG", False, 0.1, 0.05),
    ]


def test_view_vectors():
    rows = make_rows()
    pred, obs, ref = ev._view_vectors(rows, "all")
    assert len(pred) == 6 and len(np.unique(ref)) == 2

    pred, obs, _ = ev._view_vectors(rows, "wildtype")
    assert pred.tolist() == [0.5, 0.7] and obs.tolist() == [0.4, 0.8]

    pred, obs, ref = ev._view_vectors(rows, "nonwild")
    for i in range(2):
        assert pred[ref == i].sum() == pytest.approx(1.0, abs=1e-12)
        assert obs[ref == i].sum() == pytest.approx(1.0, abs=1e-12)
    # r1 edited rows: pred 0.3/0.2 -> 0.6/0.4, observed 0.5/0.1 -> 5/6, 1/6
    assert pred[0] == pytest.approx(0.6)
    assert obs[0] == pytest.approx(5 / 6)

    with pytest.raises(ValueError, match="unknown view"):
        ev._view_vectors(rows, "everything")
    with pytest.raises(ev.EmptyView):
        ev._view_vectors([r for r in rows if not r.is_wildtype], "wildtype")


def test_view_correlations_pooled_and_per_reference():
    rows = make_rows()
    n, p, s = ev.view_correlations(rows, "all")
    assert n == 6
    pred = np.asarray([r.predicted for r in rows])
    obs = np.asarray([r.observed for r in rows])
    assert p == pytest.approx(ev.pearson(pred, obs))

    # per-reference: r1 rows correlate +1, r2 rows -1 after construction
    def row(ref, out, pred, obs):
        return ev.PredictionRow("e", ref, out, False, pred, obs)

    crafted = [
        row("r1", "A", 0.1, 0.2), row("r1", "B", 0.2, 0.4), row("r1", "C", 0.3, 0.9),
        row("r2", "A", 0.1, 0.9), row("r2", "B", 0.2, 0.4), row("r2", "C", 0.3, 0.2),
        row("r3", "A", 0.5, 0.5), row("r3", "B", 0.6, 0.6),  # too few rows, skipped
    ]
    n, p, s = ev.view_correlations(crafted, "all", per_reference=True)
    assert n == 2
    assert s == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(ev.DegenerateInput):
        ev.view_correlations(crafted[-2:], "all", per_reference=True)


# --- prediction rows ---------------------------------------------------------


@pytest.fixture(scope="module")
def two_stage_model():
    return md.init_two_stage(abe_meta(), TINY, RngStream(8, "eval"),
                             channels=(8, 16), hidden=8)


def test_two_stage_prediction_rows_compose(tiny_dataset, two_stage_model):
    rows = ev.prediction_rows(two_stage_model, tiny_dataset)
    assert len(rows) == sum(len(e.outcomes) for e in tiny_dataset.entries)
    by_ref = {}
    for r in rows:
        by_ref.setdefault(r.reference_id, []).append(r)
    for entry in tiny_dataset.entries:
        got = by_ref[entry.reference_id]
        p_edited = md.efficiency_forward(
            two_stage_model.efficiency, entry.reference
        )
        wild = [r for r in got if r.is_wildtype]
        assert len(wild) == 1
        assert wild[0].predicted == pytest.approx(1.0 - p_edited, abs=1e-9)
        edited_sum = sum(r.predicted for r in got if not r.is_wildtype)
        assert edited_sum == pytest.approx(p_edited, abs=1e-9)
        assert wild[0].observed == pytest.approx(float(entry.wildtype_proportion))


def test_one_stage_prediction_rows_normalize(tiny_dataset):
    model = md.init_one_stage(abe_meta(), TINY, RngStream(9, "one"))
    rows = ev.prediction_rows(model, tiny_dataset.subset(range(5)))
    by_ref = {}
    for r in rows:
        by_ref.setdefault(r.reference_id, []).append(r.predicted)
    for preds in by_ref.values():
        assert sum(preds) == pytest.approx(1.0, abs=1e-12)


def test_truth_substitution(tiny_screen, tiny_dataset, two_stage_model):
    truth = {
        (r.editor_id, r.reference_id, r.outcome_sequence): r.probability
        for r in tiny_screen.truth
    }
    rows = ev.prediction_rows(two_stage_model, tiny_dataset, truth=truth)
    for r in rows:
        assert r.observed == truth[(r.editor_id, r.reference_id, r.outcome_sequence)]
    truth.pop((rows[0].editor_id, rows[0].reference_id, rows[0].outcome_sequence))
    with pytest.raises(ev.MissingTruth):
        ev.prediction_rows(two_stage_model, tiny_dataset, truth=truth)


def test_multitask_prediction_dispatch(tiny_screen):
    meta = md.ModelMeta(mode="protospacer_pam", window=(1, 20), dtype="float64")
    kinds = {e: d.editor_kind for e, d in tiny_screen.datasets.items()}
    model = md.init_multitask(meta, kinds, TINY, RngStream(10, "mt"),
                              shared_channels=(8,), branch_channels=(16,), hidden=8)
    dataset = tiny_screen.datasets["CBE-t0"].subset(range(4))
    rows = ev.prediction_rows(model, dataset)
    view_rows = ev.prediction_rows(model.single_task_view("CBE-t0"), dataset)
    assert [(r.outcome_sequence, r.predicted) for r in rows] == [
        (r.outcome_sequence, r.predicted) for r in view_rows
    ]


# --- reports and scatter files ------------------------------------------------


def test_evaluate_report_structure(tiny_dataset, two_stage_model):
    report = ev.evaluate(two_stage_model, tiny_dataset)
    assert [(r.editor_id, r.view) for r in report.rows] == [
        ("ABE-t0", v) for v in ev.VIEWS
    ]
    total = sum(len(e.outcomes) for e in tiny_dataset.entries)
    n_wild = sum(
        1 for e in tiny_dataset.entries for o in e.outcomes if o.is_wildtype
    )
    assert report.find("ABE-t0", "all").n == total
    assert report.find("ABE-t0", "wildtype").n == n_wild
    assert report.find("ABE-t0", "nonwild").n == total - n_wild
    for row in report.rows:
        assert -1.0 <= row.pearson <= 1.0 and -1.0 <= row.spearman <= 1.0
    with pytest.raises(KeyError):
        report.find("ABE-t0", "everything")


def test_report_tsv_golden(tmp_path):
    report = ev.EvalReport([
        ev.ReportRow("ABE-t0", "all", 120, 0.912345678, 0.25),
        ev.ReportRow("ABE-t0", "wildtype", 40, np.nan, -0.5),
    ])
    path = tmp_path / "report.tsv"
    ev.write_report(report, path)
    assert path.read_text() == (
        "editor\tview\tn\tpearson\tspearman\n"
        "ABE-t0\tall\t120\t0.912346\t0.250000\n"
        "ABE-t0\twildtype\t40\tnan\t-0.500000\n"
    )


def test_scatter_round_trip(tmp_path):
    rows = make_rows()
    rows[0].predicted = 1 / 3  # not representable in short decimal
    path = tmp_path / "scatter.tsv"
    ev.export_scatter(rows, path)
    assert path.read_text().splitlines()[0] == "\t".join(ev.SCATTER_COLUMNS)
    assert ev.load_scatter(path) == rows
    path.write_text("bogus\theader\n")
    with pytest.raises(ValueError, match="header"):
        ev.load_scatter(path)
