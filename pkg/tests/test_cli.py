"""Command-line behavior: exit codes, config layering, and output files."""

import subprocess
import sys

import numpy as np
import pytest

import bepredict.cli as cli
import bepredict.data as bd
from bepredict.numcore import set_debug_checks

ENUM_SEQ = "AACGTCCGTTCGGTCCGTCG"


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One synthetic screen plus trained checkpoints, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    screen = root / "screen"
    assert cli.main([
        "synth", "--editors", "abe1:ABE,cbe1:CBE", "--refs", "12",
        "--reads", "300", "--seed", "3", "--mode", "protospacer_pam",
        "--out", str(screen),
    ]) == 0

    small_model = [
        "--d-e", "8", "--d", "8", "--heads", "2", "--blocks", "1",
        "--cycle-len", "2", "--base-lr", "1e-3",
    ]
    two_stage = root / "two_stage"
    assert cli.main([
        "train", "--library", str(screen / "library.abe1.tsv"),
        "--out", str(two_stage), "--seed", "1",
        "--efficiency-epochs", "3", "--proportion-epochs", "2",
        "--efficiency-batch", "16", "--proportion-batch", "64", *small_model,
    ]) == 0

    one_stage = root / "one_stage"
    assert cli.main([
        "train", "--library", str(screen / "library.abe1.tsv"),
        "--variant", "one-stage", "--out", str(one_stage), "--seed", "1",
        "--proportion-epochs", "2", "--proportion-batch", "64", *small_model,
    ]) == 0

    multi = root / "multi"
    assert cli.main([
        "train", "--library", str(screen / "library.abe1.tsv"),
        "--library", str(screen / "library.cbe1.tsv"),
        "--variant", "multi-task", "--out", str(multi), "--seed", "1",
        "--efficiency-epochs", "2", "--proportion-epochs", "1",
        "--efficiency-batch", "8", "--proportion-batch", "32", *small_model,
    ]) == 0

    return {
        "root": root,
        "screen": screen,
        "library": screen / "library.abe1.tsv",
        "truth": screen / "truth.tsv",
        "two_stage": two_stage / "model.ckpt",
        "two_stage_log": two_stage / "training_log.tsv",
        "one_stage": one_stage / "model.ckpt",
        "one_stage_log": one_stage / "training_log.tsv",
        "multi": multi / "model.ckpt",
        "multi_dir": multi,
    }


# --- synth -------------------------------------------------------------------


def test_synth_outputs(work, capsys):
    screen = work["screen"]
    assert (screen / "library.abe1.tsv").exists()
    assert (screen / "library.cbe1.tsv").exists()
    assert (screen / "truth.tsv").exists()
    loaded = bd.load_library(work["library"])
    assert list(loaded) == ["abe1"]
    assert len(loaded["abe1"]) == 12
    for entry in loaded["abe1"].entries:
        assert int(entry.read_counts.sum()) == 300


def test_synth_prints_summary_table(tmp_path, capsys):
    code, out, _ = run(
        capsys, "synth", "--editors", "1", "--refs", "10", "--reads", "100",
        "--out", str(tmp_path),
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split("\t") == [
        "editor", "#ins", "#refseq", "#outcome", "wildtype_fraction", "mean_proportion"
    ]
    assert lines[1].startswith("ABE-sim0\t")
    assert "wrote 1 library files" in lines[-1]


def test_synth_is_byte_deterministic(tmp_path, capsys):
    args = ["synth", "--editors", "1", "--refs", "10", "--reads", "120", "--seed", "9"]
    for name in ("a", "b"):
        assert run(capsys, *args, "--out", str(tmp_path / name))[0] == 0
    for fname in ("library.ABE-sim0.tsv", "truth.tsv"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()


def test_synth_floors(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--reads", "99", "--out", str(tmp_path))
    assert code == 2 and err.startswith("ERROR 2:")
    code, _, err = run(capsys, "synth", "--refs", "9", "--out", str(tmp_path))
    assert code == 2 and "refs" in err


# --- config layering -----------------------------------------------------------


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("refs = 25\nreads = 150  # trailing comment\n")
    code, _, _ = run(
        capsys, "synth", "--config", str(cfg), "--editors", "1",
        "--refs", "10", "--out", str(tmp_path / "out"),
    )
    assert code == 0
    loaded = bd.load_library(tmp_path / "out" / "library.ABE-sim0.tsv")
    dataset = loaded["ABE-sim0"]
    assert len(dataset) == 10  # flag beat the file
    assert int(dataset.entries[0].read_counts.sum()) == 150  # file beat the default


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("refz = 5\n")
    code, _, err = run(capsys, "synth", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2
    assert "ERROR 2:" in err and "bad.cfg:1" in err and "unknown config key" in err

    bad.write_text("refs = 20\nrefs = 30\n")
    code, _, err = run(capsys, "synth", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2 and "bad.cfg:2" in err and "duplicate" in err

    bad.write_text("reads = plenty\n")
    code, _, err = run(capsys, "synth", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2 and "reads" in err

    code, _, err = run(capsys, "synth", "--config", str(tmp_path / "missing.cfg"),
                       "--out", str(tmp_path))
    assert code == 2 and "cannot read config file" in err


def test_bad_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--refs", "minus-one"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("ERROR 2:")

    with pytest.raises(SystemExit) as exc:
        cli.main(["destroy"])
    assert exc.value.code == 2


def test_invalid_combinations_exit_2(tmp_path, capsys):
    # inverted window dies in flag parsing, still with the ERROR 2 contract
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--window", "9:3", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("ERROR 2:")
    cfg = tmp_path / "frac.cfg"
    cfg.write_text("train_fraction = 0.5\nval_fraction = 0.1\ntest_fraction = 0.1\n")
    code, _, err = run(capsys, "synth", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 2 and "sum to 1" in err


# --- train ---------------------------------------------------------------------


def test_train_two_stage_outputs(work):
    assert work["two_stage"].exists()
    lines = work["two_stage_log"].read_text().splitlines()
    assert lines[0].split("\t") == list(cli.betrain.LOG_COLUMNS)
    # 3 efficiency epochs then 2 proportion epochs, train+val rows each
    epochs = [(int(l.split("\t")[0]), l.split("\t")[1]) for l in lines[1:]]
    assert epochs == (
        [(e, s) for e in (1, 2, 3) for s in ("train", "val")]
        + [(e, s) for e in (1, 2) for s in ("train", "val")]
    )
    model, header = bd.load_checkpoint(work["two_stage"], expect_variant="two_stage")
    assert header["config"]["variant"] == "two-stage"
    assert header["seed"] == 1


def test_train_one_stage_outputs(work):
    lines = work["one_stage_log"].read_text().splitlines()
    assert len(lines) == 1 + 2 * 2
    bd.load_checkpoint(work["one_stage"], expect_variant="one_stage")


def test_train_multitask_outputs(work):
    for editor in ("abe1", "cbe1"):
        log = work["multi_dir"] / f"training_log.{editor}.tsv"
        assert log.exists()
        lines = log.read_text().splitlines()
        assert len(lines) == 1 + 2 * 2 + 2 * 1
    bd.load_checkpoint(work["multi"], expect_variant="multi_task")


def test_train_multitask_needs_two_editors(work, tmp_path, capsys):
    code, _, err = run(
        capsys, "train", "--library", str(work["library"]),
        "--variant", "multi-task", "--out", str(tmp_path),
    )
    assert code == 2 and "at least 2 editors" in err


def test_train_explicit_indivisible_batch_exits_2(work, tmp_path, capsys):
    code, _, err = run(
        capsys, "train", "--library", str(work["library"]),
        "--library", str(work["screen"] / "library.cbe1.tsv"),
        "--variant", "multi-task", "--out", str(tmp_path),
        "--efficiency-batch", "9", "--d-e", "8", "--d", "8", "--heads", "2",
        "--blocks", "1",
    )
    assert code == 2 and "divisible" in err


def test_train_mode_mismatch_exits_2(work, tmp_path, capsys):
    code, _, err = run(
        capsys, "train", "--library", str(work["library"]), "--mode", "full",
        "--out", str(tmp_path),
    )
    assert code == 2 and "does not match library mode" in err


def test_train_missing_library_exits_3(tmp_path, capsys):
    code, _, err = run(
        capsys, "train", "--library", str(tmp_path / "nope.tsv"), "--out", str(tmp_path)
    )
    assert code == 3 and err.startswith("ERROR 3:")


def test_train_divergence_exits_4(work, tmp_path, capsys):
    with np.errstate(over="ignore"):
        code, _, err = run(
            capsys, "train", "--library", str(work["library"]),
            "--out", str(tmp_path), "--l2-lambda", "1e308",
            "--d-e", "8", "--d", "8", "--heads", "2", "--blocks", "1",
            "--efficiency-epochs", "1", "--proportion-epochs", "1",
        )
    assert code == 4
    assert err.startswith("ERROR 4:") and "diverged" in err


# --- predict ---------------------------------------------------------------------


def parse_predict(out):
    lines = out.splitlines()
    assert lines[0] == "reference_id\toutcome_sequence\tis_wildtype\tprobability"
    rows = []
    for line in lines[1:]:
        ref_id, bases, wild, prob = line.split("\t")
        rows.append((ref_id, bases, int(wild), float(prob)))
    return rows


def test_predict_inline_distribution(work, capsys):
    code, out, _ = run(
        capsys, "predict", "--checkpoint", str(work["two_stage"]),
        "--inline", ENUM_SEQ + "TGGA",
    )
    assert code == 0
    rows = parse_predict(out)
    assert len(rows) == 4  # two editable As
    assert sum(r[3] for r in rows) == pytest.approx(1.0, abs=1e-12)
    probs = [r[3] for r in rows]
    assert probs == sorted(probs, reverse=True)
    assert sum(r[2] for r in rows) == 1


def test_predict_no_editable_positions(work, capsys):
    code, out, _ = run(
        capsys, "predict", "--checkpoint", str(work["two_stage"]),
        "--inline", "C" * 20 + "TGGA",
    )
    assert code == 0
    rows = parse_predict(out)
    assert len(rows) == 1
    assert rows[0][2] == 1 and rows[0][3] == 1.0


def test_predict_sequence_file_ids(work, tmp_path, capsys):
    seqs = tmp_path / "seqs.txt"
    seqs.write_text(
        "# comment line\n"
        f"guide_a {ENUM_SEQ}TGGA\n"
        f"{ENUM_SEQ}TGGA\n"
    )
    out_file = tmp_path / "pred.tsv"
    code, out, _ = run(
        capsys, "predict", "--checkpoint", str(work["two_stage"]),
        "--sequences", str(seqs), "--out", str(out_file),
    )
    assert code == 0 and "wrote" in out
    rows = parse_predict(out_file.read_text())
    assert {r[0] for r in rows} == {"guide_a", "seq3"}

    seqs.write_text("a b c\n")
    code, _, err = run(
        capsys, "predict", "--checkpoint", str(work["two_stage"]),
        "--sequences", str(seqs),
    )
    assert code == 3 and "expected [id] sequence" in err


def test_predict_window_restriction(work, capsys):
    code, out, _ = run(
        capsys, "predict", "--checkpoint", str(work["two_stage"]),
        "--inline", ENUM_SEQ + "TGGA", "--window", "1:1",
    )
    assert code == 0
    assert len(parse_predict(out)) == 2  # only the first A stays editable


def test_predict_parallel_workers_match_serial(work, capsys):
    argv = ["predict", "--checkpoint", str(work["two_stage"]),
            "--inline", f"{ENUM_SEQ}TGGA,{'A' * 3 + 'C' * 17}TGGA"]
    code, serial, _ = run(capsys, *argv)
    assert code == 0
    code, parallel, _ = run(capsys, *argv, "--workers", "2")
    assert code == 0
    assert parallel == serial


def test_predict_multitask_requires_editor(work, capsys):
    code, _, err = run(
        capsys, "predict", "--checkpoint", str(work["multi"]),
        "--inline", ENUM_SEQ + "TGGA",
    )
    assert code == 2 and "--editor" in err
    code, out, _ = run(
        capsys, "predict", "--checkpoint", str(work["multi"]),
        "--inline", ENUM_SEQ + "TGGA", "--editor", "abe1",
    )
    assert code == 0
    assert sum(r[3] for r in parse_predict(out)) == pytest.approx(1.0, abs=1e-12)


def test_predict_unknown_editor_exits_3(work, capsys):
    code, _, err = run(
        capsys, "predict", "--checkpoint", str(work["multi"]),
        "--inline", ENUM_SEQ + "TGGA", "--editor", "nope",
    )
    assert code == 3


def test_predict_corrupt_checkpoint_exits_3(work, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    code, _, err = run(
        capsys, "predict", "--checkpoint", str(bad), "--inline", ENUM_SEQ + "TGGA"
    )
    assert code == 3 and "magic" in err

    code, _, err = run(
        capsys, "predict", "--checkpoint", str(tmp_path / "missing.ckpt"),
        "--inline", ENUM_SEQ + "TGGA",
    )
    assert code == 3


def test_predict_bad_sequence_exits_3(work, capsys):
    code, _, err = run(
        capsys, "predict", "--checkpoint", str(work["two_stage"]),
        "--inline", "ACGTXXACGT",
    )
    assert code == 3


# --- evaluate -------------------------------------------------------------------


def test_evaluate_report(work, tmp_path, capsys):
    report_path = tmp_path / "report.tsv"
    scatter_path = tmp_path / "scatter.tsv"
    code, out, _ = run(
        capsys, "evaluate", "--checkpoint", str(work["two_stage"]),
        "--library", str(work["library"]),
        "--out", str(report_path), "--scatter", str(scatter_path),
    )
    assert code == 0
    lines = report_path.read_text().splitlines()
    assert lines[0] == "editor\tview\tn\tpearson\tspearman"
    views = [line.split("\t")[1] for line in lines[1:]]
    assert views == ["all", "wildtype", "nonwild"]

    import bepredict.evaluation as ev
    rows = ev.load_scatter(scatter_path)
    assert len(rows) == int(lines[1].split("\t")[2])  # n of the "all" view


def test_evaluate_views_filter(work, capsys):
    code, out, _ = run(
        capsys, "evaluate", "--checkpoint", str(work["two_stage"]),
        "--library", str(work["library"]), "--views", "wildtype",
    )
    assert code == 0
    lines = out.splitlines()
    assert [l.split("\t")[1] for l in lines[1:]] == ["wildtype"]

    code, _, err = run(
        capsys, "evaluate", "--checkpoint", str(work["two_stage"]),
        "--library", str(work["library"]), "--views", "sideways",
    )
    assert code == 2 and "unknown view" in err


def test_evaluate_against_truth(work, capsys):
    code, out, _ = run(
        capsys, "evaluate", "--checkpoint", str(work["two_stage"]),
        "--library", str(work["library"]), "--truth", str(work["truth"]),
        "--per-reference", "--views", "all,nonwild",
    )
    assert code == 0
    for line in out.splitlines()[1:]:
        _, _, n, pearson_s, spearman_s = line.split("\t")
        assert int(n) > 0

    # wildtype rows are unique per reference, so per-reference wildtype
    # correlations are degenerate by construction
    code, _, err = run(
        capsys, "evaluate", "--checkpoint", str(work["two_stage"]),
        "--library", str(work["library"]), "--per-reference", "--views", "wildtype",
    )
    assert code == 3 and "per-reference" in err


def test_evaluate_multitask_covers_all_editors(work, tmp_path, capsys):
    merged = tmp_path / "merged.tsv"
    datasets = {}
    for name in ("library.abe1.tsv", "library.cbe1.tsv"):
        datasets.update(bd.load_library(work["screen"] / name))
    bd.write_library(datasets, merged)
    code, out, _ = run(
        capsys, "evaluate", "--checkpoint", str(work["multi"]),
        "--library", str(merged), "--views", "all",
    )
    assert code == 0
    editors = [l.split("\t")[0] for l in out.splitlines()[1:]]
    assert editors == ["abe1", "cbe1"]


# --- enumerate ------------------------------------------------------------------


def test_enumerate_golden(capsys):
    code, out, _ = run(capsys, "enumerate", "--sequence", ENUM_SEQ, "--kind", "ABE")
    assert code == 0
    assert out == (
        "outcome_sequence\tn_edits\tedited_positions\n"
        f"{ENUM_SEQ}\t0\t\n"
        f"G{ENUM_SEQ[1:]}\t1\t1\n"
        f"{ENUM_SEQ[0]}G{ENUM_SEQ[2:]}\t1\t2\n"
        f"GG{ENUM_SEQ[2:]}\t2\t1,2\n"
    )


def test_enumerate_window_and_kind(capsys):
    code, out, _ = run(
        capsys, "enumerate", "--sequence", ENUM_SEQ, "--kind", "ABE",
        "--window", "2:20",
    )
    assert code == 0
    assert len(out.splitlines()) == 1 + 2  # only position 2 stays editable

    code, out, _ = run(capsys, "enumerate", "--sequence", "ACCT" * 5, "--kind", "CBE")
    assert code == 0
    rows = out.splitlines()[1:]
    # C -> T chemistry: every edited row swaps C for T
    assert all("G" not in r.split("\t")[0] for r in rows)


def test_enumerate_accepts_explicit_mode(capsys):
    # 24nt input only parses once the flag widens the representation
    code, out, _ = run(
        capsys, "enumerate", "--sequence", ENUM_SEQ + "TGGA", "--kind", "ABE",
        "--mode", "protospacer_pam",
    )
    assert code == 0
    rows = out.splitlines()[1:]
    assert all(len(r.split("\t")[0]) == 24 for r in rows)

    code, _, err = run(capsys, "enumerate", "--sequence", ENUM_SEQ + "TGGA",
                       "--kind", "ABE")
    assert code == 3  # default mode expects a bare 20nt protospacer


def test_enumerate_rejects_overfull_window(capsys):
    code, _, err = run(capsys, "enumerate", "--sequence", "A" * 20, "--kind", "ABE")
    assert code == 3 and "narrow the window" in err


def test_enumerate_debug_checks_flag(capsys):
    try:
        code, out, _ = run(
            capsys, "enumerate", "--sequence", ENUM_SEQ, "--kind", "ABE",
            "--debug-checks",
        )
        assert code == 0
    finally:
        set_debug_checks(False)


# --- console script ---------------------------------------------------------------


def test_console_script_round_trip(work, tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "bepredict.cli", "enumerate",
         "--sequence", ENUM_SEQ, "--kind", "ABE"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert result.stdout.startswith("outcome_sequence")

    result = subprocess.run(
        ["bepredict", "predict", "--checkpoint", str(work["two_stage"]),
         "--inline", ENUM_SEQ + "TGGA"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert sum(r[3] for r in parse_predict(result.stdout)) == pytest.approx(1.0, abs=1e-12)

    result = subprocess.run(["bepredict"], capture_output=True, text=True)
    assert result.returncode == 2
    assert result.stderr.startswith("ERROR 2:")
