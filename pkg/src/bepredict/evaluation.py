"""Correlation metrics and the evaluation protocol.

Predictions are compared against observed proportions (or oracle
probabilities) per outcome row.  One prediction pass per dataset feeds all
three views:

* all: every observed outcome row as-is
* wildtype: only wild-type rows (one per reference)
* nonwild: edited rows only, with both prediction and target renormalized
  over the observed non-wild support of each reference

Correlations pool rows across references by default; per-reference mode
averages the correlation over references instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models, seqcore as sq
from .data import LibraryDataset
from .numcore import Tensor

VIEWS = ("all", "wildtype", "nonwild")


class DegenerateInput(ValueError):
    """Correlation is undefined: fewer than two points or zero variance."""


class EmptyView(ValueError):
    """An evaluation view matched no prediction rows."""


class MissingTruth(KeyError):
    """The truth table lacks an observed outcome row."""


# ---------------------------------------------------------------------------
# correlation metrics


def rank_average(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, with ties sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; raises DegenerateInput when undefined."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput(f"need matching 1-D arrays, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DegenerateInput("need at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        raise DegenerateInput("zero variance input")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman correlation: Pearson on average ranks."""
    return pearson(rank_average(x), rank_average(y))


# ---------------------------------------------------------------------------
# prediction rows


@dataclass
class PredictionRow:
    editor_id: str
    reference_id: str
    outcome_sequence: str
    is_wildtype: bool
    predicted: float
    observed: float


def _batched_log_scores(
    proportion: models.ProportionModel,
    refs: np.ndarray,
    outs: np.ndarray,
    sels: np.ndarray,
    chunk: int = 4096,
) -> np.ndarray:
    scores = np.empty(len(refs), dtype=np.float64)
    for lo in range(0, len(refs), chunk):
        hi = min(lo + chunk, len(refs))
        part = models.pair_log_scores(
            proportion, Tensor(refs[lo:hi]), Tensor(outs[lo:hi]), sels[lo:hi]
        )
        scores[lo:hi] = part.data.astype(np.float64)
    return scores


def _dataset_pair_arrays(dataset: LibraryDataset, meta: models.ModelMeta, dtype):
    """Stack every (reference, observed outcome) pair plus per-ref spans."""
    refs, outs, sels, spans = [], [], [], []
    offset = 0
    for entry in dataset.entries:
        view = entry.reference.restricted(meta.mode)
        ref_oh = sq.one_hot(view).astype(dtype)
        m = len(entry.outcomes)
        refs.append(np.repeat(ref_oh[None], m, axis=0))
        outs.append(
            np.stack(
                [models._outcome_one_hot(meta, entry.reference, o) for o in entry.outcomes]
            ).astype(dtype)
        )
        sels.append(
            np.stack(
                [models._selector(meta, entry.reference, o) for o in entry.outcomes]
            ).astype(dtype)
        )
        spans.append((offset, m))
        offset += m
    return (
        np.concatenate(refs),
        np.concatenate(outs),
        np.concatenate(sels),
        spans,
    )


def prediction_rows(
    model,
    dataset: LibraryDataset,
    truth: dict[tuple[str, str, str], float] | None = None,
    editor_id: str | None = None,
) -> list[PredictionRow]:
    """Predict every observed outcome of a dataset in one batched pass.

    Two-stage models compose 1 - P(edited) for wild-type rows with
    P(edited) * conditional over the observed non-wild support; one-stage
    models normalize scores over the full observed support.  The observed
    column holds library proportions, or oracle probabilities when a truth
    table is given.
    """
    if isinstance(model, models.MultiTaskModel):
        view = model.single_task_view(editor_id or dataset.editor_id)
        return prediction_rows(view, dataset, truth)
    if isinstance(model, models.TwoStageModel):
        proportion, efficiency = model.proportion, model.efficiency
    elif isinstance(model, models.OneStageModel):
        proportion, efficiency = model.proportion, None
    else:
        raise TypeError(f"cannot evaluate a {type(model).__name__}")

    meta = proportion.meta
    dtype = meta.np_dtype
    refs, outs, sels, spans = _dataset_pair_arrays(dataset, meta, dtype)
    scores = _batched_log_scores(proportion, refs, outs, sels)

    if efficiency is not None:
        x = np.stack(
            [sq.one_hot(e.reference.restricted(meta.mode)) for e in dataset.entries]
        ).astype(dtype)
        p_edited = models.efficiency_forward_batch(efficiency, Tensor(x)).data[:, 0]
        p_edited = p_edited.astype(np.float64)

    rows: list[PredictionRow] = []
    for i, entry in enumerate(dataset.entries):
        offset, m = spans[i]
        s = scores[offset : offset + m]
        wild_flags = np.asarray([o.is_wildtype for o in entry.outcomes])
        if efficiency is None:
            e = np.exp(s - s.max())
            pred = e / e.sum()
        else:
            pred = np.empty(m)
            edited = ~wild_flags
            if edited.any():
                se = s[edited]
                ee = np.exp(se - se.max())
                pred[edited] = float(p_edited[i]) * ee / ee.sum()
            pred[wild_flags] = 1.0 - float(p_edited[i])

        for j, (outcome, observed) in enumerate(zip(entry.outcomes, entry.proportions)):
            value = float(observed)
            if truth is not None:
                key = (dataset.editor_id, entry.reference_id, outcome.bases)
                if key not in truth:
                    raise MissingTruth(f"no oracle probability for {key}")
                value = truth[key]
            rows.append(
                PredictionRow(
                    editor_id=dataset.editor_id,
                    reference_id=entry.reference_id,
                    outcome_sequence=outcome.bases,
                    is_wildtype=outcome.is_wildtype,
                    predicted=float(pred[j]),
                    observed=value,
                )
            )
    return rows


# ---------------------------------------------------------------------------
# views and reports


@dataclass
class ReportRow:
    editor_id: str
    view: str
    n: int
    pearson: float
    spearman: float


@dataclass
class EvalReport:
    rows: list[ReportRow]

    def find(self, editor_id: str, view: str) -> ReportRow:
        for row in self.rows:
            if row.editor_id == editor_id and row.view == view:
                return row
        raise KeyError((editor_id, view))

    def as_tsv(self) -> str:
        def num(x: float) -> str:
            return "nan" if not np.isfinite(x) else format(float(x), ".6f")

        lines = ["\t".join(("editor", "view", "n", "pearson", "spearman"))]
        for r in self.rows:
            lines.append(
                "\t".join((r.editor_id, r.view, str(r.n), num(r.pearson), num(r.spearman)))
            )
        return "\n".join(lines) + "\n"


def _view_vectors(
    rows: list[PredictionRow], view: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(predicted, observed, reference index) vectors for one view."""
    if view == "all":
        picked = rows
    elif view == "wildtype":
        picked = [r for r in rows if r.is_wildtype]
    elif view == "nonwild":
        picked = [r for r in rows if not r.is_wildtype]
    else:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")
    if not picked:
        raise EmptyView(f"view {view!r} matched no rows")

    ref_ids = sorted({r.reference_id for r in picked})
    ref_index = {rid: i for i, rid in enumerate(ref_ids)}
    pred = np.asarray([r.predicted for r in picked])
    obs = np.asarray([r.observed for r in picked])
    ref = np.asarray([ref_index[r.reference_id] for r in picked])

    if view == "nonwild":
        # conditional comparison: renormalize both sides within each reference
        for i in range(len(ref_ids)):
            grp = ref == i
            ps, os_ = pred[grp].sum(), obs[grp].sum()
            if ps > 0:
                pred[grp] /= ps
            if os_ > 0:
                obs[grp] /= os_
    return pred, obs, ref


def view_correlations(
    rows: list[PredictionRow], view: str, per_reference: bool = False
) -> tuple[int, float, float]:
    """(n, pearson, spearman) for one view.

    Pooled mode correlates all rows at once (n = row count).  Per-reference
    mode averages correlations over references with at least three rows and
    non-degenerate values (n = references used).
    """
    pred, obs, ref = _view_vectors(rows, view)
    if not per_reference:
        return len(pred), pearson(pred, obs), spearman(pred, obs)
    pearsons, spearmans = [], []
    for i in range(int(ref.max()) + 1):
        grp = ref == i
        if grp.sum() < 3:
            continue
        try:
            pearsons.append(pearson(pred[grp], obs[grp]))
            spearmans.append(spearman(pred[grp], obs[grp]))
        except DegenerateInput:
            continue
    if not pearsons:
        raise DegenerateInput(f"no reference had enough rows for per-reference {view}")
    return len(pearsons), float(np.mean(pearsons)), float(np.mean(spearmans))


def report_from_rows(
    rows: list[PredictionRow],
    views: tuple[str, ...] = VIEWS,
    per_reference: bool = False,
) -> EvalReport:
    """Compute every requested view for every editor present in the rows."""
    editors = sorted({r.editor_id for r in rows})
    out = []
    for editor_id in editors:
        editor_rows = [r for r in rows if r.editor_id == editor_id]
        for view in views:
            n, p, s = view_correlations(editor_rows, view, per_reference)
            out.append(ReportRow(editor_id, view, n, p, s))
    return EvalReport(out)


def evaluate(
    model,
    dataset: LibraryDataset,
    views: tuple[str, ...] = VIEWS,
    truth: dict[tuple[str, str, str], float] | None = None,
    per_reference: bool = False,
    editor_id: str | None = None,
) -> EvalReport:
    """One prediction pass over a dataset, then all requested views."""
    rows = prediction_rows(model, dataset, truth, editor_id)
    return report_from_rows(rows, views, per_reference)


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.as_tsv())


# ---------------------------------------------------------------------------
# scatter export


SCATTER_COLUMNS = (
    "editor_id",
    "reference_id",
    "outcome_sequence",
    "is_wildtype",
    "predicted",
    "observed",
)


def export_scatter(rows: list[PredictionRow], path) -> None:
    """Per-outcome (predicted, observed) pairs as TSV, full float precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(SCATTER_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                "\t".join(
                    (
                        r.editor_id,
                        r.reference_id,
                        r.outcome_sequence,
                        "1" if r.is_wildtype else "0",
                        format(r.predicted, ".17g"),
                        format(r.observed, ".17g"),
                    )
                )
                + "\n"
            )


def load_scatter(path) -> list[PredictionRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != SCATTER_COLUMNS:
            raise ValueError(f"bad scatter header {header!r}")
        rows = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            editor_id, reference_id, outcome, wild, pred, obs = line.split("\t")
            rows.append(
                PredictionRow(
                    editor_id, reference_id, outcome, wild == "1", float(pred), float(obs)
                )
            )
    return rows
