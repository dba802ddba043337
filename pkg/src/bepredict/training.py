"""Training loops and objectives for the outcome models.

Both stages train separately, never jointly: the efficiency network on
per-reference edited/not-edited targets, the proportion network on
per-reference conditional outcome distributions (or full distributions
including wild-type for the one-stage variant).  Losses are KL divergences
from the observed distribution to the prediction; Adam with a triangular
cyclic learning rate drives the updates, and the parameters returned are
those of the epoch with the best validation Spearman.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation, models, nn, numcore as nc, seqcore as sq
from .data import (
    LibraryDataset,
    derive_efficiency_targets,
    derive_proportion_targets,
)
from .models import InvalidDistribution, ModelMeta
from .numcore import AdamState, DivergedLoss, RngStream, Tape, Tensor

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "split", "loss", "pearson", "spearman", "lr", "wall_ms")


class SupportMismatch(ValueError):
    """Prediction and target distributions cover different supports."""


class TooFewReferences(ValueError):
    """Dataset too small to split into train/validation/test."""


# ---------------------------------------------------------------------------
# losses


def _check_rows(name: str, rows: np.ndarray, tolerance: float = 1e-5) -> None:
    if not np.all(np.isfinite(rows)) or np.any(rows < 0):
        raise InvalidDistribution(f"{name} must be finite and non-negative")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tolerance):
        worst = float(np.abs(sums - 1.0).max())
        raise InvalidDistribution(f"{name} rows deviate from sum 1 by {worst:.3g}")


def _entropy_term(target: np.ndarray) -> float:
    """Sum of t*log(t) with the 0*log(0)=0 convention."""
    t = np.asarray(target, dtype=np.float64)
    nz = t > 0
    return float((t[nz] * np.log(t[nz])).sum())


def efficiency_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Sum over the batch of KL(target || pred) for (edited, not-edited) pairs.

    ``pred`` is (B, 2) softmax rows; ``target`` is (B, 2) observed rows.
    Differentiable through ``pred``; predictions are clamped at 1e-12 inside
    the log.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise SupportMismatch(
            f"prediction {pred.data.shape} vs target {target.shape}"
        )
    _check_rows("efficiency targets", target)
    _check_rows("efficiency predictions", pred.data)
    logp = nc.log(nc.clip_min(pred, models.SCORE_FLOOR))
    cross = nc.tensor_sum(nc.mul(logp, nc.as_tensor(target, like=logp)))
    return nc.sub(nc.as_tensor(_entropy_term(target), like=cross), cross)


def proportion_loss(preds: list[np.ndarray], targets: list[np.ndarray]) -> float:
    """Mean over references of KL(target || pred) between outcome
    distributions on a shared support."""
    if len(preds) != len(targets):
        raise SupportMismatch(f"{len(preds)} predictions vs {len(targets)} targets")
    if not preds:
        raise SupportMismatch("no references given")
    total = 0.0
    for i, (p, t) in enumerate(zip(preds, targets)):
        p = np.asarray(p, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise SupportMismatch(
                f"reference {i}: prediction support {p.shape} vs target {t.shape}"
            )
        _check_rows(f"reference {i} target", t[None])
        _check_rows(f"reference {i} prediction", p[None])
        total += _entropy_term(t) - float(
            (t * np.log(np.maximum(p, models.SCORE_FLOOR))).sum()
        )
    return total / len(preds)


def total_objective(loss: Tensor, params: list[Tensor], l2_lambda: float) -> Tensor:
    """Training objective: data loss plus (lambda/2)*||theta||^2."""
    if l2_lambda == 0:
        return loss
    return nc.add(loss, nc.l2_penalty(params, l2_lambda))


# ---------------------------------------------------------------------------
# configuration and splits


@dataclass
class TrainConfig:
    batch_size: int = 400
    epochs: int = 150
    base_lr: float = 3e-4
    max_lr_multiplier: float = 5.0
    cycle_len: int = 10
    dropout: float = 0.2
    l2_lambda: float = 1e-4
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.base_lr <= 0 or self.max_lr_multiplier < 1:
            raise ValueError("need base_lr > 0 and max_lr_multiplier >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision}")

    @property
    def max_lr(self) -> float:
        return self.base_lr * self.max_lr_multiplier

    @classmethod
    def efficiency_defaults(cls, **overrides) -> "TrainConfig":
        values = dict(batch_size=100, epochs=300)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def proportion_defaults(cls, **overrides) -> "TrainConfig":
        values = dict(batch_size=400, epochs=150)
        values.update(overrides)
        return cls(**values)


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    replicate_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("need three positive split fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions sum to {sum(self.fractions)}, expected 1")
        if not self.replicate_seeds:
            raise ValueError("need at least one replicate seed")


@dataclass
class DatasetSplits:
    train: LibraryDataset
    val: LibraryDataset
    test: LibraryDataset


def split_dataset(
    dataset: LibraryDataset, seed: int, spec: SplitSpec = SplitSpec()
) -> DatasetSplits:
    """Shuffle references and split them train/val/test by the spec fractions.

    Splits are by whole reference: every outcome of a reference lands in the
    same split.  Sizes are floor(fraction * n) for train and val, remainder
    to test (within one reference of exact).
    """
    n = len(dataset)
    if n < 10:
        raise TooFewReferences(f"need at least 10 references to split, have {n}")
    order = RngStream(seed, "split").permutation(n)
    n_train = int(math.floor(spec.fractions[0] * n))
    n_val = int(math.floor(spec.fractions[1] * n))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise TooFewReferences(f"fractions {spec.fractions} empty a split at n={n}")
    return DatasetSplits(
        train=dataset.subset(order[:n_train]),
        val=dataset.subset(order[n_train : n_train + n_val]),
        test=dataset.subset(order[n_train + n_val :]),
    )


def balanced_batches(
    sizes: dict[str, int], batch_size: int, rng: RngStream
) -> list[dict[str, np.ndarray]]:
    """One epoch of editor-balanced batches.

    Each batch holds exactly batch_size / len(sizes) instance indices per
    editor.  The largest library sets the epoch length; smaller libraries
    are topped up by resampling with replacement.
    """
    if not sizes:
        raise ValueError("no editors given")
    n_editors = len(sizes)
    if batch_size % n_editors != 0:
        raise ValueError(
            f"batch_size {batch_size} not divisible by {n_editors} editors"
        )
    per = batch_size // n_editors
    n_batches = max(1, math.ceil(max(sizes.values()) / per))
    need = n_batches * per
    streams: dict[str, np.ndarray] = {}
    for editor_id in sorted(sizes):
        n = sizes[editor_id]
        idx = rng.permutation(n)
        if need > n:
            extra = rng.choice(n, need - n, replace=True)
            idx = np.concatenate([idx, extra])
        streams[editor_id] = idx[:need]
    return [
        {e: streams[e][i * per : (i + 1) * per] for e in sorted(sizes)}
        for i in range(n_batches)
    ]


@dataclass
class LogRow:
    epoch: int
    split: str
    loss: float
    pearson: float
    spearman: float
    lr: float
    wall_ms: float

    def as_tsv(self) -> str:
        def num(x: float) -> str:
            return "nan" if not np.isfinite(x) else format(float(x), ".8g")

        return "\t".join(
            (
                str(self.epoch),
                self.split,
                num(self.loss),
                num(self.pearson),
                num(self.spearman),
                num(self.lr),
                format(self.wall_ms, ".3f"),
            )
        )


def write_training_log(rows: list[LogRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(LOG_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.as_tsv() + "\n")


@dataclass
class TrainResult:
    log: list[LogRow]
    best_epoch: int
    best_spearman: float


def _snapshot(params: list[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def _restore(params: list[Tensor], snapshot: list[np.ndarray]) -> None:
    for p, s in zip(params, snapshot):
        p.data = s.copy()


def _correlations(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    try:
        return (
            evaluation.pearson(pred, target),
            evaluation.spearman(pred, target),
        )
    except evaluation.DegenerateInput:
        return float("nan"), float("nan")


# ---------------------------------------------------------------------------
# efficiency training


def _efficiency_arrays(
    dataset: LibraryDataset, meta: ModelMeta, dtype
) -> tuple[np.ndarray, np.ndarray]:
    targets = derive_efficiency_targets(dataset)
    x = np.stack(
        [sq.one_hot(t.reference.restricted(meta.mode)) for t in targets]
    ).astype(dtype)
    y = np.stack([[t.p_edited, 1.0 - t.p_edited] for t in targets])
    return x, y


def train_efficiency(
    model: models.EfficiencyModel,
    splits: DatasetSplits,
    config: TrainConfig,
    forward=None,
    params: list[Tensor] | None = None,
) -> TrainResult:
    """Fit P(edited | reference) on the train split, selecting the epoch with
    the best validation Spearman between predicted and observed efficiency."""
    if forward is None:
        forward = lambda x, train, rng: models.efficiency_forward_batch(
            model, x, config.dropout, train, rng
        )
    if params is None:
        params = nn.parameters(model)
    dtype = np.float32 if config.precision == "float32" else np.float64
    x_train, y_train = _efficiency_arrays(splits.train, model.meta, dtype)
    x_val, y_val = _efficiency_arrays(splits.val, model.meta, dtype)

    rng = RngStream(config.seed, "train/efficiency")
    dropout_rng = rng.spawn("dropout")
    sampler = rng.spawn("sampler")
    adam = AdamState.for_params(params)
    rows: list[LogRow] = []
    best = (-np.inf, 0, None)

    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr = nc.cyclic_lr(epoch - 1, config.base_lr, config.max_lr, config.cycle_len)
        order = sampler.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            with Tape():
                pred = forward(Tensor(x_train[idx]), True, dropout_rng)
                loss = efficiency_loss(pred, y_train[idx])
                objective = total_objective(loss, params, config.l2_lambda)
                value = objective.item()
                if not np.isfinite(value):
                    raise DivergedLoss(f"efficiency loss diverged at epoch {epoch}")
                nc.backward(objective)
            nc.adam_step(params, adam, lr)
            nc.zero_grads(params)
            epoch_loss += loss.item()
        wall = (time.perf_counter() - started) * 1000.0
        rows.append(LogRow(epoch, "train", epoch_loss / n, np.nan, np.nan, lr, wall))

        started = time.perf_counter()
        pred_val = forward(Tensor(x_val), False, None)
        val_loss = efficiency_loss(pred_val, y_val).item() / len(x_val)
        pearson, spearman = _correlations(pred_val.data[:, 0], y_val[:, 0])
        wall = (time.perf_counter() - started) * 1000.0
        rows.append(LogRow(epoch, "val", val_loss, pearson, spearman, lr, wall))
        if np.isfinite(spearman) and spearman > best[0]:
            best = (spearman, epoch, _snapshot(params))

    if best[2] is not None:
        _restore(params, best[2])
    return TrainResult(rows, best[1], best[0] if np.isfinite(best[0]) else np.nan)


# ---------------------------------------------------------------------------
# proportion training


@dataclass
class _RefPack:
    """Tensor-ready training data for one reference."""

    ref_one_hot: np.ndarray     # (T, 4)
    out_one_hots: np.ndarray    # (M, T, 4)
    selectors: np.ndarray       # (M, T, 2)
    target: np.ndarray          # (M,)
    entropy: float


def _proportion_packs(
    dataset: LibraryDataset,
    meta: ModelMeta,
    dtype,
    include_wildtype: bool,
) -> list[_RefPack]:
    packs = []
    for target in derive_proportion_targets(dataset, include_wildtype):
        view = target.reference.restricted(meta.mode)
        ref_oh = sq.one_hot(view).astype(dtype)
        outs = np.stack(
            [models._outcome_one_hot(meta, target.reference, o) for o in target.outcomes]
        ).astype(dtype)
        sels = np.stack(
            [models._selector(meta, target.reference, o) for o in target.outcomes]
        ).astype(dtype)
        packs.append(
            _RefPack(ref_oh, outs, sels, target.conditional, _entropy_term(target.conditional))
        )
    return packs


def _batch_by_reference(
    packs: list[_RefPack], order: np.ndarray, batch_size: int
) -> list[list[int]]:
    """Group shuffled references into batches of at least batch_size pairs;
    references are never split across batches."""
    batches: list[list[int]] = []
    current: list[int] = []
    pairs = 0
    for i in order:
        current.append(int(i))
        pairs += len(packs[i].target)
        if pairs >= batch_size:
            batches.append(current)
            current, pairs = [], 0
    if current:
        batches.append(current)
    return batches


def _proportion_batch_loss(
    packs: list[_RefPack],
    indices: list[int],
    score_fn,
    dtype,
) -> Tensor:
    """Differentiable mean-over-references KL for a batch of packed refs.

    Pair scores come from one batched forward; per-reference log-softmax
    normalization subtracts a constant max shift for stability.
    """
    refs = np.concatenate(
        [np.repeat(packs[i].ref_one_hot[None], len(packs[i].target), axis=0)
         for i in indices]
    ).astype(dtype, copy=False)
    outs = np.concatenate([packs[i].out_one_hots for i in indices])
    sels = np.concatenate([packs[i].selectors for i in indices])
    scores = score_fn(Tensor(refs), Tensor(outs), sels)

    total: Tensor | None = None
    offset = 0
    for i in indices:
        pack = packs[i]
        m = len(pack.target)
        s = nc.narrow(scores, 0, offset, m)
        shift = float(s.data.max())  # constant under differentiation
        sh = nc.sub(s, nc.as_tensor(shift, like=s))
        log_z = nc.log(nc.tensor_sum(nc.exp(sh)))
        cross = nc.sub(
            nc.tensor_sum(nc.mul(sh, nc.as_tensor(pack.target, like=sh))), log_z
        )
        ref_loss = nc.sub(nc.as_tensor(pack.entropy, like=cross), cross)
        total = ref_loss if total is None else nc.add(total, ref_loss)
        offset += m
    return nc.scale(total, 1.0 / len(indices))


def _conditional_predictions(
    packs: list[_RefPack], score_fn, dtype, chunk: int = 4096
) -> list[np.ndarray]:
    """Normalized per-reference predictions over each pack's support."""
    refs = np.concatenate(
        [np.repeat(p.ref_one_hot[None], len(p.target), axis=0) for p in packs]
    ).astype(dtype, copy=False)
    outs = np.concatenate([p.out_one_hots for p in packs])
    sels = np.concatenate([p.selectors for p in packs])
    scores = np.empty(len(refs), dtype=np.float64)
    for lo in range(0, len(refs), chunk):
        hi = min(lo + chunk, len(refs))
        part = score_fn(Tensor(refs[lo:hi]), Tensor(outs[lo:hi]), sels[lo:hi])
        scores[lo:hi] = part.data.astype(np.float64)
    preds = []
    offset = 0
    for pack in packs:
        m = len(pack.target)
        s = scores[offset : offset + m]
        e = np.exp(s - s.max())
        preds.append(e / e.sum())
        offset += m
    return preds


def train_proportion(
    model: models.ProportionModel,
    splits: DatasetSplits,
    config: TrainConfig,
    include_wildtype: bool = False,
    score_fn=None,
    params: list[Tensor] | None = None,
) -> TrainResult:
    """Fit the outcome-distribution network on observed supports.

    With ``include_wildtype`` false this is the conditional stage of the
    two-stage model (wild-type rows dropped, targets renormalized); with it
    true it is the one-stage objective over full observed distributions.
    Validation pools per-outcome predictions across references and tracks
    Spearman against the targets.
    """
    dtype = np.float32 if config.precision == "float32" else np.float64
    if score_fn is None:
        def score_fn(refs, outs, sels, train=False, rng=None):
            return models.pair_log_scores(
                model, refs, outs, sels, config.dropout, train, rng
            )
    if params is None:
        params = nn.parameters(model)

    train_packs = _proportion_packs(splits.train, model.meta, dtype, include_wildtype)
    val_packs = _proportion_packs(splits.val, model.meta, dtype, include_wildtype)
    if not train_packs or not val_packs:
        raise TooFewReferences("no references with usable proportion targets")
    val_target = np.concatenate([p.target for p in val_packs])

    rng = RngStream(config.seed, "train/proportion")
    dropout_rng = rng.spawn("dropout")
    sampler = rng.spawn("sampler")
    adam = AdamState.for_params(params)
    rows: list[LogRow] = []
    best = (-np.inf, 0, None)

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr = nc.cyclic_lr(epoch - 1, config.base_lr, config.max_lr, config.cycle_len)
        order = sampler.permutation(len(train_packs))
        batches = _batch_by_reference(train_packs, order, config.batch_size)
        epoch_loss = 0.0
        for batch in batches:
            with Tape():
                loss = _proportion_batch_loss(
                    train_packs,
                    batch,
                    lambda r, o, s: score_fn(r, o, s, train=True, rng=dropout_rng),
                    dtype,
                )
                objective = total_objective(loss, params, config.l2_lambda)
                value = objective.item()
                if not np.isfinite(value):
                    raise DivergedLoss(f"proportion loss diverged at epoch {epoch}")
                nc.backward(objective)
            nc.adam_step(params, adam, lr)
            nc.zero_grads(params)
            epoch_loss += loss.item() * len(batch)
        wall = (time.perf_counter() - started) * 1000.0
        rows.append(
            LogRow(epoch, "train", epoch_loss / len(train_packs), np.nan, np.nan, lr, wall)
        )

        started = time.perf_counter()
        preds = _conditional_predictions(val_packs, score_fn, dtype)
        val_loss = proportion_loss(preds, [p.target for p in val_packs])
        pooled = np.concatenate(preds)
        pearson, spearman = _correlations(pooled, val_target)
        wall = (time.perf_counter() - started) * 1000.0
        rows.append(LogRow(epoch, "val", val_loss, pearson, spearman, lr, wall))
        if np.isfinite(spearman) and spearman > best[0]:
            best = (spearman, epoch, _snapshot(params))

    if best[2] is not None:
        _restore(params, best[2])
    return TrainResult(rows, best[1], best[0] if np.isfinite(best[0]) else np.nan)


# ---------------------------------------------------------------------------
# variant-level drivers


@dataclass
class TwoStageResult:
    efficiency: TrainResult
    proportion: TrainResult


def train_two_stage(
    model: models.TwoStageModel,
    splits: DatasetSplits,
    efficiency_config: TrainConfig,
    proportion_config: TrainConfig,
) -> TwoStageResult:
    """Train both stages of the factorized model, each on its own objective."""
    eff = train_efficiency(model.efficiency, splits, efficiency_config)
    prop = train_proportion(model.proportion, splits, proportion_config)
    return TwoStageResult(eff, prop)


def train_one_stage(
    model: models.OneStageModel, splits: DatasetSplits, config: TrainConfig
) -> TrainResult:
    """Train the direct outcome-distribution model over full observed
    supports including wild-type."""
    return train_proportion(model.proportion, splits, config, include_wildtype=True)


# ---------------------------------------------------------------------------
# multi-task training


def _val_spearman_at(log: list[LogRow], epoch: int) -> float:
    for row in log:
        if row.epoch == epoch and row.split == "val":
            return row.spearman
    return np.nan


def train_multitask_efficiency(
    model: models.MultiTaskModel,
    splits_by_editor: dict[str, DatasetSplits],
    config: TrainConfig,
) -> dict[str, TrainResult]:
    """Joint efficiency training over editors with balanced batches.

    Every batch carries batch_size / n_editors references per editor; the
    shared trunk sees all of them in one tape, so its gradients sum across
    editors.  Model selection maximizes the mean validation Spearman over
    editors.
    """
    editors = sorted(splits_by_editor)
    _require_editors(model, editors)
    dtype = np.float32 if config.precision == "float32" else np.float64
    views = {e: model.single_task_view(e).efficiency for e in editors}
    train_xy = {
        e: _efficiency_arrays(splits_by_editor[e].train, model.meta, dtype)
        for e in editors
    }
    val_xy = {
        e: _efficiency_arrays(splits_by_editor[e].val, model.meta, dtype)
        for e in editors
    }
    params = _multitask_efficiency_params(model)

    rng = RngStream(config.seed, "train/mt_efficiency")
    dropout_rng = rng.spawn("dropout")
    sampler = rng.spawn("sampler")
    adam = AdamState.for_params(params)
    logs: dict[str, list[LogRow]] = {e: [] for e in editors}
    best = (-np.inf, 0, None)
    sizes = {e: len(train_xy[e][0]) for e in editors}

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr = nc.cyclic_lr(epoch - 1, config.base_lr, config.max_lr, config.cycle_len)
        epoch_loss = 0.0
        n_instances = 0
        for batch in balanced_batches(sizes, config.batch_size, sampler):
            with Tape():
                total: Tensor | None = None
                for e in editors:
                    x, y = train_xy[e]
                    idx = batch[e]
                    pred = models.efficiency_forward_batch(
                        views[e], Tensor(x[idx]), config.dropout, True, dropout_rng
                    )
                    part = efficiency_loss(pred, y[idx])
                    total = part if total is None else nc.add(total, part)
                    n_instances += len(idx)
                objective = total_objective(total, params, config.l2_lambda)
                value = objective.item()
                if not np.isfinite(value):
                    raise DivergedLoss(f"multi-task efficiency diverged at epoch {epoch}")
                nc.backward(objective)
            nc.adam_step(params, adam, lr)
            nc.zero_grads(params)
            epoch_loss += total.item()
        wall = (time.perf_counter() - started) * 1000.0
        train_row = LogRow(
            epoch, "train", epoch_loss / max(n_instances, 1), np.nan, np.nan, lr, wall
        )

        spearmans = []
        for e in editors:
            started = time.perf_counter()
            x, y = val_xy[e]
            pred = models.efficiency_forward_batch(views[e], Tensor(x))
            val_loss = efficiency_loss(pred, y).item() / len(x)
            pearson, spearman = _correlations(pred.data[:, 0], y[:, 0])
            wall = (time.perf_counter() - started) * 1000.0
            logs[e].append(train_row)
            logs[e].append(LogRow(epoch, "val", val_loss, pearson, spearman, lr, wall))
            spearmans.append(spearman)
        mean_spearman = float(np.mean(spearmans))
        if np.isfinite(mean_spearman) and mean_spearman > best[0]:
            best = (mean_spearman, epoch, _snapshot(params))

    if best[2] is not None:
        _restore(params, best[2])
    return {e: TrainResult(logs[e], best[1], _val_spearman_at(logs[e], best[1]))
            for e in editors}


def train_multitask_proportion(
    model: models.MultiTaskModel,
    splits_by_editor: dict[str, DatasetSplits],
    config: TrainConfig,
) -> dict[str, TrainResult]:
    """Joint conditional-distribution training with reference-balanced batches."""
    editors = sorted(splits_by_editor)
    _require_editors(model, editors)
    dtype = np.float32 if config.precision == "float32" else np.float64
    views = {e: model.single_task_view(e).proportion for e in editors}
    train_packs = {
        e: _proportion_packs(splits_by_editor[e].train, views[e].meta, dtype, False)
        for e in editors
    }
    val_packs = {
        e: _proportion_packs(splits_by_editor[e].val, views[e].meta, dtype, False)
        for e in editors
    }
    val_targets = {e: np.concatenate([p.target for p in val_packs[e]]) for e in editors}
    params = _multitask_proportion_params(model)

    def make_score_fn(e: str, dropout_p: float):
        view = views[e]

        def fn(refs, outs, sels, train=False, rng=None):
            return models.pair_log_scores(view, refs, outs, sels, dropout_p, train, rng)

        return fn

    score_fns = {e: make_score_fn(e, config.dropout) for e in editors}

    rng = RngStream(config.seed, "train/mt_proportion")
    dropout_rng = rng.spawn("dropout")
    sampler = rng.spawn("sampler")
    adam = AdamState.for_params(params)
    logs: dict[str, list[LogRow]] = {e: [] for e in editors}
    best = (-np.inf, 0, None)
    # balance by reference count; each editor contributes whole references
    sizes = {e: len(train_packs[e]) for e in editors}
    mean_pairs = np.mean(
        [len(p.target) for packs in train_packs.values() for p in packs]
    )
    refs_per_batch = max(len(editors), int(round(config.batch_size / mean_pairs)))
    refs_per_batch -= refs_per_batch % len(editors)
    refs_per_batch = max(refs_per_batch, len(editors))

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr = nc.cyclic_lr(epoch - 1, config.base_lr, config.max_lr, config.cycle_len)
        epoch_loss = 0.0
        n_refs = 0
        for batch in balanced_batches(sizes, refs_per_batch, sampler):
            with Tape():
                total: Tensor | None = None
                for e in editors:
                    idx = list(batch[e])
                    part = _proportion_batch_loss(
                        train_packs[e],
                        idx,
                        lambda r, o, s, _fn=score_fns[e]: _fn(
                            r, o, s, train=True, rng=dropout_rng
                        ),
                        dtype,
                    )
                    part = nc.scale(part, len(idx))
                    total = part if total is None else nc.add(total, part)
                    n_refs += len(idx)
                total = nc.scale(total, 1.0 / (len(editors) * len(batch[editors[0]])))
                objective = total_objective(total, params, config.l2_lambda)
                value = objective.item()
                if not np.isfinite(value):
                    raise DivergedLoss(f"multi-task proportion diverged at epoch {epoch}")
                nc.backward(objective)
            nc.adam_step(params, adam, lr)
            nc.zero_grads(params)
            epoch_loss += total.item() * len(editors) * len(batch[editors[0]])
        wall = (time.perf_counter() - started) * 1000.0
        train_row = LogRow(
            epoch, "train", epoch_loss / max(n_refs, 1), np.nan, np.nan, lr, wall
        )

        spearmans = []
        for e in editors:
            started = time.perf_counter()
            preds = _conditional_predictions(val_packs[e], score_fns[e], dtype)
            val_loss = proportion_loss(preds, [p.target for p in val_packs[e]])
            pooled = np.concatenate(preds)
            pearson, spearman = _correlations(pooled, val_targets[e])
            wall = (time.perf_counter() - started) * 1000.0
            logs[e].append(train_row)
            logs[e].append(LogRow(epoch, "val", val_loss, pearson, spearman, lr, wall))
            spearmans.append(spearman)
        mean_spearman = float(np.mean(spearmans))
        if np.isfinite(mean_spearman) and mean_spearman > best[0]:
            best = (mean_spearman, epoch, _snapshot(params))

    if best[2] is not None:
        _restore(params, best[2])
    return {e: TrainResult(logs[e], best[1], _val_spearman_at(logs[e], best[1]))
            for e in editors}


@dataclass
class MultiTaskResult:
    efficiency: dict[str, TrainResult]
    proportion: dict[str, TrainResult]


def train_multitask(
    model: models.MultiTaskModel,
    splits_by_editor: dict[str, DatasetSplits],
    efficiency_config: TrainConfig,
    proportion_config: TrainConfig,
) -> MultiTaskResult:
    """Train both multi-task stages (separately, like the single-task path)."""
    eff = train_multitask_efficiency(model, splits_by_editor, efficiency_config)
    prop = train_multitask_proportion(model, splits_by_editor, proportion_config)
    return MultiTaskResult(eff, prop)


def _require_editors(model: models.MultiTaskModel, editors: list[str]) -> None:
    for e in editors:
        if e not in model.editor_kinds:
            raise models.UnknownEditor(f"model has no branch for editor {e!r}")


def _multitask_efficiency_params(model: models.MultiTaskModel) -> list[Tensor]:
    parts = [model.shared_conv] + [
        model.efficiency_branches[e] for e in sorted(model.efficiency_branches)
    ]
    out: list[Tensor] = []
    for part in parts:
        out.extend(nn.parameters(part))
    return out


def _multitask_proportion_params(model: models.MultiTaskModel) -> list[Tensor]:
    parts = [model.reference_encoder] + [
        model.proportion_branches[e] for e in sorted(model.proportion_branches)
    ]
    out: list[Tensor] = []
    for part in parts:
        out.extend(nn.parameters(part))
    return out
