"""Outcome-distribution models built from the network blocks.

Three variants share one factorization vocabulary:

* efficiency network: conv trunk + MLP head -> P(edited | reference)
* proportion network: two encoders (reference, outcome) whose per-position
  states are concatenated and scored as edited/not-edited factors; the
  product over maskable positions gives an unnormalized outcome score, and
  normalizing over an outcome set gives P(outcome | reference, edited)
* two-stage: wild-type gets 1 - P(edited); non-wild outcome i gets
  P(edited) * conditional_i
* one-stage: the proportion scoring applied to the full outcome set
  including wild-type, normalized in one shot
* multi-task: shared conv layers / reference encoder plus per-editor
  branches, one model covering several editors

Scores are accumulated in log space and exponentiated only at the end, so
many-edit outcomes cannot underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn, numcore as nc, seqcore as sq
from .numcore import RngStream, ShapeMismatch, Tensor
from .seqcore import (
    EditorClass,
    OutcomeSequence,
    ReferenceSequence,
    RepresentationMode,
)

SCORE_FLOOR = 1e-12
CONDITIONAL_TOLERANCE = 1e-9


class InvalidDistribution(ValueError):
    """A probability vector is negative, non-finite, or not normalized."""


class UnnormalizedConditional(InvalidDistribution):
    """A conditional distribution does not sum to 1 within tolerance."""


class DegenerateScores(ValueError):
    """Outcome scores cannot be normalized (zero-sum or negative)."""


class EmptyOutcomeSet(ValueError):
    """An outcome set that must be non-empty is empty."""


class MissingWildType(ValueError):
    """One-stage scoring requires the wild-type outcome in the set."""


class UnknownEditor(KeyError):
    """A multi-task model was asked about an editor it was not built for."""


@dataclass
class ModelMeta:
    """What a model consumes and which editor it serves."""

    mode: RepresentationMode
    window: tuple[int, int] = sq.FULL_WINDOW
    editor_id: str | None = None
    editor_kind: str | None = None
    dtype: str = "float64"

    def __post_init__(self) -> None:
        self.mode = RepresentationMode(self.mode)
        self.window = sq.validate_window(tuple(self.window))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def editor(self) -> EditorClass:
        if self.editor_kind is None:
            raise UnknownEditor("model metadata carries no editor kind")
        return EditorClass.from_kind(self.editor_kind)


# ---------------------------------------------------------------------------
# efficiency network


@dataclass
class EfficiencyModel:
    meta: ModelMeta
    conv: nn.ConvStackParams
    head: nn.MlpHeadParams
    channels: tuple[int, ...] = (32, 64, 128)
    hidden: int = 64


def init_efficiency_model(
    meta: ModelMeta,
    rng: RngStream,
    channels: tuple[int, ...] = (32, 64, 128),
    hidden: int = 64,
) -> EfficiencyModel:
    dtype = meta.np_dtype
    t = meta.mode.length
    final_len = nn.conv_output_length(t, len(channels))
    if final_len < 1:
        raise ShapeMismatch(f"{len(channels)} conv layers collapse length {t} to zero")
    conv = nn.init_conv_stack(tuple(channels), rng.spawn("conv"), dtype)
    head = nn.init_mlp_head(final_len * channels[-1], hidden, 2, rng.spawn("head"), dtype)
    return EfficiencyModel(meta, conv, head, tuple(channels), hidden)


def efficiency_forward_batch(
    model: EfficiencyModel,
    one_hots: Tensor,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: RngStream | None = None,
) -> Tensor:
    """(B, T, 4) -> (B, 2) softmax rows ordered (edited, not-edited)."""
    features = nn.conv_trunk(one_hots, model.conv)
    return nn.mlp_head(features, model.head, dropout_p, train, rng)


def efficiency_forward(model: EfficiencyModel, ref: ReferenceSequence) -> float:
    """P(edited | reference) for a single site, in [0, 1]."""
    x = Tensor(_encode_refs(model.meta, [ref]))
    return float(efficiency_forward_batch(model, x).data[0, 0])


# ---------------------------------------------------------------------------
# proportion network


@dataclass
class ProportionModel:
    meta: ModelMeta
    config: nn.EncoderConfig
    reference_encoder: nn.EncoderParams
    outcome_encoder: nn.EncoderParams
    w_out: Tensor                 # (2d, 2)
    b_out: Tensor | None = None   # (t_max, 2) per-position bias, off by default


def init_proportion_model(
    meta: ModelMeta,
    config: nn.EncoderConfig,
    rng: RngStream,
    output_bias: bool = False,
) -> ProportionModel:
    dtype = meta.np_dtype
    t = meta.mode.length
    d = config.d
    return ProportionModel(
        meta=meta,
        config=config,
        reference_encoder=nn.init_encoder(config, t, rng.spawn("ref_enc"), dtype),
        outcome_encoder=nn.init_encoder(config, t, rng.spawn("out_enc"), dtype),
        w_out=nn.param_tensor(nn.xavier_uniform(rng.spawn("w_out"), 2 * d, 2, dtype)),
        b_out=nn.param_tensor(np.zeros((t, 2), dtype=dtype)) if output_bias else None,
    )


def _pair_output(
    ref_states: Tensor,
    out_states: Tensor,
    w_out: Tensor,
    b_out: Tensor | None,
) -> Tensor:
    """Concatenate encoder states and score each position: (B, T, 2) softmax
    rows ordered (edited, not-edited)."""
    z = nc.concat([ref_states, out_states], axis=-1)
    logits = nc.matmul(z, w_out)
    if b_out is not None:
        logits = nc.add(logits, b_out)
    return nc.softmax(logits, axis=-1)


def pair_log_scores(
    model: ProportionModel,
    ref_one_hots: Tensor,
    out_one_hots: Tensor,
    selectors: np.ndarray,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: RngStream | None = None,
) -> Tensor:
    """Log of the unnormalized outcome score for each (reference, outcome) pair.

    ``selectors`` is (B, T, 2): at each maskable position, one-hot over
    (edited, not-edited) according to the outcome; zero elsewhere.  The score
    is the product over maskable positions of the matching softmax factor,
    accumulated as a sum of clamped logs.
    """
    zr = nn.encode(ref_one_hots, model.reference_encoder, dropout_p, train, rng)
    zo = nn.encode(out_one_hots, model.outcome_encoder, dropout_p, train, rng)
    probs = _pair_output(zr, zo, model.w_out, model.b_out)
    logp = nc.log(nc.clip_min(probs, SCORE_FLOOR))
    picked = nc.mul(logp, nc.as_tensor(selectors, like=logp))
    return nc.tensor_sum(picked, axis=(-2, -1))


def _encode_refs(meta: ModelMeta, refs: list[ReferenceSequence]) -> np.ndarray:
    dtype = meta.np_dtype
    return np.stack(
        [sq.one_hot(r.restricted(meta.mode)) for r in refs]
    ).astype(dtype)


def _selector(
    meta: ModelMeta, ref: ReferenceSequence, outcome: OutcomeSequence
) -> np.ndarray:
    """(T, 2) selector for one pair under the model's mode and window."""
    view = ref.restricted(meta.mode)
    editor = meta.editor
    mask = sq.edit_mask(view, editor, meta.window)
    sel = np.zeros((view.length, 2))
    start = view.protospacer_start
    for flat_pos in mask.positions:
        proto_pos = flat_pos - start
        channel = 0 if proto_pos in outcome.edited_positions else 1
        sel[flat_pos, channel] = 1.0
    return sel


def _outcome_one_hot(meta: ModelMeta, ref: ReferenceSequence, outcome: OutcomeSequence) -> np.ndarray:
    view = ref.restricted(meta.mode)
    editor = meta.editor
    chars = list(view.flattened)
    start = view.protospacer_start
    for p in outcome.edited_positions:
        chars[start + p] = editor.target_base
    return sq.one_hot("".join(chars))


def outcome_log_scores(
    model: ProportionModel,
    ref: ReferenceSequence,
    outcomes: list[OutcomeSequence],
    chunk: int = 4096,
) -> np.ndarray:
    """Unnormalized log-scores for an outcome set against one reference."""
    if not outcomes:
        raise EmptyOutcomeSet("no outcomes to score")
    meta = model.meta
    dtype = meta.np_dtype
    ref_oh = _encode_refs(meta, [ref])[0]
    sels = np.stack([_selector(meta, ref, o) for o in outcomes]).astype(dtype)
    out_ohs = np.stack([_outcome_one_hot(meta, ref, o) for o in outcomes]).astype(dtype)
    scores = np.empty(len(outcomes), dtype=np.float64)
    for lo in range(0, len(outcomes), chunk):
        hi = min(lo + chunk, len(outcomes))
        refs = Tensor(np.broadcast_to(ref_oh, (hi - lo,) + ref_oh.shape).copy())
        part = pair_log_scores(model, refs, Tensor(out_ohs[lo:hi]), sels[lo:hi])
        scores[lo:hi] = part.data.astype(np.float64)
    return scores


def outcome_scores(
    model: ProportionModel, ref: ReferenceSequence, outcomes: list[OutcomeSequence]
) -> np.ndarray:
    """Exponentiated per-outcome scores (unnormalized, all positive)."""
    return np.exp(outcome_log_scores(model, ref, outcomes))


def per_position_edit_probs(
    model: ProportionModel, ref: ReferenceSequence, outcome: OutcomeSequence
) -> dict[int, float]:
    """The factor each maskable position contributes for one outcome.

    Keys are 1-based protospacer positions; values are the edited (or
    not-edited, matching the outcome) softmax factors.
    """
    meta = model.meta
    view = ref.restricted(meta.mode)
    sq.classify_outcome(view, meta.editor, _outcome_string(meta, ref, outcome), meta.window)
    ref_oh = Tensor(_encode_refs(meta, [ref]))
    out_oh = Tensor(_outcome_one_hot(meta, ref, outcome)[None].astype(meta.np_dtype))
    zr = nn.encode(ref_oh, model.reference_encoder)
    zo = nn.encode(out_oh, model.outcome_encoder)
    probs = _pair_output(zr, zo, model.w_out, model.b_out).data[0]
    mask = sq.edit_mask(view, meta.editor, meta.window)
    start = view.protospacer_start
    result = {}
    for flat_pos in mask.positions:
        proto_pos = flat_pos - start
        channel = 0 if proto_pos in outcome.edited_positions else 1
        result[proto_pos + 1] = float(probs[flat_pos, channel])
    return result


def _outcome_string(meta: ModelMeta, ref: ReferenceSequence, outcome: OutcomeSequence) -> str:
    view = ref.restricted(meta.mode)
    chars = list(view.flattened)
    start = view.protospacer_start
    for p in outcome.edited_positions:
        chars[start + p] = meta.editor.target_base
    return "".join(chars)


# ---------------------------------------------------------------------------
# distribution algebra


def normalize_scores(scores: np.ndarray) -> np.ndarray:
    """Scores -> probabilities summing to 1."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyOutcomeSet("cannot normalize an empty score vector")
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise DegenerateScores("scores must be finite and non-negative")
    total = scores.sum()
    if total <= 0:
        raise DegenerateScores("scores sum to zero")
    return scores / total


def compose_two_stage(p_edited: float, conditional: np.ndarray) -> np.ndarray:
    """Assemble the full distribution: index 0 is wild-type with 1 - p_edited,
    then p_edited * conditional for the non-wild outcomes."""
    if not 0.0 <= p_edited <= 1.0 or not np.isfinite(p_edited):
        raise InvalidDistribution(f"p_edited must be in [0, 1], got {p_edited}")
    conditional = np.asarray(conditional, dtype=np.float64)
    if conditional.size == 0:
        raise EmptyOutcomeSet("conditional distribution is empty")
    if np.any(conditional < 0):
        raise UnnormalizedConditional("conditional has negative entries")
    if abs(conditional.sum() - 1.0) > CONDITIONAL_TOLERANCE:
        raise UnnormalizedConditional(
            f"conditional sums to {conditional.sum():.12f}, expected 1"
        )
    return np.concatenate([[1.0 - p_edited], p_edited * conditional])


def proportion_conditional(
    model: ProportionModel, ref: ReferenceSequence, outcomes: list[OutcomeSequence]
) -> np.ndarray:
    """P(outcome | reference, edited) over a non-wild outcome set."""
    for o in outcomes:
        if o.is_wildtype:
            raise sq.IllegalOutcome("conditional outcome sets exclude wild-type")
    return normalize_scores(outcome_scores(model, ref, outcomes))


# ---------------------------------------------------------------------------
# model variants


@dataclass
class TwoStageModel:
    meta: ModelMeta
    efficiency: EfficiencyModel
    proportion: ProportionModel


@dataclass
class OneStageModel:
    meta: ModelMeta
    proportion: ProportionModel


def init_two_stage(
    meta: ModelMeta,
    config: nn.EncoderConfig,
    rng: RngStream,
    output_bias: bool = False,
    channels: tuple[int, ...] = (32, 64, 128),
    hidden: int = 64,
) -> TwoStageModel:
    return TwoStageModel(
        meta=meta,
        efficiency=init_efficiency_model(meta, rng.spawn("efficiency"), channels, hidden),
        proportion=init_proportion_model(meta, config, rng.spawn("proportion"), output_bias),
    )


def init_one_stage(
    meta: ModelMeta,
    config: nn.EncoderConfig,
    rng: RngStream,
    output_bias: bool = False,
) -> OneStageModel:
    return OneStageModel(
        meta=meta,
        proportion=init_proportion_model(meta, config, rng.spawn("proportion"), output_bias),
    )


def one_stage_forward(
    model: OneStageModel, ref: ReferenceSequence, outcomes: list[OutcomeSequence]
) -> np.ndarray:
    """Normalized distribution over an outcome set that includes wild-type."""
    if not any(o.is_wildtype for o in outcomes):
        raise MissingWildType("one-stage scoring needs the wild-type outcome in the set")
    return normalize_scores(outcome_scores(model.proportion, ref, outcomes))


# ---------------------------------------------------------------------------
# multi-task


@dataclass
class EfficiencyBranch:
    conv: nn.ConvStackParams   # layers after the shared trunk
    head: nn.MlpHeadParams


@dataclass
class ProportionBranch:
    outcome_encoder: nn.EncoderParams
    w_out: Tensor
    b_out: Tensor | None = None


@dataclass
class MultiTaskModel:
    meta: ModelMeta                      # editor_id/editor_kind unset
    editor_kinds: dict[str, str]         # editor_id -> ABE | CBE
    config: nn.EncoderConfig
    shared_conv: nn.ConvStackParams      # first conv layers, all editors
    efficiency_branches: dict[str, EfficiencyBranch]
    reference_encoder: nn.EncoderParams  # shared across editors
    proportion_branches: dict[str, ProportionBranch]
    shared_channels: tuple[int, ...] = (32, 64)
    branch_channels: tuple[int, ...] = (128, 128)
    hidden: int = 64

    def editor(self, editor_id: str) -> EditorClass:
        if editor_id not in self.editor_kinds:
            raise UnknownEditor(f"model has no branch for editor {editor_id!r}")
        return EditorClass.from_kind(self.editor_kinds[editor_id])

    def single_task_view(self, editor_id: str) -> TwoStageModel:
        """Expose one editor's path through the shared trunks as a two-stage
        model; parameters are shared, not copied."""
        kind = self.editor_kinds.get(editor_id)
        if kind is None:
            raise UnknownEditor(f"model has no branch for editor {editor_id!r}")
        meta = replace(self.meta, editor_id=editor_id, editor_kind=kind)
        eff_branch = self.efficiency_branches[editor_id]
        conv = nn.ConvStackParams(
            self.shared_conv.weights + eff_branch.conv.weights,
            self.shared_conv.biases + eff_branch.conv.biases,
        )
        efficiency = EfficiencyModel(
            meta, conv, eff_branch.head,
            self.shared_channels + self.branch_channels, self.hidden,
        )
        prop_branch = self.proportion_branches[editor_id]
        proportion = ProportionModel(
            meta,
            self.config,
            self.reference_encoder,
            prop_branch.outcome_encoder,
            prop_branch.w_out,
            prop_branch.b_out,
        )
        return TwoStageModel(meta, efficiency, proportion)


def init_multitask(
    meta: ModelMeta,
    editor_kinds: dict[str, str],
    config: nn.EncoderConfig,
    rng: RngStream,
    output_bias: bool = False,
    shared_channels: tuple[int, ...] = (32, 64),
    branch_channels: tuple[int, ...] = (128, 128),
    hidden: int = 64,
) -> MultiTaskModel:
    if not editor_kinds:
        raise UnknownEditor("multi-task model needs at least one editor")
    for editor_id, kind in editor_kinds.items():
        EditorClass.from_kind(kind)
    dtype = meta.np_dtype
    t = meta.mode.length
    total_layers = len(shared_channels) + len(branch_channels)
    final_len = nn.conv_output_length(t, total_layers)
    if final_len < 1:
        raise ShapeMismatch(f"{total_layers} conv layers collapse length {t} to zero")
    eff_branches = {}
    prop_branches = {}
    d = config.d
    for editor_id in sorted(editor_kinds):
        branch_rng = rng.spawn(f"branch/{editor_id}")
        eff_branches[editor_id] = EfficiencyBranch(
            conv=nn.init_conv_stack(
                tuple(branch_channels), branch_rng.spawn("conv"), dtype,
                c_in=shared_channels[-1],
            ),
            head=nn.init_mlp_head(
                final_len * branch_channels[-1], hidden, 2, branch_rng.spawn("head"), dtype
            ),
        )
        prop_branches[editor_id] = ProportionBranch(
            outcome_encoder=nn.init_encoder(config, t, branch_rng.spawn("out_enc"), dtype),
            w_out=nn.param_tensor(nn.xavier_uniform(branch_rng.spawn("w_out"), 2 * d, 2, dtype)),
            b_out=nn.param_tensor(np.zeros((t, 2), dtype=dtype)) if output_bias else None,
        )
    return MultiTaskModel(
        meta=meta,
        editor_kinds=dict(editor_kinds),
        config=config,
        shared_conv=nn.init_conv_stack(tuple(shared_channels), rng.spawn("shared_conv"), dtype),
        efficiency_branches=eff_branches,
        reference_encoder=nn.init_encoder(config, t, rng.spawn("ref_enc"), dtype),
        proportion_branches=prop_branches,
        shared_channels=tuple(shared_channels),
        branch_channels=tuple(branch_channels),
        hidden=hidden,
    )


def multitask_forward(
    model: MultiTaskModel,
    editor_id: str,
    ref: ReferenceSequence,
    outcomes: list[OutcomeSequence],
) -> tuple[float, np.ndarray]:
    """(P(edited), conditional over the given non-wild outcomes) for one
    editor's branch."""
    view = model.single_task_view(editor_id)
    p_edited = efficiency_forward(view.efficiency, ref)
    conditional = proportion_conditional(view.proportion, ref, outcomes)
    return p_edited, conditional


# ---------------------------------------------------------------------------
# prediction


def predict_distribution(
    model: TwoStageModel | OneStageModel | MultiTaskModel,
    ref: ReferenceSequence,
    editor_id: str | None = None,
    window: tuple[int, int] | None = None,
) -> tuple[list[OutcomeSequence], np.ndarray]:
    """Enumerate all outcomes for a reference and predict their distribution.

    Returns (outcomes, probabilities) with wild-type first; the vector sums
    to 1.  For multi-task models ``editor_id`` picks the branch.
    """
    if isinstance(model, MultiTaskModel):
        if editor_id is None:
            raise UnknownEditor("multi-task prediction requires an editor_id")
        return predict_distribution(model.single_task_view(editor_id), ref, None, window)

    meta = model.meta
    window = meta.window if window is None else sq.validate_window(window)
    view = ref.restricted(meta.mode)
    editor = meta.editor
    non_wild = sq.enumerate_outcomes(view, editor, window, include_wildtype=False)
    wild = sq.apply_edits(view, editor, ())

    if isinstance(model, OneStageModel):
        outcomes = [wild] + non_wild
        return outcomes, one_stage_forward(model, ref, outcomes)

    if not non_wild:
        return [wild], np.asarray([1.0])
    p_edited = efficiency_forward(model.efficiency, ref)
    conditional = proportion_conditional(model.proportion, ref, non_wild)
    return [wild] + non_wild, compose_two_stage(p_edited, conditional)
