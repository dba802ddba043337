"""Screen libraries on disk, synthetic screen generation, and checkpoints.

A library is a TSV with one row per (editor, reference, outcome).  Outcome
abundance is given either as integer read counts or as proportions; counts
are normalized per reference at load time.  The synthetic generator draws
per-position edit probabilities from an explicit oracle profile, so the
resulting screens have known exact outcome probabilities (written to a truth
TSV) and per-position independence that a product-factorized model can
represent exactly.
"""

from __future__ import annotations

import io
import json
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import nn, seqcore as sq
from .models import (
    EfficiencyModel,
    ModelMeta,
    MultiTaskModel,
    OneStageModel,
    ProportionModel,
    TwoStageModel,
    init_efficiency_model,
    init_multitask,
    init_one_stage,
    init_proportion_model,
    init_two_stage,
)
from .numcore import RngStream
from .seqcore import (
    EditorClass,
    OutcomeSequence,
    ReferenceSequence,
    RepresentationMode,
)

logger = logging.getLogger(__name__)

LIBRARY_COLUMNS = (
    "editor_id",
    "reference_id",
    "left_overhang",
    "protospacer",
    "pam",
    "right_overhang",
    "outcome_sequence",
)
ABUNDANCE_COLUMNS = ("read_count", "proportion")
TRUTH_COLUMNS = ("editor_id", "reference_id", "outcome_sequence", "oracle_probability")

PROPORTION_TOLERANCE = 1e-6


class DataError(ValueError):
    """Base class for library and checkpoint failures."""


class SchemaError(DataError):
    """A file's header or field layout is wrong."""


class IllegalOutcomeRow(DataError):
    """A library row's outcome is unreachable from its reference."""


class NormalizationError(DataError):
    """Per-reference proportions do not sum to 1."""


class CheckpointError(DataError):
    """Base class for checkpoint failures."""


class CorruptCheckpoint(CheckpointError):
    """Checkpoint bytes are truncated or fail their checksum."""


class VersionMismatch(CheckpointError):
    """Checkpoint format version is not supported."""


class TopologyMismatch(CheckpointError):
    """Checkpoint holds a different model variant than expected."""


def infer_editor_kind(editor_id: str, registry: dict[str, str] | None = None) -> str:
    """Resolve an editor id to ABE or CBE via the registry or the id text."""
    if registry and editor_id in registry:
        return EditorClass.from_kind(registry[editor_id]).kind
    upper = editor_id.upper()
    has_abe = "ABE" in upper
    has_cbe = "CBE" in upper
    if has_abe == has_cbe:
        raise SchemaError(
            f"cannot infer editor class from id {editor_id!r}; "
            "provide an editor registry entry (id=ABE or id=CBE)"
        )
    return "ABE" if has_abe else "CBE"


# ---------------------------------------------------------------------------
# library containers


@dataclass
class ReferenceEntry:
    """All observed outcomes of one reference under one editor."""

    reference_id: str
    reference: ReferenceSequence
    outcomes: list[OutcomeSequence]
    proportions: np.ndarray
    read_counts: np.ndarray | None = None

    @property
    def wildtype_proportion(self) -> float | None:
        for o, p in zip(self.outcomes, self.proportions):
            if o.is_wildtype:
                return float(p)
        return None

    def nonwild(self) -> tuple[list[OutcomeSequence], np.ndarray]:
        keep = [i for i, o in enumerate(self.outcomes) if not o.is_wildtype]
        return [self.outcomes[i] for i in keep], self.proportions[keep]


@dataclass
class LibraryDataset:
    """One editor's screen: a list of reference entries."""

    editor_id: str
    editor_kind: str
    mode: RepresentationMode
    entries: list[ReferenceEntry]

    @property
    def editor(self) -> EditorClass:
        return EditorClass.from_kind(self.editor_kind)

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, indices) -> "LibraryDataset":
        return LibraryDataset(
            self.editor_id, self.editor_kind, self.mode,
            [self.entries[i] for i in indices],
        )


def _row_mode(left: str, pam: str, right: str) -> RepresentationMode:
    if left or right:
        return RepresentationMode.FULL
    if pam:
        return RepresentationMode.PROTOSPACER_PAM
    return RepresentationMode.PROTOSPACER


def load_library(
    path,
    registry: dict[str, str] | None = None,
    window: tuple[int, int] = sq.FULL_WINDOW,
    tolerance: float = PROPORTION_TOLERANCE,
) -> dict[str, LibraryDataset]:
    """Read a library TSV into one dataset per editor.

    Validates the header, every sequence, and outcome legality (each outcome
    must differ from its reference only by source->target substitutions
    inside the window).  Proportions are derived from counts, or validated
    then renormalized when given directly.

    Returns:
        editor_id -> LibraryDataset, editors in file order.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        expected_fixed = list(LIBRARY_COLUMNS)
        if header[:-1] != expected_fixed or header[-1] not in ABUNDANCE_COLUMNS:
            raise SchemaError(
                f"bad library header {header!r}; expected "
                f"{expected_fixed + ['read_count (or proportion)']}"
            )
        has_counts = header[-1] == "read_count"

        groups: dict[tuple[str, str], dict] = {}
        editor_order: list[str] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != len(header):
                raise SchemaError(
                    f"line {lineno}: {len(fields)} fields, expected {len(header)}"
                )
            editor_id, reference_id, left, proto, pam, right, outcome, amount = fields
            kind = infer_editor_kind(editor_id, registry)
            try:
                ref = ReferenceSequence(proto, pam, left, right)
                out = sq.classify_outcome(ref, EditorClass.from_kind(kind), outcome, window)
            except sq.SequenceError as exc:
                raise IllegalOutcomeRow(f"line {lineno}: {exc}") from exc
            try:
                value = int(amount) if has_counts else float(amount)
            except ValueError:
                raise SchemaError(f"line {lineno}: bad abundance value {amount!r}") from None
            if value < 0:
                raise SchemaError(f"line {lineno}: negative abundance {value}")

            key = (editor_id, reference_id)
            group = groups.get(key)
            if group is None:
                if editor_id not in editor_order:
                    editor_order.append(editor_id)
                group = groups[key] = {
                    "kind": kind, "ref": ref, "outcomes": [], "values": [], "seen": set(),
                }
            if group["ref"].flattened != ref.flattened:
                raise SchemaError(
                    f"line {lineno}: reference {reference_id!r} has inconsistent sequence"
                )
            if outcome in group["seen"]:
                raise IllegalOutcomeRow(
                    f"line {lineno}: duplicate outcome row for reference {reference_id!r}"
                )
            group["seen"].add(outcome)
            group["outcomes"].append(out)
            group["values"].append(value)

    datasets: dict[str, LibraryDataset] = {}
    mode: RepresentationMode | None = None
    for (editor_id, reference_id), group in groups.items():
        ref = group["ref"]
        row_mode = ref.mode
        if mode is None:
            mode = row_mode
        elif mode is not row_mode:
            raise SchemaError(
                f"reference {reference_id!r} uses mode {row_mode.value}, "
                f"file started with {mode.value}"
            )
        values = np.asarray(group["values"], dtype=np.float64)
        total = values.sum()
        if total <= 0:
            raise NormalizationError(
                f"reference {reference_id!r} has zero total abundance"
            )
        if not has_counts and abs(total - 1.0) > max(tolerance, 1e-9):
            raise NormalizationError(
                f"reference {reference_id!r} proportions sum to {total:.9f}"
            )
        proportions = values / total
        entry = ReferenceEntry(
            reference_id=reference_id,
            reference=ref,
            outcomes=group["outcomes"],
            proportions=proportions,
            read_counts=values.astype(np.int64) if has_counts else None,
        )
        ds = datasets.get(editor_id)
        if ds is None:
            ds = datasets[editor_id] = LibraryDataset(editor_id, group["kind"], mode, [])
        ds.entries.append(entry)
    if not datasets:
        raise SchemaError("library holds no rows")
    return {e: datasets[e] for e in editor_order}


def write_library(datasets: dict[str, LibraryDataset], path, counts: bool = True) -> None:
    """Write datasets to one TSV, sorted for byte-stable output."""
    abundance = "read_count" if counts else "proportion"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(LIBRARY_COLUMNS + (abundance,)) + "\n")
        for editor_id in sorted(datasets):
            ds = datasets[editor_id]
            for entry in sorted(ds.entries, key=lambda e: e.reference_id):
                ref = entry.reference
                rows = sorted(
                    zip(entry.outcomes, entry.proportions,
                        entry.read_counts if entry.read_counts is not None
                        else [None] * len(entry.outcomes)),
                    key=lambda r: r[0].bases,
                )
                for out, prop, count in rows:
                    if counts:
                        if count is None:
                            raise SchemaError("dataset has no read counts to write")
                        amount = str(int(count))
                    else:
                        amount = format(float(prop), ".12g")
                    fh.write(
                        "\t".join(
                            (
                                editor_id,
                                entry.reference_id,
                                ref.left_overhang,
                                ref.protospacer,
                                ref.pam,
                                ref.right_overhang,
                                out.bases,
                                amount,
                            )
                        )
                        + "\n"
                    )


# ---------------------------------------------------------------------------
# training targets


@dataclass
class EfficiencyTarget:
    reference_id: str
    reference: ReferenceSequence
    p_edited: float


@dataclass
class ProportionTarget:
    reference_id: str
    reference: ReferenceSequence
    outcomes: list[OutcomeSequence]
    conditional: np.ndarray


def derive_efficiency_targets(dataset: LibraryDataset) -> list[EfficiencyTarget]:
    """Editing efficiency per reference: 1 minus the wild-type proportion.

    References without a wild-type row are treated as fully edited, with a
    warning (their wild-type abundance was zero or unreported).
    """
    targets = []
    missing = 0
    for entry in dataset.entries:
        wt = entry.wildtype_proportion
        if wt is None:
            missing += 1
            wt = 0.0
        targets.append(
            EfficiencyTarget(entry.reference_id, entry.reference, 1.0 - wt)
        )
    if missing:
        logger.warning(
            "%d/%d references lack a wild-type row; assuming efficiency 1.0",
            missing, len(dataset.entries),
        )
    return targets


def derive_proportion_targets(
    dataset: LibraryDataset, include_wildtype: bool = False
) -> list[ProportionTarget]:
    """Per-reference outcome distributions over observed support.

    With ``include_wildtype`` false (the conditional stage), wild-type rows
    are dropped and the rest renormalized; references with no edited reads
    are skipped.  With it true (one-stage targets), the full observed
    distribution is used as-is.
    """
    targets = []
    skipped = 0
    for entry in dataset.entries:
        if include_wildtype:
            outcomes, props = list(entry.outcomes), np.asarray(entry.proportions)
        else:
            outcomes, props = entry.nonwild()
        total = props.sum() if len(outcomes) else 0.0
        if not outcomes or total <= 0:
            skipped += 1
            continue
        targets.append(
            ProportionTarget(
                entry.reference_id, entry.reference, outcomes, props / total
            )
        )
    if skipped:
        logger.info(
            "%d/%d references had no usable outcome rows for proportion targets",
            skipped, len(dataset.entries),
        )
    return targets


# ---------------------------------------------------------------------------
# synthetic screens


@dataclass
class OracleEditorProfile:
    """Ground-truth editing behaviour for one simulated editor.

    Per-position edit probability is a logistic curve over the protospacer:
    sigmoid(activity + baseline + gain * gauss(position; peak, width) +
    pam_logit[first two PAM bases]).  Positions are 1-based.
    """

    editor_id: str
    kind: str
    peak_position: float
    curve_width: float
    curve_gain: float
    baseline_logit: float
    activity: float
    pam_logit: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        EditorClass.from_kind(self.kind)
        if self.curve_width <= 0:
            raise DataError("curve_width must be positive")

    @property
    def editor(self) -> EditorClass:
        return EditorClass.from_kind(self.kind)

    @classmethod
    def sample(cls, editor_id: str, kind: str, rng: RngStream) -> "OracleEditorProfile":
        pam_logit = {
            a + b: float(rng.uniform(None, -0.8, 0.8))
            for a in sq.BASES
            for b in sq.BASES
        }
        return cls(
            editor_id=editor_id,
            kind=kind,
            peak_position=float(rng.uniform(None, 4.0, 9.0)),
            curve_width=float(rng.uniform(None, 1.6, 3.2)),
            curve_gain=float(rng.uniform(None, 2.4, 3.4)),
            baseline_logit=float(rng.uniform(None, -3.9, -3.3)),
            activity=float(rng.uniform(None, -0.2, 0.6)),
            pam_logit=pam_logit,
        )

    def position_probabilities(
        self, ref: ReferenceSequence, window: tuple[int, int] = sq.FULL_WINDOW
    ) -> dict[int, float]:
        """0-based protospacer position -> oracle edit probability, over the
        editable positions of the reference."""
        mask = sq.edit_mask(ref, self.editor, window)
        start = ref.protospacer_start
        pam_key = ref.pam[:2] if ref.pam else ""
        pam_term = self.pam_logit.get(pam_key, 0.0)
        probs = {}
        for flat in mask.positions:
            p1 = flat - start + 1
            bump = self.curve_gain * np.exp(
                -0.5 * ((p1 - self.peak_position) / self.curve_width) ** 2
            )
            logit = self.activity + self.baseline_logit + bump + pam_term
            probs[p1 - 1] = float(1.0 / (1.0 + np.exp(-logit)))
        return probs

    def outcome_probability(
        self,
        ref: ReferenceSequence,
        edited_positions: frozenset[int],
        window: tuple[int, int] = sq.FULL_WINDOW,
    ) -> float:
        """Exact probability of one outcome under per-position independence."""
        probs = self.position_probabilities(ref, window)
        p = 1.0
        for pos, q in probs.items():
            p *= q if pos in edited_positions else 1.0 - q
        return p


@dataclass
class TruthRow:
    editor_id: str
    reference_id: str
    outcome_sequence: str
    probability: float


@dataclass
class SyntheticScreen:
    datasets: dict[str, LibraryDataset]
    truth: list[TruthRow]
    profiles: list[OracleEditorProfile]


@dataclass
class _PanelSite:
    """Editor-independent scaffold for one reference: neutral protospacer
    skeleton plus the positions where each editor's source base goes."""

    reference_id: str
    skeleton: list[str]
    target_positions: tuple[int, ...]
    pam: str
    left: str
    right: str

    def reference_for(self, source_base: str) -> ReferenceSequence:
        proto = list(self.skeleton)
        for pos in self.target_positions:
            proto[pos] = source_base
        return ReferenceSequence("".join(proto), self.pam, self.left, self.right)


def _random_panel_site(
    rng: RngStream,
    reference_id: str,
    neutral_bases: list[str],
    mode: RepresentationMode,
    n_targets: int,
    window: tuple[int, int],
) -> _PanelSite:
    lo, hi = window
    skeleton = [neutral_bases[i] for i in rng.integers(0, len(neutral_bases), sq.PROTOSPACER_LENGTH)]
    slots = list(range(lo - 1, hi))
    # guides are designed around the editing window, so bias target bases
    # toward protospacer positions 3..10
    weights = np.asarray([3.0 if 2 <= s <= 9 else 1.0 for s in slots])
    weights /= weights.sum()
    chosen = tuple(sorted(int(slots[j]) for j in rng.choice(len(slots), n_targets, replace=False, p=weights)))
    pam = "".join(sq.BASES[i] for i in rng.integers(0, 4, sq.PAM_LENGTH)) if mode.has_pam else ""
    left = right = ""
    if mode.has_overhangs:
        left = "".join(sq.BASES[i] for i in rng.integers(0, 4, sq.OVERHANG_LENGTH))
        right = "".join(sq.BASES[i] for i in rng.integers(0, 4, sq.OVERHANG_LENGTH))
    return _PanelSite(reference_id, skeleton, chosen, pam, left, right)


def generate_synthetic_screen(
    profiles: list[OracleEditorProfile],
    n_references: int = 2000,
    reads_per_reference: int = 5000,
    seed: int = 0,
    mode: RepresentationMode = RepresentationMode.FULL,
    window: tuple[int, int] = sq.FULL_WINDOW,
    min_targets: int = 1,
    max_targets: int = 3,
) -> SyntheticScreen:
    """Simulate a screen: one shared reference panel, read sampling per editor.

    Every reference carries between ``min_targets`` and ``max_targets``
    editable bases, so outcome sets stay enumerable.  Reads are drawn with
    independent per-position edit events at the oracle probabilities; the
    truth list holds exact probabilities for every observed outcome plus
    wild-type.
    """
    if not profiles:
        raise DataError("need at least one oracle profile")
    if n_references < 1 or reads_per_reference < 1:
        raise DataError("n_references and reads_per_reference must be positive")
    if not 1 <= min_targets <= max_targets <= sq.MAX_ENUMERATION_TARGETS:
        raise DataError("bad target-count range")
    mode = RepresentationMode(mode)
    if len({p.editor_id for p in profiles}) != len(profiles):
        raise DataError("duplicate editor ids")

    master = RngStream(seed, "synth")
    ref_rng = master.spawn("references")
    width = len(str(max(n_references, 1)))

    # one shared panel; skeleton positions avoid every source base in play
    # so each reference has exactly its chosen target count per editor
    sources = {p.editor.source_base for p in profiles}
    neutral = [b for b in sq.BASES if b not in sources]
    panel: list[_PanelSite] = []
    for i in range(n_references):
        k = int(ref_rng.integers(min_targets, max_targets + 1))
        panel.append(
            _random_panel_site(ref_rng, f"ref{i:0{width}d}", neutral, mode, k, window)
        )

    datasets: dict[str, LibraryDataset] = {}
    truth: list[TruthRow] = []
    for profile in profiles:
        read_rng = master.spawn(f"reads/{profile.editor_id}")
        editor = profile.editor
        entries = []
        for site in panel:
            ref_id = site.reference_id
            ref_use = site.reference_for(editor.source_base)
            pos_probs = profile.position_probabilities(ref_use, window)
            positions = sorted(pos_probs)
            p = np.asarray([pos_probs[t] for t in positions])
            draws = read_rng.uniform((reads_per_reference, len(positions))) < p
            patterns, counts = np.unique(draws, axis=0, return_counts=True)
            outcomes = []
            for pattern in patterns:
                edited = frozenset(
                    positions[j] for j in range(len(positions)) if pattern[j]
                )
                outcomes.append(sq.apply_edits(ref_use, editor, tuple(sorted(edited))))
            order = np.argsort([o.bases for o in outcomes])
            outcomes = [outcomes[i] for i in order]
            counts = counts[order]
            entries.append(
                ReferenceEntry(
                    reference_id=ref_id,
                    reference=ref_use,
                    outcomes=outcomes,
                    proportions=counts / counts.sum(),
                    read_counts=counts.astype(np.int64),
                )
            )
            seen_wild = False
            for out in outcomes:
                truth.append(
                    TruthRow(
                        profile.editor_id,
                        ref_id,
                        out.bases,
                        profile.outcome_probability(ref_use, out.edited_positions, window),
                    )
                )
                seen_wild = seen_wild or out.is_wildtype
            if not seen_wild:
                truth.append(
                    TruthRow(
                        profile.editor_id,
                        ref_id,
                        ref_use.flattened,
                        profile.outcome_probability(ref_use, frozenset(), window),
                    )
                )
        datasets[profile.editor_id] = LibraryDataset(
            profile.editor_id, profile.kind, mode, entries
        )
    return SyntheticScreen(datasets, truth, list(profiles))


def write_truth(truth: list[TruthRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(TRUTH_COLUMNS) + "\n")
        for row in sorted(truth, key=lambda r: (r.editor_id, r.reference_id, r.outcome_sequence)):
            fh.write(
                f"{row.editor_id}\t{row.reference_id}\t{row.outcome_sequence}\t"
                f"{format(row.probability, '.12g')}\n"
            )


def load_truth(path) -> dict[tuple[str, str, str], float]:
    """(editor_id, reference_id, outcome_sequence) -> oracle probability."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != TRUTH_COLUMNS:
            raise SchemaError(f"bad truth header {header!r}")
        table = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise SchemaError(f"line {lineno}: expected 4 fields")
            editor_id, reference_id, outcome, prob = fields
            table[(editor_id, reference_id, outcome)] = float(prob)
    return table


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"BEDK"
CHECKPOINT_VERSION = 1


def _meta_topology(meta: ModelMeta) -> dict:
    return {
        "mode": meta.mode.value,
        "window": list(meta.window),
        "editor_id": meta.editor_id,
        "editor_kind": meta.editor_kind,
        "dtype": meta.dtype,
    }


def _meta_from_topology(topo: dict) -> ModelMeta:
    return ModelMeta(
        mode=topo["mode"],
        window=tuple(topo["window"]),
        editor_id=topo["editor_id"],
        editor_kind=topo["editor_kind"],
        dtype=topo["dtype"],
    )


def _encoder_topology(cfg: nn.EncoderConfig, output_bias: bool) -> dict:
    return {
        "d_e": cfg.d_e,
        "d": cfg.d,
        "heads": cfg.heads,
        "blocks": cfg.blocks,
        "ffn_hidden": cfg.ffn_hidden,
        "output_bias": output_bias,
    }


def model_variant(model) -> str:
    return {
        EfficiencyModel: "efficiency",
        ProportionModel: "proportion",
        TwoStageModel: "two_stage",
        OneStageModel: "one_stage",
        MultiTaskModel: "multi_task",
    }[type(model)]


def _model_topology(model) -> dict:
    variant = model_variant(model)
    topo: dict = {"variant": variant, "meta": _meta_topology(model.meta)}
    if isinstance(model, EfficiencyModel):
        topo.update(channels=list(model.channels), hidden=model.hidden)
    elif isinstance(model, ProportionModel):
        topo.update(_encoder_topology(model.config, model.b_out is not None))
    elif isinstance(model, (TwoStageModel, OneStageModel)):
        prop = model.proportion
        topo.update(_encoder_topology(prop.config, prop.b_out is not None))
        if isinstance(model, TwoStageModel):
            topo.update(
                channels=list(model.efficiency.channels), hidden=model.efficiency.hidden
            )
    elif isinstance(model, MultiTaskModel):
        topo.update(_encoder_topology(model.config, None))
        topo["output_bias"] = next(iter(model.proportion_branches.values())).b_out is not None
        topo.update(
            editor_kinds=model.editor_kinds,
            shared_channels=list(model.shared_channels),
            branch_channels=list(model.branch_channels),
            hidden=model.hidden,
        )
    return topo


def _build_from_topology(topo: dict):
    variant = topo["variant"]
    meta = _meta_from_topology(topo["meta"])
    rng = RngStream(0, "checkpoint")
    if variant == "efficiency":
        return init_efficiency_model(meta, rng, tuple(topo["channels"]), topo["hidden"])
    cfg = lambda: nn.EncoderConfig(
        d_e=topo["d_e"], d=topo["d"], heads=topo["heads"],
        blocks=topo["blocks"], ffn_hidden=topo["ffn_hidden"],
    )
    if variant == "proportion":
        return init_proportion_model(meta, cfg(), rng, topo["output_bias"])
    if variant == "one_stage":
        return init_one_stage(meta, cfg(), rng, topo["output_bias"])
    if variant == "two_stage":
        return init_two_stage(
            meta, cfg(), rng, topo["output_bias"], tuple(topo["channels"]), topo["hidden"]
        )
    if variant == "multi_task":
        return init_multitask(
            meta,
            dict(topo["editor_kinds"]),
            cfg(),
            rng,
            topo["output_bias"],
            tuple(topo["shared_channels"]),
            tuple(topo["branch_channels"]),
            topo["hidden"],
        )
    raise TopologyMismatch(f"unknown model variant {variant!r}")


def save_checkpoint(model, path, config: dict | None = None, seed: int | None = None) -> None:
    """Serialize a model: magic, version, JSON topology header, then raw
    64-bit little-endian parameter blobs each guarded by a CRC32."""
    params = nn.named_parameters(model)
    header = {
        "topology": _model_topology(model),
        "config": config or {},
        "seed": seed,
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in params],
    }
    blob = io.BytesIO()
    blob.write(CHECKPOINT_MAGIC)
    blob.write(CHECKPOINT_VERSION.to_bytes(2, "little"))
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob.write(len(head).to_bytes(4, "little"))
    blob.write(head)
    for _, tensor in params:
        raw = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
        blob.write(zlib.crc32(raw).to_bytes(4, "little"))
        blob.write(raw)
    with open(path, "wb") as fh:
        fh.write(blob.getvalue())


def load_checkpoint(path, expect_variant: str | None = None):
    """Rebuild a model from a checkpoint; returns (model, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    if len(raw) < 10 or bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic)")
    version = int.from_bytes(view[4:6], "little")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, supported {CHECKPOINT_VERSION}")
    head_len = int.from_bytes(view[6:10], "little")
    if len(raw) < 10 + head_len:
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(bytes(view[10 : 10 + head_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None

    variant = header.get("topology", {}).get("variant")
    if expect_variant is not None and variant != expect_variant:
        raise TopologyMismatch(
            f"checkpoint holds a {variant!r} model, expected {expect_variant!r}"
        )
    model = _build_from_topology(header["topology"])
    params = nn.named_parameters(model)
    expected = [(p["name"], tuple(p["shape"])) for p in header["params"]]
    actual = [(n, t.data.shape) for n, t in params]
    if expected != actual:
        raise CorruptCheckpoint("parameter manifest does not match the topology")

    offset = 10 + head_len
    dtype = model.meta.np_dtype
    for name, tensor in params:
        n_bytes = tensor.data.size * 8
        if offset + 4 + n_bytes > len(raw):
            raise CorruptCheckpoint(f"truncated blob for {name}")
        crc = int.from_bytes(view[offset : offset + 4], "little")
        chunk = bytes(view[offset + 4 : offset + 4 + n_bytes])
        if zlib.crc32(chunk) != crc:
            raise CorruptCheckpoint(f"checksum mismatch in {name}")
        arr = np.frombuffer(chunk, dtype="<f8").reshape(tensor.data.shape)
        tensor.data = arr.astype(dtype)
        offset += 4 + n_bytes
    if offset != len(raw):
        raise CorruptCheckpoint("trailing bytes after final blob")
    return model, header
