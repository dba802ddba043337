"""Sequence types and outcome enumeration for base-editing screens.

A reference site is a 20 nt protospacer, optionally extended by a 4 nt PAM
and 5 nt overhangs on each side.  A base editor converts a fixed source base
into a fixed target base (A->G for ABE, C->T for CBE) at positions inside an
editing window on the protospacer.  Outcomes are full-length sequences that
differ from the reference only at edited positions; the unedited sequence is
the wild-type outcome.

Positions are 1-based in user-facing values (window bounds, reported edit
positions) and 0-based in array indices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

BASES = "ACGT"
BASE_TO_INDEX = {b: i for i, b in enumerate(BASES)}

PROTOSPACER_LENGTH = 20
PAM_LENGTH = 4
OVERHANG_LENGTH = 5

# 2**16 outcome sequences is the largest set enumerate_outcomes will build
# before refusing; beyond that the caller must narrow the window.
MAX_ENUMERATION_TARGETS = 16

FULL_WINDOW = (1, PROTOSPACER_LENGTH)


class SequenceError(ValueError):
    """Base class for sequence validation failures."""


class InvalidCharacter(SequenceError):
    """A sequence contains a character outside ACGT."""


class LengthMismatch(SequenceError):
    """A sequence segment has the wrong length for its role."""


class WindowOutOfRange(SequenceError):
    """An editing window lies outside the protospacer."""


class TooManyTargetBases(SequenceError):
    """Enumeration would exceed the outcome-set cap."""


class IllegalOutcome(SequenceError):
    """An outcome sequence is not reachable from its reference."""


class RepresentationMode(str, Enum):
    """How much sequence context a model consumes."""

    PROTOSPACER = "protospacer"
    PROTOSPACER_PAM = "protospacer_pam"
    FULL = "full"

    @property
    def has_pam(self) -> bool:
        return self is not RepresentationMode.PROTOSPACER

    @property
    def has_overhangs(self) -> bool:
        return self is RepresentationMode.FULL

    @property
    def length(self) -> int:
        """Flattened sequence length under this mode (20, 24 or 34)."""
        n = PROTOSPACER_LENGTH
        if self.has_pam:
            n += PAM_LENGTH
        if self.has_overhangs:
            n += 2 * OVERHANG_LENGTH
        return n

    @property
    def protospacer_start(self) -> int:
        """0-based index of protospacer position 1 in the flattened sequence."""
        return OVERHANG_LENGTH if self.has_overhangs else 0


def _check_segment(name: str, text: str, expected_length: int) -> str:
    if len(text) != expected_length:
        raise LengthMismatch(
            f"{name} must be {expected_length} nt, got {len(text)} ({text!r})"
        )
    for i, ch in enumerate(text):
        if ch not in BASE_TO_INDEX:
            raise InvalidCharacter(f"{name} has non-ACGT character {ch!r} at index {i}")
    return text


class Nucleotide(str, Enum):
    A = "A"
    C = "C"
    G = "G"
    T = "T"


@dataclass(frozen=True)
class EditorClass:
    """A base editor's conversion chemistry."""

    kind: str
    source_base: str
    target_base: str

    _ALLOWED = {"ABE": ("A", "G"), "CBE": ("C", "T")}

    def __post_init__(self) -> None:
        if self.kind not in self._ALLOWED:
            raise SequenceError(f"unknown editor kind {self.kind!r}, expected ABE or CBE")
        src, tgt = self._ALLOWED[self.kind]
        if (self.source_base, self.target_base) != (src, tgt):
            raise SequenceError(
                f"{self.kind} converts {src}->{tgt}, got "
                f"{self.source_base}->{self.target_base}"
            )

    @classmethod
    def from_kind(cls, kind: str) -> "EditorClass":
        kind = kind.upper()
        if kind not in cls._ALLOWED:
            raise SequenceError(f"unknown editor kind {kind!r}, expected ABE or CBE")
        src, tgt = cls._ALLOWED[kind]
        return cls(kind, src, tgt)

    @classmethod
    def abe(cls) -> "EditorClass":
        return cls.from_kind("ABE")

    @classmethod
    def cbe(cls) -> "EditorClass":
        return cls.from_kind("CBE")


@dataclass(frozen=True)
class ReferenceSequence:
    """An unedited target site, segmented into its structural parts."""

    protospacer: str
    pam: str = ""
    left_overhang: str = ""
    right_overhang: str = ""

    def __post_init__(self) -> None:
        _check_segment("protospacer", self.protospacer, PROTOSPACER_LENGTH)
        if self.pam:
            _check_segment("pam", self.pam, PAM_LENGTH)
        if self.left_overhang or self.right_overhang:
            if not self.pam:
                raise LengthMismatch("overhangs require a PAM segment")
            _check_segment("left_overhang", self.left_overhang, OVERHANG_LENGTH)
            _check_segment("right_overhang", self.right_overhang, OVERHANG_LENGTH)

    @property
    def mode(self) -> RepresentationMode:
        if self.left_overhang:
            return RepresentationMode.FULL
        if self.pam:
            return RepresentationMode.PROTOSPACER_PAM
        return RepresentationMode.PROTOSPACER

    @property
    def flattened(self) -> str:
        """Concatenated sequence: left overhang, protospacer, PAM, right overhang."""
        return self.left_overhang + self.protospacer + self.pam + self.right_overhang

    @property
    def length(self) -> int:
        return len(self.flattened)

    @property
    def protospacer_start(self) -> int:
        return len(self.left_overhang)

    def restricted(self, mode: RepresentationMode) -> "ReferenceSequence":
        """Drop segments the given mode does not consume."""
        if mode is RepresentationMode.PROTOSPACER:
            return ReferenceSequence(self.protospacer)
        if mode is RepresentationMode.PROTOSPACER_PAM:
            if not self.pam:
                raise LengthMismatch("reference has no PAM segment")
            return ReferenceSequence(self.protospacer, self.pam)
        if not self.left_overhang:
            raise LengthMismatch("reference has no overhang segments")
        return self


def parse_reference(text: str, mode: RepresentationMode) -> ReferenceSequence:
    """Split a flattened sequence into segments according to the mode layout.

    Args:
        text: flattened sequence of length ``mode.length``.
        mode: segment layout to assume.

    Returns:
        The segmented reference.
    """
    if len(text) != mode.length:
        raise LengthMismatch(
            f"{mode.value} sequence must be {mode.length} nt, got {len(text)}"
        )
    start = mode.protospacer_start
    proto = text[start : start + PROTOSPACER_LENGTH]
    pam = ""
    if mode.has_pam:
        pam = text[start + PROTOSPACER_LENGTH : start + PROTOSPACER_LENGTH + PAM_LENGTH]
    left = text[:start]
    right = ""
    if mode.has_overhangs:
        right = text[start + PROTOSPACER_LENGTH + PAM_LENGTH :]
    return ReferenceSequence(proto, pam, left, right)


@dataclass(frozen=True)
class OutcomeSequence:
    """One editing outcome: the full sequence plus which positions were edited.

    ``edited_positions`` holds 0-based protospacer indices; empty means
    wild-type.
    """

    bases: str
    edited_positions: frozenset[int] = field(default_factory=frozenset)

    @property
    def is_wildtype(self) -> bool:
        return not self.edited_positions

    @property
    def edit_count(self) -> int:
        return len(self.edited_positions)


@dataclass(frozen=True)
class EditMask:
    """Per-position editability flags over a flattened sequence."""

    flags: tuple[bool, ...]

    @property
    def positions(self) -> tuple[int, ...]:
        """0-based flattened indices where edits are allowed."""
        return tuple(i for i, f in enumerate(self.flags) if f)

    @property
    def count(self) -> int:
        return sum(self.flags)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.flags, dtype=bool)


def validate_window(window: tuple[int, int]) -> tuple[int, int]:
    lo, hi = window
    if not (1 <= lo <= hi <= PROTOSPACER_LENGTH):
        raise WindowOutOfRange(
            f"window {lo}:{hi} must satisfy 1 <= start <= end <= {PROTOSPACER_LENGTH}"
        )
    return lo, hi


def edit_mask(
    ref: ReferenceSequence,
    editor: EditorClass,
    window: tuple[int, int] = FULL_WINDOW,
) -> EditMask:
    """Mark the editable positions of a reference.

    A position is editable when it lies inside the window (1-based, inclusive,
    protospacer coordinates) and the reference carries the editor's source
    base there.  PAM and overhang positions are never editable.
    """
    lo, hi = validate_window(window)
    start = ref.protospacer_start
    flat = ref.flattened
    flags = [False] * len(flat)
    for p in range(lo - 1, hi):
        if ref.protospacer[p] == editor.source_base:
            flags[start + p] = True
    return EditMask(tuple(flags))


def apply_edits(
    ref: ReferenceSequence, editor: EditorClass, protospacer_positions: tuple[int, ...]
) -> OutcomeSequence:
    """Substitute the target base at the given 0-based protospacer positions."""
    start = ref.protospacer_start
    chars = list(ref.flattened)
    for p in protospacer_positions:
        if ref.protospacer[p] != editor.source_base:
            raise IllegalOutcome(
                f"protospacer position {p + 1} holds {ref.protospacer[p]!r}, "
                f"not the source base {editor.source_base!r}"
            )
        chars[start + p] = editor.target_base
    return OutcomeSequence("".join(chars), frozenset(protospacer_positions))


def enumerate_outcomes(
    ref: ReferenceSequence,
    editor: EditorClass,
    window: tuple[int, int] = FULL_WINDOW,
    include_wildtype: bool = True,
    max_targets: int = MAX_ENUMERATION_TARGETS,
) -> list[OutcomeSequence]:
    """Enumerate every outcome reachable by editing a subset of masked positions.

    The order is deterministic: subsets sorted by size, then lexicographically
    by position tuple.  A reference with k editable positions yields 2**k
    outcomes (including wild-type), so k is capped at ``max_targets``.
    """
    mask = edit_mask(ref, editor, window)
    start = ref.protospacer_start
    editable = tuple(i - start for i in mask.positions)
    if len(editable) > max_targets:
        raise TooManyTargetBases(
            f"{len(editable)} editable positions exceed the cap of {max_targets}; "
            "narrow the window"
        )
    sizes = range(0 if include_wildtype else 1, len(editable) + 1)
    return [
        apply_edits(ref, editor, subset)
        for subset in itertools.chain.from_iterable(
            itertools.combinations(editable, r) for r in sizes
        )
    ]


def diff_positions(ref: ReferenceSequence, outcome_bases: str) -> list[int]:
    """0-based flattened indices where an outcome differs from its reference."""
    flat = ref.flattened
    if len(outcome_bases) != len(flat):
        raise LengthMismatch(
            f"outcome length {len(outcome_bases)} != reference length {len(flat)}"
        )
    return [i for i, (a, b) in enumerate(zip(flat, outcome_bases)) if a != b]


def classify_outcome(
    ref: ReferenceSequence,
    editor: EditorClass,
    outcome_bases: str,
    window: tuple[int, int] = FULL_WINDOW,
) -> OutcomeSequence:
    """Validate an outcome string against a reference and editor.

    Every differing position must be an editable position converted to the
    editor's target base; anything else raises IllegalOutcome.
    """
    for i, ch in enumerate(outcome_bases):
        if ch not in BASE_TO_INDEX:
            raise InvalidCharacter(f"outcome has non-ACGT character {ch!r} at index {i}")
    mask = edit_mask(ref, editor, window)
    start = ref.protospacer_start
    edited = []
    for i in diff_positions(ref, outcome_bases):
        if not mask.flags[i]:
            raise IllegalOutcome(
                f"outcome differs at non-editable flattened position {i + 1}"
            )
        if outcome_bases[i] != editor.target_base:
            raise IllegalOutcome(
                f"position {i + 1} changed to {outcome_bases[i]!r}, expected the "
                f"target base {editor.target_base!r}"
            )
        edited.append(i - start)
    return OutcomeSequence(outcome_bases, frozenset(edited))


def encode_indices(sequence: str) -> np.ndarray:
    """Map a sequence string to integer codes (A=0, C=1, G=2, T=3)."""
    try:
        return np.asarray([BASE_TO_INDEX[ch] for ch in sequence], dtype=np.int64)
    except KeyError as exc:
        raise InvalidCharacter(f"non-ACGT character {exc.args[0]!r}") from None


def one_hot(sequence: str | ReferenceSequence | OutcomeSequence) -> np.ndarray:
    """One-hot encode a sequence as a (length, 4) float array.

    Exactly one entry per row is 1; column order is A, C, G, T.
    """
    if isinstance(sequence, ReferenceSequence):
        text = sequence.flattened
    elif isinstance(sequence, OutcomeSequence):
        text = sequence.bases
    else:
        text = sequence
    idx = encode_indices(text)
    out = np.zeros((len(idx), len(BASES)))
    out[np.arange(len(idx)), idx] = 1.0
    return out
