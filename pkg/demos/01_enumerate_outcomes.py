"""Walk through outcome enumeration for a single reference.

An adenine base editor can convert any subset of the As inside its activity
window, so the outcome space of a reference is the power set of its editable
positions, plus the unedited wild type.  This script parses one reference,
lists the editable positions, and prints the full outcome table under two
different windows.
"""

from bepredict import (
    EditorClass,
    RepresentationMode,
    enumerate_outcomes,
    parse_reference,
)

PROTOSPACER = "GACTACGAATCGGTTCCGTA"
PAM = "AGGT"


def show(ref, editor, window):
    restricted = ref.restricted(ref.mode)
    outcomes = enumerate_outcomes(restricted, editor, window=window)
    positions = sorted(
        pos + 1
        for pos, base in enumerate(ref.protospacer)
        if base == editor.source_base and window[0] <= pos + 1 <= window[1]
    )
    print(f"window {window[0]}:{window[1]}  editable positions {positions}")
    print(f"{len(outcomes)} outcomes (2^{len(positions)}):")
    for out in outcomes:
        label = "wild type" if out.is_wildtype else (
            "edited at " + ",".join(str(p + 1) for p in sorted(out.edited_positions))
        )
        print(f"  {out.bases}  {label}")
    print()


def main():
    ref = parse_reference(PROTOSPACER + PAM, RepresentationMode.PROTOSPACER_PAM)
    print(f"reference: {ref.protospacer} + PAM {ref.pam}")
    print()

    abe = EditorClass.from_kind("ABE")
    show(ref, abe, (1, 20))
    # narrowing the window drops the A at position 18 from the support
    show(ref, abe, (1, 10))

    cbe = EditorClass.from_kind("CBE")
    print("same reference under a cytosine editor:")
    show(ref, cbe, (1, 20))


if __name__ == "__main__":
    main()
