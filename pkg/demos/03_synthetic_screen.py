"""Generate a small synthetic editing screen and inspect it.

The generator samples a hidden per-editor profile (position preferences,
overall activity, PAM context effects), draws a shared reference panel, and
simulates read counts from the exact outcome distributions the profile
implies.  Those exact distributions are kept as a ground-truth table so that
model predictions can later be scored against the noiseless target, not just
the sampled counts.
"""

import collections
import tempfile
from pathlib import Path

from bepredict import generate_synthetic_screen, write_library
from bepredict.data import OracleEditorProfile, write_truth
from bepredict.numcore import RngStream


def main():
    rng = RngStream(7, "profiles")
    profiles = [
        OracleEditorProfile.sample("ABE-demo", "ABE", rng.spawn("ABE-demo")),
        OracleEditorProfile.sample("CBE-demo", "CBE", rng.spawn("CBE-demo")),
    ]
    screen = generate_synthetic_screen(
        profiles,
        n_references=50,
        reads_per_reference=2000,
        seed=7,
        mode="protospacer_pam",
    )

    for editor_id, dataset in screen.datasets.items():
        rows = sum(len(entry.outcomes) for entry in dataset.entries)
        wild = [entry.wildtype_proportion for entry in dataset.entries]
        print(f"{editor_id}: {len(dataset.entries)} references, {rows} outcome rows")
        print(f"  mean wild-type proportion {sum(wild) / len(wild):.3f}")
        sizes = collections.Counter(len(entry.outcomes) for entry in dataset.entries)
        print(f"  outcomes per reference: {dict(sorted(sizes.items()))}")

    entry = screen.datasets["ABE-demo"].entries[0]
    print()
    print(f"first reference ({entry.reference_id}): {entry.reference.protospacer}")
    for outcome, prop in sorted(
        zip(entry.outcomes, entry.proportions), key=lambda t: -t[1]
    ):
        tag = "wild" if outcome.is_wildtype else "edit"
        print(f"  {outcome.bases}  {tag}  {prop:.4f}")

    # round trip through the on-disk formats
    with tempfile.TemporaryDirectory() as tmp:
        lib = Path(tmp) / "library.tsv"
        truth = Path(tmp) / "truth.tsv"
        write_library(screen.datasets, lib, counts=True)
        write_truth(screen.truth, truth)
        print()
        print(f"library file: {len(lib.read_text().splitlines()) - 1} rows")
        print(f"truth file:   {len(truth.read_text().splitlines()) - 1} rows")
        print("first library rows:")
        for line in lib.read_text().splitlines()[:4]:
            print("  " + line)


if __name__ == "__main__":
    main()
