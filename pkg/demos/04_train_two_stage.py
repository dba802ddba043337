"""Train a small two-stage model end to end.

The two-stage model splits the prediction into an efficiency network (was the
reference edited at all?) and a proportion network (given that it was edited,
which outcome?).  The stages train separately, each selecting the epoch with
the best validation Spearman correlation.  This demo trains a deliberately
tiny encoder on a small screen, saves the result, reloads it, and predicts a
distribution for one held-out reference.
"""

import tempfile
from pathlib import Path

from bepredict import (
    EncoderConfig,
    ModelMeta,
    generate_synthetic_screen,
    init_two_stage,
    load_checkpoint,
    save_checkpoint,
)
from bepredict.data import OracleEditorProfile
from bepredict.models import predict_distribution
from bepredict.numcore import RngStream
from bepredict.training import TrainConfig, split_dataset, train_two_stage

EDITOR = "ABE-demo"


def main():
    profile = OracleEditorProfile.sample(
        EDITOR, "ABE", RngStream(7, "profiles").spawn(EDITOR)
    )
    screen = generate_synthetic_screen(
        [profile], n_references=200, reads_per_reference=2000,
        seed=7, mode="protospacer_pam",
    )
    splits = split_dataset(screen.datasets[EDITOR], seed=0)
    print(
        f"references: {len(splits.train.entries)} train / "
        f"{len(splits.val.entries)} val / {len(splits.test.entries)} test"
    )

    meta = ModelMeta(
        mode="protospacer_pam", editor_id=EDITOR, editor_kind="ABE",
        dtype="float32",
    )
    config = EncoderConfig(d_e=16, d=16, heads=2, blocks=1)
    model = init_two_stage(meta, config, RngStream(0, "init"))

    result = train_two_stage(
        model,
        splits,
        TrainConfig.efficiency_defaults(epochs=15, precision="float32", seed=0),
        TrainConfig.proportion_defaults(
            epochs=3, cycle_len=3, precision="float32", seed=0
        ),
    )
    print(
        f"efficiency stage: best epoch {result.efficiency.best_epoch}, "
        f"val Spearman {result.efficiency.best_spearman:.4f}"
    )
    print(
        f"proportion stage: best epoch {result.proportion.best_epoch}, "
        f"val Spearman {result.proportion.best_spearman:.4f}"
    )

    entry = splits.test.entries[0]
    print()
    print(f"predicted distribution for test reference {entry.reference_id}:")
    outcomes, probs = predict_distribution(model, entry.reference)
    observed = dict(zip((o.bases for o in entry.outcomes), entry.proportions))
    for outcome, p in sorted(zip(outcomes, probs), key=lambda t: -t[1]):
        obs = observed.get(outcome.bases)
        shown = f"{obs:.4f}" if obs is not None else "    - "
        tag = "wild" if outcome.is_wildtype else "edit"
        print(f"  {outcome.bases}  {tag}  pred {p:.4f}  observed {shown}")
    print(f"  (sum of predictions: {probs.sum():.6f})")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt"
        save_checkpoint(model, path)
        reloaded, header = load_checkpoint(path)
        _, probs2 = predict_distribution(reloaded, entry.reference)
        same = bool((probs == probs2).all())
        print()
        print(f"checkpoint round trip: {path.stat().st_size} bytes, "
              f"predictions bit-identical: {same}")


if __name__ == "__main__":
    main()
