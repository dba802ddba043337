"""Train one multi-task model across two editors that share an encoder.

The multi-task variant keeps a single reference encoder and a shared
convolutional trunk, with per-editor branches for the efficiency head and
per-editor outcome encoders for the proportions.  Training draws balanced
batches, the same number of references from every editor, and selects the
epoch with the best validation Spearman averaged across editors.  The
single-editor view of the trained model shares its parameters, so scoring a
branch is the same as scoring a two-stage model that happens to have been
trained jointly.
"""

from bepredict import (
    EncoderConfig,
    ModelMeta,
    generate_synthetic_screen,
    init_multitask,
)
from bepredict.data import OracleEditorProfile
from bepredict.evaluation import evaluate
from bepredict.models import predict_distribution
from bepredict.numcore import RngStream
from bepredict.training import TrainConfig, balanced_batches, split_dataset, train_multitask

KINDS = {"ABE-demo": "ABE", "CBE-demo": "CBE"}


def main():
    rng = RngStream(7, "profiles")
    profiles = [
        OracleEditorProfile.sample(e, k, rng.spawn(e)) for e, k in KINDS.items()
    ]
    screen = generate_synthetic_screen(
        profiles, n_references=200, reads_per_reference=2000,
        seed=7, mode="protospacer_pam",
    )
    splits = {e: split_dataset(screen.datasets[e], seed=0) for e in KINDS}

    meta = ModelMeta(mode="protospacer_pam", dtype="float32")
    model = init_multitask(
        meta, KINDS, EncoderConfig(d_e=16, d=16, heads=2, blocks=1),
        RngStream(0, "init"),
        shared_channels=(16,), branch_channels=(32,), hidden=16,
    )

    result = train_multitask(
        model,
        splits,
        TrainConfig.efficiency_defaults(
            epochs=40, batch_size=80, precision="float32", seed=0
        ),
        TrainConfig.proportion_defaults(
            epochs=3, cycle_len=3, precision="float32", seed=0
        ),
    )
    for editor_id in KINDS:
        eff = result.efficiency[editor_id]
        prop = result.proportion[editor_id]
        print(f"{editor_id}: efficiency best epoch {eff.best_epoch} "
              f"(val Spearman {eff.best_spearman:.4f}), "
              f"proportion best epoch {prop.best_epoch} "
              f"(val Spearman {prop.best_spearman:.4f})")

    print()
    print("test-set correlations per editor (all view):")
    for editor_id in KINDS:
        report = evaluate(model, splits[editor_id].test, editor_id=editor_id)
        row = report.find(editor_id, "all")
        print(f"  {editor_id}: n={row.n}  pearson {row.pearson:.4f}  "
              f"spearman {row.spearman:.4f}")

    entry = splits["CBE-demo"].test.entries[0]
    outcomes, probs = predict_distribution(model, entry.reference,
                                           editor_id="CBE-demo")
    print()
    print(f"top outcomes for {entry.reference_id} under CBE-demo:")
    for outcome, p in sorted(zip(outcomes, probs), key=lambda t: -t[1])[:4]:
        tag = "wild" if outcome.is_wildtype else "edit"
        print(f"  {outcome.bases}  {tag}  {p:.4f}")

    # the sampler behind joint training: every batch holds the same number
    # of references from each editor
    sizes = {e: len(splits[e].train.entries) for e in KINDS}
    batches = balanced_batches(sizes, batch_size=80, rng=RngStream(0, "batches"))
    counts = [
        {e: len(idx) for e, idx in batch.items()} for batch in batches[:3]
    ]
    print()
    print(f"balanced batches over train sizes {sizes}: first three draws {counts}")


if __name__ == "__main__":
    main()
