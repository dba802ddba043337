"""Objectives, splits, batch balancing, and the training loops."""

import numpy as np
import pytest

import bepredict.models as md
import bepredict.nn as nn
import bepredict.numcore as nc
import bepredict.seqcore as sq
import bepredict.training as bt
from bepredict.numcore import DivergedLoss, RngStream, Tensor
from helpers import param_grad_check

TINY = nn.EncoderConfig(d_e=8, d=8, heads=2, blocks=1)


def abe_meta(dtype="float64"):
    return md.ModelMeta(mode="protospacer_pam", window=(1, 20),
                        editor_id="ABE-t0", editor_kind="ABE", dtype=dtype)


def kl(target, pred):
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    nz = target > 0
    return float((target[nz] * np.log(target[nz] / pred[nz])).sum())


# --- losses ------------------------------------------------------------------


def test_efficiency_loss_matches_direct_kl():
    rng = np.random.default_rng(0)
    raw = rng.uniform(0.05, 0.95, size=(7, 1))
    pred = np.concatenate([raw, 1.0 - raw], axis=1)
    raw_t = rng.uniform(0.0, 1.0, size=(7, 1))
    target = np.concatenate([raw_t, 1.0 - raw_t], axis=1)
    want = sum(kl(t, p) for t, p in zip(target, pred))
    got = bt.efficiency_loss(Tensor(pred), target).item()
    assert got == pytest.approx(want, abs=1e-10)
    # zero exactly when the distributions agree
    assert bt.efficiency_loss(Tensor(target.copy()), target).item() == pytest.approx(0.0, abs=1e-12)
    assert got > 0


def test_efficiency_loss_validates_inputs():
    good = np.asarray([[0.5, 0.5]])
    with pytest.raises(bt.SupportMismatch):
        bt.efficiency_loss(Tensor(good), np.asarray([[0.5, 0.5], [0.5, 0.5]]))
    with pytest.raises(md.InvalidDistribution):
        bt.efficiency_loss(Tensor(np.asarray([[0.9, 0.3]])), good)
    with pytest.raises(md.InvalidDistribution):
        bt.efficiency_loss(Tensor(good), np.asarray([[1.2, -0.2]]))


def test_efficiency_loss_gradient():
    z = Tensor(np.asarray([[0.3, -0.2], [1.0, 2.0], [0.0, 0.5]]))
    target = np.asarray([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
    param_grad_check(
        lambda: bt.efficiency_loss(nc.softmax(z), target),
        [("z", z)],
        samples_per_param=6,
    )


def test_proportion_loss_matches_direct_kl():
    rng = np.random.default_rng(1)
    preds, targets = [], []
    for m in (2, 3, 5):
        p = rng.uniform(0.1, 1.0, m)
        t = rng.uniform(0.0, 1.0, m)
        preds.append(p / p.sum())
        targets.append(t / t.sum())
    want = float(np.mean([kl(t, p) for t, p in zip(targets, preds)]))
    assert bt.proportion_loss(preds, targets) == pytest.approx(want, abs=1e-10)
    assert bt.proportion_loss(targets, [t.copy() for t in targets]) == pytest.approx(0.0, abs=1e-12)


def test_proportion_loss_validates_inputs():
    with pytest.raises(bt.SupportMismatch):
        bt.proportion_loss([np.asarray([1.0])], [])
    with pytest.raises(bt.SupportMismatch):
        bt.proportion_loss([], [])
    with pytest.raises(bt.SupportMismatch):
        bt.proportion_loss([np.asarray([1.0])], [np.asarray([0.5, 0.5])])
    with pytest.raises(md.InvalidDistribution):
        bt.proportion_loss([np.asarray([0.5, 0.4])], [np.asarray([0.5, 0.5])])


def test_batched_proportion_loss_equals_reference_form(tiny_dataset):
    """The differentiable batch objective agrees with the plain-numpy loss."""
    meta = abe_meta()
    model = md.init_proportion_model(meta, TINY, RngStream(5, "loss"))
    packs = bt._proportion_packs(
        tiny_dataset.subset(range(6)), meta, np.float64, include_wildtype=False
    )
    assert len(packs) >= 4

    def score_fn(refs, outs, sels):
        return md.pair_log_scores(model, refs, outs, sels)

    batched = bt._proportion_batch_loss(
        packs, list(range(len(packs))), score_fn, np.float64
    ).item()
    preds = bt._conditional_predictions(packs, lambda r, o, s: score_fn(r, o, s), np.float64)
    want = bt.proportion_loss(preds, [p.target for p in packs])
    assert batched == pytest.approx(want, abs=1e-10)


def test_total_objective_adds_l2():
    loss = Tensor(np.asarray(2.0))
    params = [Tensor(np.asarray([3.0, 4.0]))]
    assert bt.total_objective(loss, params, 0.0) is loss
    assert bt.total_objective(loss, params, 2.0).item() == pytest.approx(27.0)


# --- splits and batches --------------------------------------------------------


def test_split_dataset_partitions_whole_references(tiny_dataset):
    splits = bt.split_dataset(tiny_dataset, seed=3)
    ids = lambda ds: [e.reference_id for e in ds.entries]
    train, val, test = ids(splits.train), ids(splits.val), ids(splits.test)
    assert len(train) == 32 and len(val) == 4 and len(test) == 4
    assert sorted(train + val + test) == sorted(ids(tiny_dataset))
    assert not (set(train) & set(val)) and not (set(train) & set(test))

    again = bt.split_dataset(tiny_dataset, seed=3)
    assert ids(again.train) == train
    other = bt.split_dataset(tiny_dataset, seed=4)
    assert ids(other.train) != train


def test_split_dataset_rejects_tiny_inputs(tiny_dataset):
    with pytest.raises(bt.TooFewReferences):
        bt.split_dataset(tiny_dataset.subset(range(9)), seed=0)
    with pytest.raises(ValueError):
        bt.SplitSpec(fractions=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        bt.SplitSpec(fractions=(1.0, 0.0, 0.0))


def test_balanced_batches_exact_per_editor_counts():
    rng = RngStream(0, "batches")
    batches = bt.balanced_batches({"a": 10, "b": 4}, batch_size=6, rng=rng)
    assert len(batches) == 4  # ceil(10 / 3)
    seen_a, seen_b = [], []
    for batch in batches:
        assert set(batch) == {"a", "b"}
        assert len(batch["a"]) == 3 and len(batch["b"]) == 3
        seen_a.extend(batch["a"])
        seen_b.extend(batch["b"])
    # the larger library is fully covered; the smaller is topped up
    assert set(seen_a) == set(range(10))
    assert set(seen_b) <= set(range(4))
    assert len(seen_b) == 12  # topped up with replacement

    with pytest.raises(ValueError, match="divisible"):
        bt.balanced_batches({"a": 10, "b": 4}, batch_size=5, rng=rng)
    with pytest.raises(ValueError):
        bt.balanced_batches({}, batch_size=4, rng=rng)


# --- log formatting --------------------------------------------------------------


def test_training_log_format(tmp_path):
    rows = [
        bt.LogRow(1, "train", 0.5, np.nan, np.nan, 3e-4, 12.3456),
        bt.LogRow(1, "val", 0.25, 0.75, 0.5, 3e-4, 7.0),
    ]
    path = tmp_path / "log.tsv"
    bt.write_training_log(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "\t".join(bt.LOG_COLUMNS)
    assert lines[1] == "1\ttrain\t0.5\tnan\tnan\t0.0003\t12.346"
    assert lines[2] == "1\tval\t0.25\t0.75\t0.5\t0.0003\t7.000"


# --- training loops ---------------------------------------------------------------


def strip_wall(rows):
    return [(r.epoch, r.split, r.loss, r.pearson, r.spearman, r.lr) for r in rows]


@pytest.fixture(scope="module")
def tiny_splits(tiny_dataset):
    return bt.split_dataset(tiny_dataset, seed=0)


def eff_config(**overrides):
    values = dict(batch_size=16, epochs=8, base_lr=3e-3, max_lr_multiplier=4.0,
                  cycle_len=4, dropout=0.1, l2_lambda=1e-4, seed=1)
    values.update(overrides)
    return bt.TrainConfig(**values)


def test_train_efficiency_loop(tiny_splits):
    model = md.init_efficiency_model(abe_meta(), RngStream(2, "eff"),
                                     channels=(8, 16), hidden=8)
    config = eff_config()
    result = bt.train_efficiency(model, tiny_splits, config)

    assert [(r.epoch, r.split) for r in result.log] == [
        (e, s) for e in range(1, 9) for s in ("train", "val")
    ]
    for row in result.log:
        assert np.isfinite(row.loss) and row.loss >= -1e-9
        assert row.lr == pytest.approx(
            nc.cyclic_lr(row.epoch - 1, config.base_lr, config.max_lr, config.cycle_len)
        )
    val_rows = [r for r in result.log if r.split == "val"]
    assert result.best_spearman == max(r.spearman for r in val_rows)
    assert val_rows[result.best_epoch - 1].spearman == result.best_spearman

    # parameters were restored to the best epoch's snapshot
    x_val, y_val = bt._efficiency_arrays(tiny_splits.val, model.meta, np.float64)
    pred = md.efficiency_forward_batch(model, Tensor(x_val))
    from bepredict.evaluation import spearman
    assert spearman(pred.data[:, 0], y_val[:, 0]) == pytest.approx(
        result.best_spearman, abs=1e-12
    )

    # train loss trends down over the run
    train_rows = [r.loss for r in result.log if r.split == "train"]
    assert train_rows[-1] < train_rows[0]


def test_train_efficiency_is_deterministic(tiny_splits):
    runs = []
    for _ in range(2):
        model = md.init_efficiency_model(abe_meta(), RngStream(2, "eff"),
                                         channels=(8, 16), hidden=8)
        result = bt.train_efficiency(model, tiny_splits, eff_config(epochs=4))
        runs.append((strip_wall(result.log),
                     {n: t.data.copy() for n, t in nn.named_parameters(model)}))
    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        assert np.array_equal(runs[0][1][name], runs[1][1][name]), name


def test_train_proportion_loop(tiny_splits):
    meta = abe_meta()
    model = md.init_proportion_model(meta, TINY, RngStream(3, "prop"))
    config = bt.TrainConfig(batch_size=64, epochs=4, base_lr=1e-3,
                            max_lr_multiplier=4.0, cycle_len=4, dropout=0.1,
                            l2_lambda=1e-4, seed=2)
    result = bt.train_proportion(model, tiny_splits, config)
    assert len(result.log) == 8
    val_rows = [r for r in result.log if r.split == "val"]
    assert result.best_spearman == max(r.spearman for r in val_rows)

    # restored parameters reproduce the best validation Spearman
    packs = bt._proportion_packs(tiny_splits.val, meta, np.float64, False)
    preds = bt._conditional_predictions(
        packs, lambda r, o, s: md.pair_log_scores(model, r, o, s), np.float64
    )
    from bepredict.evaluation import spearman
    pooled = np.concatenate(preds)
    target = np.concatenate([p.target for p in packs])
    assert spearman(pooled, target) == pytest.approx(result.best_spearman, abs=1e-12)


def test_train_diverged_loss(tiny_splits):
    model = md.init_efficiency_model(abe_meta(), RngStream(2, "eff"),
                                     channels=(8, 16), hidden=8)
    with np.errstate(over="ignore"), pytest.raises(DivergedLoss):
        bt.train_efficiency(model, tiny_splits, eff_config(l2_lambda=1e308))


def test_train_two_stage_runs_both_stages(tiny_splits):
    model = md.init_two_stage(abe_meta(), TINY, RngStream(4, "ts"),
                              channels=(8, 16), hidden=8)
    result = bt.train_two_stage(
        model, tiny_splits, eff_config(epochs=2),
        bt.TrainConfig(batch_size=64, epochs=2, seed=2),
    )
    assert len(result.efficiency.log) == 4
    assert len(result.proportion.log) == 4


def test_train_multitask_joint_selection(tiny_screen):
    meta = md.ModelMeta(mode="protospacer_pam", window=(1, 20), dtype="float64")
    kinds = {e: d.editor_kind for e, d in tiny_screen.datasets.items()}
    model = md.init_multitask(meta, kinds, TINY, RngStream(6, "mt"),
                              shared_channels=(8,), branch_channels=(16,), hidden=8)
    splits = {e: bt.split_dataset(d, seed=0) for e, d in tiny_screen.datasets.items()}
    result = bt.train_multitask(
        model, splits,
        eff_config(epochs=3, batch_size=8),
        bt.TrainConfig(batch_size=64, epochs=2, seed=2),
    )
    editors = sorted(kinds)
    for stage in (result.efficiency, result.proportion):
        assert sorted(stage) == editors
        # one jointly selected epoch, per-editor metrics read off at it
        epochs = {stage[e].best_epoch for e in editors}
        assert len(epochs) == 1
        for e in editors:
            r = stage[e]
            assert len(r.log) == 2 * (3 if stage is result.efficiency else 2)
            assert r.best_spearman == bt._val_spearman_at(r.log, r.best_epoch)


def test_train_multitask_rejects_indivisible_batch(tiny_screen):
    meta = md.ModelMeta(mode="protospacer_pam", window=(1, 20), dtype="float64")
    kinds = {e: d.editor_kind for e, d in tiny_screen.datasets.items()}
    model = md.init_multitask(meta, kinds, TINY, RngStream(6, "mt"),
                              shared_channels=(8,), branch_channels=(16,), hidden=8)
    splits = {e: bt.split_dataset(d, seed=0) for e, d in tiny_screen.datasets.items()}
    with pytest.raises(ValueError, match="divisible"):
        bt.train_multitask_efficiency(model, splits, eff_config(epochs=1, batch_size=9))
