"""Command-line surface: synth, train, predict, evaluate, enumerate.

Configuration comes from three layers with increasing precedence: built-in
defaults, a flat key=value config file (``--config``), and explicit flags.
Every run is deterministic given the resolved config and ``--seed``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.  All
failures print a single diagnostic line ``ERROR <code>: message`` to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import data as bedata
from . import evaluation as beval
from . import models as bemodels
from . import nn as benn
from . import seqcore as sq
from . import training as betrain
from .numcore import DivergedLoss, RngStream, set_debug_checks

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

VARIANTS = ("one-stage", "two-stage", "multi-task")


class ConfigError(ValueError):
    """Rejected configuration: bad value, unknown key, or invalid combination."""


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise ValueError(f"expected a positive integer, got {value}")
    return number


def _fraction(value: str) -> float:
    number = float(value)
    if not 0.0 < number < 1.0:
        raise ValueError(f"expected a fraction in (0, 1), got {value}")
    return number


def _window(value: str) -> tuple[int, int]:
    parts = value.split(":")
    if len(parts) != 2:
        raise ValueError(f"window must look like A:B, got {value!r}")
    return sq.validate_window((int(parts[0]), int(parts[1])))


def _editor_list(value: str) -> list[tuple[str, str]]:
    """Either a count (auto-named editors) or ``id:kind`` pairs."""
    value = value.strip()
    if value.isdigit():
        count = int(value)
        if count < 1:
            raise ValueError("need at least one editor")
        kinds = ["ABE", "CBE"]
        return [(f"{kinds[i % 2]}-sim{i}", kinds[i % 2]) for i in range(count)]
    editors = []
    for item in value.split(","):
        pair = item.strip().split(":")
        if len(pair) != 2 or not pair[0] or not pair[1]:
            raise ValueError(f"editor spec must be id:kind, got {item!r}")
        editors.append((pair[0], pair[1].upper()))
    ids = [e for e, _ in editors]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate editor ids in --editors")
    return editors


# One row per config key: caster and default.  Flag names reuse the key with
# dashes, so the file and the command line always agree on spelling.
CONFIG_SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "mode": (sq.RepresentationMode, None),
    "variant": (str, "two-stage"),
    "window": (_window, sq.FULL_WINDOW),
    "editors": (_editor_list, _editor_list("3")),
    "refs": (_positive_int, 2000),
    "reads": (_positive_int, 5000),
    "min_targets": (_positive_int, 1),
    "max_targets": (_positive_int, 3),
    "d_e": (_positive_int, 124),
    "d": (_positive_int, 124),
    "heads": (_positive_int, 8),
    "blocks": (_positive_int, 12),
    "ffn_hidden": (_positive_int, None),
    "efficiency_epochs": (_positive_int, 300),
    "proportion_epochs": (_positive_int, 150),
    "efficiency_batch": (_positive_int, 100),
    "proportion_batch": (_positive_int, 400),
    "base_lr": (float, 3e-4),
    "max_lr_multiplier": (float, 5.0),
    "cycle_len": (_positive_int, 10),
    "dropout": (float, 0.2),
    "l2_lambda": (float, 1e-4),
    "precision": (str, "float64"),
    "train_fraction": (_fraction, 0.8),
    "val_fraction": (_fraction, 0.1),
    "test_fraction": (_fraction, 0.1),
    "workers": (_positive_int, 1),
}


@dataclass
class RunConfig:
    """Validated, fully resolved settings for one command invocation."""

    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    def __getattr__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def was_set(self, key: str) -> bool:
        return key in self.explicit


def read_config_file(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        entries[key] = value
    return entries


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults < config file < explicit flags, then validate."""
    values = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    explicit: set[str] = set()

    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            caster = CONFIG_SCHEMA[key][0]
            try:
                values[key] = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
            explicit.add(key)

    for key in CONFIG_SCHEMA:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
            explicit.add(key)

    # flags arrive as raw strings while config files are cast on read
    if values.get("mode") is not None:
        values["mode"] = sq.RepresentationMode(values["mode"])

    config = RunConfig(values, explicit)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {config.variant!r}")
    if config.precision not in ("float32", "float64"):
        raise ConfigError(f"precision must be float32 or float64, got {config.precision!r}")
    total = config.train_fraction + config.val_fraction + config.test_fraction
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {total}")
    if config.max_targets < config.min_targets:
        raise ConfigError("max_targets must be >= min_targets")
    if not 0.0 <= config.dropout < 1.0:
        raise ConfigError(f"dropout must be in [0, 1), got {config.dropout}")
    if config.max_lr_multiplier < 1.0:
        raise ConfigError("max_lr_multiplier must be >= 1")
    try:
        benn.EncoderConfig(config.d_e, config.d, config.heads, config.blocks,
                           config.ffn_hidden)
    except Exception as exc:
        raise ConfigError(str(exc)) from None


def _encoder_config(config: RunConfig) -> benn.EncoderConfig:
    return benn.EncoderConfig(config.d_e, config.d, config.heads, config.blocks,
                              config.ffn_hidden)


def _split_spec(config: RunConfig) -> betrain.SplitSpec:
    fractions = (config.train_fraction, config.val_fraction, config.test_fraction)
    return betrain.SplitSpec(fractions=fractions)


def _train_configs(config: RunConfig, n_editors: int = 1):
    shared = dict(
        base_lr=config.base_lr,
        max_lr_multiplier=config.max_lr_multiplier,
        cycle_len=config.cycle_len,
        dropout=config.dropout,
        l2_lambda=config.l2_lambda,
        precision=config.precision,
        seed=config.seed,
    )
    eff_batch = config.efficiency_batch
    if n_editors > 1 and eff_batch % n_editors:
        if config.was_set("efficiency_batch"):
            raise ConfigError(
                f"efficiency_batch={eff_batch} is not divisible by {n_editors} editors"
            )
        eff_batch -= eff_batch % n_editors  # default batch, round down silently
    eff = betrain.TrainConfig.efficiency_defaults(
        batch_size=eff_batch, epochs=config.efficiency_epochs, **shared
    )
    prop = betrain.TrainConfig.proportion_defaults(
        batch_size=config.proportion_batch, epochs=config.proportion_epochs, **shared
    )
    return eff, prop


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if config.reads < 100:
        raise ConfigError(f"reads={config.reads} is below the floor of 100")
    if config.refs < 10:
        raise ConfigError(f"refs={config.refs} is too small to split (need >= 10)")
    mode = config.mode or sq.RepresentationMode.FULL

    rng = RngStream(config.seed, "synth/profiles")
    profiles = [
        bedata.OracleEditorProfile.sample(editor_id, kind, rng.spawn(editor_id))
        for editor_id, kind in config.editors
    ]
    screen = bedata.generate_synthetic_screen(
        profiles,
        n_references=config.refs,
        reads_per_reference=config.reads,
        seed=config.seed,
        mode=mode,
        window=config.window,
        min_targets=config.min_targets,
        max_targets=config.max_targets,
    )

    out = args.out
    os.makedirs(out, exist_ok=True)
    paths = []
    for editor_id in sorted(screen.datasets):
        path = os.path.join(out, f"library.{editor_id}.tsv")
        bedata.write_library({editor_id: screen.datasets[editor_id]}, path)
        paths.append(path)
    truth_path = os.path.join(out, "truth.tsv")
    bedata.write_truth(screen.truth, truth_path)

    print("editor\t#ins\t#refseq\t#outcome\twildtype_fraction\tmean_proportion")
    for editor_id in sorted(screen.datasets):
        dataset = screen.datasets[editor_id]
        n_refs = len(dataset.entries)
        n_ins = sum(len(e.outcomes) for e in dataset.entries)
        wt = float(np.mean([
            sum(p for o, p in zip(e.outcomes, e.proportions) if not o.edited_positions)
            for e in dataset.entries
        ]))
        mean_prop = float(np.mean([p for e in dataset.entries for p in e.proportions]))
        print(f"{editor_id}\t{n_ins}\t{n_refs}\t{n_ins / n_refs:.2f}"
              f"\t{wt:.3f}\t{mean_prop:.3f}")
    print(f"wrote {len(paths)} library files and {truth_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_libraries(paths, mode_flag) -> dict[str, bedata.LibraryDataset]:
    datasets: dict[str, bedata.LibraryDataset] = {}
    for path in paths:
        for editor_id, dataset in bedata.load_library(path).items():
            if editor_id in datasets:
                raise bedata.SchemaError(f"editor {editor_id!r} appears in two files")
            datasets[editor_id] = dataset
    if mode_flag is not None:
        for editor_id, dataset in datasets.items():
            if dataset.mode is not sq.RepresentationMode(mode_flag):
                raise ConfigError(
                    f"--mode {mode_flag} does not match library mode "
                    f"{dataset.mode.value} for editor {editor_id!r}"
                )
    return datasets


def _pick_single_editor(datasets: dict, editor_flag: str | None) -> str:
    if editor_flag is not None:
        if editor_flag not in datasets:
            raise bedata.SchemaError(f"editor {editor_flag!r} not present in the library")
        return editor_flag
    if len(datasets) != 1:
        raise ConfigError(
            f"library holds {len(datasets)} editors; pick one with --editor"
        )
    return next(iter(datasets))


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    datasets = _load_libraries(args.library, config.values.get("mode"))
    if not datasets:
        raise bedata.SchemaError("no editors found in the library files")

    os.makedirs(args.out, exist_ok=True)
    checkpoint_path = os.path.join(args.out, "model.ckpt")
    encoder = _encoder_config(config)
    spec = _split_spec(config)
    saved_config = {k: _config_repr(v) for k, v in config.values.items()}

    if config.variant == "multi-task":
        if len(datasets) < 2:
            raise ConfigError("multi-task training needs at least 2 editors")
        editor_kinds = {e: ds.editor_kind for e, ds in datasets.items()}
        modes = {ds.mode for ds in datasets.values()}
        if len(modes) != 1:
            raise bedata.SchemaError("libraries mix representation modes")
        meta = bemodels.ModelMeta(
            mode=modes.pop(), window=config.window, dtype=config.precision
        )
        model = bemodels.init_multitask(
            meta, editor_kinds, encoder, RngStream(config.seed, "init")
        )
        splits = {
            e: betrain.split_dataset(ds, config.seed, spec)
            for e, ds in datasets.items()
        }
        eff_cfg, prop_cfg = _train_configs(config, n_editors=len(datasets))
        result = betrain.train_multitask(model, splits, eff_cfg, prop_cfg)
        for editor_id in sorted(datasets):
            log = (result.efficiency[editor_id].log
                   + result.proportion[editor_id].log)
            betrain.write_training_log(
                log, os.path.join(args.out, f"training_log.{editor_id}.tsv")
            )
            print(f"{editor_id}: best val spearman "
                  f"efficiency={result.efficiency[editor_id].best_spearman:.4f} "
                  f"proportion={result.proportion[editor_id].best_spearman:.4f}")
    else:
        editor_id = _pick_single_editor(datasets, args.editor)
        dataset = datasets[editor_id]
        meta = bemodels.ModelMeta(
            mode=dataset.mode,
            window=config.window,
            editor_id=editor_id,
            editor_kind=dataset.editor_kind,
            dtype=config.precision,
        )
        splits = betrain.split_dataset(dataset, config.seed, spec)
        eff_cfg, prop_cfg = _train_configs(config)
        if config.variant == "two-stage":
            model = bemodels.init_two_stage(meta, encoder, RngStream(config.seed, "init"))
            result = betrain.train_two_stage(model, splits, eff_cfg, prop_cfg)
            log = result.efficiency.log + result.proportion.log
            print(f"{editor_id}: best val spearman "
                  f"efficiency={result.efficiency.best_spearman:.4f} "
                  f"proportion={result.proportion.best_spearman:.4f}")
        else:
            model = bemodels.init_one_stage(meta, encoder, RngStream(config.seed, "init"))
            result = betrain.train_one_stage(model, splits, prop_cfg)
            log = result.log
            print(f"{editor_id}: best val spearman {result.best_spearman:.4f}")
        betrain.write_training_log(log, os.path.join(args.out, "training_log.tsv"))

    bedata.save_checkpoint(model, checkpoint_path, config=saved_config, seed=config.seed)
    print(f"wrote {checkpoint_path}")
    return EXIT_OK


def _config_repr(value):
    if isinstance(value, sq.RepresentationMode):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, list):
        return [list(v) if isinstance(v, tuple) else v for v in value]
    return value


# ---------------------------------------------------------------------------
# predict


def _read_sequences(args) -> list[tuple[str, str]]:
    named: list[tuple[str, str]] = []
    if args.inline:
        for i, seq in enumerate(args.inline.split(","), start=1):
            named.append((f"seq{i}", seq.strip().upper()))
    if args.sequences:
        with open(args.sequences, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                tokens = text.split()
                if len(tokens) == 1:
                    named.append((f"seq{lineno}", tokens[0].upper()))
                elif len(tokens) == 2:
                    named.append((tokens[0], tokens[1].upper()))
                else:
                    raise bedata.SchemaError(
                        f"{args.sequences}:{lineno}: expected [id] sequence"
                    )
    if not named:
        raise ConfigError("no input sequences; use --inline or --sequences")
    return named


def _predict_one(model, editor_id, window, item):
    ref_id, text = item
    reference = sq.parse_reference(text, model.meta.mode)
    outcomes, probs = bemodels.predict_distribution(
        model, reference, editor_id=editor_id, window=window
    )
    order = sorted(
        range(len(outcomes)), key=lambda i: (-probs[i], outcomes[i].bases)
    )
    return [
        (ref_id, outcomes[i].bases, not outcomes[i].edited_positions, probs[i])
        for i in order
    ]


_WORKER_MODEL = None


def _predict_worker_init(checkpoint_path):
    global _WORKER_MODEL
    _WORKER_MODEL, _ = bedata.load_checkpoint(checkpoint_path)


def _predict_worker(task):
    editor_id, window, item = task
    return _predict_one(_WORKER_MODEL, editor_id, window, item)


def cmd_predict(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    model, header = bedata.load_checkpoint(args.checkpoint)
    editor_id = args.editor
    if isinstance(model, bemodels.MultiTaskModel) and editor_id is None:
        raise ConfigError("multi-task checkpoint needs --editor")
    window = config.window if config.was_set("window") else None
    sequences = _read_sequences(args)

    if config.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        tasks = [(editor_id, window, item) for item in sequences]
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_predict_worker_init,
            initargs=(args.checkpoint,),
        ) as pool:
            blocks = list(pool.map(_predict_worker, tasks))
    else:
        blocks = [_predict_one(model, editor_id, window, item) for item in sequences]

    lines = ["reference_id\toutcome_sequence\tis_wildtype\tprobability"]
    for block in blocks:
        for ref_id, bases, is_wt, prob in block:
            lines.append(f"{ref_id}\t{bases}\t{int(is_wt)}\t{prob:.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    model, header = bedata.load_checkpoint(args.checkpoint)
    datasets = _load_libraries([args.library], config.values.get("mode"))
    views = tuple(v.strip() for v in args.views.split(",") if v.strip())
    for view in views:
        if view not in beval.VIEWS:
            raise ConfigError(f"unknown view {view!r}; choose from {beval.VIEWS}")
    truth = bedata.load_truth(args.truth) if args.truth else None

    if isinstance(model, bemodels.MultiTaskModel):
        wanted = sorted(set(datasets) & set(model.editor_kinds))
        if not wanted:
            raise bedata.SchemaError("library has no editors matching the checkpoint")
    else:
        wanted = [_pick_single_editor(datasets, args.editor or model.meta.editor_id)]

    all_rows = []
    report_rows = []
    for editor_id in wanted:
        rows = beval.prediction_rows(model, datasets[editor_id], truth, editor_id)
        all_rows.extend(rows)
        report = beval.report_from_rows(rows, views, args.per_reference)
        report_rows.extend(report.rows)
    report = beval.EvalReport(report_rows)

    text = report.as_tsv()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.scatter:
        beval.export_scatter(all_rows, args.scatter)
        print(f"wrote {args.scatter}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# enumerate


def cmd_enumerate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    mode = config.mode or sq.RepresentationMode.PROTOSPACER
    reference = sq.parse_reference(args.sequence.upper(), mode)
    editor = sq.EditorClass.from_kind(args.kind)
    outcomes = sq.enumerate_outcomes(reference, editor, config.window)

    lines = ["outcome_sequence\tn_edits\tedited_positions"]
    for outcome in outcomes:
        positions = ",".join(str(p + 1) for p in sorted(outcome.edited_positions))
        lines.append(f"{outcome.bases}\t{len(outcome.edited_positions)}\t{positions}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out} ({len(outcomes)} outcomes)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line machine-parsable diagnostics
        sys.stderr.write(f"ERROR {EXIT_CONFIG}: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--mode", choices=[m.value for m in sq.RepresentationMode],
                        help="reference representation")
    parser.add_argument("--variant", choices=VARIANTS, help="model variant")
    parser.add_argument("--window", type=_window, metavar="A:B",
                        help="1-based inclusive editing window")
    parser.add_argument("--workers", type=_positive_int,
                        help="parallel workers for predict (default 1)")
    parser.add_argument("--debug-checks", action="store_true",
                        help="enable NaN/Inf guards on every primitive")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bepredict",
                     description="Base-editing outcome distribution models.")
    sub = parser.add_subparsers(dest="command", required=True,
                               parser_class=_Parser)

    p = sub.add_parser("synth",
                       help="generate a synthetic screen with oracle truth")
    _add_shared(p)
    p.add_argument("--editors", type=_editor_list,
                   help="editor count or comma-separated id:kind pairs")
    p.add_argument("--refs", type=_positive_int, help="references per editor")
    p.add_argument("--reads", type=_positive_int, help="reads per reference (>= 100)")
    p.add_argument("--min-targets", dest="min_targets", type=_positive_int)
    p.add_argument("--max-targets", dest="max_targets", type=_positive_int)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train",
                       help="train a model on library files")
    _add_shared(p)
    p.add_argument("--library", action="append", required=True,
                   help="library TSV (repeat for multi-task)")
    p.add_argument("--editor", help="editor id when a library holds several")
    p.add_argument("--out", default=".", help="output directory")
    for key in ("d_e", "d", "heads", "blocks", "ffn_hidden",
                "efficiency_epochs", "proportion_epochs",
                "efficiency_batch", "proportion_batch", "cycle_len"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=_positive_int)
    for key in ("base_lr", "max_lr_multiplier", "dropout", "l2_lambda"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    p.add_argument("--precision", choices=("float32", "float64"))
    for key in ("train_fraction", "val_fraction", "test_fraction"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=_fraction)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict",
                       help="score all outcomes for reference sequences")
    _add_shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequences", help="file with one reference per line")
    p.add_argument("--inline", help="comma-separated reference sequences")
    p.add_argument("--editor", help="editor id for multi-task checkpoints")
    p.add_argument("--out", help="output TSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate",
                       help="correlation report on a held-out library")
    _add_shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--editor", help="editor id when a library holds several")
    p.add_argument("--views", default="all,wildtype,nonwild")
    p.add_argument("--truth", help="oracle truth TSV to score against")
    p.add_argument("--per-reference", action="store_true",
                   help="average correlations over references")
    p.add_argument("--out", help="report TSV (default stdout)")
    p.add_argument("--scatter", help="also write per-outcome scatter TSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("enumerate",
                       help="list every reachable outcome for a reference")
    _add_shared(p)
    p.add_argument("--sequence", required=True, help="reference sequence")
    p.add_argument("--kind", default="ABE", choices=("ABE", "CBE"),
                   help="editor chemistry")
    p.add_argument("--out", help="output TSV (default stdout)")
    p.set_defaults(func=cmd_enumerate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "debug_checks", False):
        set_debug_checks(True)
    try:
        return args.func(args)
    except (ConfigError,) as exc:
        sys.stderr.write(f"ERROR {EXIT_CONFIG}: {exc}\n")
        return EXIT_CONFIG
    except DivergedLoss as exc:
        sys.stderr.write(f"ERROR {EXIT_NUMERIC}: {exc}\n")
        return EXIT_NUMERIC
    except (bedata.DataError, sq.SequenceError, bemodels.InvalidDistribution,
            bemodels.DegenerateScores, bemodels.EmptyOutcomeSet,
            bemodels.MissingWildType, bemodels.UnknownEditor,
            beval.DegenerateInput, beval.EmptyView, beval.MissingTruth,
            OSError) as exc:
        sys.stderr.write(f"ERROR {EXIT_DATA}: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
