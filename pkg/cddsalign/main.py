#!/usr/bin/env python3
"""
cddsalign command line
Main entry point: data generation, training, evaluation, ablations,
correlation-mode benchmark and inspection. Every command writes into its own
run directory under the output root.
"""

import argparse
import logging
import os
import re
import sys
from contextlib import contextmanager
from dataclasses import replace
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from cddsalign import __version__
from cddsalign.alignment.cache import MODES
from cddsalign.config.models import Ablation, TrainConfig, synth_config_from, train_config_from
from cddsalign.config.settings import DEFAULT_PROFILE, PROFILES, Settings
from cddsalign.core.errors import CddsError, ConfigError
from cddsalign.core.manifest import RunManifest
from cddsalign.core.run_store import RunStore, load_manifest
from cddsalign.data.container import read_container, write_container
from cddsalign.data.synthetic import generate_synthetic, split_synthetic
from cddsalign.evaluation.inspection import inspect_model
from cddsalign.evaluation.retrieval import evaluate
from cddsalign.experiments.ablation import TABLE_FIELDS, VariantResult, ablate, sam_transfer
from cddsalign.experiments.modes import BENCH_FIELDS, bench_modes
from cddsalign.model.checkpoint import HEADER_FILE, load_checkpoint, save_checkpoint
from cddsalign.training.trainer import Trainer, metric_fields

logger = logging.getLogger("cddsalign")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
OUTPUT_ROOT_ENV = "CDDS_OUTPUT_ROOT"
TRAIN_FILE = "train.cdds"
TEST_FILE = "test.cdds"
CHECKPOINT_DIR = "checkpoint"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2
EXIT_CONFIG = 3


# ----------------------------------------------------------------------
# logging and run directories
# ----------------------------------------------------------------------

def setup_logging(level: str) -> None:
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, handlers=[logging.StreamHandler()])
    logging.getLogger("cddsalign").setLevel(level.upper())


@contextmanager
def run_log(store: RunStore, settings: Settings) -> Iterator[None]:
    """Mirror the package log into the run directory while a command runs"""
    handler = RotatingFileHandler(
        store.path(settings.get("logging.file", "cddsalign.log")),
        maxBytes=int(settings.get("logging.max_size", 1048576)),
        backupCount=int(settings.get("logging.backup_count", 3)),
        encoding="utf-8",
    )
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package_logger = logging.getLogger("cddsalign")
    package_logger.addHandler(handler)
    try:
        yield
    finally:
        package_logger.removeHandler(handler)
        handler.close()


def output_root(args: argparse.Namespace, settings: Settings) -> Path:
    return Path(args.output_root or os.environ.get(OUTPUT_ROOT_ENV) or settings.get("output.root", "runs"))


def latest_run_with(root: Path, relative: str) -> Path:
    """Newest run directory under root that contains the given file"""
    candidates = [p for p in root.glob("*") if (p / relative).exists()] if root.is_dir() else []
    if not candidates:
        raise FileNotFoundError(f"no run under {root} contains {relative}")
    return max(candidates, key=lambda p: ((p / relative).stat().st_mtime_ns, p.name))


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9+]+", "-", name).strip("-")


def _resolved(path: Optional[Path]) -> Optional[str]:
    return str(path.resolve()) if path is not None else None


# ----------------------------------------------------------------------
# argument helpers
# ----------------------------------------------------------------------

def _train_config(args: argparse.Namespace, settings: Settings, d: int) -> TrainConfig:
    overrides: Dict[str, Any] = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
        "correlation_mode": getattr(args, "mode", None),
        "n_bins": args.bins,
        "semantic_loss": args.semantic_loss,
        "modal_loss": args.modal_loss,
        "decoupler.d": d,
        "decoupler.n_layers": args.n_layers,
        "decoupler.z": args.z,
        "decoupler.noise_std": args.noise_std,
        "losses.alpha_s": args.alpha_s,
        "losses.alpha_m": args.alpha_m,
        "losses.alpha_f": args.alpha_f,
        "losses.alpha_c": args.alpha_c,
    }
    ablations = getattr(args, "ablation", None)
    if ablations:
        overrides["ablations"] = ablations
    return train_config_from(settings.profile(args.profile), **overrides)


def _data_paths(args: argparse.Namespace, root: Path) -> Tuple[Path, Optional[Path]]:
    """Training container and its test sibling (from the newest gen-synth run by default)"""
    train_path = Path(args.data) if args.data else latest_run_with(root, TRAIN_FILE) / TRAIN_FILE
    if args.test_data:
        return train_path, Path(args.test_data)
    sibling = train_path.with_name(TEST_FILE)
    return train_path, sibling if sibling.exists() else None


def _require_test(test_path: Optional[Path]) -> Path:
    if test_path is None:
        raise FileNotFoundError(f"no test container given and no {TEST_FILE} next to the training data")
    return test_path


def _checkpoint_dir(args: argparse.Namespace, root: Path) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return latest_run_with(root, f"{CHECKPOINT_DIR}/{HEADER_FILE}") / CHECKPOINT_DIR


def _recorded_data(checkpoint_dir: Path, key: str) -> Optional[Path]:
    """Data path recorded in the manifest of the run that wrote the checkpoint"""
    try:
        manifest = load_manifest(checkpoint_dir.parent)
    except FileNotFoundError:
        return None
    recorded = manifest.config.get("data", {}).get(key)
    return Path(recorded) if recorded else None


def _manifest(command: str, argv: Sequence[str], profile: str, seed: Optional[int],
              **config: Any) -> RunManifest:
    return RunManifest(command=command, argv=["cddsalign", *argv],
                       config={"profile": profile, **config}, seed=seed)


def _write_variants(store: RunStore, results: Sequence[VariantResult], argv: Sequence[str],
                    profile: str, data: Dict[str, Optional[str]]) -> None:
    for result in results:
        child = store.child(slug(result.name), _manifest(
            store.manifest.command, argv, profile, result.config.seed,
            variant=result.name, train=result.config.model_dump(mode="json"), data=data,
        ))
        save_checkpoint(child.record(CHECKPOINT_DIR), result.checkpoint)
        child.write_csv("metrics.csv", result.history, metric_fields(result.config))
        child.write_json("report.json", result.report.to_dict())
        child.finish()


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_gen_synth(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    config = synth_config_from(
        settings.profile(args.profile),
        n_pairs=args.pairs, n_test=args.test_pairs, d=args.d, d_latent=args.d_latent,
        n_v=args.n_v, n_t=args.n_t, texts_per_image=args.texts_per_image,
        noise_std=args.noise_std, jitter_std=args.jitter_std, seed=args.seed,
    )
    store = RunStore.create(output_root(args, settings), _manifest(
        "gen-synth", argv, args.profile, config.seed, synth=config.model_dump(mode="json"),
    ))
    with run_log(store, settings):
        batch, truth = generate_synthetic(
            config.n_pairs + config.n_test, config.n_v, config.n_t, config.d, config.d_latent,
            config.texts_per_image, config.noise_std, config.seed, config.jitter_std,
        )
        metadata = {"synth": config.model_dump(mode="json"), "truth": truth.to_dict()}
        if config.n_test > 0:
            train_batch, test_batch = split_synthetic(batch, config.n_test)
            write_container(test_batch, store.record(TEST_FILE), dict(metadata, split="test"))
        else:
            train_batch = batch
        write_container(train_batch, store.record(TRAIN_FILE), dict(metadata, split="train"))
        store.finish()
    print(store.run_dir)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    root = output_root(args, settings)
    train_path, test_path = _data_paths(args, root)
    train_data = read_container(train_path)

    if args.resume:
        checkpoint = load_checkpoint(args.resume)
        if args.epochs is not None:
            checkpoint = replace(checkpoint, config=checkpoint.config.replace(epochs=args.epochs))
        trainer = Trainer.from_checkpoint(checkpoint, train_data)
    else:
        trainer = Trainer(_train_config(args, settings, train_data.d), train_data)
    config = trainer.config

    data = {"train": _resolved(train_path), "test": _resolved(test_path)}
    store = RunStore.create(root, _manifest(
        "train", argv, args.profile, config.seed, train=config.model_dump(mode="json"), data=data,
        resumed_from=_resolved(Path(args.resume)) if args.resume else None,
    ))
    with run_log(store, settings):
        logger.info(f"Training on {train_path} ({train_data.n_images} images, {trainer.n_batches} batches/epoch)")
        trainer.train()
        save_checkpoint(store.record(CHECKPOINT_DIR), trainer.to_checkpoint())
        store.write_csv("metrics.csv", trainer.history, metric_fields(trainer.config))
        store.finish()
    print(store.run_dir)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    root = output_root(args, settings)
    checkpoint_dir = _checkpoint_dir(args, root)
    checkpoint = load_checkpoint(checkpoint_dir)
    data_path = Path(args.data) if args.data else _require_test(_recorded_data(checkpoint_dir, "test"))
    data = read_container(data_path)

    store = RunStore.create(root, _manifest(
        "eval", argv, args.profile, checkpoint.config.seed,
        checkpoint=_resolved(checkpoint_dir), data={"test": _resolved(data_path)},
        symmetric=args.symmetric, train=checkpoint.config.model_dump(mode="json"),
    ))
    with run_log(store, settings):
        report = evaluate(checkpoint, data, symmetric=args.symmetric)
        store.write_json("report.json", report.to_dict())
        store.write_csv("report.csv", [report.row()], list(report.row()))
        store.finish()
    print(store.run_dir)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    root = output_root(args, settings)
    train_path, test_path = _data_paths(args, root)
    test_path = _require_test(test_path)
    train_data, test_data = read_container(train_path), read_container(test_path)
    config = _train_config(args, settings, train_data.d)
    data = {"train": _resolved(train_path), "test": _resolved(test_path)}

    store = RunStore.create(root, _manifest(
        "ablate", argv, args.profile, config.seed, train=config.model_dump(mode="json"), data=data,
    ))
    with run_log(store, settings):
        results, rows = ablate(config, train_data, test_data, workers=args.workers, symmetric=args.symmetric)
        _write_variants(store, results, argv, args.profile, data)
        store.write_csv("ablation.csv", rows, TABLE_FIELDS)
        store.finish()
    print(store.run_dir)
    return EXIT_OK


def cmd_sam_transfer(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    root = output_root(args, settings)
    train_path, test_path = _data_paths(args, root)
    test_path = _require_test(test_path)
    train_data, test_data = read_container(train_path), read_container(test_path)
    config = _train_config(args, settings, train_data.d)
    data = {"train": _resolved(train_path), "test": _resolved(test_path)}

    store = RunStore.create(root, _manifest(
        "sam-transfer", argv, args.profile, config.seed, train=config.model_dump(mode="json"), data=data,
    ))
    with run_log(store, settings):
        results, rows = sam_transfer(config, train_data, test_data, workers=args.workers,
                                     symmetric=args.symmetric)
        _write_variants(store, results, argv, args.profile, data)
        store.write_csv("transfer.csv", rows, TABLE_FIELDS)
        store.finish()
    print(store.run_dir)
    return EXIT_OK


def cmd_bench_modes(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    root = output_root(args, settings)
    train_path, test_path = _data_paths(args, root)
    test_path = _require_test(test_path)
    train_data, test_data = read_container(train_path), read_container(test_path)
    config = _train_config(args, settings, train_data.d)
    data = {"train": _resolved(train_path), "test": _resolved(test_path)}

    store = RunStore.create(root, _manifest(
        "bench-modes", argv, args.profile, config.seed, train=config.model_dump(mode="json"),
        data=data, modes=list(args.modes),
    ))
    with run_log(store, settings):
        results, rows = bench_modes(config, train_data, test_data, args.modes)
        _write_variants(store, results, argv, args.profile, data)
        store.write_csv("modes.csv", rows, BENCH_FIELDS)
        store.finish()
    print(store.run_dir)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace, settings: Settings, argv: Sequence[str]) -> int:
    root = output_root(args, settings)
    checkpoint_dir = _checkpoint_dir(args, root)
    checkpoint = load_checkpoint(checkpoint_dir)
    if args.data:
        data_path = Path(args.data)
    else:
        data_path = _recorded_data(checkpoint_dir, "test") or _recorded_data(checkpoint_dir, "train")
        if data_path is None:
            raise FileNotFoundError(f"no data given and none recorded for {checkpoint_dir}")
    data = read_container(data_path)

    store = RunStore.create(root, _manifest(
        "inspect", argv, args.profile, checkpoint.config.seed,
        checkpoint=_resolved(checkpoint_dir), data={"inspect": _resolved(data_path)},
    ))
    with run_log(store, settings):
        inspection = inspect_model(checkpoint, data, checkpoint.config)
        state = inspection.correlation
        header = [f"t{j}" for j in range(state.s.shape[1])]
        store.write_matrix("s.csv", state.s, header)
        store.write_matrix("mask_image.csv", state.image.mask.astype(np.int64), header)
        store.write_matrix("mask_text.csv", state.text.mask.astype(np.int64), header)
        store.write_csv("thresholds.csv", [
            {"column": i, "image_threshold": repr(float(state.image.thresholds[i])),
             "text_threshold": repr(float(state.text.thresholds[i])),
             "image_alpha": repr(float(checkpoint.params["sparsity.alpha_v"][i])),
             "text_alpha": repr(float(checkpoint.params["sparsity.alpha_t"][i]))}
            for i in range(state.s.shape[0])
        ], ("column", "image_threshold", "text_threshold", "image_alpha", "text_alpha"))
        for name, selection in (("weights_image.csv", state.image), ("weights_text.csv", state.text)):
            triplets = selection.as_sparse().tocoo()
            store.write_csv(name, [
                {"row": int(r), "column": int(c), "weight": repr(float(v))}
                for r, c, v in zip(triplets.row, triplets.col, triplets.data)
            ], ("row", "column", "weight"))
        raw, semantic = inspection.raw_texts.points, inspection.semantic_texts.points
        store.write_csv("projections.csv", [
            {"row": r, "image": int(inspection.groups[r]),
             "raw_x": repr(float(raw[r, 0])), "raw_y": repr(float(raw[r, 1])),
             "semantic_x": repr(float(semantic[r, 0])), "semantic_y": repr(float(semantic[r, 1]))}
            for r in range(raw.shape[0])
        ], ("row", "image", "raw_x", "raw_y", "semantic_x", "semantic_y"))
        store.write_json("spread.json", inspection.spread())
        store.finish()
    print(store.run_dir)
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help=f"Training container (default: newest run with {TRAIN_FILE})")
    parser.add_argument("--test-data", help=f"Test container (default: {TEST_FILE} next to --data)")


def _add_training_flags(parser: argparse.ArgumentParser, with_mode: bool = True) -> None:
    group = parser.add_argument_group("training (defaults from the profile)")
    group.add_argument("--epochs", type=int, help="Epochs (desk 25, paper 25)")
    group.add_argument("--batch-size", type=int, help="Images per batch (desk 8, paper 64)")
    group.add_argument("--lr", type=float, help="Learning rate (desk 1e-3, paper 2e-4)")
    group.add_argument("--seed", type=int, help="Run seed")
    if with_mode:
        group.add_argument("--mode", choices=MODES, help="Correlation mode (default each-batch)")
    group.add_argument("--bins", type=int, help="Histogram bins per column distribution (default 32)")
    group.add_argument("--n-layers", type=int, help="Encoder/decoder depth (default 2)")
    group.add_argument("--z", type=int, help="Noise draws averaged by the decoders (default 4)")
    group.add_argument("--noise-std", type=float, help="Gaussian perturbation std (default 0.1)")
    group.add_argument("--alpha-s", type=float, help="Semantic consistency weight")
    group.add_argument("--alpha-m", type=float, help="Modality consistency weight")
    group.add_argument("--alpha-f", type=float, help="Integrity weight in [0, 1]")
    group.add_argument("--alpha-c", type=float, help="Cross-modal matching weight (default 0, off)")
    group.add_argument("--semantic-loss", choices=("literal", "infonce"), help="Semantic loss form")
    group.add_argument("--modal-loss", choices=("consistency", "literal"), help="Modality loss form")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cddsalign",
        description="Cross-modal alignment by constrained decoupling and distribution sampling",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--profile", default=DEFAULT_PROFILE, choices=PROFILES,
                        help="Settings profile (default desk)")
    parser.add_argument("--output-root", help=f"Root of run directories (env {OUTPUT_ROOT_ENV}, default runs)")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="Log level (default from settings)")
    parser.add_argument("--settings", help="Extra settings JSON merged over the built-in settings")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-synth", help="Generate a synthetic train/test pair of containers")
    gen.add_argument("--pairs", type=int, help="Training images (desk 200)")
    gen.add_argument("--test-pairs", type=int, help="Test images (desk 100)")
    gen.add_argument("--d", type=int, help="Embedding size (desk 32, paper 512)")
    gen.add_argument("--d-latent", type=int, help="Latent semantic size (desk 4)")
    gen.add_argument("--n-v", type=int, help="Patches per image")
    gen.add_argument("--n-t", type=int, help="Words per text")
    gen.add_argument("--texts-per-image", type=int, help="Texts per image (desk 1, paper 5)")
    gen.add_argument("--noise-std", type=float, help="Additive noise std")
    gen.add_argument("--jitter-std", type=float, help="Per-patch/word latent jitter std")
    gen.add_argument("--seed", type=int, help="Generator seed")
    gen.set_defaults(handler=cmd_gen_synth)

    train = commands.add_parser("train", help="Train a model and write a checkpoint")
    _add_data_flags(train)
    _add_training_flags(train)
    train.add_argument("--ablation", action="append", choices=[a.value for a in Ablation],
                       help="Remove one mechanism (repeatable)")
    train.add_argument("--resume", help="Checkpoint directory to continue from")
    train.set_defaults(handler=cmd_train)

    evaluate_cmd = commands.add_parser("eval", help="Retrieval evaluation of a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", help="Checkpoint directory (default: newest trained run)")
    evaluate_cmd.add_argument("--data", help="Test container (default: recorded by the training run)")
    evaluate_cmd.add_argument("--symmetric", action="store_true",
                              help="Average patch-to-word and word-to-patch similarity")
    evaluate_cmd.set_defaults(handler=cmd_eval)

    for name, handler, text in (("ablate", cmd_ablate, "Full model and one run per ablation"),
                                ("sam-transfer", cmd_sam_transfer,
                                 "Plain matcher with and without distribution sampling")):
        sub = commands.add_parser(name, help=text)
        _add_data_flags(sub)
        _add_training_flags(sub)
        sub.add_argument("--workers", type=int, default=1, help="Parallel worker processes")
        sub.add_argument("--symmetric", action="store_true", help="Symmetric evaluation similarity")
        sub.set_defaults(handler=handler)

    bench = commands.add_parser("bench-modes", help="Per-batch time and rSum of each correlation mode")
    _add_data_flags(bench)
    _add_training_flags(bench, with_mode=False)
    bench.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES), help="Modes to run")
    bench.set_defaults(handler=cmd_bench_modes)

    inspect = commands.add_parser("inspect", help="Dump S, masks, thresholds and 2-D projections")
    inspect.add_argument("--checkpoint", help="Checkpoint directory (default: newest trained run)")
    inspect.add_argument("--data", help="Container to inspect (default: the run's test data)")
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    load_dotenv()
    try:
        settings = Settings(user_file=args.settings)
        setup_logging(args.log_level or settings.get("logging.level", "INFO"))
        return args.handler(args, settings, argv)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except CddsError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
