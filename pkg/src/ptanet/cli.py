"""Command-line interface: train, eval, bench, count, gen.

Machine-readable JSON goes to stdout; the effective-config echo, progress
lines, and human tables go to stderr.  Exit codes: 0 success, 2 usage,
3 data/integrity, 4 numeric failure.
"""

import argparse
import json
import math
import os
import sys
from typing import Dict, Optional, Tuple

from .analysis import (
    CANONICAL_ORDER,
    bench_latency,
    complexity_suite,
    emit_report,
    format_table,
    report_json,
    with_relative,
)
from .data import AugmentSpec, generate_synthetic, load_directory, write_dataset
from .model import as_config, build_network
from .sampler import DEFAULT_MIX, SamplerSpec
from .trainer import NumericError, TrainConfig, evaluate, fit
from .weights import WeightsError, load_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


class DataError(RuntimeError):
    pass


# -- config file -------------------------------------------------------

# flat keys accepted in a config file, with their parsers
_FILE_KEYS = {
    "seed": int,
    "epochs": int,
    "batch": int,
    "lr": float,
    "synthetic": int,
    "data": str,
    "pta-config": str,
    "runs": int,
    "warmup": int,
    "out": str,
    "prefetch": int,
    "augment": str,
    "augment_brightness": float,
    "augment_contrast": float,
    "augment_saturation": float,
    "augment_color_shift": float,
    "augment_noise": float,
    "augment_seed": int,
}

_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off"}


def load_config_file(path: str) -> Tuple[dict, Optional[Dict[str, float]]]:
    """Parse ``key=value`` lines plus an optional [sampler] section."""
    flat: dict = {}
    sampler: Optional[Dict[str, float]] = None
    in_sampler = False
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[sampler]":
                raise UsageError(f"{path}:{lineno}: unknown section {line}")
            in_sampler = True
            sampler = {}
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if in_sampler:
            try:
                sampler[key] = float(value)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad probability {value!r}") from exc
            continue
        if key not in _FILE_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            flat[key] = _FILE_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return flat, sampler


def _resolve(args, key: str, file_cfg: dict, default):
    """Flag beats file beats default; flags left at None mean 'not given'."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _parse_bool(value, key: str) -> bool:
    text = str(value).strip().lower()
    if text in _TRUTHY:
        return True
    if text in _FALSY:
        return False
    raise UsageError(f"{key} must be on/off, got {value!r}")


def _echo_effective(command: str, settings: dict) -> None:
    doc = {"command": command}
    doc.update(settings)
    print("effective-config " + json.dumps(doc, sort_keys=True), file=sys.stderr)


def _emit(doc_text: str, out_path: Optional[str]) -> None:
    print(doc_text)
    if out_path:
        try:
            with open(out_path, "w", encoding="utf-8") as fh:
                fh.write(doc_text + "\n")
        except OSError as exc:
            raise DataError(f"cannot write {out_path}: {exc}") from exc


def _augment_from(file_cfg: dict) -> Optional[AugmentSpec]:
    enabled = _parse_bool(file_cfg.get("augment", "off"), "augment")
    if not enabled:
        return None
    spec = AugmentSpec(
        brightness=file_cfg.get("augment_brightness", 0.2),
        contrast=file_cfg.get("augment_contrast", 0.2),
        saturation=file_cfg.get("augment_saturation", 0.2),
        iso_color_shift=file_cfg.get("augment_color_shift", 0.05),
        iso_luminance_noise=file_cfg.get("augment_noise", 0.05),
        rng_seed=file_cfg.get("augment_seed", 0),
    )
    return spec


def _sampler_from(section: Optional[Dict[str, float]], seed: int) -> SamplerSpec:
    probs = section if section is not None else dict(DEFAULT_MIX)
    try:
        return SamplerSpec.from_mapping(probs, rng_seed=seed)
    except ValueError as exc:
        raise UsageError(f"bad sampler section: {exc}") from exc


def _load_samples(path: str):
    try:
        return load_directory(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load dataset from {path}: {exc}") from exc


def _build_model(seed: int, model_path: Optional[str]):
    net = build_network(seed=seed)
    if model_path is not None:
        try:
            load_model(net, model_path)
        except (OSError, WeightsError) as exc:
            raise DataError(f"cannot load weights from {model_path}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"weights do not fit this model: {exc}") from exc
    return net


# -- commands ----------------------------------------------------------


def cmd_train(args) -> int:
    file_cfg, sampler_section = ({}, None)
    if args.config:
        file_cfg, sampler_section = load_config_file(args.config)
    seed = _resolve(args, "seed", file_cfg, 0)
    epochs = _resolve(args, "epochs", file_cfg, 20)
    batch = _resolve(args, "batch", file_cfg, 32)
    lr = _resolve(args, "lr", file_cfg, 1e-4)
    synthetic = _resolve(args, "synthetic", file_cfg, None)
    data_dir = _resolve(args, "data", file_cfg, None)
    out_dir = _resolve(args, "out", file_cfg, ".")
    prefetch = _resolve(args, "prefetch", file_cfg, 0)
    if epochs < 1:
        raise UsageError("training needs --epochs >= 1")
    if (synthetic is None) == (data_dir is None):
        raise UsageError("give exactly one of --synthetic N or --data DIR")
    try:
        train_cfg = TrainConfig(
            learning_rate=lr, batch_size=batch, epochs=epochs, seed=seed,
            prefetch_batches=prefetch,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sampler = _sampler_from(sampler_section, seed)
    augment_spec = _augment_from(file_cfg)

    settings = {
        "seed": seed, "epochs": epochs, "batch": batch, "lr": lr,
        "synthetic": synthetic, "data": data_dir, "out": out_dir,
        "prefetch": prefetch, "sampler": sampler.as_mapping(),
        "augment": augment_spec is not None,
    }
    _echo_effective("train", settings)

    if synthetic is not None:
        if synthetic < 2:
            raise UsageError("--synthetic needs at least 2 images per class")
        n_val = max(1, math.ceil(synthetic / 4))
        train_set = generate_synthetic(synthetic, synthetic, seed=seed)
        val_set = generate_synthetic(n_val, n_val, seed=seed + 1)
    else:
        train_set = _load_samples(data_dir)
        val_set = None

    net = build_network(seed=seed)

    def progress(stats):
        print(
            f"epoch {stats.epoch}: loss {stats.train_loss:.4f} "
            f"val-acer {stats.val_acer:.4f} val-acc {stats.val_accuracy:.4f} "
            f"({stats.wall_clock_sec:.1f}s)",
            file=sys.stderr,
        )

    report = fit(
        net, train_set, val_set, train_cfg, sampler,
        out_dir=out_dir, augment_spec=augment_spec, on_epoch=progress,
    )
    doc_text = report.to_json()
    report_path = os.path.join(out_dir, "report.json")
    try:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(doc_text + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {report_path}: {exc}") from exc
    print(doc_text)
    return EXIT_OK


def cmd_eval(args) -> int:
    file_cfg, _ = ({}, None)
    if args.config:
        file_cfg, _ = load_config_file(args.config)
    seed = _resolve(args, "seed", file_cfg, 0)
    synthetic = _resolve(args, "synthetic", file_cfg, None)
    data_dir = _resolve(args, "data", file_cfg, None)
    config_str = _resolve(args, "pta-config", file_cfg, "HHH")
    try:
        config = as_config(config_str)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if (synthetic is None) == (data_dir is None):
        raise UsageError("give exactly one of --synthetic N or --data DIR")
    _echo_effective("eval", {
        "model": args.model, "seed": seed, "synthetic": synthetic,
        "data": data_dir, "pta_config": str(config),
    })
    if synthetic is not None:
        if synthetic < 1:
            raise UsageError("--synthetic must be positive")
        samples = generate_synthetic(synthetic, synthetic, seed=seed)
    else:
        samples = _load_samples(data_dir)
    net = _build_model(0, args.model)
    report = evaluate(net, samples, config=config)
    _emit(report.to_json(), args.out)
    return EXIT_OK


def _config_list(args) -> list:
    if args.all or args.pta_config is None:
        return list(CANONICAL_ORDER)
    try:
        return [str(as_config(args.pta_config))]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_count(args) -> int:
    configs = _config_list(args)
    _echo_effective("count", {
        "configs": configs, "model": args.model, "seed": args.seed or 0,
    })
    net = _build_model(args.seed or 0, args.model)
    rows = complexity_suite(net, configs)
    doc = emit_report(rows)
    print(format_table(doc), file=sys.stderr)
    _emit(report_json(doc), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    runs = args.runs if args.runs is not None else 50
    warmup = args.warmup if args.warmup is not None else 5
    seed = args.seed or 0
    configs = _config_list(args)
    try:
        if runs < 30:
            raise ValueError("need at least 30 timed runs")
        if warmup < 0:
            raise ValueError("warmup must be >= 0")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _echo_effective("bench", {
        "configs": configs, "runs": runs, "warmup": warmup, "seed": seed,
        "model": args.model,
    })
    net = _build_model(seed, args.model)
    reports = []
    baseline = None
    for name in ["HHH"] + [c for c in configs if c != "HHH"]:
        rep = bench_latency(net, name, runs=runs, warmup=warmup, seed=seed)
        if name == "HHH":
            baseline = rep
        if name in configs:
            reports.append(rep)
    reports = with_relative(reports, baseline)
    doc = emit_report([], reports)
    print(format_table(doc), file=sys.stderr)
    _emit(report_json(doc), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.live < 0 or args.spoof < 0:
        raise UsageError("--live and --spoof must be >= 0")
    seed = args.seed or 0
    _echo_effective("gen", {
        "out": args.out_dir, "live": args.live, "spoof": args.spoof, "seed": seed,
    })
    samples = generate_synthetic(args.live, args.spoof, seed=seed)
    try:
        write_dataset(args.out_dir, samples)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out_dir}: {exc}") from exc
    summary = {
        "out": args.out_dir, "live": args.live, "spoof": args.spoof,
        "files": len(samples),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# -- argument parsing --------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptanet",
        description="Anti-spoofing CNN with runtime-adaptive blocks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--config", help="key=value config file")
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--synthetic", type=int, metavar="N",
                       help="train on N synthetic images per class")
    train.add_argument("--data", metavar="DIR", help="train on a live/+spoof/ directory")
    train.add_argument("--prefetch", type=int, help="batch prefetch queue size")
    train.add_argument("--out", metavar="DIR", help="artifact directory")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained model")
    ev.add_argument("model", help="weights file (.ptaw)")
    ev.add_argument("--config", help="key=value config file")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--synthetic", type=int, metavar="N")
    ev.add_argument("--data", metavar="DIR")
    ev.add_argument("--pta-config", dest="pta_config", metavar="STR")
    ev.add_argument("--out", metavar="FILE", help="also write JSON here")
    ev.set_defaults(func=cmd_eval)

    count = sub.add_parser("count", help="parameter and multiply-add table")
    count.add_argument("--model", metavar="FILE")
    count.add_argument("--random-init", action="store_true",
                       help="use freshly initialized weights (default)")
    count.add_argument("--seed", type=int)
    count.add_argument("--pta-config", dest="pta_config", metavar="STR")
    count.add_argument("--all", action="store_true", help="all six configurations")
    count.add_argument("--out", metavar="FILE")
    count.set_defaults(func=cmd_count)

    bench = sub.add_parser("bench", help="latency benchmark")
    bench.add_argument("--model", metavar="FILE")
    bench.add_argument("--random-init", action="store_true",
                       help="use freshly initialized weights (default)")
    bench.add_argument("--seed", type=int)
    bench.add_argument("--pta-config", dest="pta_config", metavar="STR")
    bench.add_argument("--all", action="store_true")
    bench.add_argument("--runs", type=int)
    bench.add_argument("--warmup", type=int)
    bench.add_argument("--out", metavar="FILE")
    bench.set_defaults(func=cmd_bench)

    gen = sub.add_parser("gen", help="write a synthetic dataset")
    gen.add_argument("out_dir", metavar="DIR")
    gen.add_argument("--live", type=int, default=100)
    gen.add_argument("--spoof", type=int, default=100)
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
