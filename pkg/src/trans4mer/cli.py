"""Command-line entry point: ``ts4 <command> [options]``.

Exit codes: 0 ok, 2 bad arguments, 3 data error, 4 numerical failure,
5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .bench import DEFAULT_SHOTS, resolve_variant, run_bench, to_csv, to_json
from .data import DatasetSpec, load_manifest, write_dataset
from .model import CONFIG_KEYS, ModelConfig, TranS4mer, load_checkpoint, save_checkpoint
from .serialize import FormatError
from .ssm import dump_kernel_csv
from .tensor import NonFiniteError
from .train import FINETUNE_DEFAULTS, PRETRAIN_DEFAULTS, TrainConfig, evaluate, finetune, pretrain
from .verify import run_suite, suite_names

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NAN, EXIT_VERIFY = 0, 2, 3, 4, 5
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise CliError(code, message)


def resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("TS4_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        _fail(EXIT_ARGS, f"TS4_SEED must be an integer, got {env!r}")


def _read_json(path, what: str, code: int = EXIT_ARGS) -> dict:
    p = Path(path)
    if not p.is_file():
        _fail(code, f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        _fail(code, f"{what} {p} is not valid JSON: {exc}")


def split_config(raw: dict) -> tuple[dict, dict]:
    """A run config is one flat JSON object of model keys and training keys."""
    unknown = sorted(set(raw) - set(CONFIG_KEYS) - set(TRAIN_KEYS))
    if unknown:
        _fail(EXIT_ARGS, f"unknown config keys: {unknown}")
    return ({k: raw[k] for k in CONFIG_KEYS if k in raw},
            {k: raw[k] for k in TRAIN_KEYS if k in raw})


def model_config(model_keys: dict, args) -> ModelConfig:
    try:
        return ModelConfig.from_json(model_keys, bidirectional=args.bidirectional,
                                     eq4_literal=args.eq4_literal)
    except (TypeError, ValueError) as exc:
        _fail(EXIT_ARGS, f"bad model config: {exc}")


def train_config(train_keys: dict, defaults: TrainConfig, seed: int) -> TrainConfig:
    try:
        return TrainConfig(**{**defaults.to_json(), **train_keys, "seed": seed})
    except TypeError as exc:
        _fail(EXIT_ARGS, f"bad training config: {exc}")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _fail(EXIT_ARGS, f"cannot create output directory {out}: {exc}")
    return out


def _echo(src, out: Path, name: str) -> None:
    """Copy a config file verbatim into the output directory."""
    dst = out / name
    if Path(src).resolve() != dst.resolve():
        shutil.copyfile(src, dst)


def _load_windows(manifest, splits):
    p = Path(manifest)
    if not p.is_file():
        _fail(EXIT_DATA, f"data manifest not found: {p}")
    try:
        windows = load_manifest(p, splits)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _fail(EXIT_DATA, f"cannot read data from {p}: {exc}")
    if not windows:
        _fail(EXIT_DATA, f"no windows for split {splits} in {p}")
    return windows


def _load_model(path, dtype) -> TranS4mer:
    p = Path(path)
    if not p.is_file():
        _fail(EXIT_DATA, f"checkpoint not found: {p}")
    try:
        return load_checkpoint(p, dtype)
    except (OSError, FormatError, ValueError) as exc:
        _fail(EXIT_DATA, f"cannot load checkpoint {p}: {exc}")


def _check_window_shape(windows, cfg: ModelConfig) -> None:
    expect = (cfg.n_shots, cfg.k_frames, cfg.channels, cfg.height, cfg.width)
    got = windows[0].frames.shape
    if got != expect:
        _fail(EXIT_DATA, f"data windows have shape {got}, model expects {expect}")


# -- commands -------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    raw = _read_json(args.spec, "data spec")
    try:
        spec = DatasetSpec.from_json(raw)
    except (TypeError, ValueError) as exc:
        _fail(EXIT_ARGS, f"bad data spec: {exc}")
    spec.clip.seed = resolve_seed(args.seed)
    out = _out_dir(args.out)
    _echo(args.spec, out, "spec.json")
    manifest = write_dataset(spec, out)
    print(f"wrote {manifest}")
    return EXIT_OK


def _train_command(args, stage: str) -> int:
    raw = _read_json(args.config, "config")
    model_keys, train_keys = split_config(raw)
    seed = resolve_seed(args.seed)
    defaults = PRETRAIN_DEFAULTS if stage == "pretrain" else FINETUNE_DEFAULTS
    hyper = train_config(train_keys, defaults, seed)
    out = _out_dir(args.out)
    _echo(args.config, out, "config.json")
    (out / f"{stage}_resolved.json").write_text(json.dumps(hyper.to_json(), indent=2, sort_keys=True))
    dtype = np.dtype(hyper.dtype).type
    if stage == "pretrain":
        with T.default_dtype(dtype):
            model = TranS4mer(model_config(model_keys, args), seed=seed)
    else:
        model = _load_model(args.init, dtype)
    windows = _load_windows(args.data, "train")
    _check_window_shape(windows, model.cfg)
    runner = pretrain if stage == "pretrain" else finetune
    result = runner(windows, model, hyper, out_dir=out, log_path=out / f"{stage}_log.jsonl")
    save_checkpoint(out / f"{stage}.ts4m", result.model)
    print(json.dumps({"stage": stage, "epoch_losses": result.epoch_losses,
                      "checkpoint": str(out / f"{stage}.ts4m")}))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    return _train_command(args, "pretrain")


def cmd_finetune(args) -> int:
    return _train_command(args, "finetune")


def cmd_eval(args) -> int:
    resolve_seed(args.seed)
    windows = _load_windows(args.data, args.split)
    model = _load_model(args.ckpt, np.float32)
    _check_window_shape(windows, model.cfg)
    try:
        report = evaluate(model, windows, args.threshold, symmetric_miou=not args.directional_miou)
    except ValueError as exc:
        _fail(EXIT_DATA, f"cannot evaluate: {exc}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        _fail(EXIT_ARGS, f"expected comma-separated integers, got {text!r}")
    if not vals:
        _fail(EXIT_ARGS, "empty list")
    return vals


def cmd_bench(args) -> int:
    seed = resolve_seed(args.seed)
    raw = _read_json(args.config, "config") if args.config else {}
    model_keys, _ = split_config(raw)
    base = model_config(model_keys, args)
    shots = _int_list(args.shots)
    if any(n < 1 or n % 2 == 0 for n in shots):
        _fail(EXIT_ARGS, f"shot counts must be odd, got {shots}")
    try:
        variants = [resolve_variant(v) for v in args.variants.split(",")]
    except ValueError as exc:
        _fail(EXIT_ARGS, str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.config:
        _echo(args.config, out.parent, "config.json")
    with T.default_dtype(np.float32):
        points = run_bench([base.with_(inter_variant=v) for v in variants], shots, args.repeats, seed=seed)
    out.write_text(to_csv(points))
    out.with_suffix(".json").write_text(to_json(points))
    sys.stdout.write(to_csv(points))
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suite(args.suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_VERIFY


def cmd_kernel_dump(args) -> int:
    if args.ckpt:
        model = _load_model(args.ckpt, np.float64)
    else:
        raw = _read_json(args.config, "config") if args.config else {}
        with T.default_dtype(np.float64):
            model = TranS4mer(model_config(split_config(raw)[0], args), seed=resolve_seed(args.seed))
    blocks = [b for b in model.blocks if b.inter is not None and hasattr(b.inter.mixer, "s4")]
    if not blocks:
        _fail(EXIT_ARGS, "model has no SSM layers")
    if not 0 <= args.layer < len(blocks):
        _fail(EXIT_ARGS, f"--layer must be in 0..{len(blocks) - 1}")
    s4 = blocks[args.layer].inter.mixer.s4
    if not 0 <= args.channel < s4.ssm.d_model:
        _fail(EXIT_ARGS, f"--channel must be in 0..{s4.ssm.d_model - 1}")
    with T.no_grad():
        k = s4.kernel(args.length).data[args.channel]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_kernel_csv(out, k)
    print(f"wrote {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_ARGS, message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ts4", description="Shot-level scene boundary detection with S4A blocks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model_flags: bool = False):
        p.add_argument("--seed", type=int, default=None, help="random seed (falls back to $TS4_SEED, then 0)")
        if model_flags:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--bidirectional", dest="bidirectional", action="store_true", default=True,
                           help="forward and backward SSM kernels (default)")
            g.add_argument("--causal", dest="bidirectional", action="store_false",
                           help="forward kernel only")
            p.add_argument("--eq4-literal", action="store_true",
                           help="feed the block input, not the S4 output, to W_h")
        return p

    p = common(sub.add_parser("gen-data", help="generate synthetic shotpacks and a manifest"))
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("pretrain", help="self-supervised pretraining"), model_flags=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = common(sub.add_parser("finetune", help="supervised finetuning"), model_flags=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--directional-miou", action="store_true",
                   help="match ground-truth scenes to predictions only")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("bench", help="speed and memory against window size"), model_flags=True)
    p.add_argument("--config", default=None)
    p.add_argument("--shots", default=",".join(map(str, DEFAULT_SHOTS)))
    p.add_argument("--variants", default="gs4,attention")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run oracle checks")
    p.add_argument("--suite", default="all", choices=suite_names())
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("kernel-dump", help="write one SSM kernel as CSV"), model_flags=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--ckpt", default=None)
    src.add_argument("--config", default=None)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--length", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kernel_dump)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
