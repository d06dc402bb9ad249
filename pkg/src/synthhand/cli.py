"""Command-line entry point.

Every flag can also come from the environment (``SYNTHHAND_<FLAG>``, dashes
as underscores) or a JSON config file (``--config``), with precedence
arguments > environment > config file > defaults. A config file may hold flat
keys, per-subcommand sections (``{"gen": {...}}``), or both.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
ENV_PREFIX = "SYNTHHAND_"

log = logging.getLogger("synthhand")


class UsageError(Exception):
    pass


def non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def positive_int(text: str) -> int:
    value = non_negative_int(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def choice(*options: str) -> Callable[[str], str]:
    def convert(text: str) -> str:
        if text not in options:
            raise argparse.ArgumentTypeError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    convert.__name__ = "choice"
    return convert


@dataclass(frozen=True)
class Opt:
    flag: str
    type: Callable[[str], Any]
    default: Any
    help: str

    @property
    def dest(self) -> str:
        return self.flag.replace("-", "_")


COMMON = [
    Opt("joint-def", str, None, "joint-definition file (default: shipped 25-joint hand)"),
]

OPTIONS: dict[str, list[Opt]] = {
    "gen": COMMON + [
        Opt("seed", non_negative_int, 0, "master seed (unsigned 64-bit)"),
        Opt("count", non_negative_int, 1000, "number of records"),
        Opt("val-count", non_negative_int, None, "validation records (default: min(500, count/5))"),
        Opt("out", str, None, "output dataset directory (required)"),
        Opt("workers", positive_int, 1, "worker processes"),
        Opt("width", positive_int, 224, "image width in pixels"),
        Opt("height", positive_int, 224, "image height in pixels"),
    ],
    "train": [
        Opt("dataset", str, None, "dataset directory (required)"),
        Opt("out", str, None, "checkpoint directory (required)"),
        Opt("steps", non_negative_int, 4500, "SGD steps"),
        Opt("batch-size", positive_int, 32, "mini-batch size"),
        Opt("learning-rate", positive_float, 0.05, "SGD learning rate"),
        Opt("hidden-size", positive_int, 64, "hidden units"),
        Opt("checkpoint-every", positive_int, 500, "checkpoint cadence in steps"),
        Opt("seed", non_negative_int, 0, "initialization and shuffling seed"),
        Opt("down-w", positive_int, 32, "feature grid width"),
        Opt("down-h", positive_int, 32, "feature grid height"),
    ],
    "eval": [
        Opt("checkpoints", str, None, "checkpoint directory (required)"),
        Opt("dataset", str, None, "dataset directory (required)"),
        Opt("split", choice("val", "train"), "val", "dataset split to evaluate on"),
        Opt("units", choice("radians_squared", "normalized_squared"), "radians_squared", "error units"),
        Opt("format", choice("csv", "json"), "csv", "report format"),
        Opt("out", str, None, "report file (default: standard output)"),
    ],
    "verify": [
        Opt("dataset", str, None, "dataset directory (required)"),
    ],
    "parse": COMMON + [
        Opt("file", str, None, "label file to parse, '-' for standard input (required)"),
        Opt("mode", choice("strict", "lenient"), "strict", "parser mode"),
    ],
    "render-one": COMMON + [
        Opt("seed", non_negative_int, 0, "master seed of the dataset"),
        Opt("index", non_negative_int, 0, "record index"),
        Opt("out", str, None, "output PNG path (required)"),
        Opt("label-out", str, None, "also write the label file here"),
        Opt("width", positive_int, 224, "image width in pixels"),
        Opt("height", positive_int, 224, "image height in pixels"),
    ],
}

REQUIRED = {
    "gen": ["out"],
    "train": ["dataset", "out"],
    "eval": ["checkpoints", "dataset"],
    "verify": ["dataset"],
    "parse": ["file"],
    "render-one": ["out"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthhand", description="Synthetic hand data, regression and evaluation.")
    parser.add_argument("--log-level", default="INFO", help="logging level for standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "gen": "generate a dataset",
        "train": "train the regressor and write checkpoints",
        "eval": "evaluate every checkpoint and print the sweep report",
        "verify": "check a dataset against its manifest",
        "parse": "parse a joint-angle label and print the report as JSON",
        "render-one": "regenerate a single record from its seed",
    }
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", default=None, help="JSON config file")
        for opt in opts:
            default = "" if opt.default is None else f" [default: {opt.default}]"
            p.add_argument(f"--{opt.flag}", dest=opt.dest, type=opt.type, default=None, help=opt.help + default)
    return parser


def resolve_config(command: str, args: argparse.Namespace, environ=os.environ) -> dict[str, Any]:
    """Merge arguments, environment, config file and defaults for one subcommand."""
    file_values: dict[str, Any] = {}
    config_path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")
        file_values = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        file_values.update(doc.get(command, {}))
        file_values = {k.replace("-", "_"): v for k, v in file_values.items()}
    resolved: dict[str, Any] = {}
    for opt in OPTIONS[command]:
        env_key = ENV_PREFIX + opt.dest.upper()
        try:
            if getattr(args, opt.dest) is not None:
                value = getattr(args, opt.dest)
            elif env_key in environ:
                value = opt.type(environ[env_key])
            elif opt.dest in file_values and file_values[opt.dest] is not None:
                value = opt.type(str(file_values[opt.dest]))
            else:
                value = opt.default
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"--{opt.flag}: {exc}") from None
        resolved[opt.dest] = value
    missing = [f"--{f}" for f in REQUIRED[command] if resolved[f.replace("-", "_")] is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    return resolved


def _space(cfg):
    from .kinematics import load_joint_space

    return load_joint_space(cfg.get("joint_def"))


def cmd_gen(cfg: dict) -> int:
    from .pipeline import DatasetManifest, generate_dataset
    from .renderer import CameraConfig

    space = _space(cfg)
    manifest = DatasetManifest.create(
        space, cfg["seed"], cfg["count"], cfg["val_count"],
        camera=CameraConfig(width=cfg["width"], height=cfg["height"]),
    )
    summary = generate_dataset(space, manifest, cfg["out"], cfg["workers"])
    print(json.dumps({"count": summary.count, "wall_time": round(summary.wall_time, 3),
                      "bytes_written": summary.bytes_written}))
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    from .regressor import TrainConfig, train

    config = TrainConfig(
        steps=cfg["steps"], batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
        hidden_size=cfg["hidden_size"], checkpoint_every=cfg["checkpoint_every"], seed=cfg["seed"],
        down_w=cfg["down_w"], down_h=cfg["down_h"],
    )
    checkpoints = train(cfg["dataset"], config, cfg["out"])
    for c in checkpoints:
        print(f"{c.step},{c.train_loss!r}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    from .evaluation import ValidationSet, best_checkpoint, emit_report, sweep_checkpoints

    val = ValidationSet.from_dataset(cfg["dataset"], cfg["split"])
    report = sweep_checkpoints(cfg["checkpoints"], val, cfg["units"])
    text = emit_report(report, cfg["format"], cfg["out"])
    if cfg["out"] is None:
        sys.stdout.write(text)
    log.info("best checkpoint: %d", best_checkpoint(report))
    return EXIT_OK


def cmd_verify(cfg: dict) -> int:
    from .pipeline import verify_dataset

    report = verify_dataset(cfg["dataset"])
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_parse(cfg: dict) -> int:
    from .codec import parse_angles

    space = _space(cfg)
    if cfg["file"] == "-":
        text = sys.stdin.read()
    else:
        text = Path(cfg["file"]).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    report = parse_angles(space, text, cfg["mode"])
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_render_one(cfg: dict) -> int:
    from .codec import label_file_text
    from .pipeline import DatasetManifest, render_record
    from .renderer import CameraConfig

    space = _space(cfg)
    manifest = DatasetManifest.create(
        space, cfg["seed"], cfg["index"] + 1, 0, camera=CameraConfig(width=cfg["width"], height=cfg["height"])
    )
    png, label = render_record(space, manifest, cfg["index"])
    Path(cfg["out"]).write_bytes(png)
    if cfg["label_out"]:
        Path(cfg["label_out"]).write_text(label_file_text(label), encoding="utf-8")
    else:
        print(label)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "parse": cmd_parse,
    "render-one": cmd_render_one,
}


def main(argv: list[str] | None = None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args, environ)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"synthhand {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"synthhand: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"synthhand: invalid config file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("resolved config for %s: %s", args.command, json.dumps(cfg, sort_keys=True))
    try:
        return COMMANDS[args.command](cfg)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    except (ValueError, FloatingPointError) as exc:
        log.error("validation failure: %s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
