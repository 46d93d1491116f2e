"""Command-line entry point: train / eval / predict / serve.

Configuration comes from an INI-style file (sections [data], [train],
[augment], [serve]) with command-line flags taking precedence; unknown keys
are rejected and the fully resolved configuration is echoed before any work
starts. Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

Artifacts land under --out: checkpoint.mckp, history.csv, split.csv,
report.json.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import server as srv
from .data import (
    AugmentConfig,
    DatasetIndex,
    SplitSpec,
    batches,
    scan_dataset,
    split_dataset,
    write_split_manifest,
)
from .exceptions import (
    CheckpointError,
    DataError,
    DecodeError,
    MalariaNetError,
    PayloadTooLargeError,
)
from .metrics import ConfusionMatrix, confusion, render_table, report
from .model import build_model
from .train import TrainConfig, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

_TRAIN_DEFAULTS = TrainConfig()
_AUG_DEFAULTS = AugmentConfig()

# section -> key -> (type, default)
CONFIG_SCHEMA = {
    "data": {"root": (str, None), "seed": (int, 0)},
    "train": {
        "lr": (float, _TRAIN_DEFAULTS.lr),
        "epochs": (int, _TRAIN_DEFAULTS.epochs),
        "batch_size": (int, _TRAIN_DEFAULTS.batch_size),
        "es_patience": (int, _TRAIN_DEFAULTS.es_patience),
        "es_min_delta": (float, _TRAIN_DEFAULTS.es_min_delta),
        "plateau_factor": (float, _TRAIN_DEFAULTS.plateau_factor),
        "plateau_patience": (int, _TRAIN_DEFAULTS.plateau_patience),
        "min_lr": (float, _TRAIN_DEFAULTS.min_lr),
    },
    "augment": {
        "rotation_deg": (float, _AUG_DEFAULTS.rotation_deg),
        "zoom_lo": (float, _AUG_DEFAULTS.zoom_range[0]),
        "zoom_hi": (float, _AUG_DEFAULTS.zoom_range[1]),
        "hflip_prob": (float, _AUG_DEFAULTS.hflip_prob),
    },
    "serve": {
        "bind": (str, "127.0.0.1:8000"),
        "checkpoint": (str, None),
        "cors_origin": (str, "*"),
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def load_config(path: str | None) -> dict:
    """Schema-checked {section: {key: value}} with defaults filled in."""
    resolved = {
        section: {key: default for key, (_, default) in keys.items()}
        for section, keys in CONFIG_SCHEMA.items()
    }
    if path is None:
        return resolved
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise DataError(f"config file {path} does not exist or is unreadable")
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                raise UsageError(f"unknown config key {key!r} in section [{section}]")
            typ, _ = CONFIG_SCHEMA[section][key]
            try:
                resolved[section][key] = typ(raw)
            except ValueError as exc:
                raise UsageError(f"config [{section}] {key} = {raw!r}: {exc}") from exc
    return resolved


def _apply_overrides(cfg: dict, args) -> dict:
    pairs = [
        ("data", "root", "data_root"),
        ("data", "seed", "seed"),
        ("train", "lr", "lr"),
        ("train", "epochs", "epochs"),
        ("train", "batch_size", "batch_size"),
        ("train", "es_patience", "es_patience"),
        ("train", "plateau_patience", "plateau_patience"),
        ("serve", "bind", "bind"),
        ("serve", "checkpoint", "checkpoint"),
        ("serve", "cors_origin", "cors_origin"),
    ]
    for section, key, attr in pairs:
        value = getattr(args, attr, None)
        if value is not None:
            cfg[section][key] = value
    return cfg


def _echo_config(cfg: dict) -> None:
    for section, keys in cfg.items():
        print(f"[{section}]")
        for key, value in keys.items():
            print(f"{key} = {value}")
    print()


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(seed=cfg["data"]["seed"], **t)


def _augment_config(cfg: dict) -> AugmentConfig:
    a = cfg["augment"]
    return AugmentConfig(
        rotation_deg=a["rotation_deg"],
        zoom_range=(a["zoom_lo"], a["zoom_hi"]),
        hflip_prob=a["hflip_prob"],
        seed=cfg["data"]["seed"],
    )


def _require_root(cfg: dict) -> Path:
    root = cfg["data"]["root"]
    if not root:
        raise UsageError("no dataset root configured ([data] root or --data-root)")
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    return root


def _derive_splits(cfg: dict, root) -> dict[str, DatasetIndex]:
    index = scan_dataset(root)
    train_idx, val_idx, test_idx = split_dataset(index, SplitSpec(seed=cfg["data"]["seed"]))
    return {"train": train_idx, "val": val_idx, "test": test_idx}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _echo_config(cfg)
    root = _require_root(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    splits = _derive_splits(cfg, root)
    write_split_manifest(out / "split.csv", splits)
    print(
        f"dataset: {sum(len(s) for s in splits.values())} images "
        f"(train {len(splits['train'])} / val {len(splits['val'])} / test {len(splits['test'])})"
    )

    model = build_model(seed=cfg["data"]["seed"])
    tcfg = _train_config(cfg)
    history, model = fit(model, splits["train"], splits["val"], tcfg, _augment_config(cfg))
    history.to_csv(out / "history.csv")
    ckpt.save(model, out / "checkpoint.mckp", config={k: dict(v) for k, v in cfg.items()})

    last = history.rows[-1]
    print(
        f"trained {len(history.rows)} epoch(s); "
        f"final val_loss {last['val_loss']:.4f} val_acc {last['val_acc']:.4f}"
    )
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _echo_config(cfg)
    root = _require_root(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model = ckpt.load(args.checkpoint)
    split = _derive_splits(cfg, root)[args.split]
    labels, preds = [], []
    for x, y in batches(split, batch_size=cfg["train"]["batch_size"]):
        probs = model.forward(x, mode="infer")
        preds.extend(probs.data.argmax(axis=1).tolist())
        labels.extend(y.tolist())
    rep = report(confusion(labels, preds, class_names=tuple(model.class_names)))
    (out / "report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    print(render_table(rep))
    print(f"\nreport written to {out / 'report.json'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    service = srv.InferenceService.from_checkpoint(args.checkpoint)
    raw = Path(args.image).read_bytes()
    prediction = service.predict(raw)
    print(json.dumps(prediction.to_dict(), indent=2))
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _echo_config(cfg)
    checkpoint = cfg["serve"]["checkpoint"]
    if not checkpoint:
        raise UsageError("no checkpoint configured ([serve] checkpoint or --checkpoint)")
    srv.serve(checkpoint, cfg["serve"]["bind"], cfg["serve"]["cors_origin"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="malarianet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--data-root", help="dataset root (overrides [data] root)")
        p.add_argument("--seed", type=int, help="overrides [data] seed")
        p.add_argument("--out", default="out", help="artifact directory (default: ./out)")

    p_train = sub.add_parser("train", help="train a model and write artifacts")
    common(p_train)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--es-patience", dest="es_patience", type=int)
    p_train.add_argument("--plateau-patience", dest="plateau_patience", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--batch-size", dest="batch_size", type=int)
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="classify one image file")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("image", help="path to a PNG image")
    p_pred.set_defaults(func=cmd_predict)

    p_serve = sub.add_parser("serve", help="run the HTTP inference service")
    p_serve.add_argument("--config", help="INI config file")
    p_serve.add_argument("--checkpoint")
    p_serve.add_argument("--bind")
    p_serve.add_argument("--cors-origin", dest="cors_origin")
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help (0) and usage errors (1)
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DecodeError, CheckpointError, PayloadTooLargeError, FileNotFoundError) as exc:
        code = "decode_error" if isinstance(exc, DecodeError) else "data_error"
        print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    except (MalariaNetError, KeyboardInterrupt) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
