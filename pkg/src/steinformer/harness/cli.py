"""``steinformer`` command line: train, eval, predict, synth, count-params, flops, dct-check."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError, SteinError, UsageError
from ..model import CONVENTION, STeInFormer, layer_ledger, load_weights, write_ledger_csv
from ..spectral import dct_self_check
from .config import Config, load_config
from .data import load_dataset, save_dataset, synth_generate
from .predict import predict_export
from .train import evaluate_model, train_loop

log = logging.getLogger("steinformer")

TABLE_PARAMS = 1.26e6
TABLE_FLOPS = 9.42e9


def _overrides(args) -> dict:
    ov: dict = {"model": {}, "run": {}, "synth": {}}
    if getattr(args, "seed", None) is not None:
        ov["run"]["seed"] = args.seed
        ov["model"]["init_seed"] = args.seed
        ov["synth"]["seed"] = args.seed
    for flag, (section, key) in {
        "epochs": ("run", "epochs"),
        "lr": ("run", "lr"),
        "batch_size": ("run", "batch_size"),
        "time_budget": ("run", "time_budget_s"),
        "data_root": ("run", "data_root"),
        "count": ("synth", "count"),
        "size": ("synth", "size"),
    }.items():
        val = getattr(args, flag, None)
        if val is not None:
            ov[section][key] = val
    if getattr(args, "out", None) is not None and args.command == "train":
        ov["run"]["out_dir"] = str(args.out)
    if getattr(args, "size", None) is not None:
        ov["model"]["image_size"] = [args.size, args.size]
    return {k: v for k, v in ov.items() if v}


def _samples(cfg: Config):
    if cfg.run.data_root:
        return load_dataset(cfg.run.data_root)
    return synth_generate(cfg.synth)


def _split(samples, frac: float):
    n_val = int(round(len(samples) * frac))
    return samples[: len(samples) - n_val], samples[len(samples) - n_val :]


def _load_model(cfg: Config, weights: Optional[str]) -> STeInFormer:
    model = STeInFormer(cfg.model).to_dtype(np.float32)
    if weights:
        load_weights(model, weights)
    return model


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, default=str))


def cmd_train(args, cfg: Config) -> int:
    samples = _samples(cfg)
    train_set, val_set = _split(samples, cfg.run.val_fraction)
    _, res = train_loop(cfg.model, cfg.loss, train_set, val_set, cfg.run)
    _emit({"steps": res.steps, "seconds": round(res.seconds, 2), "best_val_f1": res.best_f1,
           "final_loss": res.history[-1]["loss"], "best": res.best_path, "last": res.last_path})
    return 0


def cmd_eval(args, cfg: Config) -> int:
    samples = _samples(cfg)
    if args.split == "val":
        samples = _split(samples, cfg.run.val_fraction)[1]
    if not samples:
        raise DataError("no samples to evaluate")
    rep = evaluate_model(_load_model(cfg, args.weights), samples)
    _emit(rep.as_dict())
    return 0


def cmd_predict(args, cfg: Config) -> int:
    model = _load_model(cfg, args.weights)
    samples = _samples(cfg)
    if args.limit is not None:
        samples = samples[: args.limit]
    written = []
    for s in samples:
        r = predict_export(model, s, args.out)
        written.append({k: (v.as_dict() if k == "metrics" else v) for k, v in r.items()})
    _emit(written)
    return 0


def cmd_synth(args, cfg: Config) -> int:
    root = save_dataset(synth_generate(cfg.synth), args.out)
    _emit({"root": root, "count": cfg.synth.count, "size": cfg.synth.size, "seed": cfg.synth.seed})
    return 0


def _ledger_report(cfg: Config, args, what: str) -> int:
    t = time.perf_counter()
    model = STeInFormer(cfg.model)
    h, w = cfg.model.image_size
    rows = layer_ledger(model, h, w)
    params = sum(r.params for r in rows)
    flops = sum(r.flops for r in rows)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            write_ledger_csv(rows, f)
    elif args.ledger:
        sys.stdout.write(write_ledger_csv(rows))
    if what == "params":
        out = {"params": params, "target": TABLE_PARAMS, "rel_diff": params / TABLE_PARAMS - 1}
    else:
        out = {"flops": flops, "input": f"{h}x{w}x3 pair", "convention": CONVENTION,
               "target": TABLE_FLOPS, "rel_diff": flops / TABLE_FLOPS - 1}
    out["seconds"] = round(time.perf_counter() - t, 3)
    _emit(out)
    return 0


def cmd_dct_check(args, cfg: Config) -> int:
    results = dct_self_check()
    for name, err, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<28} max err {err:.3e}")
    return 0 if all(ok for _, _, ok in results) else 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steinformer", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with model/loss/synth/run sections")
        p.add_argument("--seed", type=int, help="overrides every seed in the config")
        return p

    p = common(sub.add_parser("train", help="train on synthetic data or an A/B/label directory"))
    p.add_argument("--out", type=Path, help="output directory for log and checkpoints")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float, help="seconds")

    p = common(sub.add_parser("eval", help="metrics of saved weights on a dataset"))
    p.add_argument("--weights", required=True)
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--split", choices=["all", "val"], default="all")

    p = common(sub.add_parser("predict", help="write change maps and error maps as PNG"))
    p.add_argument("--weights")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--limit", type=int)

    p = common(sub.add_parser("synth", help="write a synthetic dataset in the A/B/label layout"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)

    for name in ("count-params", "flops"):
        p = common(sub.add_parser(name, help=f"{name.replace('-', ' ')} with per-layer ledger"))
        p.add_argument("--csv", help="write the ledger CSV here")
        p.add_argument("--ledger", action="store_true", help="print the ledger CSV to stdout")
    common(sub.add_parser("dct-check", help="numerical self-check of the DCT"))
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "synth": cmd_synth,
    "count-params": lambda a, c: _ledger_report(c, a, "params"),
    "flops": lambda a, c: _ledger_report(c, a, "flops"),
    "dct-check": cmd_dct_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and UsageError.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except SteinError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
