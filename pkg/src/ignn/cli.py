"""Command-line entry points: gen-data, train, eval, fine-tune, gradcheck, bound-check.

Every command writes its resolved configuration to ``<out>/config.json`` and
nothing outside ``--out``.  Exit codes are listed in ``EXIT_CODES``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data_io import (DatasetFormatError, SyntheticSpec, default_sizes, generate_synthetic, load_dataset,
                      save_dataset, split, zero_continuous_edge_features)
from .graphs import GraphError
from .infomax import random_toy, variational_bound_check
from .numerics.params import CheckpointError
from .training import (ConfigMismatchError, DivergenceError, TrainConfig, evaluate, evaluate_model, fine_tune,
                       load_checkpoint, prepare, train, write_metrics_csv)
from .verification import gradient_suite

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG_MISMATCH = 4
EXIT_INVALID_DATA = 5
EXIT_DIVERGED = 6

EXIT_CODES = {
    EXIT_OK: "success",
    EXIT_CHECK_FAILED: "gradcheck or bound-check failed",
    EXIT_USAGE: "bad command line (unknown flag, bad value)",
    EXIT_MISSING_FILE: "referenced file does not exist",
    EXIT_CONFIG_MISMATCH: "checkpoint config hash does not match the requested model",
    EXIT_INVALID_DATA: "malformed dataset, config or checkpoint file",
    EXIT_DIVERGED: "training produced a non-finite loss",
}

GRAD_TOL = 1e-4
DATASET_NAME = "dataset.ignd"

log = logging.getLogger("ignn")


class UsageError(Exception):
    pass


class MissingFileError(Exception):
    pass


# ----------------------------------------------------------------------------
# TrainConfig <-> flags

def _int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


_FLAG_TYPES = {
    "seed": int, "scheme": str, "lam": float, "epochs": int, "batch_size": int, "lr": float,
    "patience": int, "hidden": int, "num_layers": int, "set2set_steps": int, "readout": str,
    "edge_hidden": _int_tuple, "decoder_hidden": _int_tuple, "head_hidden": int, "splits": _int_tuple,
    "l0": str, "eval_batch_size": int, "run_id": str,
}
_BOOL_FIELDS = ("ablate_distance", "detach_f")
_CHOICES = {"scheme": ("gcn", "rgcn", "mpnn", "ignn"), "readout": ("set2set", "sum"), "l0": ("mse", "mae")}


def _flag(name: str) -> str:
    return "--lambda" if name == "lam" else "--" + name.replace("_", "-")


def add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training config (flags override --config)")
    g.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    for f in fields(TrainConfig):
        if f.name in _BOOL_FIELDS:
            g.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                           default=argparse.SUPPRESS)
        else:
            g.add_argument(_flag(f.name), dest=f.name, type=_FLAG_TYPES[f.name],
                           choices=_CHOICES.get(f.name), default=argparse.SUPPRESS)


def resolve_train_config(args: argparse.Namespace, base: dict | None = None) -> TrainConfig:
    """``base`` < ``--config`` file < explicit flags."""
    merged = dict(base or {})
    if args.config is not None:
        merged.update(_read_json(args.config))
    for f in fields(TrainConfig):
        if hasattr(args, f.name):
            merged[f.name] = getattr(args, f.name)
    if "seed" not in merged:
        raise UsageError("--seed is required (directly or via --config)")
    try:
        return TrainConfig.from_json(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


# ----------------------------------------------------------------------------
# helpers

def _existing(path: Path | None, what: str) -> Path:
    if path is None or not Path(path).is_file():
        raise MissingFileError(f"{what} not found: {path}")
    return Path(path)


def _read_json(path: Path) -> dict:
    _existing(path, "config file")
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise DatasetFormatError(f"{path}: expected a JSON object")
    return d


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _outdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_data(path: Path) -> Path:
    """Accept either a dataset file or a gen-data output directory."""
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_NAME
    return _existing(path, "dataset")


def _split_rows(result, ds) -> list[tuple[str, dict]]:
    rows = []
    for name, idx in zip(("train", "val", "test"), result.splits):
        if len(idx):
            rows.append((name, evaluate_model(result.model, ds.subset(idx), result.stats,
                                              result.record.config["eval_batch_size"])))
    return rows


def _finish_run(result, ds, cfg: TrainConfig, out: Path) -> None:
    ds_used, _ = prepare(cfg, ds, result.splits)
    result.record.write_jsonl(out / "run.jsonl")
    result.save_checkpoint(out / "model.ckpt")
    write_metrics_csv(out / "metrics.csv", cfg.run_id, _split_rows(result, ds_used))
    _write_json(out / "timing.json", {"wall_clock_s": result.record.wall_clock_s})
    test = result.record.test
    print(f"best epoch {result.record.best_epoch}  val MAE {result.record.best_val_mae:.6g}"
          + (f"  test MAE {test['mae_mean']:.6g}" if test else ""))


# ----------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    try:
        spec = SyntheticSpec(min_nodes=args.min_nodes, max_nodes=args.max_nodes, edge_prob=args.edge_prob,
                             num_relations=4, noise_std=args.noise_std, complete_graph=args.complete_graph,
                             seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    out = _outdir(args.out)
    _write_json(out / "config.json", {"command": "gen-data", "n": args.n, "text": args.text,
                                      "spec": spec.to_json()})
    ds = generate_synthetic(spec, args.n)
    save_dataset(ds, out / DATASET_NAME, binary=not args.text)
    print(f"wrote {len(ds)} graphs to {out / DATASET_NAME}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    if cfg.epochs < 1:
        raise UsageError("--epochs must be >= 1 for train")
    data = _resolve_data(args.data)
    out = _outdir(args.out)
    _write_json(out / "config.json", {"command": "train", "data": str(data), "train_config": cfg.to_json()})
    ds = load_dataset(data)
    result = train(cfg, ds)
    _finish_run(result, ds, cfg, out)
    return EXIT_OK


def cmd_fine_tune(args) -> int:
    ckpt = _existing(args.checkpoint, "checkpoint")
    _, _, base = load_checkpoint(ckpt)
    cfg = resolve_train_config(args, base)
    data = _resolve_data(args.data)
    out = _outdir(args.out)
    _write_json(out / "config.json", {"command": "fine-tune", "data": str(data), "checkpoint": str(ckpt),
                                      "train_config": cfg.to_json()})
    ds = load_dataset(data)
    result = fine_tune(ckpt, ds, cfg)
    _finish_run(result, ds, cfg, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = _existing(args.checkpoint, "checkpoint")
    data = _resolve_data(args.data)
    _, _, train_cfg = load_checkpoint(ckpt)
    out = _outdir(args.out)
    _write_json(out / "config.json", {"command": "eval", "data": str(data), "checkpoint": str(ckpt),
                                      "split": args.split, "run_id": args.run_id})
    ds = load_dataset(data)
    if train_cfg.get("ablate_distance"):
        ds = zero_continuous_edge_features(ds)
    if args.split != "all":
        if "seed" not in train_cfg:
            raise UsageError("checkpoint carries no training config; use --split all")
        sizes = train_cfg.get("splits")
        parts = split(ds, train_cfg["seed"], tuple(sizes) if sizes else default_sizes(len(ds)))
        ds = ds.subset(parts[("train", "val", "test").index(args.split)])
    m = evaluate(ckpt, ds)
    write_metrics_csv(out / "metrics.csv", args.run_id, [(args.split, m)])
    print(f"{args.split}: MAE {m['mae_mean']:.6g}  nMAE {m['nmae']:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = [args.seed + k for k in range(args.num_seeds)]
    worst: dict[str, float] = {}
    for s in seeds:
        for name, err in gradient_suite(s).items():
            worst[name] = max(worst.get(name, 0.0), err)
    width = max(len(n) for n in worst)
    print(f"{'layer':<{width}}  max_rel_err  status")
    for name, err in worst.items():
        print(f"{name:<{width}}  {err:11.3e}  {'ok' if err <= GRAD_TOL else 'FAIL'}")
    if args.out is not None:
        out = _outdir(args.out)
        _write_json(out / "config.json", {"command": "gradcheck", "seeds": seeds, "tolerance": GRAD_TOL})
        with open(out / "gradcheck.csv", "w") as fh:
            fh.write("layer,max_rel_err\n")
            for name, err in worst.items():
                fh.write(f"{name},{err!r}\n")
    return EXIT_OK if all(e <= GRAD_TOL for e in worst.values()) else EXIT_CHECK_FAILED


def cmd_bound_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    lines, min_gap, max_tight, ok = [], np.inf, 0.0, True
    for k in range(args.num_toys):
        toy = random_toy(rng, args.max_symbols)
        rep = variational_bound_check(toy)
        tight = variational_bound_check(toy.with_q(toy.true_posterior()))
        ok &= rep.holds and abs(tight.gap) <= 1e-12
        min_gap = min(min_gap, rep.gap)
        max_tight = max(max_tight, abs(tight.gap))
        lines.append(f"toy={k} K={toy.num_symbols} {rep.line()} posterior_gap={tight.gap:.3g}")
    if args.verbose:
        print("\n".join(lines))
    print(f"toys={args.num_toys} seed={args.seed} min_gap={min_gap:.6g} max_posterior_gap={max_tight:.3g} "
          f"holds={'yes' if ok else 'no'}")
    if args.out is not None:
        out = _outdir(args.out)
        _write_json(out / "config.json", {"command": "bound-check", "seed": args.seed,
                                          "num_toys": args.num_toys, "max_symbols": args.max_symbols})
        (out / "bound_check.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ignn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--min-nodes", type=int, default=5)
    g.add_argument("--max-nodes", type=int, default=9)
    g.add_argument("--edge-prob", type=float, default=0.4)
    g.add_argument("--noise-std", type=float, default=0.0)
    g.add_argument("--complete-graph", action="store_true")
    g.add_argument("--text", action="store_true", help="plain-text arrays instead of binary")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train from scratch")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    add_train_flags(t)
    t.set_defaults(fn=cmd_train)

    f = sub.add_parser("fine-tune", help="continue training a checkpoint on new data")
    f.add_argument("--checkpoint", type=Path, required=True)
    f.add_argument("--data", type=Path, required=True)
    f.add_argument("--out", type=Path, required=True)
    add_train_flags(f)
    f.set_defaults(fn=cmd_fine_tune)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    e.add_argument("--run-id", default="eval")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("gradcheck", help="backward vs finite differences for every layer")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--num-seeds", type=int, default=1)
    c.add_argument("--out", type=Path)
    c.set_defaults(fn=cmd_gradcheck)

    b = sub.add_parser("bound-check", help="variational MI bound on random discrete toys")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--num-toys", type=int, default=100)
    b.add_argument("--max-symbols", type=int, default=8)
    b.add_argument("--out", type=Path)
    b.set_defaults(fn=cmd_bound_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_MISMATCH
    except (DatasetFormatError, GraphError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
