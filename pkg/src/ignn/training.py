"""Mini-batch training with Adam, validation-MAE early stopping, run records."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data_io import Dataset, default_sizes, split, zero_continuous_edge_features
from .graphs import batch_graphs
from .model import Model, ModelConfig
from .numerics import AdamState, ParameterStore, adam_step, backward, new_tape, no_grad
from .numerics.params import CheckpointError
from .objectives import LossBreakdown, TargetStats, graph_objective, metrics

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int
    scheme: str = "ignn"
    lam: float = 1.0
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 30
    hidden: int = 64
    num_layers: int = 3
    set2set_steps: int = 3
    readout: str = "set2set"
    edge_hidden: tuple[int, ...] = (64,)
    decoder_hidden: tuple[int, ...] | None = None
    head_hidden: int | None = None
    splits: tuple[int, int, int] | None = None   # (train, val, test); None -> 80/10/10
    l0: str = "mse"
    ablate_distance: bool = False                # sMPNN-style: zero continuous edge features
    detach_f: bool = False
    eval_batch_size: int = 256
    run_id: str = "run"

    def __post_init__(self):
        self.edge_hidden = tuple(self.edge_hidden)
        if self.decoder_hidden is not None:
            self.decoder_hidden = tuple(self.decoder_hidden)
        if self.splits is not None:
            self.splits = tuple(int(s) for s in self.splits)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("edge_hidden", "decoder_hidden", "splits"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def model_config(self, ds: Dataset) -> ModelConfig:
        return ModelConfig(
            scheme=self.scheme, d_x=ds.d_x, d_e=ds.d_e, target_dim=ds.target_dim,
            num_relations=ds.num_relations, hidden=self.hidden, num_layers=self.num_layers,
            edge_hidden=self.edge_hidden, decoder_hidden=self.decoder_hidden,
            readout=self.readout, set2set_steps=self.set2set_steps, head_hidden=self.head_hidden,
        )

    @property
    def effective_lam(self) -> float:
        return self.lam if self.scheme == "ignn" else 0.0


@dataclass
class RunRecord:
    config: dict
    model_config: dict
    target_stats: dict
    init: dict = field(default_factory=dict)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    test: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def deterministic_view(self) -> dict:
        """Everything except the wall-clock time."""
        d = asdict(self)
        d.pop("wall_clock_s")
        return d

    def best(self) -> dict:
        return self.init if self.best_epoch == 0 else self.epochs[self.best_epoch - 1]

    def write_jsonl(self, path: str | Path) -> None:
        """One JSON object per line: config, init, each epoch, summary.

        Wall-clock time is left out so the file is bit-identical across reruns.
        """
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "config", "config": self.config, "model_config": self.model_config,
                                 "target_stats": self.target_stats}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "init", **self.init}, sort_keys=True) + "\n")
            for ep in self.epochs:
                fh.write(json.dumps({"type": "epoch", **ep}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "summary", "best_epoch": self.best_epoch,
                                 "best_val_mae": self.best_val_mae, "test": self.test},
                                sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "RunRecord":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
        head, init, summary = rows[0], rows[1], rows[-1]
        init.pop("type")
        epochs = []
        for r in rows[2:-1]:
            r = dict(r)
            r.pop("type")
            epochs.append(r)
        return cls(head["config"], head["model_config"], head["target_stats"], init, epochs,
                   summary["best_epoch"], summary["best_val_mae"], summary["test"])


@dataclass
class TrainResult:
    record: RunRecord
    model: Model            # holds the best-epoch parameters
    stats: TargetStats
    splits: tuple[np.ndarray, np.ndarray, np.ndarray]

    def save_checkpoint(self, path: str | Path) -> None:
        save_checkpoint(self.model, self.stats, path, self.record.config)


def save_checkpoint(model: Model, stats: TargetStats, path: str | Path, train_config: dict | None = None) -> None:
    model.params.save(path, model.cfg.to_json(),
                      extra={"target_stats": stats.to_json(), "train_config": train_config or {}})


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> tuple[Model, TargetStats, dict]:
    """Rebuild a model from a checkpoint; reject it if ``expected`` hashes differently."""
    header, arrays = ParameterStore.read(path)
    cfg = ModelConfig.from_json(header["config"])
    if expected is not None and expected.hash != header["config_hash"]:
        raise ConfigMismatchError(
            f"checkpoint config hash {header['config_hash'][:12]} != expected {expected.hash[:12]}")
    store = ParameterStore()
    for name, arr in arrays.items():
        store.add(name, arr)
    model = Model(cfg, store)
    return model, TargetStats.from_json(header["extra"]["target_stats"]), header["extra"].get("train_config", {})


# ----------------------------------------------------------------------------


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *keys])))


def predict(model: Model, ds: Dataset, stats: TargetStats, batch_size: int = 256,
            lam: float = 0.0) -> tuple[np.ndarray, float | None]:
    """Predictions in original units and the mean per-edge reconstruction error."""
    preds, recon_sum, n_edges = [], 0.0, 0
    with no_grad():
        for i in range(0, len(ds), batch_size):
            b = batch_graphs(ds.graphs[i:i + batch_size])
            out = model.forward(b, lam)
            preds.append(out.y_hat.data)
            if out.li is not None:
                recon_sum += float(out.li.recon_sq.sum())
                n_edges += b.num_edges
    y_hat = stats.denormalize(np.concatenate(preds)) if preds else np.zeros((0, ds.target_dim))
    recon = recon_sum / n_edges if model.cfg.has_decoder and n_edges else None
    return y_hat, recon


def evaluate_model(model: Model, ds: Dataset, stats: TargetStats, batch_size: int = 256) -> dict:
    y_hat, recon = predict(model, ds, stats, batch_size)
    row = metrics(y_hat, ds.targets(), stats)
    row["recon_mse"] = recon
    return row


def loss_on(model: Model, ds: Dataset, stats: TargetStats, cfg: TrainConfig) -> dict:
    """Objective breakdown over a whole split (edge- and graph-weighted means)."""
    y_hat, recon = predict(model, ds, stats, cfg.eval_batch_size)
    z_hat, z = stats.normalize(y_hat), stats.normalize(ds.targets())
    l0 = float(np.mean((z_hat - z) ** 2)) if cfg.l0 == "mse" else float(np.mean(np.abs(z_hat - z)))
    mean_li = -cfg.effective_lam * recon if recon is not None else 0.0
    return {"l0": l0, "mean_li": mean_li, "total": l0 - mean_li, "recon_mse": recon}


def _normalized_batch(graphs, stats: TargetStats):
    b = batch_graphs(graphs)
    return b, stats.normalize(b.graph_labels)


def _fit(cfg: TrainConfig, model: Model, stats: TargetStats, train_ds: Dataset, val_ds: Dataset,
         test_ds: Dataset, record: RunRecord) -> RunRecord:
    t0 = time.perf_counter()
    lam = cfg.effective_lam
    params = model.params
    params.zero_grad()
    state = AdamState(lr=cfg.lr)

    init_val = evaluate_model(model, val_ds, stats, cfg.eval_batch_size)
    record.init = {"epoch": 0, "train": loss_on(model, train_ds, stats, cfg), "val": init_val}
    best_mae = init_val["mae_mean"]
    best = params.snapshot()
    record.best_epoch, record.best_val_mae = 0, best_mae
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        order = _rng(cfg.seed, 1, epoch).permutation(len(train_ds))
        sums = {"l0": 0.0, "mean_li": 0.0, "total": 0.0, "recon_mse": 0.0}
        n_batches = 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            graphs = [train_ds.graphs[i] for i in order[start:start + cfg.batch_size]]
            batch, y = _normalized_batch(graphs, stats)
            try:
                with new_tape() as tape, np.errstate(over="ignore", invalid="ignore"):
                    out = model.forward(batch, lam, cfg.detach_f)
                    total, parts = graph_objective(cfg.l0, out.y_hat, y, out.li,
                                                   batch.num_nodes, batch.num_edges)
                    if not np.isfinite(parts.total):
                        raise FloatingPointError("loss is not finite")
                    backward(total, tape)
            except FloatingPointError as exc:
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}: {exc}") from None
            adam_step(params, state)
            for k in sums:
                v = getattr(parts, k)
                sums[k] += 0.0 if v is None else v
            n_batches += 1
        train_summary = {k: v / max(n_batches, 1) for k, v in sums.items()}
        if not model.cfg.has_decoder:
            train_summary["recon_mse"] = None
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val = evaluate_model(model, val_ds, stats, cfg.eval_batch_size)
            if not np.isfinite(val["mae_mean"]):
                raise FloatingPointError("validation MAE is not finite")
        except FloatingPointError as exc:
            raise DivergenceError(f"non-finite validation at epoch {epoch}: {exc}") from None
        record.epochs.append({"epoch": epoch, "train": train_summary, "val": val})
        log.debug("epoch %d train %.5g val mae %.5g", epoch, train_summary["total"], val["mae_mean"])
        if val["mae_mean"] < best_mae:
            best_mae, best, stale = val["mae_mean"], params.snapshot(), 0
            record.best_epoch, record.best_val_mae = epoch, best_mae
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    params.restore(best)
    record.test = evaluate_model(model, test_ds, stats, cfg.eval_batch_size) if len(test_ds) else {}
    record.wall_clock_s = time.perf_counter() - t0
    return record


def prepare(cfg: TrainConfig, ds: Dataset, splits=None):
    if cfg.ablate_distance:
        ds = zero_continuous_edge_features(ds)
    if splits is None:
        splits = split(ds, cfg.seed, cfg.splits or default_sizes(len(ds)))
    return ds, tuple(np.asarray(s) for s in splits)


def train(cfg: TrainConfig, ds: Dataset, splits=None) -> TrainResult:
    """Train from a fresh seeded initialisation; the result holds best-epoch parameters."""
    if cfg.epochs < 1:
        raise ValueError("train needs epochs >= 1")
    ds, (tr, va, te) = prepare(cfg, ds, splits)
    train_ds, val_ds, test_ds = ds.subset(tr), ds.subset(va), ds.subset(te)
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("need non-empty train and validation splits")
    stats = TargetStats.from_targets(train_ds.targets())
    mcfg = cfg.model_config(ds)
    model = Model.initialize(mcfg, cfg.seed)
    record = RunRecord(cfg.to_json(), mcfg.to_json(), stats.to_json())
    _fit(cfg, model, stats, train_ds, val_ds, test_ds, record)
    return TrainResult(record, model, stats, (tr, va, te))


def fine_tune(checkpoint: str | Path | TrainResult, ds: Dataset, cfg: TrainConfig, splits=None) -> TrainResult:
    """Continue training a checkpointed model on ``ds`` with a fresh Adam state.

    Target normalisation is kept from the checkpoint so zero-shot and
    fine-tuned predictions live on the same scale.
    """
    ds, (tr, va, te) = prepare(cfg, ds, splits)
    mcfg = cfg.model_config(ds)
    if isinstance(checkpoint, TrainResult):
        if checkpoint.model.cfg.hash != mcfg.hash:
            raise ConfigMismatchError("architecture differs from the checkpoint")
        store = ParameterStore()
        for n, arr in checkpoint.model.params.snapshot().items():
            store.add(n, arr)
        model, stats = Model(mcfg, store), checkpoint.stats
    else:
        model, stats, _ = load_checkpoint(checkpoint, expected=mcfg)
    train_ds, val_ds, test_ds = ds.subset(tr), ds.subset(va), ds.subset(te)
    record = RunRecord(cfg.to_json(), mcfg.to_json(), stats.to_json())
    _fit(cfg, model, stats, train_ds, val_ds, test_ds, record)
    return TrainResult(record, model, stats, (tr, va, te))


def evaluate(checkpoint: str | Path, ds: Dataset, expected: ModelConfig | None = None,
             batch_size: int = 256) -> dict:
    model, stats, _ = load_checkpoint(checkpoint, expected)
    if (model.cfg.d_x, model.cfg.d_e, model.cfg.target_dim) != (ds.d_x, ds.d_e, ds.target_dim):
        raise ConfigMismatchError("dataset widths do not match the checkpoint's model")
    return evaluate_model(model, ds, stats, batch_size)


# ----------------------------------------------------------------------------
# Metrics CSV


def metrics_header(target_dim: int) -> list[str]:
    return (["run_id", "split"] + [f"mae_{k}" for k in range(target_dim)]
            + ["mae_mean", "nmae"] + [f"r_{k}" for k in range(target_dim)])


def metrics_row(run_id: str, split_name: str, m: dict) -> list:
    rs = ["undefined" if r is None else repr(r) for r in m["pearson_r"]]
    return [run_id, split_name] + [repr(v) for v in m["mae"]] + [repr(m["mae_mean"]), repr(m["nmae"])] + rs


def write_metrics_csv(path: str | Path, run_id: str, rows: list[tuple[str, dict]]) -> None:
    target_dim = len(rows[0][1]["mae"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(metrics_header(target_dim))
        for split_name, m in rows:
            w.writerow(metrics_row(run_id, split_name, m))


__all__ = [
    "TrainConfig", "RunRecord", "TrainResult", "train", "fine_tune", "evaluate", "evaluate_model",
    "predict", "save_checkpoint", "load_checkpoint", "write_metrics_csv", "DivergenceError",
    "ConfigMismatchError", "CheckpointError",
]
