"""Supervised losses, the combined objectives and evaluation metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .infomax import InfomaxTerm
from .numerics import Tensor
from .numerics import tensor as T

L0_KINDS = ("mse", "mae", "ce")


def l0_loss(kind: str, y_hat: Tensor, y: np.ndarray) -> Tensor:
    """Mean over examples (and target components) of the chosen loss.

    For ``ce`` the prediction holds logits [N, C] and ``y`` integer classes [N].
    """
    y = np.asarray(y)
    if kind == "ce":
        if y_hat.data.ndim != 2 or y.shape != (y_hat.shape[0],):
            raise ValueError(f"ce: logits {y_hat.shape} vs labels {y.shape}")
        classes = y.astype(np.int64)
        if (classes != y).any() or classes.min() < 0 or classes.max() >= y_hat.shape[1]:
            raise ValueError(f"ce: class labels must be integers in [0, {y_hat.shape[1]})")
        return T.scale(T.mean(T.pick(T.log_softmax(y_hat, axis=1), classes)), -1.0)
    if y_hat.shape != y.shape:
        raise ValueError(f"{kind}: prediction shape {y_hat.shape} != target shape {y.shape}")
    diff = T.sub(y_hat, Tensor(y))
    if kind == "mse":
        return T.mean(T.mul(diff, diff))
    if kind == "mae":
        return T.mean(T.abs_(diff))
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {L0_KINDS}")


@dataclass
class LossBreakdown:
    l0: float
    mean_li: float
    total: float
    recon_mse: float | None
    num_graphs: int
    num_nodes: int
    num_edges: int

    def as_dict(self) -> dict:
        return asdict(self)


def _combine(l0: Tensor, li: InfomaxTerm | None, counts: tuple[int, int, int]) -> tuple[Tensor, LossBreakdown]:
    if li is None:
        total = l0
        return total, LossBreakdown(l0.item(), 0.0, total.item(), None, *counts)
    total = T.sub(l0, li.mean_li)
    return total, LossBreakdown(l0.item(), li.mean_li.item(), total.item(), li.recon_mse, *counts)


def graph_objective(l0_kind: str, y_hat: Tensor, y: np.ndarray, li: InfomaxTerm | None,
                    num_nodes: int = 0, num_edges: int = 0) -> tuple[Tensor, LossBreakdown]:
    """L0 averaged over the graphs of the batch minus L_I averaged over all of its edges."""
    l0 = l0_loss(l0_kind, y_hat, y)
    return _combine(l0, li, (y_hat.shape[0], num_nodes, num_edges))


def node_objective(l0_kind: str, y_hat: Tensor, y: np.ndarray, li: InfomaxTerm | None,
                   num_graphs: int = 1, num_edges: int = 0) -> tuple[Tensor, LossBreakdown]:
    """L0 averaged over nodes minus L_I averaged over edges."""
    l0 = l0_loss(l0_kind, y_hat, y)
    return _combine(l0, li, (num_graphs, y_hat.shape[0], num_edges))


# ----------------------------------------------------------------------------
# Metrics


@dataclass
class TargetStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_targets(cls, y: np.ndarray) -> "TargetStats":
        y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
        return cls(y.mean(axis=0), y.std(axis=0))

    @property
    def scale(self) -> np.ndarray:
        # zero-variance targets are left unscaled
        return np.where(self.std > 0, self.std, 1.0)

    def normalize(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean) / self.scale

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return y * self.scale + self.mean

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "TargetStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def pearson_r(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson correlation, or None when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        return None
    return float(np.dot(da, db) / (sa * sb))


def metrics(y_hat: np.ndarray, y: np.ndarray, stats: TargetStats) -> dict:
    """MAE per target (original units), their mean, nMAE and Pearson R per target."""
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(len(y_hat), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    if y_hat.shape != y.shape:
        raise ValueError(f"prediction shape {y_hat.shape} != target shape {y.shape}")
    mae = np.abs(y_hat - y).mean(axis=0)
    return {
        "mae": mae.tolist(),
        "mae_mean": float(mae.mean()),
        "nmae": float((mae / stats.scale).mean()),
        "pearson_r": [pearson_r(y_hat[:, k], y[:, k]) for k in range(y.shape[1])],
    }
