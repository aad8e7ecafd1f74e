"""Edge-information term: decoder g, the reconstruction objective L_I, and an
exact discrete check of the variational lower bound I(e;W) >= H(e) + E[log q].

All logarithms are natural (nats).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParameterStore, Tensor
from .numerics import tensor as T
from .propagation import MLP


@dataclass
class InfomaxConfig:
    lam: float = 1.0
    enabled: bool = True
    detach_f: bool = False   # stop L_I gradient into the edge network (ablation)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")

    @property
    def effective_lam(self) -> float:
        return self.lam if self.enabled else 0.0


@dataclass
class EdgeDecoder:
    """g: flattened W (d*d) -> edge-feature estimate (d_e)."""

    mlp: MLP

    @classmethod
    def create(cls, store: ParameterStore, hidden: int, d_e: int, seed: int,
               widths: tuple[int, ...] | None = None, prefix: str = "decoder") -> "EdgeDecoder":
        if widths is None:
            widths = (max(1, hidden * hidden // 2),)
        return cls(MLP.create(store, prefix, [hidden * hidden, *widths, d_e], seed))

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str = "decoder") -> "EdgeDecoder":
        return cls(MLP.from_store(store, prefix))

    def __call__(self, w_flat: Tensor) -> Tensor:
        return self.mlp(w_flat)


@dataclass
class InfomaxTerm:
    mean_li: Tensor          # scalar, mean over edges of -lam * ||e - g(W)||^2
    recon_sq: np.ndarray     # per-edge ||e - g(W)||^2
    lam: float

    @property
    def recon_mse(self) -> float:
        return float(self.recon_sq.mean()) if self.recon_sq.size else 0.0


def gaussian_li(e: Tensor, e_hat: Tensor, lam: float) -> tuple[Tensor, Tensor]:
    """Per-edge -lam * ||e - e_hat||^2 and the squared residuals."""
    sq = T.sqnorm(T.sub(e, e_hat), axis=1)
    return T.scale(sq, -lam), sq


def li_loss(decoder: EdgeDecoder, e: Tensor | np.ndarray, w_flat: Tensor, lam: float,
            detach_f: bool = False) -> InfomaxTerm:
    """Mean L_I over the given edges, decoding the same W the propagation used."""
    e = e if isinstance(e, Tensor) else Tensor(e)
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if detach_f:
        w_flat = w_flat.detach()
    per_edge, sq = gaussian_li(e, decoder(w_flat), lam)
    if e.shape[0] == 0:
        return InfomaxTerm(Tensor(0.0), np.zeros(0), lam)
    return InfomaxTerm(T.mean(per_edge), sq.data.copy(), lam)


# ----------------------------------------------------------------------------
# Discrete oracle


@dataclass
class DiscreteToyProblem:
    """Finite edge alphabet with p(e), a deterministic map f_table: e -> matrix id,
    and a decoder table q_table[matrix id, e] = q(e | W)."""

    p: np.ndarray
    f_table: np.ndarray
    q_table: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.f_table = np.asarray(self.f_table, dtype=np.int64)
        self.q_table = np.asarray(self.q_table, dtype=np.float64)
        problems = []
        K = self.p.shape[0]
        if self.p.ndim != 1 or (self.p < 0).any() or abs(self.p.sum() - 1.0) > 1e-12:
            problems.append("p must be a nonnegative vector summing to 1")
        if self.f_table.shape != (K,):
            problems.append(f"f_table must have {K} entries")
        if self.q_table.ndim != 2 or self.q_table.shape[1] != K:
            problems.append(f"q_table must be [num_matrices, {K}]")
        elif (self.q_table < 0).any() or np.abs(self.q_table.sum(axis=1) - 1.0).max() > 1e-12:
            problems.append("q_table rows must be nonnegative and sum to 1")
        elif self.f_table.size and (self.f_table.min() < 0 or self.f_table.max() >= self.q_table.shape[0]):
            problems.append("f_table refers to a matrix id without a q_table row")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def num_symbols(self) -> int:
        return self.p.shape[0]

    @property
    def num_matrices(self) -> int:
        return self.q_table.shape[0]

    def joint(self) -> np.ndarray:
        """p(e, W) as an [num_matrices, K] table."""
        j = np.zeros((self.num_matrices, self.num_symbols))
        j[self.f_table, np.arange(self.num_symbols)] = self.p
        return j

    def true_posterior(self) -> np.ndarray:
        """p(e | W) per matrix id; rows for unused ids are uniform placeholders."""
        j = self.joint()
        pw = j.sum(axis=1, keepdims=True)
        post = np.full_like(j, 1.0 / self.num_symbols)
        used = pw[:, 0] > 0
        post[used] = j[used] / pw[used]
        return post

    def with_q(self, q_table: np.ndarray) -> "DiscreteToyProblem":
        return DiscreteToyProblem(self.p, self.f_table, q_table)


def random_toy(rng: np.random.Generator, max_symbols: int = 8) -> DiscreteToyProblem:
    K = int(rng.integers(1, max_symbols + 1))
    M = int(rng.integers(1, K + 1))
    p = rng.dirichlet(np.ones(K))
    f_table = rng.integers(0, M, size=K)
    q = rng.dirichlet(np.ones(K), size=M)
    return DiscreteToyProblem(p, f_table, q)


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def exact_mutual_information(toy: DiscreteToyProblem) -> float:
    """I(e;W) = H(e) - H(e|W) by enumeration over the deterministic channel."""
    j = toy.joint()
    pw = j.sum(axis=1)
    h_cond = 0.0
    for w in range(toy.num_matrices):
        if pw[w] > 0:
            h_cond += pw[w] * entropy(j[w] / pw[w])
    return entropy(toy.p) - h_cond


@dataclass
class BoundReport:
    lhs: float               # I(e;W)
    rhs: float               # H(e) + E_p[log q(e | f(e))]
    gap: float
    trivially_satisfied: bool

    @property
    def holds(self) -> bool:
        return self.trivially_satisfied or self.gap >= -1e-12

    def line(self) -> str:
        return (f"I(e;W)={self.lhs:.15g} H(e)+E[log q]={self.rhs:.15g} gap={self.gap:.6g} "
                f"holds={'yes' if self.holds else 'no'}")


def variational_bound_check(toy: DiscreteToyProblem) -> BoundReport:
    lhs = exact_mutual_information(toy)
    support = toy.p > 0
    q_at = toy.q_table[toy.f_table, np.arange(toy.num_symbols)]
    if (q_at[support] == 0).any():
        return BoundReport(lhs, -np.inf, np.inf, True)
    expected_log_q = float((toy.p[support] * np.log(q_at[support])).sum())
    rhs = entropy(toy.p) + expected_log_q
    return BoundReport(lhs, rhs, lhs - rhs, False)
