"""Doubly stochastic mixing matrices, link failures and their spectra.

A mixing model assigns one weight per edge of a base graph. Each iteration
every edge survives independently with probability ``activation_prob``; the
weight of a failed edge returns to the diagonal, so every realization is
symmetric and doubly stochastic without a fresh eigensolve.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import Graph, is_connected, laplacian
from .rng import as_generator, stream

WEIGHT_RULES = ("laplacian_best_constant", "laplacian_max_eig", "metropolis")
DEFAULT_RULE = "laplacian_best_constant"


def edge_weights(g: Graph, rule: str = DEFAULT_RULE) -> np.ndarray:
    """Weight of every edge of ``g`` (in ``g.edge_list`` order) under ``rule``."""
    if rule not in WEIGHT_RULES:
        raise ValueError(f"unknown weight rule {rule!r}; expected one of {WEIGHT_RULES}")
    if not is_connected(g):
        raise ValueError("mixing weights need a connected graph (second eigenvalue would be 1)")
    edges = g.edge_list
    if rule == "metropolis":
        deg = g.degrees()
        return np.array([1.0 / (1.0 + max(deg[i], deg[j])) for i, j in edges])
    try:
        ev = np.linalg.eigvalsh(laplacian(g))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"Laplacian eigensolve failed: {exc}") from exc
    if rule == "laplacian_max_eig":
        step = 1.0 / ev[-1]
    else:
        # best constant edge weight for fast averaging: 2 / (lambda_2(L) + lambda_max(L))
        step = 2.0 / (ev[1] + ev[-1])
    return np.full(len(edges), step)


def _assemble(n: int, rows: np.ndarray, cols: np.ndarray, weights: np.ndarray) -> np.ndarray:
    w = np.zeros((n, n))
    w[rows, cols] = weights
    w[cols, rows] = weights
    w[np.diag_indices(n)] = 1.0 - w.sum(axis=1)
    return w


def build_weights(g: Graph, rule: str = DEFAULT_RULE) -> np.ndarray:
    """Fixed mixing matrix over all edges of ``g``."""
    wts = edge_weights(g, rule)
    edges = np.array(g.edge_list, dtype=np.int64).reshape(-1, 2)
    return _assemble(g.n, edges[:, 0], edges[:, 1], wts)


@dataclass(frozen=True)
class MixingModel:
    """Distribution of mixing matrices: base graph, link-activation law and weight rule."""

    base_graph: Graph
    activation_prob: float = 1.0
    weight_rule: str = DEFAULT_RULE

    def __post_init__(self):
        if not 0.0 < self.activation_prob <= 1.0:
            raise ValueError(f"activation_prob must lie in (0, 1], got {self.activation_prob}")
        # normalizer frozen from the base graph; failures only move weight to the diagonal
        object.__setattr__(self, "_weights", edge_weights(self.base_graph, self.weight_rule))
        edges = np.array(self.base_graph.edge_list, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "_rows", edges[:, 0])
        object.__setattr__(self, "_cols", edges[:, 1])
        object.__setattr__(self, "_fixed", _assemble(self.n, edges[:, 0], edges[:, 1], self._weights))

    @property
    def n(self) -> int:
        return self.base_graph.n

    @property
    def num_edges(self) -> int:
        return len(self._weights)

    @property
    def is_fixed(self) -> bool:
        return self.activation_prob == 1.0

    def fixed_matrix(self) -> np.ndarray:
        return self._fixed.copy()

    def matrix_for(self, active: np.ndarray) -> np.ndarray:
        """Mixing matrix when only the edges flagged in ``active`` are up."""
        active = np.asarray(active, dtype=bool)
        return _assemble(self.n, self._rows[active], self._cols[active], self._weights[active])

    def expected_wwt(self) -> np.ndarray:
        """Exact E[W W^T] under independent link failures.

        Writing W = I - sum_e b_e w_e A_e with A_e = (e_i - e_j)(e_i - e_j)^T and
        A_e^2 = 2 A_e gives E[W W^T] = E[W]^2 + 2 p (1 - p) sum_e w_e^2 A_e.
        """
        p = self.activation_prob
        mean_w = self.matrix_for(np.ones(self.num_edges, dtype=bool))
        mean_w = np.eye(self.n) + p * (mean_w - np.eye(self.n))
        extra = np.zeros((self.n, self.n))
        for i, j, w in zip(self._rows, self._cols, self._weights):
            c = 2.0 * p * (1.0 - p) * w * w
            extra[i, i] += c
            extra[j, j] += c
            extra[i, j] -= c
            extra[j, i] -= c
        return mean_w @ mean_w + extra


def sample_mixing(model: MixingModel, rng=None) -> np.ndarray:
    if model.is_fixed:
        return model.fixed_matrix()
    rng = as_generator(rng)
    return model.matrix_for(rng.random(model.num_edges) < model.activation_prob)


def second_abs_eigenvalue(sym: np.ndarray) -> float:
    """Second largest absolute eigenvalue of a symmetric matrix."""
    ev = np.sort(np.abs(np.linalg.eigvalsh(sym)))[::-1]
    return float(ev[1])


def alpha_of(lambda2_hat: float) -> float:
    if not 0.0 <= lambda2_hat < 1.0:
        raise ValueError(f"lambda2_hat must lie in [0, 1) for a contracting mixing, got {lambda2_hat}")
    return lambda2_hat / (1.0 - lambda2_hat)


@dataclass(frozen=True)
class SpectralReport:
    lambda2_hat: float
    alpha: float
    method: str
    n_samples: int | None = None
    stderr: float | None = None

    def as_dict(self) -> dict:
        return {
            "lambda2_hat": self.lambda2_hat,
            "alpha": self.alpha,
            "method": self.method,
            "n_samples": self.n_samples,
            "stderr": self.stderr,
        }


def lambda2_hat(model: MixingModel, n_samples: int | None = 10_000, seed: int = 0, n_batches: int = 20) -> SpectralReport:
    """|lambda_2(E[W W^T])| and the matching alpha.

    A fixed mixing (activation 1) is solved exactly as |lambda_2(W)|^2. Otherwise
    E[W W^T] is the mean of W W^T over ``n_samples`` draws, draw ``i`` taken from
    link substream ``i`` of ``seed`` so results do not depend on how sampling is
    split across workers. The standard error comes from batch means.
    """
    if model.is_fixed:
        lam = second_abs_eigenvalue(model.fixed_matrix()) ** 2
        return SpectralReport(lam, alpha_of(lam), "exact_fixed_W")
    if n_samples is None or n_samples < 2:
        raise ValueError(f"Monte Carlo estimate needs n_samples >= 2, got {n_samples}")
    n_batches = max(2, min(n_batches, n_samples))
    bounds = np.linspace(0, n_samples, n_batches + 1).astype(int)
    total = np.zeros((model.n, model.n))
    batch_estimates = []
    for b in range(n_batches):
        acc = np.zeros_like(total)
        for i in range(bounds[b], bounds[b + 1]):
            w = sample_mixing(model, stream(seed, "links", i))
            acc += w @ w.T
        total += acc
        batch_estimates.append(second_abs_eigenvalue(acc / (bounds[b + 1] - bounds[b])))
    lam = second_abs_eigenvalue(total / n_samples)
    stderr = float(np.std(batch_estimates, ddof=1) / np.sqrt(n_batches))
    return SpectralReport(lam, alpha_of(lam), "monte_carlo", n_samples, stderr)


@dataclass(frozen=True)
class Violation:
    check: str
    magnitude: float
    where: tuple[int, ...]

    def __str__(self):
        return f"{self.check}: magnitude {self.magnitude:.3g} at {self.where}"


def validate(
    w: np.ndarray,
    g: Graph | None = None,
    tol: float = 1e-9,
    sym_tol: float = 1e-12,
    require_nonnegative_diagonal: bool = False,
) -> list[Violation]:
    """Diagnose a mixing matrix; an empty list means every check passed.

    Off-diagonal entries must be nonnegative. Diagonal entries may be negative
    (the best-constant rule produces them) unless ``require_nonnegative_diagonal``.
    """
    w = np.asarray(w, dtype=float)
    out: list[Violation] = []
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        return [Violation("square", float("nan"), tuple(w.shape))]
    if not np.all(np.isfinite(w)):
        idx = np.argwhere(~np.isfinite(w))[0]
        return [Violation("finite", float("inf"), tuple(int(k) for k in idx))]
    n = w.shape[0]

    def worst(check, dev, limit):
        k = int(np.argmax(dev))
        if dev.flat[k] > limit:
            out.append(Violation(check, float(dev.flat[k]), tuple(int(x) for x in np.unravel_index(k, dev.shape))))

    worst("symmetric", np.abs(w - w.T), sym_tol)
    worst("row-stochastic", np.abs(w.sum(axis=1) - 1.0), tol)
    worst("column-stochastic", np.abs(w.sum(axis=0) - 1.0), tol)
    off = w.copy()
    np.fill_diagonal(off, 0.0)
    worst("nonnegative", np.maximum(-off, 0.0), 0.0)
    if require_nonnegative_diagonal:
        worst("diagonal-nonnegative", np.maximum(-np.diag(w), 0.0), 0.0)
    if g is not None:
        if g.n != n:
            out.append(Violation("shape", float(abs(g.n - n)), (n,)))
        else:
            mask = (g.adjacency() == 0) & ~np.eye(n, dtype=bool)
            worst("sparsity", np.where(mask, np.abs(w), 0.0), 0.0)
    return out


def write_matrix_csv(w: np.ndarray, path) -> None:
    lines = [",".join(repr(float(x)) for x in row) for row in np.asarray(w)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
