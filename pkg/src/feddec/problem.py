"""Synthetic non-iid least-squares problem.

Node ``i`` holds ``M`` rows ``X_i`` (M x d) and targets ``Y_i`` (length M) and
minimizes F_i(z) = (1/M) ||X_i z - Y_i||^2. Targets are
Y_i = c_i (v + cos v) with v = X_i 1 and c_i = base**i, so nodes differ
wildly in scale when base = 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import as_generator

FEATURE_STD = 0.25
LSTSQ_RCOND = 1e-12


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    X: np.ndarray  # (n, M, d)
    Y: np.ndarray  # (n, M)
    scale_base: float | None = None
    seed: int | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 3 or Y.shape != X.shape[:2]:
            raise ValueError(f"expected X of shape (n, M, d) and Y of shape (n, M); got {X.shape} and {Y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("problem data must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def M(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]


def generate_synthetic(n: int, d: int, M: int, scale_base: float = 2.0, rng=None, seed: int | None = None) -> RegressionProblem:
    if min(n, d, M) < 1:
        raise ValueError(f"n, d, M must be positive, got {(n, d, M)}")
    rng = as_generator(rng if rng is not None else seed)
    X = rng.normal(0.0, FEATURE_STD, size=(n, M, d))
    v = X.sum(axis=2)
    c = float(scale_base) ** np.arange(1, n + 1)
    Y = c[:, None] * (v + np.cos(v))
    return RegressionProblem(X, Y, scale_base=float(scale_base), seed=seed)


def _check_z(p: RegressionProblem, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (p.d,):
        raise ValueError(f"expected a parameter vector of length {p.d}, got shape {z.shape}")
    return z


def _check_node(p: RegressionProblem, i: int) -> int:
    if not 0 <= i < p.n:
        raise IndexError(f"node {i} out of range for n={p.n}")
    return i


def local_cost(p: RegressionProblem, i: int, z) -> float:
    z = _check_z(p, z)
    r = p.X[_check_node(p, i)] @ z - p.Y[i]
    return float(r @ r) / p.M


def global_cost(p: RegressionProblem, z) -> float:
    z = _check_z(p, z)
    r = np.einsum("imd,d->im", p.X, z) - p.Y
    return float(np.mean(np.sum(r * r, axis=1) / p.M))


def full_gradient(p: RegressionProblem, i: int, z) -> np.ndarray:
    z = _check_z(p, z)
    Xi = p.X[_check_node(p, i)]
    return (2.0 / p.M) * Xi.T @ (Xi @ z - p.Y[i])


def global_gradient(p: RegressionProblem, z) -> np.ndarray:
    return np.mean([full_gradient(p, i, z) for i in range(p.n)], axis=0)


def row_gradients(p: RegressionProblem, i: int, z) -> np.ndarray:
    """Per-sample gradients 2 (x_j^T z - y_j) x_j for every local row (M x d)."""
    z = _check_z(p, z)
    Xi = p.X[_check_node(p, i)]
    return 2.0 * (Xi @ z - p.Y[i])[:, None] * Xi


def sample_batch(p: RegressionProblem, m: int, rng) -> np.ndarray:
    """``m`` row indices drawn uniformly with replacement."""
    if m < 1:
        raise ValueError(f"mini-batch size must be >= 1, got {m}")
    return rng.integers(0, p.M, size=m)


def batch_gradients(p: RegressionProblem, Z: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Mini-batch gradients for all nodes at once.

    ``Z`` holds one parameter per node (n x d) and ``idx`` the batch rows (n x m).
    Returns the (n x d) matrix whose row i is (1/m) sum_j 2 (x_j^T z_i - y_j) x_j.
    """
    nodes = np.arange(p.n)[:, None]
    xb = p.X[nodes, idx]  # (n, m, d)
    yb = p.Y[nodes, idx]  # (n, m)
    resid = np.einsum("nmd,nd->nm", xb, Z) - yb
    return (2.0 / idx.shape[1]) * np.einsum("nm,nmd->nd", resid, xb)


def stochastic_gradient(p: RegressionProblem, i: int, z, m: int, rng) -> np.ndarray:
    idx = sample_batch(p, m, as_generator(rng))
    return row_gradients(p, i, z)[idx].mean(axis=0)


def global_optimum(p: RegressionProblem) -> tuple[np.ndarray, float]:
    """Minimizer of the average cost via the normal equations."""
    A = np.einsum("imd,ime->de", p.X, p.X)
    b = np.einsum("imd,im->d", p.X, p.Y)
    rank = np.linalg.matrix_rank(A)
    if rank < p.d:
        raise np.linalg.LinAlgError(f"normal matrix is rank deficient: rank {rank} < d = {p.d}")
    z = np.linalg.solve(A, b)
    return z, global_cost(p, z)


def local_optimum(p: RegressionProblem, i: int) -> np.ndarray:
    """Minimum-norm least-squares minimizer of F_i."""
    z, *_ = np.linalg.lstsq(p.X[_check_node(p, i)], p.Y[i], rcond=LSTSQ_RCOND)
    return z


@dataclass(frozen=True)
class ProblemConstants:
    z_star: np.ndarray
    f_star: float
    mu: float
    L: float
    gamma_het: float
    sigma_sq: np.ndarray
    sigma_bar_sq: float
    g_sq: float | None = None


def constants(p: RegressionProblem, m: int = 1, g_sq: float | None = None) -> ProblemConstants:
    """Smoothness, strong convexity, heterogeneity and variance constants.

    ``mu`` comes from the global Hessian: per-node Hessians are singular when
    M < d. ``sigma_sq[i]`` is the exact variance of an ``m``-sample batch
    gradient at z*. The gradient energy bound ``g_sq`` cannot be computed a
    priori and is passed in from a measured run.
    """
    z_star, f_star = global_optimum(p)
    hess = (2.0 / p.M) * np.einsum("imd,ime->ide", p.X, p.X)
    L = float(max(np.linalg.eigvalsh(h)[-1] for h in hess))
    mu = float(np.linalg.eigvalsh(hess.mean(axis=0))[0])
    gamma_het = float(np.mean([local_cost(p, i, z_star) - local_cost(p, i, local_optimum(p, i)) for i in range(p.n)]))
    sigma_sq = np.empty(p.n)
    for i in range(p.n):
        g = row_gradients(p, i, z_star)
        sigma_sq[i] = np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)) / m
    return ProblemConstants(z_star, f_star, mu, L, gamma_het, sigma_sq, float(sigma_sq.mean()), g_sq)


def save(p: RegressionProblem, directory) -> None:
    """One CSV per node (d feature columns then the target) plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"n": p.n, "d": p.d, "M": p.M, "scale_base": p.scale_base, "seed": p.seed}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for i in range(p.n):
        rows = np.column_stack([p.X[i], p.Y[i]])
        text = "\n".join(",".join(repr(float(x)) for x in row) for row in rows)
        (directory / f"node_{i:03d}.csv").write_text(text + "\n")


def load(directory) -> RegressionProblem:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    data = np.stack([np.loadtxt(directory / f"node_{i:03d}.csv", delimiter=",", ndmin=2) for i in range(manifest["n"])])
    return RegressionProblem(data[:, :, :-1], data[:, :, -1], manifest.get("scale_base"), manifest.get("seed"))
