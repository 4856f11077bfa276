"""FedDec and FedAvg simulation.

One iteration at every node: a mini-batch SGD step, an averaging step with the
neighbors through the sampled mixing matrix, and, every ``H`` iterations, a
server round in which ``K`` nodes drawn with replacement are averaged and the
result is broadcast to all nodes. FedAvg is the same loop without the
neighbor averaging.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import problem as prob
from .mixing import MixingModel
from .rng import stream

ALGORITHMS = ("feddec", "fedavg")
MAX_LOGGED_ROWS = 10_000
_BATCH_CHUNK = 1024


class DivergenceError(RuntimeError):
    def __init__(self, t: int, node: int, norm: float):
        super().__init__(f"non-finite iterate at iteration {t} (node {node}, max-norm {norm})")
        self.t = t
        self.node = node
        self.norm = norm


@dataclass(frozen=True)
class RunConfig:
    algo: str = "feddec"
    T: int = 5000
    H: int = 10
    K: int = 2
    m: int = 1
    seed: int = 0
    gamma_override: float | None = None
    record_consensus: bool = False
    record_snapshots: bool = False
    shared_batches: bool = False  # every node draws the same batch indices
    full_batch: bool = False  # exact local gradients instead of sampled mini-batches
    log_every: int | None = None

    def validate(self, n: int) -> None:
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        if self.T < 1 or self.H < 1 or self.m < 1:
            raise ValueError(f"T, H and m must be positive, got T={self.T}, H={self.H}, m={self.m}")
        if self.T % self.H != 0:
            raise ValueError(f"T must be a multiple of H, got T={self.T}, H={self.H}")
        if not 1 <= self.K <= n:
            raise ValueError(f"K must lie in [1, n={n}], got {self.K}")
        if self.gamma_override is not None and not self.gamma_override > 0:
            raise ValueError(f"gamma_override must be positive, got {self.gamma_override}")
        if self.log_every is not None and self.log_every < 1:
            raise ValueError(f"log_every must be positive, got {self.log_every}")

    @property
    def logging_stride(self) -> int:
        if self.log_every is not None:
            return self.log_every
        return max(1, math.ceil(self.T / MAX_LOGGED_ROWS))


def step_size(t: int, mu: float, gamma: float) -> float:
    if not (mu > 0 and gamma > 0):
        raise ValueError(f"mu and gamma must be positive, got mu={mu}, gamma={gamma}")
    return 2.0 / (mu * (gamma + t))


def default_gamma(L: float, mu: float, H: int) -> float:
    return max(8.0 * L / mu - 1.0, float(H))


def sample_participants(K: int, n: int, rng, rounds: int | None = None) -> np.ndarray:
    """K iid uniform node indices (duplicates allowed); ``rounds`` stacks that many pools."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return rng.integers(0, n, size=K if rounds is None else (rounds, K))


def consensus_residual(Z: np.ndarray) -> float:
    """sum_i ||z_i - zbar||^2, computed on offsets from the first row so equal rows give exactly 0."""
    Z = np.asarray(Z, dtype=float)
    off = Z - Z[0]
    dev = off - off.mean(axis=0)
    return float(np.sum(dev * dev))


@dataclass
class ServerSnapshot:
    """Pre-broadcast state at a server round (t is the broadcast time, t in the round set)."""

    t: int
    x: np.ndarray
    participants: np.ndarray


@dataclass
class RunTrace:
    config: RunConfig
    gamma: float
    mu: float
    t: np.ndarray
    eta: np.ndarray
    gap: np.ndarray
    dist_sq: np.ndarray
    consensus: np.ndarray | None
    grad_norm_max: float
    server_rounds: list[tuple[int, list[int]]] = field(default_factory=list)
    snapshots: list[ServerSnapshot] = field(default_factory=list)
    peer_messages: int = 0
    server_messages: int = 0
    wall_time: float = 0.0
    final_z: np.ndarray | None = None

    @property
    def final_gap(self) -> float:
        return float(self.gap[-1])

    def rows(self) -> tuple[list[str], list[list[float]]]:
        cols = ["t", "eta", "gap", "dist_sq"]
        data = [self.t, self.eta, self.gap, self.dist_sq]
        if self.consensus is not None:
            cols.append("consensus")
            data.append(self.consensus)
        return cols, [list(r) for r in zip(*data)]

    def write_csv(self, path, comment: str | None = None) -> None:
        cols, rows = self.rows()
        lines = [f"# {comment}"] if comment else []
        lines.append(",".join(cols))
        lines += [",".join([str(int(r[0]))] + [repr(float(x)) for x in r[1:]]) for r in rows]
        Path(path).write_text("\n".join(lines) + "\n")

    def write_server_csv(self, path, comment: str | None = None) -> None:
        lines = [f"# {comment}"] if comment else []
        lines.append("round_t,participant_indices")
        lines += [f"{t},{' '.join(map(str, pool))}" for t, pool in self.server_rounds]
        Path(path).write_text("\n".join(lines) + "\n")


class BatchSampler:
    """Mini-batch rows per node, drawn in fixed-size chunks from per-node substreams."""

    def __init__(self, p: prob.RegressionProblem, cfg: RunConfig):
        self.p, self.m = p, cfg.m
        if cfg.shared_batches:
            self.rngs = [stream(cfg.seed, "batch", 0)]
        else:
            self.rngs = [stream(cfg.seed, "batch", i) for i in range(p.n)]
        self.buf = None
        self.pos = _BATCH_CHUNK

    def next(self) -> np.ndarray:
        if self.pos == _BATCH_CHUNK:
            chunks = [r.integers(0, self.p.M, size=(_BATCH_CHUNK, self.m)) for r in self.rngs]
            if len(chunks) == 1:
                chunks = chunks * self.p.n
            self.buf = np.stack(chunks, axis=1)  # (chunk, n, m)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def run(
    p: prob.RegressionProblem,
    mixing: MixingModel | np.ndarray | None,
    config: RunConfig,
    consts: prob.ProblemConstants | None = None,
    z1: np.ndarray | None = None,
) -> RunTrace:
    """Simulate one run and return its trace.

    ``mixing`` is a :class:`MixingModel` (matrices sampled every iteration), a
    fixed matrix, or ``None`` for no neighbor averaging. FedAvg ignores it.
    Logged row ``t`` describes the state z^t entering iteration ``t``, so the
    first row is the initial point and the last is the output z^{T+1}.
    """
    n, d = p.n, p.d
    config.validate(n)
    if consts is None:
        consts = prob.constants(p, m=config.m)
    mu, z_star, f_star = consts.mu, consts.z_star, consts.f_star
    gamma = config.gamma_override if config.gamma_override is not None else default_gamma(consts.L, mu, config.H)

    fixed_w = None
    model = None
    if config.algo == "feddec":
        if isinstance(mixing, MixingModel):
            if mixing.n != n:
                raise ValueError(f"mixing model has {mixing.n} nodes, problem has {n}")
            if mixing.is_fixed:
                fixed_w = mixing.fixed_matrix()
            else:
                model = mixing
        elif mixing is not None:
            fixed_w = np.asarray(mixing, dtype=float)
            if fixed_w.shape != (n, n):
                raise ValueError(f"mixing matrix must be {n}x{n}, got {fixed_w.shape}")

    batches = BatchSampler(p, config)
    full_rows = np.tile(np.arange(p.M), (n, 1))
    link_rng = stream(config.seed, "links")
    server_rng = stream(config.seed, "server")

    Z = np.tile(np.zeros(d) if z1 is None else np.asarray(z1, dtype=float), (n, 1))
    stride = config.logging_stride
    log_t, log_eta, log_gap, log_dist, log_cons = [], [], [], [], []

    def record(t: int, Z: np.ndarray) -> None:
        zbar = Z.mean(axis=0)
        log_t.append(t)
        log_eta.append(step_size(t, mu, gamma))
        log_gap.append(prob.global_cost(p, zbar) - f_star)
        diff = zbar - z_star
        log_dist.append(float(diff @ diff))
        if config.record_consensus:
            log_cons.append(consensus_residual(Z))

    trace = RunTrace(config, gamma, mu, None, None, None, None, None, 0.0)
    active_edges = 0 if model is None else None
    if fixed_w is not None:
        active_edges = int(np.count_nonzero(np.triu(fixed_w, 1)))
    g_max = 0.0
    start = time.perf_counter()
    record(1, Z)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.T + 1):
            eta = step_size(t, mu, gamma)
            if model is not None:
                active = link_rng.random(model.num_edges) < model.activation_prob
                W = model.matrix_for(active)
                edges_up = int(active.sum())
            else:
                W = fixed_w
                edges_up = active_edges
            grads = prob.batch_gradients(p, Z, full_rows if config.full_batch else batches.next())
            g_max = max(g_max, float(np.max(np.einsum("nd,nd->n", grads, grads))))
            X_half = Z - eta * grads
            X = X_half if W is None else W @ X_half
            trace.peer_messages += 2 * edges_up
            if (t + 1) % config.H == 0:
                pool = sample_participants(config.K, n, server_rng)
                if config.record_snapshots:
                    trace.snapshots.append(ServerSnapshot(t + 1, X.copy(), pool.copy()))
                trace.server_rounds.append((t + 1, pool.tolist()))
                trace.server_messages += config.K + n
                # offsets from the first participant: identical rows average to themselves exactly
                anchor = X[pool[0]]
                Z = np.tile(anchor + (X[pool] - anchor).mean(axis=0), (n, 1))
            else:
                Z = X
            if not np.all(np.isfinite(Z)):
                norms = np.linalg.norm(np.where(np.isfinite(Z), Z, np.inf), axis=1)
                node = int(np.argmax(norms))
                raise DivergenceError(t, node, float(norms[node]))
            if t % stride == 0 or t == config.T:
                record(t + 1, Z)

    trace.wall_time = time.perf_counter() - start
    trace.t = np.array(log_t)
    trace.eta = np.array(log_eta)
    trace.gap = np.array(log_gap)
    trace.dist_sq = np.array(log_dist)
    trace.consensus = np.array(log_cons) if config.record_consensus else None
    trace.grad_norm_max = g_max
    trace.final_z = Z[0].copy()
    return trace
