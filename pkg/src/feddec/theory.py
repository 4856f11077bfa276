"""Convergence envelope and empirical monitors for the FedDec analysis.

The envelope is

    E f(zbar^t) - f* <= L / (gamma + t) * (2 B / mu^2 + (gamma + 1) / 2 * ||z^1 - z*||^2)

with B = (4/K + 8) alpha H G^2 + 6 L Gamma + sigma_bar^2 / n. The monitors
compare seed-averaged simulation quantities against the consensus and
server-sampling bounds that feed into it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .algorithms import RunTrace, default_gamma, sample_participants, step_size
from .mixing import SpectralReport
from .problem import ProblemConstants
from .rng import stream

# below this alpha the consensus bound is numerically zero and the monitors only report
ALPHA_ZERO_TOL = 1e-12


def b_constant(alpha: float, H: int, g_sq: float, K: int, L: float, gamma_het: float, sigma_bar_sq: float, n: int) -> float:
    return (4.0 / K + 8.0) * alpha * H * g_sq + 6.0 * L * gamma_het + sigma_bar_sq / n


@dataclass(frozen=True)
class TheoryConstants:
    alpha: float
    gamma: float
    lambda2_hat: float
    mu: float
    L: float
    g_sq: float
    sigma_bar_sq: float
    gamma_het: float
    K: int
    H: int
    n: int
    initial_distance_sq: float

    @property
    def B(self) -> float:
        return b_constant(self.alpha, self.H, self.g_sq, self.K, self.L, self.gamma_het, self.sigma_bar_sq, self.n)

    @classmethod
    def from_measurements(
        cls,
        consts: ProblemConstants,
        spectral: SpectralReport,
        K: int,
        H: int,
        n: int,
        g_sq: float,
        z1: np.ndarray | None = None,
        gamma: float | None = None,
    ) -> "TheoryConstants":
        z1 = np.zeros_like(consts.z_star) if z1 is None else np.asarray(z1, dtype=float)
        diff = z1 - consts.z_star
        return cls(
            alpha=spectral.alpha,
            gamma=default_gamma(consts.L, consts.mu, H) if gamma is None else gamma,
            lambda2_hat=spectral.lambda2_hat,
            mu=consts.mu,
            L=consts.L,
            g_sq=g_sq,
            sigma_bar_sq=consts.sigma_bar_sq,
            gamma_het=consts.gamma_het,
            K=K,
            H=H,
            n=n,
            initial_distance_sq=float(diff @ diff),
        )

    def as_dict(self) -> dict:
        out = asdict(self)
        out["B"] = self.B
        return out


def theorem_bound(tc: TheoryConstants, t) -> np.ndarray | float:
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("the bound is defined for t >= 1")
    val = tc.L / (tc.gamma + t) * (2.0 * tc.B / tc.mu**2 + (tc.gamma + 1.0) / 2.0 * tc.initial_distance_sq)
    return float(val) if val.ndim == 0 else val


def measured_g_sq(traces: Sequence[RunTrace]) -> float:
    return max(tr.grad_norm_max for tr in traces)


@dataclass
class MonitorReport:
    name: str
    t: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    excluded: bool = False
    single_run_exceedances: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.bound > 0, self.empirical / self.bound, np.where(self.empirical > 0, np.inf, 0.0))
        return r

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio)) if self.t.size else 0.0

    @property
    def fraction_exceeding(self) -> float:
        return float(np.mean(self.ratio > 1.0)) if self.t.size else 0.0

    @property
    def passed(self) -> bool | None:
        """``None`` when the bound degenerates (alpha = 0) and the check is reported only."""
        if self.excluded:
            return None
        return bool(np.all(self.empirical <= self.bound))

    def summary(self) -> dict:
        return {
            "monitor": self.name,
            "passed": self.passed,
            "excluded": self.excluded,
            "max_ratio": self.max_ratio,
            "fraction_exceeding": self.fraction_exceeding,
            "single_run_exceedances": self.single_run_exceedances,
            "points": int(self.t.size),
            **self.notes,
        }

    def write(self, stem, comment: str | None = None) -> None:
        """``<stem>.txt`` with key=value summary and ``<stem>.csv`` with per-t ratios."""
        head = [f"# {comment}"] if comment else []
        kv = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in self.summary().items()]
        Path(f"{stem}.txt").write_text("\n".join(head + kv) + "\n")
        lines = head + ["t,empirical,bound,ratio"]
        lines += [f"{int(t)},{e!r},{b!r},{r!r}" for t, e, b, r in zip(self.t, map(float, self.empirical), map(float, self.bound), map(float, self.ratio))]
        Path(f"{stem}.csv").write_text("\n".join(lines) + "\n")


def _check_shared(traces: Sequence[RunTrace]) -> None:
    if not traces:
        raise ValueError("monitor needs at least one trace")
    first = traces[0]
    for tr in traces[1:]:
        if not np.array_equal(tr.t, first.t):
            raise ValueError("traces were logged at different iterations; runs must share a configuration")


def lemma2_monitor(traces: Sequence[RunTrace], tc: TheoryConstants) -> MonitorReport:
    """Seed-averaged consensus residual against eta_t^2 * 4 alpha H n G^2."""
    _check_shared(traces)
    if any(tr.consensus is None for tr in traces):
        raise ValueError("lemma2_monitor needs traces recorded with record_consensus=True")
    t = traces[0].t
    eta = traces[0].eta
    residuals = np.stack([tr.consensus for tr in traces])
    bound = eta**2 * 4.0 * tc.alpha * tc.H * tc.n * tc.g_sq
    exceed = int(np.sum(residuals > bound))
    return MonitorReport(
        "lemma2_consensus",
        t,
        residuals.mean(axis=0),
        bound,
        excluded=tc.alpha <= ALPHA_ZERO_TOL,
        single_run_exceedances=exceed,
        notes={"seeds": len(traces)},
    )


def sampling_variance(x: np.ndarray, K: int, n_resamples: int, rng) -> float:
    """Monte Carlo E||xbar - zbar||^2 where zbar averages K rows of ``x`` drawn with replacement."""
    pools = sample_participants(K, x.shape[0], rng, rounds=n_resamples)
    diff = x[pools].mean(axis=1) - x.mean(axis=0)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def lemma3_monitor(traces: Sequence[RunTrace], tc: TheoryConstants, n_resamples: int = 10_000, seed: int = 0) -> MonitorReport:
    """Server-sampling variance at each broadcast against (1/K) eta_t^2 * 4 alpha H G^2.

    Each run's pre-broadcast states are frozen and the participant pool is
    redrawn ``n_resamples`` times; the estimate is then averaged over runs.
    """
    if not traces or any(not tr.snapshots for tr in traces):
        raise ValueError("lemma3_monitor needs traces recorded with record_snapshots=True")
    times = [s.t for s in traces[0].snapshots]
    for tr in traces[1:]:
        if [s.t for s in tr.snapshots] != times:
            raise ValueError("runs have different server-round times")
    per_run = np.empty((len(traces), len(times)))
    for r, tr in enumerate(traces):
        rng = stream(seed, "monitor", r)
        for k, snap in enumerate(tr.snapshots):
            per_run[r, k] = sampling_variance(snap.x, tc.K, n_resamples, rng)
    tr0 = traces[0]
    eta = np.array([step_size(t, tr0.mu, tr0.gamma) for t in times])
    bound = eta**2 * 4.0 * tc.alpha * tc.H * tc.g_sq / tc.K
    return MonitorReport(
        "lemma3_server_sampling",
        np.array(times),
        per_run.mean(axis=0),
        bound,
        excluded=tc.alpha <= ALPHA_ZERO_TOL,
        single_run_exceedances=int(np.sum(per_run > bound)),
        notes={"seeds": len(traces), "resamples": n_resamples},
    )


@dataclass(frozen=True)
class Lemma4Result:
    passed: bool
    first_violation: int | None
    max_ratio: float


def lemma4_sequence_check(mu: float, gamma: float, B: float, delta1: float, T: int, rtol: float = 1e-12) -> Lemma4Result:
    """Run the worst-case recursion D^{t+1} = (1 - mu eta_t) D^t + eta_t^2 B and test D^t <= v / (gamma + t).

    v = max(4 B / mu^2, (gamma + 1) D^1) and eta_t = 2 / (mu (gamma + t)).
    ``rtol`` only absorbs floating point roundoff.
    """
    if min(mu, gamma) <= 0 or B < 0 or delta1 < 0 or T < 1:
        raise ValueError("need mu, gamma > 0, B, delta1 >= 0 and T >= 1")
    v = max(4.0 * B / mu**2, (gamma + 1.0) * delta1)
    delta = delta1
    worst = 0.0
    first = None
    for t in range(1, T + 1):
        cap = v / (gamma + t)
        if cap > 0:
            worst = max(worst, delta / cap)
        if delta > cap * (1.0 + rtol) and first is None:
            first = t
        eta = 2.0 / (mu * (gamma + t))
        delta = (1.0 - mu * eta) * delta + eta * eta * B
    return Lemma4Result(first is None, first, worst)


def envelope_check(traces: Sequence[RunTrace], tc: TheoryConstants) -> MonitorReport:
    """Seed-mean optimality gap against the convergence envelope for t > gamma."""
    _check_shared(traces)
    t = traces[0].t
    keep = t > tc.gamma
    gaps = np.stack([tr.gap for tr in traces])
    bound = theorem_bound(tc, t[keep])
    return MonitorReport(
        "theorem_envelope",
        t[keep],
        gaps.mean(axis=0)[keep],
        np.atleast_1d(bound),
        single_run_exceedances=int(np.sum(gaps[:, keep] > bound)),
        notes={"seeds": len(traces), "gamma": tc.gamma},
    )


def bound_halving_time(tc: TheoryConstants, t0: float) -> float:
    """Iteration at which the envelope has halved relative to ``t0``."""
    return 2.0 * (tc.gamma + t0) - tc.gamma

