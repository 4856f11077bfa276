"""Experiment orchestration and the ``feddec`` command line.

Subcommands:

    feddec table1    second-eigenvalue table over geographic and random graphs
    feddec converge  FedDec / FedAvg convergence runs over a grid of configs x seeds
    feddec spectra   |lambda_2(E[W W^T])|, alpha and the alpha-vs-lambda curve
    feddec verify    invariant and monitor suite, nonzero exit on any hard failure

Every CSV starts with a ``# config_hash=... seed=...`` comment line followed
by a header row; bodies are byte-identical across re-runs and worker counts.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import algorithms as alg
from . import graphs
from . import mixing as mx
from . import problem as prob
from . import theory as th
from .rng import stream

log = logging.getLogger("feddec")

OUTPUT_ENV = "FEDDEC_OUTPUT_DIR"

# mean |lambda_2(W)|^2 over 10 graphs, keyed by (kind, param) with one value per n in TABLE1_SIZES
TABLE1_SIZES = (10, 20, 40)
REFERENCE_TABLE1 = {
    ("geographic", 0.35): (0.78, 0.87, 0.83),
    ("geographic", 0.5): (0.7, 0.64, 0.56),
    ("geographic", 0.65): (0.41, 0.33, 0.34),
    ("random", 0.3): (0.7, 0.62, 0.4),
    ("random", 0.5): (0.42, 0.29, 0.17),
    ("random", 0.7): (0.25, 0.13, 0.083),
}
_KIND_CODE = {"geographic": 0, "random": 1}

DEFAULT_SPEC = {
    "problem": {"n": 20, "d": 25, "M": 10, "scale_base": 2.0, "seed": 0},
    "graphs": [{"kind": "geographic", "param": 0.35}, {"kind": "geographic", "param": 0.5}],
    "graph_seed": 0,
    "path_augment": False,
    "mixing": {"weight_rule": mx.DEFAULT_RULE, "activation_prob": 1.0, "lambda_samples": 10_000},
    "defaults": {"T": 5000, "K": 2, "m": 1},
    "runs": [
        {"algo": "feddec", "H": 10},
        {"algo": "fedavg", "H": 10},
        {"algo": "feddec", "H": 100},
        {"algo": "fedavg", "H": 100},
    ],
    "seeds": list(range(10)),
    "output_dir": None,
    "workers": 1,
}

# small instance used by ``verify`` when no config is given
VERIFY_SPEC = {
    "problem": {"n": 10, "d": 5, "M": 20, "scale_base": 1.5, "seed": 0},
    "graphs": [{"kind": "geographic", "param": 0.35}],
    "path_augment": True,
    "defaults": {"T": 500, "K": 2, "m": 1},
    "runs": [{"algo": "feddec", "H": 10}],
    "seeds": list(range(5)),
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentSpec:
    problem: dict
    graphs: list[dict]
    graph_seed: int
    path_augment: bool
    mixing: dict
    defaults: dict
    runs: list[dict]
    seeds: list[int]
    output_dir: str | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "ExperimentSpec":
        merged = _merge(DEFAULT_SPEC, data or {})
        unknown = set(merged) - set(DEFAULT_SPEC)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        spec = cls(**merged)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "graphs": self.graphs,
            "graph_seed": self.graph_seed,
            "path_augment": self.path_augment,
            "mixing": self.mixing,
            "defaults": self.defaults,
            "runs": self.runs,
            "seeds": self.seeds,
        }

    def config_hash(self) -> str:
        """Hash of everything that affects results (output location and worker count excluded)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def run_configs(self) -> list[alg.RunConfig]:
        out = []
        for r in self.runs:
            fields = {**self.defaults, **r}
            out.append(alg.RunConfig(**fields))
        return out

    def validate(self) -> None:
        n = self.problem["n"]
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for g in self.graphs:
            if g["kind"] not in _KIND_CODE:
                raise ValueError(f"unsupported graph kind {g['kind']!r}")
        if self.mixing["weight_rule"] not in mx.WEIGHT_RULES:
            raise ValueError(f"unknown weight rule {self.mixing['weight_rule']!r}")
        for cfg in self.run_configs():
            cfg.validate(n)


def _comment(spec_hash: str, seed) -> str:
    return f"config_hash={spec_hash} seed={seed}"


def _write_csv(path: Path, header: list[str], rows: list[list], comment: str) -> None:
    def fmt(x):
        if isinstance(x, (bool, np.bool_)):
            return str(bool(x))
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        if isinstance(x, (float, np.floating)):
            return repr(float(x))
        return "" if x is None else str(x)

    lines = [f"# {comment}", ",".join(header)] + [",".join(fmt(x) for x in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _output_dir(path) -> Path:
    out = Path(path or os.environ.get(OUTPUT_ENV, "results"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- eigenvalue table


def cmd_table1(
    grid: dict | None = None,
    sizes=TABLE1_SIZES,
    realizations: int = 10,
    seed: int = 0,
    weight_rule: str = mx.DEFAULT_RULE,
    output_dir=None,
) -> list[dict]:
    """Mean and std of |lambda_2(W)|^2 over connected realizations for each grid cell."""
    grid = grid if grid is not None else {k: v for k, v in REFERENCE_TABLE1.items()}
    rows = []
    for (kind, param) in grid:
        for size_idx, n in enumerate(sizes):
            vals, rejected = [], 0
            for k in range(realizations):
                rng = stream(seed, "graph", _KIND_CODE[kind], int(round(param * 1000)), n, k)
                g, rej = graphs.generate_connected(kind, n, param, rng)
                rejected += rej
                vals.append(mx.lambda2_hat(mx.MixingModel(g, 1.0, weight_rule)).lambda2_hat)
            ref = REFERENCE_TABLE1.get((kind, param))
            rows.append(
                {
                    "kind": kind,
                    "param": param,
                    "n": n,
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                    "rejections": rejected,
                    "reference": ref[size_idx] if ref and len(ref) == len(sizes) else None,
                }
            )
    if output_dir is not None:
        out = _output_dir(output_dir)
        h = hashlib.sha256(json.dumps([realizations, weight_rule, list(sizes), [list(k) for k in grid]]).encode()).hexdigest()[:16]
        cols = ["kind", "param", "n", "mean", "std", "rejections", "reference"]
        _write_csv(out / "table1.csv", cols, [[r[c] for c in cols] for r in rows], _comment(h, seed))
    return rows


# ---------------------------------------------------------------- convergence


def _graph_label(g: dict) -> str:
    return f"{g['kind']}_{g['param']}"


def _cfg_label(cfg: alg.RunConfig) -> str:
    return f"{cfg.algo}_H{cfg.H}_K{cfg.K}_m{cfg.m}_T{cfg.T}"


def build_problem(spec: ExperimentSpec) -> prob.RegressionProblem:
    pp = spec.problem
    return prob.generate_synthetic(pp["n"], pp["d"], pp["M"], pp["scale_base"], rng=stream(pp["seed"], "data"), seed=pp["seed"])


def build_graph(spec: ExperimentSpec, idx: int) -> tuple[graphs.Graph, int]:
    gd = spec.graphs[idx]
    g, rejected = graphs.generate_connected(gd["kind"], spec.problem["n"], gd["param"], stream(spec.graph_seed, "graph", idx))
    if spec.path_augment:
        g = g.union(graphs.Graph.path(g.n))
    return g, rejected


def _run_cell(args):
    p, consts, model, cfg = args
    try:
        return alg.run(p, model, cfg, consts), None
    except (alg.DivergenceError, FloatingPointError) as exc:
        return None, str(exc)


@dataclass
class ConvergenceBundle:
    spec_hash: str
    final_gaps: dict = field(default_factory=dict)  # (graph_label, cfg_label) -> list of per-seed gaps
    mean_curves: dict = field(default_factory=dict)  # (graph_label, cfg_label) -> (t, mean gap)
    envelopes: dict = field(default_factory=dict)
    spectra: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    graph_rejections: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def mean_final_gap(self, graph_label: str, cfg_label: str) -> float:
        return float(np.mean(self.final_gaps[(graph_label, cfg_label)]))


def cmd_convergence(spec: ExperimentSpec, output_dir=None, keep_traces: bool = False) -> ConvergenceBundle:
    p = build_problem(spec)
    consts = prob.constants(p, m=spec.defaults.get("m", 1))
    cfgs = spec.run_configs()
    spec_hash = spec.config_hash()
    bundle = ConvergenceBundle(spec_hash)

    cells, models = [], []
    for gi, gd in enumerate(spec.graphs):
        g, rejected = build_graph(spec, gi)
        bundle.graph_rejections[_graph_label(gd)] = rejected
        model = mx.MixingModel(g, spec.mixing["activation_prob"], spec.mixing["weight_rule"])
        models.append(model)
        bundle.spectra[_graph_label(gd)] = mx.lambda2_hat(model, spec.mixing["lambda_samples"], seed=spec.graph_seed)
        for cfg in cfgs:
            for s in spec.seeds:
                cells.append((gi, cfg, s))

    tasks = [(p, consts, models[gi], replace(cfg, seed=s)) for gi, cfg, s in cells]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    out = _output_dir(output_dir or spec.output_dir) if (output_dir or spec.output_dir) else None
    grouped: dict = {}
    for (gi, cfg, s), (trace, err) in zip(cells, results):
        key = (_graph_label(spec.graphs[gi]), _cfg_label(cfg))
        if trace is None:
            bundle.failures.append({"graph": key[0], "config": key[1], "seed": s, "error": err})
            log.warning("run failed: %s %s seed=%s: %s", key[0], key[1], s, err)
            continue
        grouped.setdefault(key, []).append((s, trace))
        if out is not None:
            stem = out / "traces" / f"{key[0]}__{key[1]}__seed{s}"
            stem.parent.mkdir(parents=True, exist_ok=True)
            trace.write_csv(stem.parent / (stem.name + ".csv"), _comment(spec_hash, s))
            trace.write_server_csv(stem.parent / (stem.name + "__server.csv"), _comment(spec_hash, s))

    summary_rows = []
    for gi, gd in enumerate(spec.graphs):
        gl = _graph_label(gd)
        spectral = bundle.spectra[gl]
        for cfg in cfgs:
            key = (gl, _cfg_label(cfg))
            runs = grouped.get(key, [])
            if not runs:
                continue
            traces = [tr for _, tr in runs]
            bundle.final_gaps[key] = [tr.final_gap for tr in traces]
            t = traces[0].t
            mean_gap = np.mean([tr.gap for tr in traces], axis=0)
            mean_dist = np.mean([tr.dist_sq for tr in traces], axis=0)
            bundle.mean_curves[key] = (t, mean_gap)
            envelope = None
            if cfg.algo == "feddec":
                tc = th.TheoryConstants.from_measurements(consts, spectral, cfg.K, cfg.H, p.n, th.measured_g_sq(traces), gamma=traces[0].gamma)
                envelope = th.theorem_bound(tc, t)
                bundle.envelopes[key] = (tc, envelope)
            if keep_traces:
                bundle.traces[key] = traces
            if out is not None:
                rows = [
                    [int(ti), float(gm), float(dm), float(envelope[k]) if envelope is not None else None]
                    for k, (ti, gm, dm) in enumerate(zip(t, mean_gap, mean_dist))
                ]
                _write_csv(out / "mean" / f"{key[0]}__{key[1]}.csv", ["t", "gap_mean", "dist_sq_mean", "envelope"], rows,
                           _comment(spec_hash, " ".join(str(s) for s, _ in runs)))
            summary_rows.append(
                [gl, cfg.algo, cfg.H, cfg.K, cfg.m, cfg.T, len(runs), float(np.mean(bundle.final_gaps[key])),
                 float(np.std(bundle.final_gaps[key])), spectral.lambda2_hat if cfg.algo == "feddec" else None,
                 float(envelope[-1]) if envelope is not None else None]
            )

    if out is not None:
        seeds_txt = " ".join(map(str, spec.seeds))
        _write_csv(out / "summary.csv",
                   ["graph", "algo", "H", "K", "m", "T", "runs", "final_gap_mean", "final_gap_std", "lambda2_hat", "envelope_final"],
                   summary_rows, _comment(spec_hash, seeds_txt))
        _write_csv(out / "paired.csv", ["graph", "config_a", "config_b", "seed", "gap_a", "gap_b", "difference"],
                   _paired_rows(grouped, cfgs, spec), _comment(spec_hash, seeds_txt))
        _write_csv(out / "failures.csv", ["graph", "config", "seed", "error"],
                   [[f["graph"], f["config"], f["seed"], f["error"]] for f in bundle.failures], _comment(spec_hash, seeds_txt))
        (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return bundle


def _paired_rows(grouped, cfgs, spec) -> list[list]:
    """Per-seed final-gap differences between configs that differ only in the algorithm."""
    rows = []
    for gd in spec.graphs:
        gl = _graph_label(gd)
        for a in cfgs:
            for b in cfgs:
                if a.algo != "feddec" or b.algo != "fedavg":
                    continue
                if (a.H, a.K, a.m, a.T) != (b.H, b.K, b.m, b.T):
                    continue
                ra = dict(grouped.get((gl, _cfg_label(a)), []))
                rb = dict(grouped.get((gl, _cfg_label(b)), []))
                for s in spec.seeds:
                    if s in ra and s in rb:
                        ga, gb = ra[s].final_gap, rb[s].final_gap
                        rows.append([gl, _cfg_label(a), _cfg_label(b), s, ga, gb, ga - gb])
    return rows


# ---------------------------------------------------------------- spectra


def alpha_curve(upper: float = 0.99, resolution: int = 100) -> list[tuple[float, float]]:
    """alpha on the grid 0, 1/resolution, ..., upper (grid points computed as i / resolution)."""
    return [(i / resolution, mx.alpha_of(i / resolution)) for i in range(round(upper * resolution) + 1)]


def cmd_spectra(
    kind: str = "geographic",
    n: int = 20,
    param: float = 0.5,
    graph_seed: int = 0,
    activation_prob: float = 1.0,
    weight_rule: str = mx.DEFAULT_RULE,
    samples: int = 10_000,
    seed: int = 0,
    graph: graphs.Graph | None = None,
    output_dir=None,
) -> mx.SpectralReport:
    if graph is None:
        graph, _ = graphs.generate_connected(kind, n, param, stream(graph_seed, "graph", 0))
    report = mx.lambda2_hat(mx.MixingModel(graph, activation_prob, weight_rule), samples, seed=seed)
    if output_dir is not None:
        out = _output_dir(output_dir)
        h = hashlib.sha256(json.dumps([kind, n, param, graph_seed, activation_prob, weight_rule, samples]).encode()).hexdigest()[:16]
        lines = [f"# {_comment(h, seed)}"] + [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in report.as_dict().items()]
        (out / "spectra.txt").write_text("\n".join(lines) + "\n")
        _write_csv(out / "alpha_curve.csv", ["lambda2_hat", "alpha"], [list(r) for r in alpha_curve()], _comment(h, seed))
    return report


# ---------------------------------------------------------------- verify


@dataclass
class Check:
    name: str
    passed: bool | None
    detail: str = ""
    hard: bool = True


def cmd_verify(spec: ExperimentSpec | None = None, mixing_csv=None, output_dir=None) -> list[Check]:
    """Run the invariant suite; every ``hard`` check must pass."""
    spec = spec or ExperimentSpec.from_dict(VERIFY_SPEC)
    checks: list[Check] = []
    p = build_problem(spec)
    consts = prob.constants(p)
    g, _ = build_graph(spec, 0)
    cfg = spec.run_configs()[0]

    # mixing matrices
    if mixing_csv is not None:
        w = mx.read_matrix_csv(mixing_csv)
        bad = mx.validate(w, g if w.shape == (g.n, g.n) else None)
        checks.append(Check("mixing_file", not bad, "; ".join(map(str, bad)) or str(mixing_csv)))
    worst = []
    for act in sorted({spec.mixing["activation_prob"], 0.7}):
        model = mx.MixingModel(g, act, spec.mixing["weight_rule"])
        rng = stream(spec.graph_seed, "links", 99)
        for _ in range(200):
            worst += mx.validate(mx.sample_mixing(model, rng), g)
    checks.append(Check("mixing_samples", not worst, "; ".join(map(str, worst[:3])) or "400 draws valid"))

    # gradients
    rng = stream(0, "calibration")
    z = rng.normal(size=p.d)
    fd_err = 0.0
    for i in range(p.n):
        num = np.array([(prob.local_cost(p, i, z + 1e-6 * e) - prob.local_cost(p, i, z - 1e-6 * e)) / 2e-6 for e in np.eye(p.d)])
        ana = prob.full_gradient(p, i, z)
        fd_err = max(fd_err, float(np.linalg.norm(num - ana) / max(1.0, np.linalg.norm(ana))))
    checks.append(Check("gradient_finite_difference", fd_err <= 1e-5, f"max relative error {fd_err:.2e}"))
    ub = max(float(np.max(np.abs(prob.row_gradients(p, i, z).mean(axis=0) - prob.full_gradient(p, i, z)))) for i in range(p.n))
    checks.append(Check("stochastic_gradient_unbiased", ub <= 1e-10 * (1 + np.abs(prob.global_gradient(p, z)).max()), f"max deviation {ub:.2e}"))
    opt = float(np.linalg.norm(prob.global_gradient(p, consts.z_star)) / (1 + np.linalg.norm(prob.global_gradient(p, np.zeros(p.d)))))
    checks.append(Check("optimum_first_order", opt <= 1e-8, f"relative gradient norm {opt:.2e}"))

    # algorithms
    small = replace(cfg, T=min(cfg.T, 200))
    a = alg.run(p, np.eye(p.n), replace(small, algo="feddec"), consts)
    b = alg.run(p, None, replace(small, algo="fedavg"), consts)
    same = np.array_equal(a.gap, b.gap) and np.array_equal(a.final_z, b.final_z)
    checks.append(Check("fedavg_identity_equivalence", same, "bit-identical" if same else "traces differ"))

    # monitors
    model = mx.MixingModel(g, spec.mixing["activation_prob"], spec.mixing["weight_rule"])
    spectral = mx.lambda2_hat(model, spec.mixing["lambda_samples"], seed=spec.graph_seed)
    mon_cfg = replace(cfg, algo="feddec", record_consensus=True, record_snapshots=True)
    traces = [alg.run(p, model, replace(mon_cfg, seed=s), consts) for s in spec.seeds]
    tc = th.TheoryConstants.from_measurements(consts, spectral, cfg.K, cfg.H, p.n, th.measured_g_sq(traces), gamma=traces[0].gamma)
    reports = [th.lemma2_monitor(traces, tc), th.lemma3_monitor(traces, tc), th.envelope_check(traces, tc)]
    for rep in reports:
        checks.append(Check(rep.name, rep.passed, f"max ratio {rep.max_ratio:.3g}", hard=rep.passed is not None))
    l4 = th.lemma4_sequence_check(tc.mu, tc.gamma, tc.B, tc.initial_distance_sq, 10_000)
    checks.append(Check("lemma4_recursion", l4.passed, f"max ratio {l4.max_ratio:.6f}"))

    if output_dir is not None:
        out = _output_dir(output_dir)
        rows = [[c.name, c.passed, c.hard, c.detail] for c in checks]
        _write_csv(out / "verify.csv", ["check", "passed", "hard", "detail"], rows, _comment(spec.config_hash(), " ".join(map(str, spec.seeds))))
        for rep in reports:
            rep.write(out / rep.name, _comment(spec.config_hash(), " ".join(map(str, spec.seeds))))
    return checks


def verify_ok(checks: list[Check]) -> bool:
    return all(c.passed for c in checks if c.hard)


# ---------------------------------------------------------------- CLI


def _parse_graph(text: str) -> dict:
    kind, _, param = text.partition(":")
    if not param:
        raise argparse.ArgumentTypeError(f"graph must look like KIND:PARAM, got {text!r}")
    return {"kind": kind, "param": float(param)}


def _seeds(args) -> list[int] | None:
    if args.seeds_file:
        return [int(tok) for tok in Path(args.seeds_file).read_text().split()]
    if args.seed is not None:
        return list(args.seed)
    return None


def _spec_from_args(args, base: dict | None = None) -> ExperimentSpec:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    data = _merge(base or {}, data)
    prob_over = {k: getattr(args, k) for k in ("n", "d", "M") if getattr(args, k) is not None}
    if args.scale_base is not None:
        prob_over["scale_base"] = args.scale_base
    if prob_over:
        data = _merge(data, {"problem": prob_over})
    run_over = {k: getattr(args, k) for k in ("T", "K", "m") if getattr(args, k) is not None}
    if run_over:
        data = _merge(data, {"defaults": run_over})
    if args.H:
        algos = args.algo or ["feddec", "fedavg"]
        data["runs"] = [{"algo": a, "H": h} for h in args.H for a in algos]
    elif args.algo:
        data["runs"] = [{"algo": a, "H": DEFAULT_SPEC["runs"][0]["H"]} for a in args.algo]
    if args.graph:
        data["graphs"] = args.graph
    mix_over = {}
    if args.activation_prob is not None:
        mix_over["activation_prob"] = args.activation_prob
    if args.weight_rule is not None:
        mix_over["weight_rule"] = args.weight_rule
    if mix_over:
        data = _merge(data, {"mixing": mix_over})
    seeds = _seeds(args)
    if seeds is not None:
        data["seeds"] = seeds
    if args.workers is not None:
        data["workers"] = args.workers
    return ExperimentSpec.from_dict(data)


def _add_spec_flags(sp) -> None:
    sp.add_argument("--config", help="JSON experiment config; missing fields take the defaults")
    sp.add_argument("--n", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--scale-base", type=float)
    sp.add_argument("--T", type=int)
    sp.add_argument("--K", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--H", type=int, nargs="+")
    sp.add_argument("--algo", nargs="+", choices=alg.ALGORITHMS)
    sp.add_argument("--graph", type=_parse_graph, action="append", help="KIND:PARAM, e.g. geographic:0.35 (repeatable)")
    sp.add_argument("--activation-prob", type=float)
    sp.add_argument("--weight-rule", choices=mx.WEIGHT_RULES)
    sp.add_argument("--seed", type=int, nargs="+")
    sp.add_argument("--seeds-file")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feddec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t1 = sub.add_parser("table1", help="mean |lambda_2|^2 over random and geographic graphs")
    t1.add_argument("--realizations", type=int, default=10)
    t1.add_argument("--seed", type=int, default=0)
    t1.add_argument("--weight-rule", choices=mx.WEIGHT_RULES, default=mx.DEFAULT_RULE)
    t1.add_argument("--out")

    cv = sub.add_parser("converge", help="FedDec vs FedAvg convergence runs")
    _add_spec_flags(cv)

    spc = sub.add_parser("spectra", help="lambda2_hat and alpha for one mixing model")
    spc.add_argument("--kind", choices=sorted(_KIND_CODE), default="geographic")
    spc.add_argument("--n", type=int, default=20)
    spc.add_argument("--param", type=float, default=0.5)
    spc.add_argument("--graph-seed", type=int, default=0)
    spc.add_argument("--activation-prob", type=float, default=1.0)
    spc.add_argument("--weight-rule", choices=mx.WEIGHT_RULES, default=mx.DEFAULT_RULE)
    spc.add_argument("--samples", type=int, default=10_000)
    spc.add_argument("--seed", type=int, default=0)
    spc.add_argument("--out")

    vf = sub.add_parser("verify", help="run the invariant and monitor suite")
    _add_spec_flags(vf)
    vf.add_argument("--mixing-csv", help="also validate this mixing matrix against the configured graph")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "table1":
        rows = cmd_table1(realizations=args.realizations, seed=args.seed, weight_rule=args.weight_rule, output_dir=_output_dir(args.out))
        for r in rows:
            ref = "" if r["reference"] is None else f"  (reference {r['reference']})"
            print(f"{r['kind']:>10} {r['param']:<5} n={r['n']:<3} mean={r['mean']:.3f} std={r['std']:.3f}{ref}")
        return 0

    if args.command == "converge":
        spec = _spec_from_args(args)
        out = _output_dir(args.out or spec.output_dir)
        bundle = cmd_convergence(spec, output_dir=out)
        for (gl, cl), gaps in bundle.final_gaps.items():
            print(f"{gl:<18} {cl:<32} final gap {np.mean(gaps):.4g}")
        print(f"wrote {out}")
        return 1 if bundle.failures else 0

    if args.command == "spectra":
        rep = cmd_spectra(args.kind, args.n, args.param, args.graph_seed, args.activation_prob, args.weight_rule,
                          args.samples, args.seed, output_dir=_output_dir(args.out))
        err = "" if rep.stderr is None else f" +- {rep.stderr:.2g}"
        print(f"lambda2_hat={rep.lambda2_hat:.6f}{err} alpha={rep.alpha:.6f} ({rep.method})")
        return 0

    if args.command == "verify":
        spec = _spec_from_args(args, VERIFY_SPEC)
        checks = cmd_verify(spec, mixing_csv=args.mixing_csv, output_dir=_output_dir(args.out))
        for c in checks:
            status = {True: "PASS", False: "FAIL", None: "SKIP"}[c.passed]
            print(f"{status} {c.name}: {c.detail}")
        return 0 if verify_ok(checks) else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
