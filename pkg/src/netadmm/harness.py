"""Experiment runner: configs, synthetic data, traces and sweeps.

A run directory holds ``config.json``, ``reference.json``, ``plot_data.csv``,
``summary.json`` and one sub-directory per solver with ``trace.csv``,
``certificate.json`` and (optionally) ``x_iterates.npy``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import ortho_group

from . import dadmm, dladmm
from .analysis import certify_run, rate_certificate
from .graph import Network, build_from_spec
from .problem import (
    ProblemInstance,
    logistic_node_cost,
    network_constants,
    quadratic_form_link_cost,
    quadratic_link_cost,
    quadratic_node_cost,
)
from .reference import (
    OptimalPoint,
    kkt_residuals,
    lambda_dist,
    load_optimal_point,
    save_optimal_point,
    solve_reference,
)

__all__ = [
    "TRACE_COLUMNS",
    "TopologySpec",
    "ProblemSpec",
    "InnerSpec",
    "SolverSpec",
    "ReferenceSpec",
    "ExperimentConfig",
    "RunTrace",
    "ExperimentResult",
    "ConfigError",
    "generate_logistic_data",
    "generate_quadratic_problem",
    "build_network",
    "build_problem",
    "run_solver",
    "run_experiment",
    "emit_plot_data",
    "spot_check",
    "set_param",
    "run_sweep",
    "worker_count",
]

TRACE_COLUMNS = ("k", "rel_error", "lambda_dist", "kkt_r1", "kkt_r2", "kkt_r3", "wall_ms")
MILESTONES = (1e-2, 1e-4, 1e-6, 1e-8)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


# configuration ------------------------------------------------------------


def _take(d: dict, cls, where: str) -> dict:
    allowed = set(cls.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    return d


@dataclass(frozen=True)
class TopologySpec:
    kind: str
    n: int
    extra_links: Optional[int] = None
    avg_degree: Optional[float] = None
    seed: Optional[int] = None

    @classmethod
    def from_dict(cls, d):
        return cls(**_take(dict(d), cls, "topology"))


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "logistic"
    p: int = 2
    q: Optional[int] = None
    beta_reg: float = 1.0
    data_seed: int = 0

    @classmethod
    def from_dict(cls, d):
        spec = cls(**_take(dict(d), cls, "problem"))
        if spec.kind not in ("logistic", "quadratic"):
            raise ConfigError(f"unknown problem kind {spec.kind!r}")
        if spec.kind == "logistic" and not spec.q:
            raise ConfigError("logistic problem needs q >= 1")
        return spec


@dataclass(frozen=True)
class InnerSpec:
    grad_tol: float = 1e-10
    max_inner_iters: int = 10_000
    method: str = "gd"

    @classmethod
    def from_dict(cls, d):
        return cls(**_take(dict(d), cls, "inner"))


@dataclass(frozen=True)
class SolverSpec:
    """One solver run.

    ``target_rel_error`` ends the run with status ``converged`` once the
    relative error reaches it; ``None`` always spends the whole budget.
    """

    algorithm: str
    rho: float
    c: Optional[float] = None
    max_iters: Optional[int] = None
    divergence_guard: float = 1e6
    inner: InnerSpec = field(default_factory=InnerSpec)
    target_rel_error: Optional[float] = 1e-10
    label: Optional[str] = None

    @classmethod
    def from_dict(cls, d):
        d = dict(_take(dict(d), cls, "solver"))
        if "inner" in d:
            d["inner"] = InnerSpec.from_dict(d["inner"])
        spec = cls(**d)
        if spec.algorithm not in ("dladmm", "dadmm"):
            raise ConfigError(f"unknown algorithm {spec.algorithm!r}")
        if spec.algorithm == "dladmm" and spec.c is None:
            raise ConfigError("dladmm solver needs c")
        return spec

    @property
    def budget(self) -> int:
        if self.max_iters is not None:
            return int(self.max_iters)
        return 2000 if self.algorithm == "dladmm" else 400

    def solver_config(self):
        try:
            if self.algorithm == "dladmm":
                return dladmm.SolverConfig(
                    rho=self.rho, c=self.c, max_iters=self.budget, divergence_guard=self.divergence_guard
                )
            inner = dadmm.InnerSolverConfig(**asdict(self.inner))
            return dadmm.DadmmConfig(
                rho=self.rho, max_iters=self.budget, divergence_guard=self.divergence_guard, inner=inner
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ReferenceSpec:
    tol: float = 1e-10
    max_iters: int = 1_000_000

    @classmethod
    def from_dict(cls, d):
        return cls(**_take(dict(d), cls, "reference"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run; all randomness is seeded here.

    ``record_timing=False`` writes zeros in the ``wall_ms`` column so that
    trace files are byte-reproducible.
    """

    topology: TopologySpec
    problem: ProblemSpec
    solvers: tuple[SolverSpec, ...]
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    out: Optional[str] = None
    seed: int = 0
    name: str = "experiment"
    record_timing: bool = True
    save_iterates: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(_take(dict(d), cls, "config"))
        for key in ("topology", "problem", "solvers"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        try:
            d["topology"] = TopologySpec.from_dict(d["topology"])
            d["problem"] = ProblemSpec.from_dict(d["problem"])
            d["solvers"] = tuple(SolverSpec.from_dict(s) for s in d["solvers"])
            d["reference"] = ReferenceSpec.from_dict(d.get("reference", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if not d["solvers"]:
            raise ConfigError("config lists no solvers")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solvers"] = list(d["solvers"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def labels(self) -> list[str]:
        out, seen = [], {}
        for s in self.solvers:
            base = s.label or s.algorithm
            seen[base] = seen.get(base, 0) + 1
            out.append(base if seen[base] == 1 else f"{base}_{seen[base]}")
        return out


def set_param(cfg_dict: dict, path: str, value) -> dict:
    """Return a copy of a config dict with ``path`` set to ``value``.

    ``path`` is dotted (``problem.beta_reg``, ``solvers.0.rho``); a bare
    solver field such as ``c`` or ``rho`` is applied to every solver that has it.
    """
    d = copy.deepcopy(cfg_dict)
    parts = path.split(".")
    if len(parts) == 1 and parts[0] in SolverSpec.__dataclass_fields__:
        for s in d["solvers"]:
            if path != "c" or s.get("algorithm") == "dladmm":
                s[path] = value
        return d
    node = d
    for key in parts[:-1]:
        node = node[int(key)] if isinstance(node, list) else node.setdefault(key, {})
    if isinstance(node, list):
        node[int(parts[-1])] = value
    else:
        node[parts[-1]] = value
    return d


# problem construction -----------------------------------------------------


def generate_logistic_data(net: Network, p: int, q: int, data_seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-node synthetic classification samples.

    Features are i.i.d. standard normal. Node ``i`` labels its samples with a
    classifier ``x_i = base + 0.1 * e_i`` shared up to a small perturbation,
    drawing ``t = +1`` with probability ``sigmoid(u^T x_i)``.
    """
    if p < 1 or q < 1:
        raise ValueError("p and q must be positive")
    rng = np.random.default_rng(data_seed)
    base = rng.standard_normal(p)
    data = []
    for _ in range(net.n):
        x_true = base + 0.1 * rng.standard_normal(p)
        u = rng.standard_normal((q, p))
        t = np.where(rng.random(q) < expit(u @ x_true), 1.0, -1.0)
        data.append((u, t))
    return data


def _spd(rng, dim, lo=1.0, hi=2.0):
    eig = np.linspace(lo, hi, dim) if dim > 1 else np.array([hi])
    R = ortho_group.rvs(dim, random_state=rng) if dim > 1 else np.ones((1, 1))
    return (R * eig) @ R.T


def generate_quadratic_problem(net: Network, p: int, data_seed: int) -> ProblemInstance:
    """Strongly convex quadratic instance with every curvature in ``[1, 2]``.

    Node costs use ``Q_i`` and link costs use ``2p x 2p`` Hessians ``H_ij``,
    each a random rotation of evenly spaced eigenvalues from 1 to 2, plus
    standard normal linear terms.
    """
    rng = np.random.default_rng(data_seed)
    nodes = [quadratic_node_cost(_spd(rng, p), rng.standard_normal(p)) for _ in range(net.n)]
    links = [quadratic_form_link_cost(_spd(rng, 2 * p), rng.standard_normal(2 * p)) for _ in range(net.m)]
    return ProblemInstance(net, p, tuple(nodes), tuple(links))


def build_network(spec: TopologySpec) -> Network:
    d = {k: v for k, v in asdict(spec).items() if v is not None}
    try:
        return build_from_spec(d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad topology {d}: {exc}") from exc


def build_problem(spec: ProblemSpec, net: Network) -> ProblemInstance:
    if spec.kind == "quadratic":
        return generate_quadratic_problem(net, spec.p, spec.data_seed)
    data = generate_logistic_data(net, spec.p, spec.q, spec.data_seed)
    nodes = [logistic_node_cost(u, t) for u, t in data]
    try:
        link = quadratic_link_cost(spec.beta_reg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ProblemInstance.uniform_links(net, spec.p, nodes, link)


# traces -------------------------------------------------------------------


@dataclass
class RunTrace:
    """Per-iteration diagnostics of one solver run (row ``k`` is ``u^k``).

    ``wall_ms`` of row ``k`` is the wall time of the round producing ``u^k``.
    """

    label: str
    algorithm: str
    status: str
    k: np.ndarray
    rel_error: np.ndarray
    lambda_dist: np.ndarray
    kkt: np.ndarray  # shape (rows, 3)
    wall_ms: np.ndarray
    x_iterates: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        return int(self.k[-1])

    def first_below(self, threshold: float) -> Optional[int]:
        idx = np.flatnonzero(self.rel_error <= threshold)
        return int(self.k[idx[0]]) if idx.size else None

    def mean_wall_ms(self) -> float:
        return float(np.mean(self.wall_ms[1:])) if self.k.size > 1 else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in range(self.k.size):
            vals = (self.rel_error[r], self.lambda_dist[r], *self.kkt[r], self.wall_ms[r])
            w.writerow([int(self.k[r])] + [repr(float(v)) for v in vals])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, label="", algorithm="", status="") -> "RunTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected header {rows[0]}")
        a = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(TRACE_COLUMNS))
        return cls(label, algorithm, status, a[:, 0].astype(int), a[:, 1], a[:, 2], a[:, 3:6], a[:, 6])

    def summary(self) -> dict:
        return {
            "label": self.label,
            "algorithm": self.algorithm,
            "status": self.status,
            "iterations": self.iterations,
            "final_rel_error": float(self.rel_error[-1]),
            "final_kkt": [float(v) for v in self.kkt[-1]],
            "mean_wall_ms": self.mean_wall_ms(),
            "first_below": {f"{t:g}": self.first_below(t) for t in MILESTONES},
        }


def _relative_error(x, x_star, scale):
    return float(np.linalg.norm(x - x_star) / scale)


def run_solver(
    inst: ProblemInstance,
    opt: OptimalPoint,
    spec: SolverSpec,
    label: Optional[str] = None,
    record_timing: bool = True,
    keep_iterates: bool = True,
) -> RunTrace:
    """Run one solver from the zero state and record its trace against ``opt``.

    The relative error is ``||x^k - x*|| / ||x*||`` (plain ``||x^k||`` if
    ``x* = 0``). The Lambda-distance needs ``c`` and is ``nan`` for DADMM.
    """
    cfg = spec.solver_config()
    cm = inst.constraint_matrices()
    scale = float(np.linalg.norm(opt.x_star)) or 1.0
    rows, xs, times = [], [], []

    def record(state):
        rel = _relative_error(state.x, opt.x_star, scale)
        ld = lambda_dist(state, opt, spec.c, spec.rho) if spec.algorithm == "dladmm" else math.nan
        rows.append((state.k, rel, ld, *kkt_residuals(inst, cm, state)))
        if keep_iterates:
            xs.append(state.x.copy())
        if not math.isfinite(rel) or rel > spec.divergence_guard * max(1.0, rows[0][1]):
            return "diverged"
        if spec.target_rel_error is not None and rel <= spec.target_rel_error:
            return "converged"
        return None

    if spec.algorithm == "dladmm":
        raw_step = lambda s: dladmm.iterate(s, inst, cfg)
    else:
        raw_step = lambda s: dadmm.iterate(s, inst, cfg)

    def step(s):
        t0 = time.perf_counter()
        out = raw_step(s)
        times.append((time.perf_counter() - t0) * 1e3)
        return out

    result = dladmm.run_rounds(step, dladmm.init_state(inst), cfg.max_iters, cfg.divergence_guard, record)
    a = np.array(rows, dtype=float)
    wall = np.zeros(a.shape[0])
    if record_timing:
        wall[1:] = times[: a.shape[0] - 1]
    return RunTrace(
        label=label or spec.label or spec.algorithm,
        algorithm=spec.algorithm,
        status=result.status,
        k=a[:, 0].astype(int),
        rel_error=a[:, 1],
        lambda_dist=a[:, 2],
        kkt=a[:, 3:6],
        wall_ms=wall,
        x_iterates=np.array(xs) if keep_iterates else None,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    instance: ProblemInstance
    optimum: OptimalPoint
    traces: list[RunTrace]
    certificates: list[dict]
    out_dir: Optional[Path] = None

    @property
    def statuses(self) -> dict[str, str]:
        return {t.label: t.status for t in self.traces}

    def trace(self, label: str) -> RunTrace:
        for t in self.traces:
            if t.label == label:
                return t
        raise KeyError(label)


def _certificate(inst, spec: SolverSpec, trace: RunTrace) -> dict:
    if spec.algorithm != "dladmm":
        return {"label": trace.label, "algorithm": spec.algorithm, "certificate": None, "report": None}
    consts = network_constants(inst)
    cert = rate_certificate(consts, spec.c, spec.rho)
    report = certify_run(trace.lambda_dist, cert)
    return {
        "label": trace.label,
        "algorithm": spec.algorithm,
        "constants": asdict(consts),
        "certificate": cert.to_dict(),
        "report": report.to_dict(),
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Build the instance, solve the reference problem and run every solver.

    When an output directory is given (argument or ``cfg.out``), traces,
    certificates, plot data and the reference point are written there.
    """
    net = build_network(cfg.topology)
    inst = build_problem(cfg.problem, net)
    opt = solve_reference(inst, tol=cfg.reference.tol, max_iters=cfg.reference.max_iters)
    traces, certs = [], []
    for spec, label in zip(cfg.solvers, cfg.labels()):
        tr = run_solver(inst, opt, spec, label, cfg.record_timing, cfg.save_iterates)
        traces.append(tr)
        certs.append(_certificate(inst, spec, tr))
    out = out_dir if out_dir is not None else cfg.out
    result = ExperimentResult(cfg, inst, opt, traces, certs, Path(out) if out is not None else None)
    if out is not None:
        _write_outputs(result, Path(out))
    return result


def _write_outputs(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(result.config.dumps() + "\n")
    save_optimal_point(result.optimum, out / "reference.json")
    for tr, cert in zip(result.traces, result.certificates):
        d = out / tr.label
        d.mkdir(exist_ok=True)
        tr.write_csv(d / "trace.csv")
        (d / "certificate.json").write_text(json.dumps(cert, indent=2) + "\n")
        if tr.x_iterates is not None:
            np.save(d / "x_iterates.npy", tr.x_iterates)
    emit_plot_data(result.traces, [t.label for t in result.traces], out / "plot_data.csv")
    summary = {"name": result.config.name, "runs": [t.summary() for t in result.traces]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def emit_plot_data(traces: Sequence[RunTrace], labels: Sequence[str], path=None) -> str:
    """Long-format ``label,iteration,rel_error,status`` rows for plotting."""
    if not traces:
        raise ValueError("no traces to emit")
    if len(labels) != len(traces):
        raise ValueError("one label per trace required")
    buf = io.StringIO()
    buf.write("# rel_error spans many decades; plot it on a log scale\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "iteration", "rel_error", "status"))
    for tr, label in zip(traces, labels):
        for k, e in zip(tr.k, tr.rel_error):
            w.writerow((label, int(k), repr(float(e)), tr.status))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def spot_check(run_dir, label: str, n_rows: int = 10, seed: int = 0) -> float:
    """Re-derive ``n_rows`` random relative errors from saved x-iterates.

    Returns the largest absolute discrepancy against ``trace.csv``.
    """
    run_dir = Path(run_dir)
    trace = RunTrace.read_csv(run_dir / label / "trace.csv")
    xs = np.load(run_dir / label / "x_iterates.npy")
    opt = load_optimal_point(run_dir / "reference.json")
    scale = float(np.linalg.norm(opt.x_star)) or 1.0
    rng = np.random.default_rng(seed)
    rows = rng.choice(trace.k.size, size=min(n_rows, trace.k.size), replace=False)
    return max(abs(_relative_error(xs[r], opt.x_star, scale) - trace.rel_error[r]) for r in rows)


# sweeps -------------------------------------------------------------------


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("NETADMM_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_jobs, limit))


def _sweep_job(args):
    cfg_dict, out = args
    res = run_experiment(ExperimentConfig.from_dict(cfg_dict), out)
    return [t.summary() for t in res.traces]


def run_sweep(cfg_dict: dict, param: str, values: Sequence, out_dir=None, workers: Optional[int] = None) -> list[dict]:
    """Run one experiment per value of ``param`` and collect run summaries.

    Runs go to ``<out_dir>/<param>=<value>/``; results do not depend on the
    number of worker processes.
    """
    jobs = []
    for v in values:
        d = set_param(cfg_dict, param, v)
        ExperimentConfig.from_dict(d)  # fail fast on bad values
        out = str(Path(out_dir) / f"{param}={v}") if out_dir is not None else None
        jobs.append((d, out))
    workers = worker_count(len(jobs)) if workers is None else workers
    if workers == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    rows = []
    for v, runs in zip(values, results):
        for r in runs:
            rows.append({"param": param, "value": v, **r})
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep_summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
