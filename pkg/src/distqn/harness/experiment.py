"""Experiment configuration, presets and the run orchestration.

An experiment is a JSON document::

    {
      "format": "distqn.experiment/1",
      "name": "fig1",
      "graph":   {"n": 30, "seed": 1},
      "problem": {"kind": "quadratic", "p": 4, "seed": 1},
      "budget":  {"max_iter": 10000, "stop_rel_err": 1e-8, "divergence_factor": 1e6},
      "solvers": [{"name": "DQN-2", "variant": "DQN2"}, ...]
    }

Running it writes one CSV trace per solver and ``manifest.json``. The
manifest embeds the config, so feeding it back to :func:`run_experiment`
replays the run.
"""

from __future__ import annotations

import copy
import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from distqn import dqn, pmm
from distqn.errors import ConfigError, DivergenceError, SolverError
from distqn.graph import (
    generate_connected_geometric,
    metropolis_weights,
    network_from_dict,
    network_to_dict,
)
from distqn.harness.oracles import exact_solution, penalty_solution, relative_error
from distqn.penalty import PenaltyModel, tilde_constants
from distqn.problems import (
    convexity_constants,
    generate_logistic,
    generate_quadratic,
    problem_from_dict,
)

FORMAT = "distqn.experiment/1"
MANIFEST_FORMAT = "distqn.manifest/1"
DEFAULT_TAU = 0.5
DEFAULT_K = 100.0

_DQN_KEYS = {"name", "variant", "alpha", "K", "theta", "epsilon", "rho", "delta", "mode",
             "allow_divergence"}
_PMM_KEYS = {"name", "variant", "beta", "beta_grid", "eps_pmm", "theta", "rho",
             "dual_beta_scaling", "allow_divergence"}


# -- JSON number helpers ---------------------------------------------------


def encode_number(x):
    """JSON-safe float: infinities and NaN become strings."""
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def decode_number(x):
    """Inverse of :func:`encode_number`."""
    return None if x is None else float(x)


def parse_grid(text: str) -> np.ndarray:
    """Parse ``log:lo:hi:step`` (powers of ten), ``lin:lo:hi:step`` or ``a,b,c``."""
    text = str(text).strip()
    if ":" in text:
        kind, *rest = text.split(":")
        if kind not in ("log", "lin") or len(rest) != 3:
            raise ConfigError(f"bad grid {text!r}; expected log:lo:hi:step or lin:lo:hi:step")
        lo, hi, step = (float(v) for v in rest)
        if not step > 0 or hi < lo:
            raise ConfigError(f"bad grid {text!r}: need step > 0 and hi >= lo")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        pts = lo + step * np.arange(count)
        return 10.0 ** pts if kind == "log" else pts
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}") from exc


# -- configuration ---------------------------------------------------------


@dataclass
class GraphSpec:
    n: int = 30
    seed: int = 0
    network: Optional[dict] = None

    @classmethod
    def from_dict(cls, doc) -> "GraphSpec":
        network = doc.get("network")
        n = int(doc.get("n", network["n"] if network else 30))
        return cls(n, int(doc.get("seed", 0)), network)

    def to_dict(self) -> dict:
        doc = {"n": self.n, "seed": self.seed}
        if self.network is not None:
            doc["network"] = self.network
        return doc


@dataclass
class ProblemSpec:
    kind: str = "quadratic"
    p: int = 4
    seed: int = 0
    J: int = 2
    tau: float = DEFAULT_TAU
    noise_sd: float = 0.1
    data: Optional[dict] = None

    @classmethod
    def from_dict(cls, doc) -> "ProblemSpec":
        kind = doc.get("kind", "quadratic")
        if kind not in ("quadratic", "logistic"):
            raise ConfigError(f"unknown problem kind {kind!r}")
        return cls(kind, int(doc.get("p", 4)), int(doc.get("seed", 0)), int(doc.get("J", 2)),
                   float(doc.get("tau", DEFAULT_TAU)), float(doc.get("noise_sd", 0.1)),
                   doc.get("data"))

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "p": self.p, "seed": self.seed}
        if self.kind == "logistic":
            doc.update(J=self.J, tau=self.tau, noise_sd=self.noise_sd)
        if self.data is not None:
            doc["data"] = self.data
        return doc


@dataclass
class Budget:
    max_iter: int = 10000
    stop_rel_err: float = 1e-8
    divergence_factor: Optional[float] = 1e6

    @classmethod
    def from_dict(cls, doc) -> "Budget":
        return cls(int(doc.get("max_iter", 10000)), float(doc.get("stop_rel_err", 1e-8)),
                   decode_number(doc.get("divergence_factor", 1e6)))

    def to_dict(self) -> dict:
        return {"max_iter": self.max_iter, "stop_rel_err": self.stop_rel_err,
                "divergence_factor": encode_number(self.divergence_factor)}


def _family(variant: str) -> str:
    key = str(variant).upper().replace("-", "").replace("_", "")
    return "pmm" if key.startswith("PMM") else "dqn"


@dataclass
class ExperimentConfig:
    name: str
    graph: GraphSpec
    problem: ProblemSpec
    solvers: list
    budget: Budget = field(default_factory=Budget)
    output: Optional[str] = None
    timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.solvers:
            raise ConfigError("an experiment needs at least one solver")
        names = [s.get("name") for s in self.solvers]
        if any(not n for n in names):
            raise ConfigError("every solver needs a name")
        if len(set(names)) != len(names):
            raise ConfigError(f"solver names must be unique, got {names}")
        for s in self.solvers:
            if "variant" not in s:
                raise ConfigError(f"solver {s['name']!r} has no variant")
            fam = _family(s["variant"])
            allowed = _PMM_KEYS if fam == "pmm" else _DQN_KEYS
            extra = set(s) - allowed
            if extra:
                raise ConfigError(f"solver {s['name']!r}: unknown keys {sorted(extra)}")
            try:
                (pmm.PmmVariant if fam == "pmm" else dqn.Variant).parse(s["variant"])
            except ValueError as exc:
                raise ConfigError(f"solver {s['name']!r}: unknown variant {s['variant']!r}") from exc
        if self.graph.n < 2:
            raise ConfigError("the network needs at least two nodes")
        if self.graph.network is not None and int(self.graph.network["n"]) != self.graph.n:
            raise ConfigError("graph.n disagrees with the serialized network")
        if self.problem.kind == "logistic" and self.problem.p < 2:
            raise ConfigError("logistic problems need p >= 2")
        if self.problem.data is not None:
            doc = self.problem.data
            shape = np.shape(doc.get("a") if doc.get("kind") == "quadratic" else doc.get("labels"))
            if shape and shape[0] != self.graph.n:
                raise ConfigError("problem data and graph disagree on the number of nodes")

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        """Accepts an experiment document or a run manifest (which embeds one)."""
        if doc.get("format") == MANIFEST_FORMAT:
            doc = doc["config"]
        fmt = doc.get("format", FORMAT)
        if fmt != FORMAT:
            raise ConfigError(f"unsupported config format {fmt!r}")
        try:
            return cls(
                name=str(doc.get("name", "experiment")),
                graph=GraphSpec.from_dict(doc.get("graph", {})),
                problem=ProblemSpec.from_dict(doc.get("problem", {})),
                solvers=[dict(s) for s in doc.get("solvers", [])],
                budget=Budget.from_dict(doc.get("budget", {})),
                output=doc.get("output"),
                timing=bool(doc.get("timing", False)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed experiment config: {exc}") from exc

    def to_dict(self) -> dict:
        doc = {
            "format": FORMAT,
            "name": self.name,
            "graph": self.graph.to_dict(),
            "problem": self.problem.to_dict(),
            "budget": self.budget.to_dict(),
            "solvers": copy.deepcopy(self.solvers),
        }
        if self.output is not None:
            doc["output"] = self.output
        if self.timing:
            doc["timing"] = True
        return doc


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(path, config: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")


# -- presets ---------------------------------------------------------------


def _penalty_solvers():
    return [{"name": "DGD", "variant": "DGD"}] + [
        {"name": f"{fam}-{ell}", "variant": f"{fam}{ell}"}
        for fam in ("DQN", "NN") for ell in (0, 1, 2)
    ]


def _pmm_solver(ell):
    return {"name": f"PMM-DQN-{ell}", "variant": f"PMM{ell}", "beta": "sweep",
            "beta_grid": "log:-4:4:0.5", "eps_pmm": 10.0, "dual_beta_scaling": True}


_UNSAFE_DQN1 = {"name": "DQN-1-unsafeguarded", "variant": "DQN1", "rho": "inf",
                "allow_divergence": True}

PRESETS = {
    "fig1": dict(graph={"n": 30, "seed": 1}, problem={"kind": "quadratic", "p": 4, "seed": 1},
                 solvers=_penalty_solvers()),
    "fig2": dict(graph={"n": 400, "seed": 1}, problem={"kind": "quadratic", "p": 3, "seed": 1},
                 solvers=_penalty_solvers()),
    "fig3": dict(graph={"n": 30, "seed": 342},
                 problem={"kind": "logistic", "p": 4, "J": 2, "tau": DEFAULT_TAU, "seed": 342},
                 solvers=_penalty_solvers() + [_UNSAFE_DQN1]),
    "fig4": dict(graph={"n": 200, "seed": 342},
                 problem={"kind": "logistic", "p": 4, "J": 2, "tau": DEFAULT_TAU, "seed": 342},
                 solvers=_penalty_solvers() + [_UNSAFE_DQN1]),
    "fig5": dict(graph={"n": 30, "seed": 1}, problem={"kind": "quadratic", "p": 4, "seed": 1},
                 solvers=[_pmm_solver(0), _pmm_solver(1), _pmm_solver(2),
                          {"name": "DQN-2", "variant": "DQN2"}]),
    "fig6": dict(graph={"n": 30, "seed": 1}, problem={"kind": "quadratic", "p": 4, "seed": 1},
                 solvers=[_pmm_solver(1), {"name": "DQN-0", "variant": "DQN0"},
                          {"name": "DQN-1", "variant": "DQN1"}]),
}


def preset(name: str, **budget) -> ExperimentConfig:
    """A fresh copy of a named preset; keyword arguments override the budget."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    doc = copy.deepcopy(PRESETS[name])
    doc["name"] = name
    doc["budget"] = {**Budget().to_dict(), **budget}
    return ExperimentConfig.from_dict(doc)


# -- building the instance -------------------------------------------------


@dataclass
class Instance:
    topology: object
    weights: object
    problem: object
    graph_seed: int
    y_star: np.ndarray
    mu: float
    L: float


def build_instance(config: ExperimentConfig) -> Instance:
    g = config.graph
    if g.network is not None:
        topology, weights = network_from_dict(g.network)
        used = g.seed
        if weights is None:
            weights = metropolis_weights(topology)
    else:
        topology, used = generate_connected_geometric(g.n, g.seed)
        weights = metropolis_weights(topology)
    ps = config.problem
    if ps.data is not None:
        problem = problem_from_dict(ps.data)
    elif ps.kind == "quadratic":
        problem = generate_quadratic(g.n, ps.p, ps.seed)
    else:
        problem = generate_logistic(g.n, ps.J, ps.p, ps.seed, ps.tau, ps.noise_sd)
    if problem.n != g.n:
        raise ConfigError("problem and graph disagree on the number of nodes")
    mu, L = convexity_constants(problem)
    return Instance(topology, weights, problem, used, exact_solution(problem), mu, L)


# -- resolving solver parameters -------------------------------------------


def resolve_dqn(spec: dict, inst: Instance, budget: Budget) -> dqn.DqnConfig:
    """Turn a solver entry into a concrete :class:`~distqn.dqn.DqnConfig`.

    ``alpha`` defaults to ``1/(K L)`` with ``K = 100``. ``rho`` may be a
    number, ``"inf"``, ``"auto"`` (the descent bound at the solver's
    ``delta``) or absent (safeguard only DQN-1 on non-quadratic costs).
    ``mode = "theoretical"`` uses the worst-case ``delta``, ``rho`` and
    ``epsilon`` instead.
    """
    variant = dqn.Variant.parse(spec["variant"])
    w = inst.weights
    alpha = spec.get("alpha")
    alpha = dqn.default_alpha(inst.L, float(spec.get("K", DEFAULT_K))) if alpha is None else float(alpha)
    mode = spec.get("mode", "practical")
    common = dict(max_iter=budget.max_iter)
    if mode == "theoretical":
        return dqn.theoretical_config(variant, inst.problem, w, alpha=alpha,
                                      theta=float(spec.get("theta", 0.0)), **common)
    if mode != "practical":
        raise ConfigError(f"unknown mode {mode!r}")
    base = dqn.practical_config(variant, inst.problem, w, alpha=alpha, **common)
    theta = 1.0 if variant.is_nn else float(spec.get("theta", base.theta))
    delta = float(spec.get("delta", 0.0))
    rho = spec.get("rho")
    if rho is None:
        rho = base.rho
    elif rho == "auto":
        rho = dqn.safeguard_rho(alpha, inst.mu, inst.L, w.w_min, w.w_max, theta, delta)
    else:
        rho = decode_number(rho)
    epsilon = float(spec.get("epsilon", 1.0))
    return dqn.DqnConfig(variant, alpha, theta=theta, epsilon=epsilon, rho=rho, delta=delta,
                         **common)


def derived_constants(cfg: dqn.DqnConfig, inst: Instance) -> dict:
    """The theory's constants evaluated at a solver's parameters.

    ``rho_effective`` is 0 for methods without a correction (DGD, DQN-0).
    ``xi`` and ``beta_dir`` use it; ``t`` is the inexact-Newton forcing term.
    """
    w = inst.weights
    a, th = cfg.alpha, cfg.theta
    mu_t, L_t = tilde_constants(a, inst.mu, inst.L, w.w_min)
    rho_eff = cfg.rho if cfg.variant in (dqn.Variant.DQN1, dqn.Variant.DQN2) else 0.0
    beta_dir = dqn.direction_bound(a, inst.mu, w.w_min, w.w_max, th, rho_eff)
    xi = 1.0 - cfg.delta ** 2 * mu_t / (2.0 * L_t * beta_dir ** 2) if math.isfinite(beta_dir) else math.nan
    rho_sup, gamma = dqn.residual_rho_bound(a, inst.mu, inst.L, w.w_min, th)
    t = dqn.residual_factor(a, inst.mu, inst.L, w.w_min, th, rho_eff)
    alpha_max, h = dqn.dqn2_alpha_condition(inst.mu, inst.L, w.w_min, w.lambda_n)
    delta_sup = 1.0 / (a * inst.L + (1.0 + th) * (1.0 - w.w_min))
    vals = {
        "mu": inst.mu, "L": inst.L, "mu_tilde": mu_t, "L_tilde": L_t,
        "rho": cfg.rho, "rho_effective": rho_eff,
        "rho_descent_bound": dqn.safeguard_rho(a, inst.mu, inst.L, w.w_min, w.w_max, th,
                                               min(cfg.delta, delta_sup)),
        "epsilon": cfg.epsilon, "delta": cfg.delta, "beta_dir": beta_dir, "xi": xi,
        "gamma": gamma, "rho_sup": rho_sup, "t": t,
        "h_alpha": h(a), "alpha_max_dqn2": alpha_max,
    }
    return {k: encode_number(v) for k, v in vals.items()}


def resolve_pmm(spec: dict, inst: Instance, budget: Budget, beta: float) -> pmm.PmmConfig:
    return pmm.PmmConfig(
        pmm.PmmVariant.parse(spec["variant"]), beta,
        eps_pmm=float(spec.get("eps_pmm", pmm.DEFAULT_EPS_PMM)),
        theta=float(spec.get("theta", 0.0)),
        rho=decode_number(spec.get("rho", "inf")),
        dual_beta_scaling=bool(spec.get("dual_beta_scaling", False)),
        max_iter=budget.max_iter, stop_tol=budget.stop_rel_err,
    )


# -- running ---------------------------------------------------------------


@dataclass
class SolverOutcome:
    name: str
    trace: object
    status: str
    record: dict


@dataclass
class ExperimentResult:
    manifest: dict
    outcomes: dict
    instance: Instance

    def trace(self, name):
        return self.outcomes[name].trace


def csv_name(solver_name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", solver_name) + ".csv"


def _run_dqn(spec, inst, budget, timing):
    cfg = resolve_dqn(spec, inst, budget)
    record = {"family": "dqn", "variant": cfg.variant.value, "alpha": cfg.alpha,
              "theta": cfg.theta, "epsilon": cfg.epsilon, "rho": encode_number(cfg.rho),
              "delta": cfg.delta, "derived": derived_constants(cfg, inst)}
    try:
        _, trace = dqn.dqn_run(inst.problem, inst.weights, cfg, y_star=inst.y_star,
                               timing=timing, stop_rel_err=budget.stop_rel_err,
                               divergence_factor=budget.divergence_factor)
    except DivergenceError as exc:
        return exc.trace, record, exc
    return trace, record, None


def _run_pmm(spec, inst, budget, timing):
    beta = spec.get("beta", "sweep")
    record = {"family": "pmm", "variant": pmm.PmmVariant.parse(spec["variant"]).value}
    if beta == "sweep":
        grid = parse_grid(spec.get("beta_grid", "log:-4:4:0.5"))
        base = resolve_pmm(spec, inst, budget, float(grid[0]))
        results, best = pmm.sweep_beta(inst.problem, inst.weights, base, grid, y_star=inst.y_star,
                                       timing=timing, divergence_factor=budget.divergence_factor)
        record["sweep"] = [{"beta": r.beta, "final_rel_err": encode_number(r.final_rel_err),
                            "iterations": r.iterations, "status": r.status} for r in results]
        beta = best.beta
    cfg = resolve_pmm(spec, inst, budget, float(beta))
    record.update(beta=cfg.beta, eps_pmm=cfg.eps_pmm, theta=cfg.theta,
                  rho=encode_number(cfg.rho), dual_beta_scaling=cfg.dual_beta_scaling,
                  taylor_valid=pmm.taylor_valid(cfg.beta, cfg.eps_pmm, inst.L),
                  derived={"mu": inst.mu, "L": inst.L})
    try:
        _, trace = pmm.pmm_run(inst.problem, inst.weights, cfg, y_star=inst.y_star,
                               timing=timing, divergence_factor=budget.divergence_factor)
    except DivergenceError as exc:
        return exc.trace, record, exc
    return trace, record, None


def run_solver(spec: dict, inst: Instance, budget: Budget, timing=False) -> SolverOutcome:
    name = spec["name"]
    runner = _run_pmm if _family(spec["variant"]) == "pmm" else _run_dqn
    try:
        trace, record, diverged = runner(spec, inst, budget, timing)
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise SolverError(name, exc) from exc
    if diverged is not None and not spec.get("allow_divergence", False):
        raise SolverError(name, diverged) from diverged
    status = "diverged" if diverged is not None else trace.status
    record.update(
        name=name, status=status, iterations=trace.k[-1],
        final_rel_err=encode_number(trace.final_rel_err),
        comms=trace.comms[-1], warnings=list(trace.warnings), csv=csv_name(name),
    )
    if diverged is not None:
        record["divergence"] = str(diverged)
    return SolverOutcome(name, trace, status, record)


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Build the instance, run every solver from zero and write the outputs.

    ``out_dir`` overrides ``config.output``; with neither, nothing is written.
    Solver failures raise :class:`~distqn.errors.SolverError` naming the
    solver. Divergence is only tolerated for solvers flagged
    ``allow_divergence``; their partial traces are kept.
    """
    inst = build_instance(config)
    outcomes = {}
    for spec in config.solvers:
        outcomes[spec["name"]] = run_solver(spec, inst, config.budget, config.timing)
    manifest = build_manifest(config, inst, outcomes)
    out_dir = out_dir if out_dir is not None else config.output
    if out_dir is not None:
        write_outputs(out_dir, manifest, outcomes)
    return ExperimentResult(manifest, outcomes, inst)


def build_manifest(config, inst: Instance, outcomes) -> dict:
    w = inst.weights
    return {
        "format": MANIFEST_FORMAT,
        "config": config.to_dict(),
        "graph": {"n": inst.topology.n, "requested_seed": config.graph.seed,
                  "effective_seed": inst.graph_seed, "edges": len(inst.topology.edges),
                  "w_min": w.w_min, "w_max": w.w_max,
                  "lambda_1": w.lambda_1, "lambda_n": w.lambda_n},
        "problem": {"kind": config.problem.kind, "seed": config.problem.seed,
                    "mu": inst.mu, "L": inst.L, "y_star": [float(v) for v in inst.y_star]},
        "solvers": [o.record for o in outcomes.values()],
    }


def write_outputs(out_dir, manifest, outcomes) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for o in outcomes.values():
        o.trace.write_csv(os.path.join(out_dir, csv_name(o.name)))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def oracle_report(config: ExperimentConfig) -> dict:
    """``y*``, the penalized minimizer for each distinct penalty ``alpha`` and
    the derived constants of every DQN-family solver."""
    inst = build_instance(config)
    report = {"y_star": [float(v) for v in inst.y_star], "mu": inst.mu, "L": inst.L,
              "effective_graph_seed": inst.graph_seed, "penalty": [], "solvers": {}}
    seen = set()
    for spec in config.solvers:
        if _family(spec["variant"]) != "dqn":
            continue
        cfg = resolve_dqn(spec, inst, config.budget)
        report["solvers"][spec["name"]] = derived_constants(cfg, inst)
        if cfg.alpha in seen:
            continue
        seen.add(cfg.alpha)
        x_alpha = penalty_solution(PenaltyModel(inst.problem, inst.weights, cfg.alpha))
        report["penalty"].append({
            "alpha": cfg.alpha,
            "x_alpha": x_alpha.tolist(),
            "floor_rel_err": relative_error(x_alpha, inst.y_star),
        })
    return report


def network_snapshot(inst: Instance) -> dict:
    """Serialized network of a built instance, for embedding in a config."""
    return network_to_dict(inst.topology, inst.weights)
