"""PMM-DQN: DQN-type Newton approximations inside a proximal method of multipliers.

Unlike the penalty methods, these iterate on the unscaled costs with a dual
variable ``q`` and converge to the exact consensus minimizer. With
``c = beta + eps_pmm`` the splitting is

    A_i = hess f_i(x_i) + (beta (1 + theta)(1 - w_ii) + eps_pmm) I
    G   = beta theta (1 - w_ii) on the diagonal, beta w_ij on edges

and one iteration is

    s      = -(I - L G) A^{-1} g,     g = grad F(x) + beta (I - Z) x + q
    x_next = x + s
    q_next = q + c_dual (I - Z) x_next

with ``c_dual = 1`` by default or ``beta`` when ``dual_beta_scaling`` is set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from distqn.dqn import _check_growth, _combine, _fit_diagonal
from distqn.errors import DivergenceError
from distqn.graph import WeightMatrix
from distqn.harness.oracles import relative_error
from distqn.penalty import Splitting
from distqn.problems import LocalCostModel, convexity_constants
from distqn.trace import Trace

DEFAULT_EPS_PMM = 10.0


class PmmVariant(str, Enum):
    PMM0 = "PMM0"
    PMM1 = "PMM1"
    PMM2 = "PMM2"

    @classmethod
    def parse(cls, name) -> "PmmVariant":
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("-", "").replace("_", "").replace("DQN", "")
        return cls(key)

    @property
    def label(self) -> str:
        return f"PMM-DQN-{self.value[-1]}"

    @property
    def order(self) -> int:
        return int(self.value[-1])

    def comms_per_iteration(self, k: int) -> int:
        if self is PmmVariant.PMM1:
            return 3 if k == 0 else 2
        return self.order + 1


@dataclass(frozen=True)
class PmmConfig:
    variant: PmmVariant
    beta: float
    eps_pmm: float = DEFAULT_EPS_PMM
    theta: float = 0.0
    rho: float = math.inf
    dual_beta_scaling: bool = False
    max_iter: int = 1000
    stop_tol: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", PmmVariant.parse(self.variant))
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.eps_pmm > 0:
            raise ValueError("eps_pmm must be positive")
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive (use inf to disable the safeguard)")

    @property
    def dual_step(self) -> float:
        return self.beta if self.dual_beta_scaling else 1.0


@dataclass
class PmmState:
    x_hat: np.ndarray
    q_hat: np.ndarray
    frozen_lambda: Optional[np.ndarray] = None
    k: int = 0
    comm_vectors_per_node: int = 0

    @classmethod
    def zeros(cls, n, p) -> "PmmState":
        return cls(np.zeros((n, p)), np.zeros((n, p)))


def pmm_splitting(problem: LocalCostModel, weights: WeightMatrix, X_hat, config: PmmConfig) -> Splitting:
    H = problem.hessians(X_hat)
    off = 1.0 - weights.diagonal
    shift = config.beta * (1.0 + config.theta) * off + config.eps_pmm
    A = H + shift[:, None, None] * np.eye(problem.p)
    return Splitting(weights, H, A, config.beta * config.theta * off, config.beta)


def pmm_gradient(problem: LocalCostModel, weights: WeightMatrix, X_hat, Q_hat, beta) -> np.ndarray:
    """Block ``i``: ``grad f_i(x_i) + beta sum_{j in O_i} w_ij (x_i - x_j) + q_i``."""
    return problem.gradients(X_hat) + beta * weights.laplacian_apply(X_hat) + Q_hat


def taylor_valid(beta, eps_pmm, L) -> bool:
    """Whether the first-order expansion behind PMM-DQN-2 converges."""
    return beta > 0.5 * max(0.0, L - eps_pmm)


def compute_lambda_pmm2(splitting: Splitting, problem: LocalCostModel, weights: WeightMatrix,
                        X_hat, config: PmmConfig, d_hat):
    """PMM-DQN-2 correction fitted to ``u = G d``.

    Solves, per node and coordinate,

        Lambda_i u_i = -[(1/c + beta w_ii / c^2) I - hess f_i(x_i) / c^2] u_i
                       - (beta / c^2) sum_{j in O_i} w_ij u_j,     c = beta + eps_pmm

    with the same zero-entry rule and clipping as DQN-2. Returns ``(lam, u)``.
    """
    u = splitting.apply_G(d_hat)
    c = config.beta + config.eps_pmm
    diag_coef = 1.0 / c + config.beta * weights.diagonal / c ** 2
    rhs = (
        -diag_coef[:, None] * u
        + np.einsum("ipq,iq->ip", splitting.hessians, u) / c ** 2
        - (config.beta / c ** 2) * weights.offdiag_apply(u)
    )
    return _fit_diagonal(rhs, u, config.rho), u


def pmm_step(problem: LocalCostModel, weights: WeightMatrix, state: PmmState, config: PmmConfig,
             trace: Optional[Trace] = None) -> PmmState:
    """One PMM-DQN iteration; returns a new state."""
    v = config.variant
    g = pmm_gradient(problem, weights, state.x_hat, state.q_hat, config.beta)
    split = pmm_splitting(problem, weights, state.x_hat, config)
    d = split.apply_A_inverse(g)
    frozen = state.frozen_lambda
    if v is PmmVariant.PMM0:
        lam, u = None, None
    elif v is PmmVariant.PMM2 or frozen is None:
        _check_taylor(problem, config, trace)
        lam, u = compute_lambda_pmm2(split, problem, weights, state.x_hat, config, d)
        if v is PmmVariant.PMM1:
            frozen = lam
    else:
        lam, u = frozen, split.apply_G(d)
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = state.x_hat + _combine(d, u, lam)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"{v.label}: non-finite iterate at iteration {state.k + 1}",
                              iteration=state.k + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        q_next = state.q_hat + config.dual_step * weights.laplacian_apply(x_next)
    return PmmState(x_next, q_next, frozen, state.k + 1,
                    state.comm_vectors_per_node + v.comms_per_iteration(state.k))


def _check_taylor(problem, config, trace):
    L = convexity_constants(problem)[1]
    if not taylor_valid(config.beta, config.eps_pmm, L):
        msg = (f"beta={config.beta!r} violates beta > max(0, L - eps_pmm)/2 "
               f"(L={L!r}, eps_pmm={config.eps_pmm!r}); the Taylor expansion may not converge")
        if trace is not None:
            trace.warn(msg)
        else:
            warnings.warn(msg, RuntimeWarning, stacklevel=3)


def pmm_run(problem: LocalCostModel, weights: WeightMatrix, config: PmmConfig, *, y_star=None,
            timing=False, divergence_factor: Optional[float] = None):
    """Run PMM-DQN from ``x = q = 0``.

    Stops after ``max_iter`` iterations or once the relative error against
    ``y_star`` is at most ``stop_tol``. The trace's ``phi`` column holds
    ``F(x) = sum_i f_i(x_i)`` and ``grad_norm`` the Euclidean norm of ``g``.
    ``divergence_factor`` works as in :func:`distqn.dqn.dqn_run`.
    """
    if (config.stop_tol > 0 or divergence_factor is not None) and y_star is None:
        raise ValueError("relative-error stopping and divergence checks need y_star")
    trace = Trace(timing=timing)
    state = PmmState.zeros(problem.n, problem.p)

    def log(st):
        err = relative_error(st.x_hat, y_star) if y_star is not None else math.nan
        g = pmm_gradient(problem, weights, st.x_hat, st.q_hat, config.beta)
        trace.record(st.k, err, float(np.sum(problem.values(st.x_hat))), np.linalg.norm(g),
                     st.comm_vectors_per_node)
        return err

    err0 = err = log(state)
    try:
        while state.k < config.max_iter and not err <= config.stop_tol:
            state = pmm_step(problem, weights, state, config, trace)
            err = log(state)
            _check_growth(config.variant.label, err, err0, divergence_factor, state.k)
    except DivergenceError as exc:
        trace.status = "diverged"
        exc.trace = trace
        raise
    trace.status = "converged" if err <= config.stop_tol else "completed"
    return state, trace


def beta_grid(lo=-4.0, hi=4.0, step=0.5) -> np.ndarray:
    """``10**e`` for ``e = lo, lo + step, ..., hi``."""
    count = int(round((hi - lo) / step)) + 1
    return 10.0 ** (lo + step * np.arange(count))


@dataclass
class SweepResult:
    beta: float
    final_rel_err: float
    iterations: int
    reached: bool
    status: str
    trace: Optional[Trace]


def sweep_beta(problem, weights, base: PmmConfig, grid, *, y_star, timing=False,
               divergence_factor: Optional[float] = None):
    """Run ``base`` for every ``beta`` in ``grid``.

    Returns ``(results, best)``. The best run has the smallest final relative
    error, ties broken by fewer iterations. Diverging runs score an infinite
    error.
    """
    results = []
    for beta in grid:
        cfg = replace(base, beta=float(beta))
        try:
            state, trace = pmm_run(problem, weights, cfg, y_star=y_star, timing=timing,
                                   divergence_factor=divergence_factor)
            err = trace.final_rel_err
            results.append(SweepResult(float(beta), err, state.k, trace.status == "converged",
                                       trace.status, trace))
        except DivergenceError as exc:
            results.append(SweepResult(float(beta), math.inf, exc.iteration or 0, False,
                                       "diverged", exc.trace))

    def key(r):
        err = r.final_rel_err if math.isfinite(r.final_rel_err) else math.inf
        return (err, r.iterations)

    best = min(results, key=key)
    return results, best
