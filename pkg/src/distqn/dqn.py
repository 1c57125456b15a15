"""DGD, the DQN family and the Network Newton baselines on the penalized problem.

Every method iterates ``x^{k+1} = x^k + eps * s^k`` on Phi. DQN directions
have the form

    s = -(I - L G) A^{-1} grad Phi(x)

with a diagonal correction ``L`` (stored as an ``(n, p)`` array of the
diagonals of the per-node matrices ``Lambda_i``):

* DQN-0 uses ``L = 0``;
* DQN-2 fits ``L`` to a first-order expansion of the Newton equation at every
  iteration;
* DQN-1 computes the DQN-2 correction once at ``k = 0`` and keeps it.

NN-l truncates the Neumann series of ``(A - G)^{-1}`` after ``l + 1`` terms
with the ``theta = 1`` splitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from distqn.errors import DivergenceError
from distqn.graph import WeightMatrix
from distqn.harness.oracles import relative_error
from distqn.penalty import (
    PenaltyModel,
    Splitting,
    build_splitting,
    phi_gradient,
    phi_value,
)
from distqn.problems import LocalCostModel, QuadraticProblem, convexity_constants
from distqn.trace import Trace


class Variant(str, Enum):
    DGD = "DGD"
    DQN0 = "DQN0"
    DQN1 = "DQN1"
    DQN2 = "DQN2"
    NN0 = "NN0"
    NN1 = "NN1"
    NN2 = "NN2"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("-", "").replace("_", "")
        return cls(key)

    @property
    def label(self) -> str:
        return self.value if self is Variant.DGD else f"{self.value[:-1]}-{self.value[-1]}"

    @property
    def is_nn(self) -> bool:
        return self.value.startswith("NN")

    @property
    def is_dqn(self) -> bool:
        return self.value.startswith("DQN")

    @property
    def order(self) -> int:
        return int(self.value[-1]) if self is not Variant.DGD else 0

    def comms_per_iteration(self, k: int) -> int:
        """p-vectors each node transmits during iteration ``k``."""
        if self is Variant.DGD:
            return 1
        if self is Variant.DQN1:
            return 3 if k == 0 else 2
        return self.order + 1


@dataclass(frozen=True)
class DqnConfig:
    variant: Variant
    alpha: float
    theta: float = 0.0
    epsilon: float = 1.0
    rho: float = math.inf
    delta: float = 0.0
    max_iter: int = 1000
    stop_tol: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.variant.is_nn:
            object.__setattr__(self, "theta", 1.0)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive (use inf to disable the safeguard)")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    @property
    def safeguarded(self) -> bool:
        return math.isfinite(self.rho)


@dataclass
class DqnState:
    x: np.ndarray
    frozen_lambda: Optional[np.ndarray] = None
    k: int = 0
    comm_vectors_per_node: int = 0


@dataclass
class StepRecord:
    """One iteration's internals, as yielded by :func:`iterate`."""

    k: int
    x: np.ndarray
    grad: np.ndarray
    direction: np.ndarray
    lam: Optional[np.ndarray]
    splitting: Optional[Splitting]
    x_next: np.ndarray = field(repr=False, default=None)


# -- single-step operations ------------------------------------------------


def dgd_step(model: PenaltyModel, X) -> np.ndarray:
    """One DGD step, ``x - grad Phi(x)``.

    Node-wise this is ``sum_{j in closed O_i} w_ij x_j - alpha grad f_i(x_i)``.
    """
    X = model.check(X)
    return X - phi_gradient(model, X)


def dqn_direction(splitting: Splitting, grad, lam=None) -> np.ndarray:
    """``s = -d + Lambda (G d)`` with ``d = A^{-1} grad``."""
    d = splitting.apply_A_inverse(grad)
    if lam is None:
        return -d
    return _combine(d, splitting.apply_G(d), lam)


def _combine(d, u, lam):
    if lam is None:
        return -d
    return -d + lam * u


def compute_lambda_dqn2(splitting: Splitting, model: PenaltyModel, X, d, rho=math.inf):
    """DQN-2 correction and the vector ``u = G d`` it was fitted to.

    Per node and coordinate, ``lambda = r / u`` where

        r_i = -[(1 + w_ii) I - alpha hess f_i(x_i)] u_i - sum_{j in O_i} w_ij u_j.

    Coordinates with ``|u| < 1e-12 max(1, ||u||_inf)`` (or a non-finite ratio)
    get ``lambda = 0``. Entries are then clipped to ``[-rho, rho]``.
    """
    u = splitting.apply_G(d)
    w = model.weights
    rhs = (
        -(1.0 + w.diagonal)[:, None] * u
        + model.alpha * np.einsum("ipq,iq->ip", splitting.hessians, u)
        - w.offdiag_apply(u)
    )
    return _fit_diagonal(rhs, u, rho), u


def _fit_diagonal(rhs, u, rho):
    zero_tol = 1e-12 * max(1.0, float(np.max(np.abs(u))) if u.size else 0.0)
    ok = np.abs(u) >= zero_tol
    lam = np.zeros_like(u)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        np.divide(rhs, u, out=lam, where=ok)
    lam[~np.isfinite(lam)] = 0.0
    if math.isfinite(rho):
        np.clip(lam, -rho, rho, out=lam)
    return lam


def nn_direction(splitting: Splitting, grad, ell: int) -> np.ndarray:
    """Network Newton direction ``-sum_{m=0}^{ell} (A^{-1} G)^m A^{-1} grad``.

    ``splitting`` must be built with ``theta = 1``.
    """
    if ell not in (0, 1, 2):
        raise ValueError("NN order must be 0, 1 or 2")
    term = splitting.apply_A_inverse(grad)
    total = term
    for _ in range(ell):
        term = splitting.apply_A_inverse(splitting.apply_G(term))
        total = total + term
    return -total


# -- parameter rules -------------------------------------------------------


def _delta_sup(alpha, L, w_min, theta):
    return 1.0 / (alpha * L + (1.0 + theta) * (1.0 - w_min))


def safeguard_rho(alpha, mu, L, w_min, w_max, theta, delta) -> float:
    """Largest safeguard radius keeping ``grad^T s <= -delta ||grad||^2``."""
    sup = _delta_sup(alpha, L, w_min, theta)
    # allow rounding slack so delta = sup computed another way is accepted
    if not 0 <= delta <= sup * (1.0 + 1e-12):
        raise ValueError(f"delta must lie in [0, {sup!r}], got {delta!r}")
    lead = (alpha * mu + (1.0 + theta) * (1.0 - w_max)) / ((1.0 - w_min) * (1.0 + theta))
    return max(0.0, lead * (sup - delta))


def direction_bound(alpha, mu, w_min, w_max, theta, rho) -> float:
    """``beta`` with ``||s||_2 <= beta ||grad Phi||_2`` for any ``||L|| <= rho``."""
    return (1.0 + rho * (1.0 + theta) * (1.0 - w_min)) / (alpha * mu + (1.0 + theta) * (1.0 - w_max))


@dataclass(frozen=True)
class StepConstants:
    beta_dir: float
    epsilon: float
    xi: float


def theoretical_step(alpha, mu, L, w_min, w_max, theta, delta, rho) -> StepConstants:
    """Step size ``delta / (beta^2 L~)`` and its guaranteed contraction factor ``xi``."""
    if not delta > 0:
        raise ValueError("the theoretical step needs delta > 0")
    beta = direction_bound(alpha, mu, w_min, w_max, theta, rho)
    mu_t = alpha * mu
    L_t = alpha * L + 2.0 * (1.0 - w_min)
    eps = delta / (beta ** 2 * L_t)
    xi = 1.0 - delta ** 2 * mu_t / (2.0 * L_t * beta ** 2)
    return StepConstants(beta, eps, xi)


def residual_rho_bound(alpha, mu, L, w_min, theta) -> tuple:
    """``(rho_sup, gamma)``: safeguards ``rho < rho_sup`` make ``s`` an inexact
    Newton step, and ``gamma`` bounds ``||G A^{-1}||``."""
    c = (1.0 + theta) * (1.0 - w_min)
    gamma = c / (alpha * mu + c)
    rho_sup = alpha * mu / (c * (alpha * L + 2.0 * c))
    return rho_sup, gamma


def residual_factor(alpha, mu, L, w_min, theta, rho) -> float:
    """Inexact-Newton forcing term ``t = gamma + rho gamma (alpha L + 2 (1+theta)(1-w_min))``."""
    _, gamma = residual_rho_bound(alpha, mu, L, w_min, theta)
    c = (1.0 + theta) * (1.0 - w_min)
    return gamma + rho * gamma * (alpha * L + 2.0 * c)


def dqn2_alpha_condition(mu, L, w_min, lambda_n):
    """Largest penalty ``alpha`` for which unsafeguarded DQN-2 is an inexact
    Newton method, and the forcing term ``h(alpha) = 1 - 2 alpha mu + alpha^2 L^2``."""
    alpha_max = min((1.0 + lambda_n) / L, w_min / (2.0 * L), 2.0 * mu / L ** 2)

    def h(alpha):
        return 1.0 - 2.0 * alpha * mu + alpha ** 2 * L ** 2

    return alpha_max, h


def default_alpha(L, K=100.0) -> float:
    return 1.0 / (K * L)


def practical_config(variant, problem: LocalCostModel, weights: WeightMatrix, *, alpha=None,
                     safeguard=None, max_iter=1000, stop_tol=0.0, K=100.0) -> DqnConfig:
    """Recommended settings: ``theta = 0``, ``eps = 1``, ``delta = 0`` and, when
    safeguarded, ``rho`` at the descent bound with ``delta = 0``.

    By default only DQN-1 on non-quadratic costs is safeguarded.
    """
    variant = Variant.parse(variant)
    mu, L = convexity_constants(problem)
    alpha = default_alpha(L, K) if alpha is None else alpha
    if safeguard is None:
        safeguard = variant is Variant.DQN1 and not isinstance(problem, QuadraticProblem)
    theta = 1.0 if variant.is_nn else 0.0
    rho = math.inf
    if safeguard and variant.is_dqn:
        rho = safeguard_rho(alpha, mu, L, weights.w_min, weights.w_max, theta, 0.0)
    return DqnConfig(variant, alpha, theta=theta, epsilon=1.0, rho=rho, delta=0.0,
                     max_iter=max_iter, stop_tol=stop_tol)


def theoretical_config(variant, problem: LocalCostModel, weights: WeightMatrix, *, alpha=None,
                       theta=0.0, max_iter=1000, stop_tol=0.0, K=100.0) -> DqnConfig:
    """Worst-case settings: ``delta`` at half its admissible range, ``rho`` from the
    descent bound and ``eps = delta / (beta^2 L~)``."""
    variant = Variant.parse(variant)
    mu, L = convexity_constants(problem)
    alpha = default_alpha(L, K) if alpha is None else alpha
    if variant.is_nn:
        theta = 1.0
    delta = 0.5 * _delta_sup(alpha, L, weights.w_min, theta)
    rho = safeguard_rho(alpha, mu, L, weights.w_min, weights.w_max, theta, delta)
    steps = theoretical_step(alpha, mu, L, weights.w_min, weights.w_max, theta, delta, rho)
    return DqnConfig(variant, alpha, theta=theta, epsilon=steps.epsilon, rho=rho, delta=delta,
                     max_iter=max_iter, stop_tol=stop_tol)


# -- iteration -------------------------------------------------------------


def iterate(problem: LocalCostModel, weights: WeightMatrix, config: DqnConfig, x0=None,
            state: Optional[DqnState] = None):
    """Yield a :class:`StepRecord` per iteration; ``state`` is updated in place.

    The generator stops after ``config.max_iter`` iterations or once
    ``||grad Phi(x^k)||_2 <= stop_tol``. A non-finite iterate raises
    :class:`DivergenceError`.
    """
    v = config.variant
    model = PenaltyModel(problem, weights, config.alpha, config.theta)
    if state is None:
        X = np.zeros((problem.n, problem.p)) if x0 is None else model.check(x0).copy()
        state = DqnState(X)
    while state.k < config.max_iter:
        X = state.x
        grad = phi_gradient(model, X)
        if np.linalg.norm(grad) <= config.stop_tol:
            return
        with np.errstate(over="ignore", invalid="ignore"):
            s, lam, split = _direction(v, model, X, grad, state, config.rho)
            X_next = X + config.epsilon * s
        state.comm_vectors_per_node += v.comms_per_iteration(state.k)
        record = StepRecord(state.k, X, grad, s, lam, split, X_next)
        if not np.all(np.isfinite(X_next)):
            raise DivergenceError(f"{v.label}: non-finite iterate at iteration {state.k + 1}",
                                  iteration=state.k + 1)
        state.x = X_next
        state.k += 1
        yield record


def _direction(v, model, X, grad, state, rho):
    lam = None
    split = None
    if v is Variant.DGD:
        return -grad, lam, split
    split = build_splitting(model, X)
    if v.is_nn:
        return nn_direction(split, grad, v.order), lam, split
    d = split.apply_A_inverse(grad)
    if v is Variant.DQN0:
        u = None
    elif v is Variant.DQN2 or (v is Variant.DQN1 and state.frozen_lambda is None):
        lam, u = compute_lambda_dqn2(split, model, X, d, rho)
        if v is Variant.DQN1:
            state.frozen_lambda = lam
    else:
        lam = state.frozen_lambda
        u = split.apply_G(d)
    return _combine(d, u, lam), lam, split


def dqn_run(problem: LocalCostModel, weights: WeightMatrix, config: DqnConfig, x0=None, *,
            y_star=None, timing=False, callback: Optional[Callable] = None,
            stop_rel_err: float = 0.0, divergence_factor: Optional[float] = None):
    """Run a solver and record a :class:`~distqn.trace.Trace`.

    Parameters
    ----------
    y_star : array, optional
        Minimizer of the unpenalized problem. Enables the relative-error
        column; without it the column is NaN.
    callback : callable, optional
        Called with every :class:`StepRecord`.
    stop_rel_err : float
        Also stop once the relative error is at most this value.
    divergence_factor : float, optional
        Treat relative-error growth beyond this factor over the initial error
        as divergence.

    Raises
    ------
    DivergenceError
        On a non-finite iterate or excessive error growth. The partial trace
        is attached as ``exc.trace``.
    """
    if (stop_rel_err > 0 or divergence_factor is not None) and y_star is None:
        raise ValueError("relative-error stopping and divergence checks need y_star")
    model = PenaltyModel(problem, weights, config.alpha, config.theta)
    trace = Trace(timing=timing)
    state = DqnState(np.zeros((problem.n, problem.p)) if x0 is None else model.check(x0).copy())

    def log(X):
        err = relative_error(X, y_star) if y_star is not None else math.nan
        grad = phi_gradient(model, X)
        trace.record(state.k, err, phi_value(model, X), np.linalg.norm(grad),
                     state.comm_vectors_per_node)
        return err

    err0 = err = log(state.x)
    try:
        steps = iterate(problem, weights, config, state=state)
        while not err <= stop_rel_err:
            rec = next(steps, None)
            if rec is None:
                break
            if callback is not None:
                callback(rec)
            err = log(state.x)
            _check_growth(config.variant.label, err, err0, divergence_factor, state.k)
    except DivergenceError as exc:
        trace.status = "diverged"
        exc.trace = trace
        raise
    trace.status = "completed"
    return state, trace


def _check_growth(label, err, err0, factor, k):
    if factor is not None and err > factor * err0:
        raise DivergenceError(f"{label}: relative error grew by more than {factor:g}x "
                              f"by iteration {k}", iteration=k)


def with_overrides(config: DqnConfig, **changes) -> DqnConfig:
    return replace(config, **changes)
