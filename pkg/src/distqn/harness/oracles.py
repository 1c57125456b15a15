"""Centralized reference solutions and the error metric.

These are oracles: they solve the problems with dense centralized linear
algebra and are only used to score the distributed solvers.
"""

from __future__ import annotations

import numpy as np

from distqn.errors import ConvergenceError
from distqn.penalty import PenaltyModel, dense_hessian, phi_gradient, phi_value
from distqn.problems import LocalCostModel, QuadraticProblem


def exact_solution(problem: LocalCostModel, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Minimizer of ``f = sum_i f_i``."""
    if isinstance(problem, QuadraticProblem):
        Bsum = problem.B.sum(axis=0)
        rhs = np.einsum("ipq,iq->p", problem.B, problem.a)
        return np.linalg.solve(Bsum, rhs)

    def total(y):
        return problem.total(y)

    return _damped_newton(total, np.zeros(problem.p), tol, max_iter)


def penalty_solution(model: PenaltyModel, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Minimizer of the penalized objective Phi, as an ``(n, p)`` array."""
    n, p = model.n, model.p
    problem = model.problem
    if isinstance(problem, QuadraticProblem):
        H = dense_hessian(model, np.zeros((n, p)))
        rhs = model.alpha * np.einsum("ipq,iq->ip", problem.B, problem.a).ravel()
        return np.linalg.solve(H, rhs).reshape(n, p)

    def total(v):
        X = v.reshape(n, p)
        return phi_value(model, X), phi_gradient(model, X).ravel(), dense_hessian(model, X)

    return _damped_newton(total, np.zeros(n * p), tol, max_iter).reshape(n, p)


def _damped_newton(fn, x0, tol, max_iter):
    x = np.array(x0, dtype=float)
    val, g, H = fn(x)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            return x
        step = -np.linalg.solve(H, g)
        t = 1.0
        while True:
            cand = x + t * step
            cval, cg, cH = fn(cand)
            # accept on decrease or, near the optimum where f stalls in
            # rounding, on a smaller gradient
            if cval <= val + 1e-4 * t * float(g @ step) or np.linalg.norm(cg) < np.linalg.norm(g):
                break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("step halving failed to find a decrease")
        x, val, g, H = cand, cval, cg, cH
    if np.linalg.norm(g) <= tol:
        return x
    raise ConvergenceError(f"Newton did not reach gradient norm {tol} in {max_iter} iterations")


def relative_error(X, y_star) -> float:
    """``(1/n) sum_i ||x_i - y*||_2 / ||y*||_2``."""
    y_star = np.asarray(y_star, dtype=float)
    scale = np.linalg.norm(y_star)
    if not scale > 0:
        raise ValueError("relative error needs a nonzero reference point")
    X = np.asarray(X, dtype=float)
    return float(np.mean(np.linalg.norm(X - y_star, axis=1)) / scale)
