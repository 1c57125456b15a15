"""Penalty objective and the block Hessian splitting.

Stacked variables ``x = (x_1, ..., x_n)`` are ``(n, p)`` arrays. The
penalized objective is

    Phi(x) = alpha * sum_i f_i(x_i) + 1/2 x^T (I - Z) x,    Z = W kron I_p

and its Hessian is split as ``A_k - G`` with block-diagonal

    A_i = alpha * hess f_i(x_i) + (1 + theta)(1 - w_ii) I

and ``G`` carrying ``theta (1 - w_ii) I`` on the diagonal and ``w_ij I`` on
edge blocks. ``G`` is kept as one scalar per node plus the sparse ``W_u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from distqn.errors import DimensionError, DistqnError
from distqn.graph import WeightMatrix
from distqn.problems import LocalCostModel


@dataclass(frozen=True)
class PenaltyModel:
    problem: LocalCostModel
    weights: WeightMatrix
    alpha: float
    theta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")
        if self.problem.n != self.weights.n:
            raise DimensionError("problem and weight matrix disagree on node count")

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def p(self) -> int:
        return self.problem.p

    def check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n, self.p):
            raise DimensionError(f"expected an ({self.n}, {self.p}) block vector, got {X.shape}")
        return X


class Splitting:
    """Block-diagonal ``A`` and sparse remainder ``G`` of a splitting ``H = A - G``.

    ``G`` is ``diag(g_diag) kron I + offdiag_scale * (W_u kron I)``. The
    same class serves the penalty splitting (scale 1) and the proximal
    multiplier splitting (scale ``beta``).
    """

    def __init__(self, weights: WeightMatrix, hessians, a_blocks, g_diag, offdiag_scale=1.0):
        self.weights = weights
        self.hessians = hessians
        self.a_blocks = a_blocks
        self.g_diag = np.asarray(g_diag, dtype=float)
        self.offdiag_scale = float(offdiag_scale)
        self._a_inv = _spd_inverse(a_blocks)

    @property
    def n(self) -> int:
        return self.a_blocks.shape[0]

    @property
    def p(self) -> int:
        return self.a_blocks.shape[1]

    @property
    def a_inverse_blocks(self) -> np.ndarray:
        return self._a_inv

    def apply_A_inverse(self, V) -> np.ndarray:
        return np.einsum("ipq,iq->ip", self._a_inv, V)

    def apply_A(self, V) -> np.ndarray:
        return np.einsum("ipq,iq->ip", self.a_blocks, V)

    def apply_G(self, V) -> np.ndarray:
        """Block ``i``: ``g_ii v_i + scale * sum_{j in O_i} w_ij v_j``."""
        out = self.g_diag[:, None] * V
        if self.offdiag_scale != 0.0:
            out = out + self.offdiag_scale * self.weights.offdiag_apply(V)
        return out

    def apply_hessian(self, V) -> np.ndarray:
        """``(A - G) V``."""
        return self.apply_A(V) - self.apply_G(V)

    def g_column_sums(self) -> np.ndarray:
        """``sum_i ||G_ij||_2`` for each block column ``j``."""
        incident = np.asarray(self.weights.offdiag.sum(axis=0)).ravel()
        return np.abs(self.g_diag) + abs(self.offdiag_scale) * incident


def _spd_inverse(blocks) -> np.ndarray:
    """Inverses of symmetric positive definite blocks via Cholesky."""
    blocks = np.asarray(blocks, dtype=float)
    if not np.all(np.isfinite(blocks)):
        raise DistqnError("non-finite entries in Hessian blocks")
    p = blocks.shape[-1]
    try:
        chol = np.linalg.cholesky(blocks)
        eye = np.broadcast_to(np.eye(p), blocks.shape)
        linv = np.linalg.solve(chol, eye)
        return np.einsum("iqp,iqr->ipr", linv, linv)
    except np.linalg.LinAlgError:
        # Cholesky can fail on blocks that are PD only up to rounding
        vals, vecs = np.linalg.eigh(blocks)
        if np.any(vals <= 0):
            bad = int(np.argmin(vals.min(axis=1)))
            raise DistqnError(
                f"block {bad} of A is not positive definite (min eigenvalue {vals[bad].min():.3e})"
            ) from None
        return np.einsum("ipk,ik,iqk->ipq", vecs, 1.0 / vals, vecs)


def phi_value(model: PenaltyModel, X) -> float:
    X = model.check(X)
    # sum_i in index order for a thread-count independent reduction
    local = float(np.sum(model.problem.values(X)))
    return model.alpha * local + 0.5 * model.weights.disagreement(X)


def phi_gradient(model: PenaltyModel, X) -> np.ndarray:
    """Block ``i``: ``alpha grad f_i(x_i) + sum_{j in O_i} w_ij (x_i - x_j)``."""
    X = model.check(X)
    return model.alpha * model.problem.gradients(X) + model.weights.laplacian_apply(X)


def build_splitting(model: PenaltyModel, X) -> Splitting:
    X = model.check(X)
    H = model.problem.hessians(X)
    if not np.all(np.isfinite(H)):
        raise DistqnError("non-finite Hessian entries")
    off = 1.0 - model.weights.diagonal
    shift = (1.0 + model.theta) * off
    A = model.alpha * H + shift[:, None, None] * np.eye(model.p)
    return Splitting(model.weights, H, A, model.theta * off, 1.0)


def hessian_apply(model: PenaltyModel, X, V) -> np.ndarray:
    """``hess Phi(x) v = alpha hess F(x) v + (I - Z) v``, without the splitting."""
    X = model.check(X)
    V = model.check(V)
    H = model.problem.hessians(X)
    return model.alpha * np.einsum("ipq,iq->ip", H, V) + model.weights.laplacian_apply(V)


def dense_hessian(model: PenaltyModel, X) -> np.ndarray:
    """Full ``np x np`` Hessian of Phi. Only for oracles and small tests."""
    X = model.check(X)
    n, p = model.n, model.p
    H = np.kron(np.eye(n) - model.weights.dense(), np.eye(p))
    for i, h in enumerate(model.problem.hessians(X)):
        H[i * p:(i + 1) * p, i * p:(i + 1) * p] += model.alpha * h
    return H


def block_norm(x) -> float:
    """``sum_i ||x_i||_2`` for an ``(n, p)`` block vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.sum(np.linalg.norm(x, axis=1)))


def block_matrix_norm(M, p: int) -> float:
    """``max_j sum_i ||M_ij||_2`` over the ``p x p`` blocks of a dense matrix."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1] or M.shape[0] % p:
        raise DimensionError(f"matrix of shape {M.shape} is not made of {p}x{p} blocks")
    n = M.shape[0] // p
    blocks = M.reshape(n, p, n, p).transpose(0, 2, 1, 3)
    spec = np.linalg.norm(blocks, ord=2, axis=(2, 3))
    return float(spec.sum(axis=0).max())


def diagonal_block_norm(lam) -> float:
    """Block norm of a block-diagonal matrix of diagonal blocks: the max abs entry."""
    lam = np.asarray(lam, dtype=float)
    return float(np.max(np.abs(lam))) if lam.size else 0.0


def g_a_inverse_norm(splitting: Splitting) -> float:
    """``||G A^{-1}||`` in the block norm.

    Block ``(i, j)`` of ``G A^{-1}`` is ``g_ij A_j^{-1}`` with scalar ``g_ij``,
    so column ``j`` sums to ``(sum_i |g_ij|) ||A_j^{-1}||_2``.
    """
    inv_norms = 1.0 / np.linalg.eigvalsh(splitting.a_blocks)[:, 0]
    return float(np.max(splitting.g_column_sums() * inv_norms))


def tilde_constants(alpha, mu, L, w_min) -> tuple:
    """``(mu~, L~) = (alpha mu, alpha L + 2 (1 - w_min))``, the constants of Phi."""
    return alpha * mu, alpha * L + 2.0 * (1.0 - w_min)
