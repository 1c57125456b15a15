"""Per-node local costs with value, gradient and Hessian oracles.

Both problem classes expose a per-node oracle ``oracle(i, x)`` and batched
versions (``values``, ``gradients``, ``hessians``) that evaluate every node
at once on an ``(n, p)`` array whose row ``i`` is node ``i``'s point. The
solvers use the batched forms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from distqn import _rng
from distqn.errors import DimensionError

PROBLEM_FORMAT = "distqn.problem/1"


class LocalCostModel:
    """Interface shared by the concrete problems.

    Subclasses define ``n``, ``p`` and the batched oracles; ``mu`` and
    ``lipschitz`` are the global strong convexity and gradient Lipschitz
    constants, valid for every node and every point.
    """

    kind = "abstract"
    n: int
    p: int

    def _check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise DimensionError(f"expected a point of dimension {self.p}, got shape {x.shape}")
        return x

    def _check_stack(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n, self.p):
            raise DimensionError(f"expected an ({self.n}, {self.p}) array, got {X.shape}")
        return X

    def oracle(self, i: int, x):
        """``(value, gradient, hessian)`` of ``f_i`` at ``x``."""
        raise NotImplementedError

    def values(self, X) -> np.ndarray:
        raise NotImplementedError

    def gradients(self, X) -> np.ndarray:
        raise NotImplementedError

    def hessians(self, X) -> np.ndarray:
        raise NotImplementedError

    def total(self, y):
        """``(f(y), grad f(y), hess f(y))`` for the aggregate ``f = sum_i f_i``."""
        Y = np.broadcast_to(self._check_point(y), (self.n, self.p))
        return self.values(Y).sum(), self.gradients(Y).sum(axis=0), self.hessians(Y).sum(axis=0)

    @property
    def mu(self) -> float:
        return convexity_constants(self)[0]

    @property
    def lipschitz(self) -> float:
        return convexity_constants(self)[1]


@dataclass(frozen=True, eq=False)
class QuadraticProblem(LocalCostModel):
    """``f_i(x) = 1/2 (x - a_i)^T B_i (x - a_i)``.

    ``spectra[i]`` holds the eigenvalues used to build ``B[i]``.
    """

    B: np.ndarray  # (n, p, p)
    a: np.ndarray  # (n, p)
    spectra: np.ndarray  # (n, p)

    kind = "quadratic"

    def __post_init__(self):
        for name in ("B", "a", "spectra"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n, p = self.a.shape
        if self.B.shape != (n, p, p) or self.spectra.shape != (n, p):
            raise DimensionError("inconsistent quadratic problem arrays")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    def oracle(self, i, x):
        x = self._check_point(x)
        r = x - self.a[i]
        g = self.B[i] @ r
        return 0.5 * float(r @ g), g, self.B[i].copy()

    def values(self, X):
        R = self._check_stack(X) - self.a
        return 0.5 * np.einsum("ip,ipq,iq->i", R, self.B, R)

    def gradients(self, X):
        R = self._check_stack(X) - self.a
        return np.einsum("ipq,iq->ip", self.B, R)

    def hessians(self, X):
        self._check_stack(X)
        return np.array(self.B)

    def to_dict(self) -> dict:
        return {
            "format": PROBLEM_FORMAT,
            "kind": self.kind,
            "n": self.n,
            "p": self.p,
            "B": [_hex(b) for b in self.B],
            "a": [_hex(v) for v in self.a],
            "spectra": [_hex(c) for c in self.spectra],
        }


@dataclass(frozen=True, eq=False)
class LogisticProblem(LocalCostModel):
    """Regularized logistic loss over ``J`` labelled samples per node.

    The decision vector is ``x = (x_1, x_0)`` with weights ``x_1`` of
    dimension ``p - 1`` and a scalar bias ``x_0`` last. Node ``i`` holds

        f_i(x) = sum_j log(1 + exp(-b_ij (x_1^T a_ij + x_0))) + (tau / n) ||x||^2
    """

    features: np.ndarray  # (n, J, p - 1)
    labels: np.ndarray  # (n, J), entries in {-1, +1}
    tau: float

    kind = "logistic"

    def __post_init__(self):
        feats = np.array(self.features, dtype=float)
        labels = np.array(self.labels, dtype=float)
        if feats.ndim != 3 or labels.shape != feats.shape[:2]:
            raise DimensionError("features must be (n, J, p-1) and labels (n, J)")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        # rows z_ij = b_ij * (a_ij, 1): the margin is z_ij^T x
        aug = np.concatenate([feats, np.ones(feats.shape[:2] + (1,))], axis=2)
        signed = labels[:, :, None] * aug
        for name, arr in (("features", feats), ("labels", labels), ("_signed", signed)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def J(self) -> int:
        return self.features.shape[1]

    @property
    def p(self) -> int:
        return self.features.shape[2] + 1

    @property
    def reg(self) -> float:
        """Per-node ridge coefficient ``tau / n``."""
        return self.tau / self.n

    def _margins(self, X):
        return np.einsum("ijp,ip->ij", self._signed, X)

    def oracle(self, i, x):
        x = self._check_point(x)
        Z = self._signed[i]
        m = Z @ x
        value = float(np.logaddexp(0.0, -m).sum() + self.reg * (x @ x))
        grad = -(expit(-m) @ Z) + 2.0 * self.reg * x
        curv = expit(m) * expit(-m)
        hess = (Z.T * curv) @ Z + 2.0 * self.reg * np.eye(self.p)
        return value, grad, hess

    def values(self, X):
        X = self._check_stack(X)
        m = self._margins(X)
        return np.logaddexp(0.0, -m).sum(axis=1) + self.reg * np.einsum("ip,ip->i", X, X)

    def gradients(self, X):
        X = self._check_stack(X)
        m = self._margins(X)
        return -np.einsum("ij,ijp->ip", expit(-m), self._signed) + 2.0 * self.reg * X

    def hessians(self, X):
        X = self._check_stack(X)
        m = self._margins(X)
        curv = expit(m) * expit(-m)
        H = np.einsum("ij,ijp,ijq->ipq", curv, self._signed, self._signed)
        H += 2.0 * self.reg * np.eye(self.p)
        return H

    def to_dict(self) -> dict:
        return {
            "format": PROBLEM_FORMAT,
            "kind": self.kind,
            "n": self.n,
            "p": self.p,
            "J": self.J,
            "tau": float(self.tau).hex(),
            "features": [[_hex(a) for a in node] for node in self.features],
            "labels": [[int(b) for b in node] for node in self.labels],
        }


def generate_quadratic(n: int, p: int, seed: int) -> QuadraticProblem:
    """Random strongly convex quadratics.

    ``B_i = Q diag(c_i) Q^T`` where ``Q`` holds the eigenvectors of the
    symmetric part of a standard normal matrix and ``c_i ~ U[1, 101]^p``;
    ``a_i ~ U[1, 11]^p``. Each node draws from its own stream.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    B = np.empty((n, p, p))
    a = np.empty((n, p))
    spectra = np.empty((n, p))
    for i in range(n):
        rng = _rng.node_stream(seed, _rng.QUADRATIC, i)
        raw = rng.standard_normal((p, p))
        _, Q = np.linalg.eigh(0.5 * (raw + raw.T))
        c = rng.uniform(1.0, 101.0, size=p)
        Bi = (Q * c) @ Q.T
        B[i] = 0.5 * (Bi + Bi.T)
        spectra[i] = c
        a[i] = rng.uniform(1.0, 11.0, size=p)
    return QuadraticProblem(B, a, spectra)


def generate_logistic(n, J, p, seed, tau, noise_sd=0.1) -> LogisticProblem:
    """Synthetic linear-classifier data.

    Features and the true vector ``(x1*, x0*)`` are standard normal; labels
    are ``sign(x1*^T a_ij + x0* + noise)`` with Gaussian noise of standard
    deviation ``noise_sd`` (``sign(0)`` is taken as ``+1``).
    """
    if n < 1 or J < 1:
        raise ValueError("n and J must be positive")
    if p < 2:
        raise ValueError("logistic problems need p >= 2 (weights plus bias)")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    truth = _rng.stream(seed, _rng.LOGISTIC).standard_normal(p)
    features = np.empty((n, J, p - 1))
    labels = np.empty((n, J))
    for i in range(n):
        rng = _rng.node_stream(seed, _rng.LOGISTIC, i)
        features[i] = rng.standard_normal((J, p - 1))
        noise = noise_sd * rng.standard_normal(J)
        labels[i] = assign_labels(features[i], truth, noise)
    return LogisticProblem(features, labels, tau)


def assign_labels(features, truth, noise) -> np.ndarray:
    """``sign(x1*^T a + x0* + noise)`` row-wise, with ``sign(0) = +1``."""
    score = np.asarray(features) @ truth[:-1] + truth[-1] + noise
    return np.where(score >= 0, 1.0, -1.0)


def convexity_constants(problem: LocalCostModel) -> tuple:
    """Global ``(mu, L)`` with ``mu I <= hess f_i(x) <= L I`` everywhere.

    Quadratics use the stored eigenvalue draws exactly. For the logistic
    loss each sample's curvature ``s(1 - s)`` is at most 1/4, so
    ``L = 2 tau / n + max_i sum_j ||(a_ij, 1)||^2 / 4`` and ``mu = 2 tau / n``.
    """
    if isinstance(problem, QuadraticProblem):
        return float(problem.spectra.min()), float(problem.spectra.max())
    if isinstance(problem, LogisticProblem):
        mu = 2.0 * problem.reg
        norms = np.einsum("ijp,ijp->i", problem._signed, problem._signed)
        return mu, mu + 0.25 * float(norms.max())
    raise TypeError(f"unsupported problem type {type(problem).__name__}")


# -- serialization ---------------------------------------------------------


def _hex(a) -> list:
    a = np.asarray(a)
    if a.ndim == 1:
        return [float(v).hex() for v in a]
    return [_hex(row) for row in a]


def _unhex(obj) -> np.ndarray:
    def conv(v):
        if isinstance(v, list):
            return [conv(u) for u in v]
        return float.fromhex(v) if isinstance(v, str) else float(v)

    return np.array(conv(obj), dtype=float)


def problem_to_dict(problem: LocalCostModel) -> dict:
    return problem.to_dict()


def problem_from_dict(doc: dict) -> LocalCostModel:
    kind = doc["kind"]
    if kind == "quadratic":
        return QuadraticProblem(_unhex(doc["B"]), _unhex(doc["a"]), _unhex(doc["spectra"]))
    if kind == "logistic":
        tau = doc["tau"]
        tau = float.fromhex(tau) if isinstance(tau, str) else float(tau)
        return LogisticProblem(_unhex(doc["features"]), np.array(doc["labels"], dtype=float), tau)
    raise ValueError(f"unknown problem kind {kind!r}")


def dump_problem(path, problem: LocalCostModel) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh)


def load_problem(path) -> LocalCostModel:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
