"""Domain types, objectives, smooth-part gradients and Lipschitz constants.

Matrices are column-major in meaning: one sample per column of ``Y`` and
``G``, one atom per column of ``D``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NonFiniteError

UNIT_NORM_TOL = 1e-8


class EncoderKind(enum.Enum):
    TOPK_LISTA = "topk"
    FISTA_LASSO = "fista"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown encoder {value!r}; expected 'topk' or 'fista'") from None


@dataclass(frozen=True)
class HyperParams:
    """Objective weights, sparsity budget and schedule lengths.

    ``alpha`` and ``beta`` are the maximal supervision weights reached after
    the ramp. They may be zero, which turns training into extended warm-up.
    All ridge/regularisation weights must be strictly positive.
    """

    K: int = 30
    T: int = 3
    alpha: float = 1.0
    beta: float = 1.0
    mu_A: float = 1.0
    rho_W: float = 1.0
    eps_D: float = 1e-2
    mu_G: float = 1e-1
    lam: float = 1e-2
    n_layers: int = 10
    warmup_iters: int = 2
    ramp_iters: int = 3
    max_outer: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("mu_A", "rho_W", "eps_D", "mu_G", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be strictly positive, got {v}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be a nonnegative weight, got {v}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not 1 <= self.T <= self.K:
            raise ConfigError(f"T must satisfy 1 <= T <= K={self.K}, got {self.T}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.warmup_iters < 0 or self.ramp_iters < 1 or self.max_outer < 1:
            raise ConfigError("warmup_iters >= 0, ramp_iters >= 1 and max_outer >= 1 required")
        if self.warmup_iters + self.ramp_iters > self.max_outer:
            raise ConfigError(
                f"warmup_iters + ramp_iters = {self.warmup_iters + self.ramp_iters} "
                f"exceeds max_outer = {self.max_outer}"
            )

    def replace(self, **changes):
        return replace(self, **changes)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class SupervisionTargets:
    Q: np.ndarray
    H: np.ndarray
    labels: np.ndarray

    @property
    def n_classes(self):
        return self.H.shape[0]


@dataclass
class ModelState:
    D: np.ndarray
    A: np.ndarray
    W: np.ndarray
    hp: HyperParams
    encoder_kind: EncoderKind
    B_stack: list | None = field(default=None)

    def __post_init__(self):
        d, K = self.D.shape
        if K != self.hp.K:
            raise DimensionError(f"D has {K} atoms but hp.K = {self.hp.K}")
        if self.A.shape != (K, K):
            raise DimensionError(f"A must be {K}x{K}, got {self.A.shape}")
        if self.W.ndim != 2 or self.W.shape[1] != K:
            raise DimensionError(f"W must be Cx{K}, got {self.W.shape}")
        if self.encoder_kind is EncoderKind.TOPK_LISTA:
            if self.B_stack is None or len(self.B_stack) != self.hp.n_layers:
                raise DimensionError("Top-K LISTA state needs n_layers feedback matrices")
            for B in self.B_stack:
                if B.shape != (K, d):
                    raise DimensionError(f"each B must be {K}x{d}, got {B.shape}")
        elif self.B_stack is not None:
            raise DimensionError("FISTA state must not carry feedback matrices")

    @property
    def d(self):
        return self.D.shape[0]

    @property
    def K(self):
        return self.D.shape[1]

    @property
    def n_classes(self):
        return self.W.shape[0]

    def copy(self):
        return ModelState(
            D=self.D.copy(),
            A=self.A.copy(),
            W=self.W.copy(),
            hp=self.hp,
            encoder_kind=self.encoder_kind,
            B_stack=None if self.B_stack is None else [B.copy() for B in self.B_stack],
        )


def as_finite(X, name="array", ndim=2):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return X


def build_targets(labels, K, C):
    """Label-consistency targets ``Q`` (K x N) and one-hot labels ``H`` (C x N).

    Class ``c`` owns the contiguous atom rows ``[c*K/C, (c+1)*K/C)``.
    """
    if C < 1 or K % C != 0:
        raise ConfigError(f"K={K} must be divisible by the number of classes C={C}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DataError("labels must be a non-empty 1-D integer vector")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= C:
        raise DataError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.int64)
    N = labels.size
    per = K // C
    H = np.zeros((C, N))
    H[labels, np.arange(N)] = 1.0
    block = np.zeros((K, C))
    for c in range(C):
        block[c * per:(c + 1) * per, c] = 1.0
    Q = block @ H
    return SupervisionTargets(Q=Q, H=H, labels=labels)


def _check_shapes(Y, D, G, A, W, targets):
    d, N = Y.shape
    if D.shape[0] != d:
        raise DimensionError(f"D has {D.shape[0]} rows, Y has {d}")
    K = D.shape[1]
    if G.shape != (K, N):
        raise DimensionError(f"G must be {K}x{N}, got {G.shape}")
    if A.shape != (K, K):
        raise DimensionError(f"A must be {K}x{K}, got {A.shape}")
    if targets.Q.shape != (K, N):
        raise DimensionError(f"Q must be {K}x{N}, got {targets.Q.shape}")
    if targets.H.shape[1] != N or W.shape != (targets.H.shape[0], K):
        raise DimensionError("W / H shapes are inconsistent")


def _weights(hp, alpha, beta):
    return (hp.alpha if alpha is None else alpha), (hp.beta if beta is None else beta)


def objective_topk(state, Y, G, targets, alpha=None, beta=None):
    """Reconstruction + label-consistency + classification + ridge terms.

    ``alpha``/``beta`` override the state's maximal weights (ramped training).
    """
    Y = as_finite(Y, "Y")
    G = as_finite(G, "G")
    D, A, W, hp = state.D, state.A, state.W, state.hp
    _check_shapes(Y, D, G, A, W, targets)
    alpha, beta = _weights(hp, alpha, beta)
    f = 0.5 * np.sum((Y - D @ G) ** 2)
    f += 0.5 * alpha * np.sum((A @ G - targets.Q) ** 2)
    f += 0.5 * beta * np.sum((W @ G - targets.H) ** 2)
    f += 0.5 * hp.eps_D * np.sum(D ** 2)
    f += 0.5 * hp.mu_A * np.sum(A ** 2)
    f += 0.5 * hp.rho_W * np.sum(W ** 2)
    return float(f)


def is_feasible(D, tol=UNIT_NORM_TOL):
    return bool(np.all(np.abs(np.linalg.norm(D, axis=0) - 1.0) <= tol))


def objective_convex(state, Y, G, targets, alpha=None, beta=None):
    """Top-K objective plus elastic-net terms on G and the unit-column indicator."""
    if not np.all(np.isfinite(state.D)) or not np.all(np.isfinite(state.A)) or not np.all(np.isfinite(state.W)):
        raise NonFiniteError("model matrices contain non-finite entries")
    f = objective_topk(state, Y, G, targets, alpha, beta)
    if not is_feasible(state.D):
        return float("inf")
    G = np.asarray(G, dtype=np.float64)
    hp = state.hp
    return float(f + 0.5 * hp.mu_G * np.sum(G ** 2) + hp.lam * np.sum(np.abs(G)))


def smooth_G(Y, D, G, A, W, targets, alpha, beta, mu_G):
    """Smooth part of the G-block objective."""
    return float(
        0.5 * np.sum((Y - D @ G) ** 2)
        + 0.5 * alpha * np.sum((A @ G - targets.Q) ** 2)
        + 0.5 * beta * np.sum((W @ G - targets.H) ** 2)
        + 0.5 * mu_G * np.sum(G ** 2)
    )


def grad_smooth_G(Y, D, G, A, W, targets, alpha, beta, mu_G):
    return (
        -D.T @ (Y - D @ G)
        + alpha * (A.T @ (A @ G - targets.Q))
        + beta * (W.T @ (W @ G - targets.H))
        + mu_G * G
    )


def smooth_D(Y, D, G, eps_D):
    return float(0.5 * np.sum((Y - D @ G) ** 2) + 0.5 * eps_D * np.sum(D ** 2))


def grad_smooth_D(Y, D, G, eps_D):
    return (D @ G - Y) @ G.T + eps_D * D


def gram_norm(M):
    """``||M^T M||_2``, the squared largest singular value of ``M``."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    small = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    return float(max(np.linalg.eigvalsh(small)[-1], 0.0))


def lipschitz_G(D, A, W, hp, alpha=None, beta=None):
    """Lipschitz constant of the gradient of the smooth G-block objective."""
    alpha, beta = _weights(hp, alpha, beta)
    for name, M in (("D", D), ("A", A), ("W", W)):
        if not np.all(np.isfinite(M)):
            raise NonFiniteError(f"{name} contains non-finite entries")
    if D.shape[1] != A.shape[0] or A.shape[0] != A.shape[1] or W.shape[1] != D.shape[1]:
        raise DimensionError("D, A, W shapes are inconsistent")
    return gram_norm(D) + alpha * gram_norm(A) + beta * gram_norm(W) + hp.mu_G


def lipschitz_D(G, eps_D):
    """Lipschitz constant ``||G||_2^2 + eps_D`` of the dictionary-block gradient."""
    G = as_finite(G, "G")
    return gram_norm(G) + eps_D
