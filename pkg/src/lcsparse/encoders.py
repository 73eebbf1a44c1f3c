"""Sparse encoders: strict Top-K LISTA and the FISTA elastic-net solver."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, ConvergenceWarning, DimensionError
from .model import (
    EncoderKind,
    as_finite,
    gram_norm,
    grad_smooth_G,
    lipschitz_G,
    smooth_G,
)


@dataclass(frozen=True)
class FistaConfig:
    max_iters: int = 2000
    rel_tol: float = 1e-8
    step_rule: str = "fixed_inv_lipschitz"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be > 0")
        if self.step_rule != "fixed_inv_lipschitz":
            raise ConfigError(f"unknown step rule {self.step_rule!r}")


@dataclass
class ListaTrace:
    pre_activations: list
    masks: list
    Y: np.ndarray

    @property
    def n_layers(self):
        return len(self.masks)


def topk_shrink(v, T):
    """Keep the ``T`` largest-magnitude entries of ``v`` (per column for 2-D input).

    Ties go to the lower index. Exact zeros never use up the budget.
    """
    v = np.asarray(v, dtype=np.float64)
    K = v.shape[0]
    if not 1 <= T <= K:
        raise ConfigError(f"T must satisfy 1 <= T <= {K}, got {T}")
    V = v.reshape(K, -1)
    out = np.where(_kernels.topk_mask(V, T), V, 0.0)
    return out.reshape(v.shape)


def init_b_stack(D, n_layers):
    """Classical LISTA initialisation ``B = D^T / ||D^T D||_2`` for every layer."""
    L = gram_norm(D)
    B = D.T / (L if L > 0 else 1.0)
    return [B.copy() for _ in range(n_layers)]


def lista_forward(Y, state):
    """Unrolled strict Top-K iterations starting from ``G = 0``.

    Layer ``t`` computes ``Z = G + B_t (Y - D G)`` and keeps the top ``T``
    entries of each column.
    """
    if state.encoder_kind is not EncoderKind.TOPK_LISTA:
        raise ConfigError("lista_forward needs a Top-K LISTA state")
    Y = as_finite(Y, "Y")
    D, T = state.D, state.hp.T
    if Y.shape[0] != D.shape[0]:
        raise DimensionError(f"Y has {Y.shape[0]} rows, dictionary has {D.shape[0]}")
    K, N = D.shape[1], Y.shape[1]
    G = np.zeros((K, N))
    pre, masks = [], []
    for B in state.B_stack:
        Z = G + B @ (Y - D @ G)
        M = _kernels.topk_mask(Z, T)
        G = np.where(M, Z, 0.0)
        pre.append(Z)
        masks.append(M)
    return G, ListaTrace(pre_activations=pre, masks=masks, Y=Y)


def lista_backward(trace, state, upstream_grad):
    """Gradients w.r.t. each ``B_t`` with the forward supports held fixed."""
    D = state.D
    if trace.n_layers != len(state.B_stack):
        raise DimensionError("trace depth does not match the state's feedback stack")
    U = np.asarray(upstream_grad, dtype=np.float64)
    if U.shape != trace.masks[-1].shape:
        raise DimensionError(f"upstream gradient must be {trace.masks[-1].shape}, got {U.shape}")
    Y = trace.Y
    K = D.shape[1]
    grads = [None] * trace.n_layers
    for t in range(trace.n_layers - 1, -1, -1):
        B = state.B_stack[t]
        dZ = np.where(trace.masks[t], U, 0.0)
        if t == 0:
            G_in = np.zeros((K, Y.shape[1]))
        else:
            G_in = np.where(trace.masks[t - 1], trace.pre_activations[t - 1], 0.0)
        R = Y - D @ G_in
        grads[t] = dZ @ R.T
        U = dZ - D.T @ (B.T @ dZ)
    return grads


def elastic_net_objective(Y, D, G, lam, mu_G):
    return float(0.5 * np.sum((Y - D @ G) ** 2) + 0.5 * mu_G * np.sum(G ** 2) + lam * np.sum(np.abs(G)))


def kkt_violation(Y, D, G, lam, mu_G):
    """Largest violation of the elastic-net subgradient optimality conditions."""
    grad = D.T @ (D @ G - Y) + mu_G * G
    nz = G != 0
    on_support = np.abs(grad + lam * np.sign(G))[nz]
    off_support = np.maximum(np.abs(grad) - lam, 0.0)[~nz]
    worst = 0.0
    if on_support.size:
        worst = max(worst, float(on_support.max()))
    if off_support.size:
        worst = max(worst, float(off_support.max()))
    return worst


def kkt_tolerance(D, G, mu_G, rel_tol):
    """KKT residual accepted at convergence: ``rel_tol * L * ||G||_F``."""
    L = gram_norm(D) + mu_G
    return rel_tol * L * max(float(np.linalg.norm(G)), np.finfo(float).tiny)


def fista_lasso(Y, D, lam, mu_G, cfg=None, G0=None, return_info=False):
    """Solve ``min_G 1/2||Y - DG||^2 + mu_G/2 ||G||^2 + lam ||G||_1``.

    Accelerated proximal gradient with step ``1/(||D^T D||_2 + mu_G)`` and a
    function-value restart of the momentum. Stops once the relative iterate
    change is below ``cfg.rel_tol`` and the KKT residual is within
    ``kkt_tolerance``.
    """
    cfg = cfg or FistaConfig()
    Y = as_finite(Y, "Y")
    D = as_finite(D, "D")
    if lam < 0 or not mu_G > 0:
        raise ConfigError("fista_lasso needs lam >= 0 and mu_G > 0")
    if Y.shape[0] != D.shape[0]:
        raise DimensionError(f"Y has {Y.shape[0]} rows, dictionary has {D.shape[0]}")
    K, N = D.shape[1], Y.shape[1]
    DtD = D.T @ D
    DtY = D.T @ Y
    L = gram_norm(D) + mu_G
    step = 1.0 / L

    G = np.zeros((K, N)) if G0 is None else np.array(G0, dtype=np.float64)
    X = G.copy()
    t = 1.0
    f_prev = elastic_net_objective(Y, D, G, lam, mu_G)
    history = [f_prev]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad = DtD @ X - DtY + mu_G * X
        G_new = _kernels.soft_threshold(X - step * grad, step * lam)
        f_new = elastic_net_objective(Y, D, G_new, lam, mu_G)
        if f_new > f_prev:
            # restart from the last accepted iterate with a plain proximal step
            t = 1.0
            grad = DtD @ G - DtY + mu_G * G
            G_new = _kernels.soft_threshold(G - step * grad, step * lam)
            f_new = elastic_net_objective(Y, D, G_new, lam, mu_G)
            X = G_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            X = G_new + ((t - 1.0) / t_new) * (G_new - G)
            t = t_new
        change = np.linalg.norm(G_new - G)
        scale = max(np.linalg.norm(G_new), np.finfo(float).tiny)
        G, f_prev = G_new, f_new
        history.append(f_new)
        if (change <= cfg.rel_tol * scale or change == 0.0) and (
            kkt_violation(Y, D, G, lam, mu_G) <= kkt_tolerance(D, G, mu_G, cfg.rel_tol)
        ):
            converged = True
            break
    if not converged:
        warnings.warn(f"fista_lasso hit max_iters={cfg.max_iters} before rel_tol", ConvergenceWarning, stacklevel=2)
    if return_info:
        return G, {"n_iter": it, "converged": converged, "objective": history}
    return G


def prox_grad_G_supervised(Y, state, targets, G_init, step, alpha=None, beta=None, check_step=True):
    """One proximal-gradient step on the supervised convex G-block objective."""
    hp = state.hp
    alpha = hp.alpha if alpha is None else alpha
    beta = hp.beta if beta is None else beta
    L = lipschitz_G(state.D, state.A, state.W, hp, alpha, beta)
    if check_step and not step * L < 1.0:
        raise ConfigError(f"step {step:g} must be < 1/L_G = {1.0 / L:g}")
    G = np.asarray(G_init, dtype=np.float64)
    grad = grad_smooth_G(Y, state.D, G, state.A, state.W, targets, alpha, beta, hp.mu_G)
    return _kernels.soft_threshold(G - step * grad, step * hp.lam)


def supervised_G_objective(Y, state, G, targets, alpha=None, beta=None):
    hp = state.hp
    alpha = hp.alpha if alpha is None else alpha
    beta = hp.beta if beta is None else beta
    return smooth_G(Y, state.D, G, state.A, state.W, targets, alpha, beta, hp.mu_G) + hp.lam * float(np.sum(np.abs(G)))
