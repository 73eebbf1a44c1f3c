"""Block minimisers for the dictionary, LC matrix and classifier."""
import numpy as np
from scipy import linalg

from .errors import ConfigError, DimensionError, NumericalError
from .model import as_finite, grad_smooth_D, lipschitz_D

DEAD_ATOM_NORM = 1e-12


def _ridge_right_solve(R, G, ridge):
    """Return ``R (G G^T + ridge I)^{-1}`` via a Cholesky factorisation."""
    K = G.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        S = G @ G.T
        R = np.asarray(R, dtype=np.float64)
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(R))):
        raise NumericalError("ridge system overflowed (cond=inf)")
    S[np.diag_indices(K)] += ridge
    try:
        c = linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(S)
        raise NumericalError(f"ridge system is not positive definite (cond={cond:.3e})") from exc
    X = linalg.cho_solve(c, R.T, check_finite=False).T
    if not np.all(np.isfinite(X)):
        raise NumericalError(f"ridge solve produced non-finite values (cond={np.linalg.cond(S):.3e})")
    return X


def normalize_columns(D, rng=None, seed=0):
    """Project onto unit-norm columns; dead columns get a seeded random atom."""
    D = np.array(D, dtype=np.float64)
    norms = np.linalg.norm(D, axis=0)
    dead = norms < DEAD_ATOM_NORM
    if np.any(dead):
        rng = rng if rng is not None else np.random.default_rng(seed)
        fresh = rng.standard_normal((D.shape[0], int(dead.sum())))
        D[:, dead] = fresh / np.linalg.norm(fresh, axis=0)
        norms[dead] = 1.0
    norms[dead] = 1.0
    D[:, ~dead] /= norms[~dead]
    return D


def update_dictionary_closed(Y, G, eps_D, rng=None, return_raw=False):
    """Ridge least-squares dictionary ``Y G^T (G G^T + eps_D I)^{-1}``, then unit columns."""
    if not eps_D > 0:
        raise ConfigError("eps_D must be > 0")
    Y = as_finite(Y, "Y")
    G = as_finite(G, "G")
    if Y.shape[1] != G.shape[1]:
        raise DimensionError(f"Y has {Y.shape[1]} samples, G has {G.shape[1]}")
    raw = _ridge_right_solve(Y @ G.T, G, eps_D)
    D = normalize_columns(raw, rng=rng)
    return (D, raw) if return_raw else D


def update_dictionary_pgd(D, Y, G, eps_D, c_D=None, rng=None):
    """One projected gradient step with step ``1/c_D`` (default ``c_D = L_D``)."""
    D = as_finite(D, "D")
    Y = as_finite(Y, "Y")
    G = as_finite(G, "G")
    if D.shape != (Y.shape[0], G.shape[0]) or Y.shape[1] != G.shape[1]:
        raise DimensionError("D, Y, G shapes are inconsistent")
    if c_D is None:
        c_D = lipschitz_D(G, eps_D)
    U = D - grad_smooth_D(Y, D, G, eps_D) / c_D
    return normalize_columns(U, rng=rng)


def _ridge_block(target, G, weight, ridge, name):
    G = as_finite(G, "G")
    target = as_finite(target, name)
    if target.shape[1] != G.shape[1]:
        raise DimensionError(f"{name} has {target.shape[1]} columns, G has {G.shape[1]}")
    if not ridge > 0:
        raise ConfigError("ridge weight must be > 0")
    if weight < 0:
        raise ConfigError("supervision weight must be >= 0")
    if weight == 0:
        # limit of the closed form as the ridge ratio grows without bound
        return np.zeros((target.shape[0], G.shape[0]))
    with np.errstate(over="ignore", invalid="ignore"):
        R = target @ G.T
    return _ridge_right_solve(R, G, ridge / weight)


def update_lc_matrix(G, Q, alpha, mu_A):
    """``A = Q G^T (G G^T + (mu_A/alpha) I)^{-1}``."""
    return _ridge_block(Q, G, alpha, mu_A, "Q")


def update_classifier(G, H, beta, rho_W):
    """``W = H G^T (G G^T + (rho_W/beta) I)^{-1}``."""
    return _ridge_block(H, G, beta, rho_W, "H")


def ridge_block_objective(M, G, target, weight, ridge):
    return float(0.5 * weight * np.sum((M @ G - target) ** 2) + 0.5 * ridge * np.sum(M ** 2))


def ridge_block_gradient(M, G, target, weight, ridge):
    return weight * (M @ G - target) @ G.T + ridge * M
