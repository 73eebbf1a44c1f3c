"""Independent reference implementations the package is checked against.

None of these reuse package code paths: spectral norms come from power
iteration, ridge solves from an augmented least-squares problem, the
elastic net from cyclic coordinate descent, objectives from explicit loops.
"""
import numpy as np


def power_iteration_sq(M, iters=5000, tol=1e-14, seed=0):
    """Largest eigenvalue of ``M^T M`` (that is ``||M||_2^2``) by power iteration."""
    M = np.asarray(M, dtype=np.float64)
    if not np.any(M):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * nw:
            return float(nw)
        lam = nw
    return float(lam)


def ridge_lstsq(target, G, weight, ridge):
    """argmin_M weight/2 ||M G - target||^2 + ridge/2 ||M||^2 via an augmented lstsq."""
    K = G.shape[0]
    lhs = np.vstack([np.sqrt(weight) * G.T, np.sqrt(ridge) * np.eye(K)])
    rhs = np.vstack([np.sqrt(weight) * target.T, np.zeros((K, target.shape[0]))])
    return np.linalg.lstsq(lhs, rhs, rcond=None)[0].T


def elastic_net_cd(Y, D, lam, mu, tol=1e-13, max_sweeps=200000):
    """Cyclic coordinate descent, vectorised across columns."""
    K = D.shape[1]
    G = np.zeros((K, Y.shape[1]))
    R = Y.copy()
    sq = np.sum(D * D, axis=0)
    for _ in range(max_sweeps):
        biggest = 0.0
        for k in range(K):
            old = G[k].copy()
            rho = D[:, k] @ R + sq[k] * old
            new = np.sign(rho) * np.maximum(np.abs(rho) - lam, 0.0) / (sq[k] + mu)
            diff = new - old
            if np.any(diff):
                R -= np.outer(D[:, k], diff)
                G[k] = new
                biggest = max(biggest, float(np.max(np.abs(diff))))
        if biggest < tol:
            break
    return G


def frob_sq(M):
    total = 0.0
    for row in np.atleast_2d(M):
        for v in row:
            total += float(v) * float(v)
    return total


def naive_objective(Y, D, G, A, W, Q, H, alpha, beta, eps_D, mu_A, rho_W):
    return (
        0.5 * frob_sq(Y - D @ G)
        + 0.5 * alpha * frob_sq(A @ G - Q)
        + 0.5 * beta * frob_sq(W @ G - H)
        + 0.5 * eps_D * frob_sq(D)
        + 0.5 * mu_A * frob_sq(A)
        + 0.5 * rho_W * frob_sq(W)
    )


def naive_l1(G):
    return sum(abs(float(v)) for v in np.ravel(G))


def fd_directional(f, x, v, h=1e-5):
    return (f(x + h * v) - f(x - h * v)) / (2 * h)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def unit_columns(M):
    return M / np.linalg.norm(M, axis=0)
