"""Runtime checks of the block-alternating convergence conditions.

For every block update of the supervised convex pipeline the certificate
records a sufficient-decrease check (objective drop against ``a*||delta||^2``),
a relative-error check (an explicit subgradient witness bounded by
``(L + c)*||delta||``) and the boundedness margins of G, A, W and D.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoders import fista_lasso, prox_grad_G_supervised
from .model import (
    EncoderKind,
    ModelState,
    build_targets,
    grad_smooth_D,
    grad_smooth_G,
    gram_norm,
    lipschitz_D,
    lipschitz_G,
    objective_convex,
    smooth_D,
    smooth_G,
)
from .errors import NumericalError
from .updates import (
    ridge_block_gradient,
    update_classifier,
    update_dictionary_pgd,
    update_lc_matrix,
)

GRACE = 1e-10
TELESCOPE_RTOL = 1e-9


def check_h1(f_before, f_after, delta_norm, min_a):
    """Sufficient decrease: ``f_before - f_after >= min_a * delta_norm**2`` up to grace.

    Returns ``(passed, measured_a)``; ``measured_a`` is None at a fixed point.
    """
    if delta_norm < 0:
        raise ValueError("delta_norm must be nonnegative")
    drop = f_before - f_after
    passed = drop >= min_a * delta_norm ** 2 - GRACE
    measured = drop / delta_norm ** 2 if delta_norm > 0 else None
    return bool(passed), measured


def h2_witness_G(Y, G_prev, G_next, D, A, W, targets, hp, c_G, alpha=None, beta=None):
    """Subgradient witness of the G-block objective after one prox step.

    ``W_G = grad H(G_next) - grad H(G_prev) - c_G * (G_next - G_prev)`` lies in
    the subdifferential at ``G_next``; its norm must stay below
    ``(L_G + c_G) * ||G_next - G_prev||``.
    """
    alpha = hp.alpha if alpha is None else alpha
    beta = hp.beta if beta is None else beta
    g_prev = grad_smooth_G(Y, D, G_prev, A, W, targets, alpha, beta, hp.mu_G)
    g_next = grad_smooth_G(Y, D, G_next, A, W, targets, alpha, beta, hp.mu_G)
    delta = G_next - G_prev
    witness = g_next - g_prev - c_G * delta
    L = lipschitz_G(D, A, W, hp, alpha, beta)
    dn = float(np.linalg.norm(delta))
    wn = float(np.linalg.norm(witness))
    bound = (L + c_G) * dn

    # S = -grad H(G_prev) - c_G * delta must be a subgradient of lam*||.||_1 at G_next
    S = -g_prev - c_G * delta
    tol = 1e-9 * (1.0 + hp.lam + float(np.max(np.abs(S), initial=0.0)))
    nz = G_next != 0
    member_on = np.all(np.abs(S[nz] - hp.lam * np.sign(G_next[nz])) <= tol)
    member_off = np.all(np.abs(S[~nz]) <= hp.lam + tol)
    return {
        "witness_norm": wn,
        "bound": bound,
        "passed": bool(wn <= bound + GRACE),
        "membership": bool(member_on and member_off),
    }


def h2_witness_D(Y, G, D_prev, D_next, eps_D, c_D):
    """Normal-cone witness of the dictionary block after one projected step."""
    g_prev = grad_smooth_D(Y, D_prev, G, eps_D)
    g_next = grad_smooth_D(Y, D_next, G, eps_D)
    delta = D_next - D_prev
    witness = g_next - g_prev - c_D * delta
    L = lipschitz_D(G, eps_D)
    dn = float(np.linalg.norm(delta))
    wn = float(np.linalg.norm(witness))
    bound = (L + c_D) * dn
    # v = -grad H_D(D_prev) - c_D * delta must be normal to each sphere at D_next
    v = -g_prev - c_D * delta
    radial = np.sum(v * D_next, axis=0)
    tangential = v - D_next * radial
    tol = 1e-9 * (1.0 + float(np.max(np.abs(v), initial=0.0)))
    return {
        "witness_norm": wn,
        "bound": bound,
        "passed": bool(wn <= bound + GRACE),
        "membership": bool(np.all(np.abs(tangential) <= tol)),
    }


def h2_witness_closed_form(M_next, G, target, weight, ridge):
    """Closed-form ridge blocks are exact minimisers, so the witness is zero.

    The stationarity residual ``||grad f(M_next)||`` is returned separately as
    a numerical sanity check.
    """
    grad = ridge_block_gradient(M_next, G, target, weight, ridge)
    scale = weight * float(np.linalg.norm(target @ G.T)) + ridge * float(np.linalg.norm(M_next)) + 1.0
    residual = float(np.linalg.norm(grad))
    return {
        "witness_norm": 0.0,
        "bound": 0.0,
        "passed": True,
        "membership": bool(residual <= 1e-8 * scale),
        "stationarity_residual": residual,
    }


def check_bounds(state, G, Y, targets, hp=None, alpha=None, beta=None):
    """Boundedness margins (bound minus value; nonnegative means the bound holds)."""
    hp = hp or state.hp
    alpha = hp.alpha if alpha is None else alpha
    beta = hp.beta if beta is None else beta
    Q, H = targets.Q, targets.H
    g_sq = float(np.sum(G ** 2))
    g_bound = (float(np.sum(Y ** 2)) + alpha * float(np.sum(Q ** 2)) + beta * float(np.sum(H ** 2))) / hp.mu_G
    g_spec = np.sqrt(gram_norm(G))
    a_bound = alpha / hp.mu_A * float(np.linalg.norm(Q)) * g_spec
    w_bound = beta / hp.rho_W * float(np.linalg.norm(H)) * g_spec
    col_dev = float(np.max(np.abs(np.linalg.norm(state.D, axis=0) - 1.0), initial=0.0))
    margins = {
        "G": g_bound - g_sq,
        "A": a_bound - float(np.linalg.norm(state.A)),
        "W": w_bound - float(np.linalg.norm(state.W)),
        "D": 1e-8 - col_dev,
    }
    rel = {
        "G": GRACE * (1.0 + g_bound),
        "A": GRACE * (1.0 + a_bound),
        "W": GRACE * (1.0 + w_bound),
        "D": 0.0,
    }
    passed = all(margins[k] >= -rel[k] for k in margins)
    return passed, margins


def gradient_audit(Y, state, G, targets, block="G", probes=10, tol=1e-5, seed=0, alpha=None, beta=None, h=1e-4):
    """Central finite differences along random unit directions vs the analytic gradient.

    The error of each probe is measured relative to ``||grad||_F``, which
    bounds every directional derivative. Returns ``(passed, worst_rel_err)``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    hp = state.hp
    alpha = hp.alpha if alpha is None else alpha
    beta = hp.beta if beta is None else beta
    rng = np.random.default_rng(seed)
    if block == "G":
        x0 = G
        grad = grad_smooth_G(Y, state.D, G, state.A, state.W, targets, alpha, beta, hp.mu_G)

        def f(x):
            return smooth_G(Y, state.D, x, state.A, state.W, targets, alpha, beta, hp.mu_G)
    elif block == "D":
        x0 = state.D
        grad = grad_smooth_D(Y, state.D, G, hp.eps_D)

        def f(x):
            return smooth_D(Y, x, G, hp.eps_D)
    else:
        raise ValueError(f"unknown block {block!r}")
    scale = max(float(np.linalg.norm(grad)), 1e-12)
    worst = 0.0
    for _ in range(probes):
        v = rng.standard_normal(x0.shape)
        v /= np.linalg.norm(v)
        fd = (f(x0 + h * v) - f(x0 - h * v)) / (2 * h)
        an = float(np.sum(grad * v))
        worst = max(worst, abs(fd - an) / scale)
    return worst <= tol, worst


@dataclass
class PalmCertificate:
    iterations: list = field(default_factory=list)
    premise_ok: bool = True
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.premise_ok and bool(self.iterations) and all(it["passed"] for it in self.iterations)

    def failures(self):
        out = []
        for it in self.iterations:
            for name, blk in it["blocks"].items():
                for key in ("h1", "h2", "membership"):
                    if not blk[key]:
                        out.append((it["t"], name, key))
            if not it["bounds_ok"]:
                out.append((it["t"], "bounds", "margin"))
            if not it["telescope_ok"]:
                out.append((it["t"], "sweep", "telescope"))
        return out

    def to_dict(self):
        return {"passed": self.passed, "premise_ok": self.premise_ok, "notes": self.notes, "iterations": self.iterations}

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), indent=1, sort_keys=True) + "\n"

    def to_text(self):
        lines = [
            f"certificate\t{'PASS' if self.passed else 'FAIL'}",
            f"premise\t{'ok' if self.premise_ok else 'violated'}",
        ]
        lines += [f"note\t{n}" for n in self.notes]
        lines.append("t\tobjective\tdelta\tmin_a_G\tmin_a_D\ta_A\ta_W\th2_G_slack\th2_D_slack\tbounds\ttelescope\tpass")
        for it in self.iterations:
            b = it["blocks"]

            def fmt(x):
                return "-" if x is None else f"{x:.6e}"
            lines.append("\t".join([
                str(it["t"]),
                f"{it['objective_after']:.12e}",
                f"{it['delta_norm']:.6e}",
                fmt(b["G"]["a_min_measured"]),
                fmt(b["D"]["a_min_measured"]),
                fmt(b["A"]["a_min_measured"]),
                fmt(b["W"]["a_min_measured"]),
                fmt(b["G"]["h2_min_slack"]),
                fmt(b["D"]["h2_min_slack"]),
                "ok" if it["bounds_ok"] else "FAIL",
                f"{it['telescope_err']:.3e}",
                "ok" if it["passed"] else "FAIL",
            ]))
        return "\n".join(lines) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# Block objectives are quadratic (plus an l1 term for G), so each drop is
# evaluated from its exact expansion f(x) - f(x+d) = -<grad f(x), d> - q(d)/2
# rather than as a difference of two large, nearly equal objective values.

def g_block_drop(Y, state, G, G_new, targets, alpha, beta):
    hp = state.hp
    delta = G_new - G
    grad = grad_smooth_G(Y, state.D, G, state.A, state.W, targets, alpha, beta, hp.mu_G)
    curv = (
        float(np.sum((state.D @ delta) ** 2))
        + alpha * float(np.sum((state.A @ delta) ** 2))
        + beta * float(np.sum((state.W @ delta) ** 2))
        + hp.mu_G * float(np.sum(delta ** 2))
    )
    l1 = hp.lam * float(np.sum(np.abs(G_new) - np.abs(G)))
    return -(float(np.sum(grad * delta)) + 0.5 * curv + l1)


def d_block_drop(Y, G, D, D_new, eps_D):
    delta = D_new - D
    curv = float(np.sum((delta @ G) ** 2)) + eps_D * float(np.sum(delta ** 2))
    return -(float(np.sum(grad_smooth_D(Y, D, G, eps_D) * delta)) + 0.5 * curv)


def ridge_block_drop(M, M_new, G, target, weight, ridge):
    delta = M_new - M
    curv = weight * float(np.sum((delta @ G) ** 2)) + ridge * float(np.sum(delta ** 2))
    return -(float(np.sum(ridge_block_gradient(M, G, target, weight, ridge) * delta)) + 0.5 * curv)


class _BlockLog:
    # a negative theoretical constant still demands monotone decrease
    def __init__(self, min_a):
        self.min_a = max(min_a, 0.0)
        self.decrease = 0.0
        self.h1 = True
        self.h2 = True
        self.membership = True
        self.a_min_measured = None
        self.h2_min_slack = None
        self.steps = 0

    def add(self, drop, delta_norm, h2=None):
        self.steps += 1
        self.decrease += drop
        ok, a = check_h1(drop, 0.0, delta_norm, self.min_a)
        self.h1 &= ok and (a is None or a > 0)
        if a is not None:
            self.a_min_measured = a if self.a_min_measured is None else min(self.a_min_measured, a)
        if h2 is not None:
            self.h2 &= h2["passed"]
            self.membership &= h2["membership"]
            slack = h2["bound"] - h2["witness_norm"]
            self.h2_min_slack = slack if self.h2_min_slack is None else min(self.h2_min_slack, slack)

    def as_dict(self):
        return {
            "min_a": self.min_a,
            "decrease": self.decrease,
            "steps": self.steps,
            "a_min_measured": self.a_min_measured,
            "h2_min_slack": self.h2_min_slack,
            "h1": bool(self.h1),
            "h2": bool(self.h2),
            "membership": bool(self.membership),
        }


def certified_sweep(Y, state, G, targets, alpha, beta, g_steps=1, c_factor=1.01, rng=None, t=0):
    """One G -> D -> A -> W sweep with every block update certified.

    ``c_factor`` sets the G proximal constant ``c_G = c_factor * L_G``; values
    at or below 1 break the premise of the decrease argument and are meant
    for constructing violations.
    """
    hp = state.hp
    state = state.copy()
    F0 = objective_convex(state, Y, G, targets, alpha, beta)
    Z_prev = (state.D.copy(), G.copy(), state.A.copy(), state.W.copy())

    # G block: proximal-gradient steps on the supervised objective
    L_G = lipschitz_G(state.D, state.A, state.W, hp, alpha, beta)
    c_G = c_factor * L_G
    g_log = _BlockLog((c_G - L_G) / 2.0)
    for _ in range(g_steps):
        G_new = prox_grad_G_supervised(Y, state, targets, G, 1.0 / c_G, alpha, beta, check_step=False)
        if not np.all(np.isfinite(G_new)):
            g_log.h1 = False
            G = G_new
            break
        h2 = h2_witness_G(Y, G, G_new, state.D, state.A, state.W, targets, hp, c_G, alpha, beta)
        g_log.add(g_block_drop(Y, state, G, G_new, targets, alpha, beta), float(np.linalg.norm(G_new - G)), h2)
        if np.array_equal(G_new, G):
            break
        G = G_new

    # D block: one projected gradient step with c_D = L_D
    c_D = lipschitz_D(G, hp.eps_D) if np.all(np.isfinite(G)) else np.inf
    d_log = _BlockLog(c_D - c_D / 2.0)
    if np.isfinite(c_D):
        D_new = update_dictionary_pgd(state.D, Y, G, hp.eps_D, c_D=c_D, rng=rng)
        h2 = h2_witness_D(Y, G, state.D, D_new, hp.eps_D, c_D)
        d_log.add(d_block_drop(Y, G, state.D, D_new, hp.eps_D), float(np.linalg.norm(D_new - state.D)), h2)
        state.D = D_new

    # A and W blocks: exact ridge minimisers
    logs = {"G": g_log, "D": d_log}
    errors = []
    finite = bool(np.all(np.isfinite(G)))
    for name, target, weight, ridge in (("A", targets.Q, alpha, hp.mu_A), ("W", targets.H, beta, hp.rho_W)):
        if not finite:
            blk = _BlockLog(0.0)
            blk.h1 = False
            logs[name] = blk
            continue
        blk = _BlockLog(0.0)
        M_old = state.A if name == "A" else state.W
        try:
            # strong convexity modulus of the ridge block
            with np.errstate(over="ignore", invalid="ignore"):
                S = G @ G.T
            if not np.all(np.isfinite(S)):
                raise NumericalError("code Gram matrix is not finite")
            blk.min_a = (ridge + weight * float(max(np.linalg.eigvalsh(S)[0], 0.0))) / 2.0
            if name == "A":
                M_new = update_lc_matrix(G, target, weight, ridge)
            else:
                M_new = update_classifier(G, target, weight, ridge)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            blk.h1 = False
            logs[name] = blk
            errors.append(f"{name} block: {exc}")
            finite = False
            continue
        blk.add(ridge_block_drop(M_old, M_new, G, target, weight, ridge),
                float(np.linalg.norm(M_new - M_old)),
                h2_witness_closed_form(M_new, G, target, weight, ridge))
        if name == "A":
            state.A = M_new
        else:
            state.W = M_new
        logs[name] = blk

    if finite:
        F1 = objective_convex(state, Y, G, targets, alpha, beta)
        bounds_ok, margins = check_bounds(state, G, Y, targets, hp, alpha, beta)
    else:
        F1, bounds_ok, margins = float("inf"), False, {}
    total = F0 - F1
    block_sum = sum(b.decrease for b in logs.values())
    tel_err = abs(block_sum - total) / max(abs(F0), 1.0) if np.isfinite(total) else float("inf")
    delta = float(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(Z_prev, (state.D, G, state.A, state.W)))))
    blocks = {k: v.as_dict() for k, v in logs.items()}
    passed = (
        all(b["h1"] and b["h2"] and b["membership"] for b in blocks.values())
        and bounds_ok
        and tel_err <= TELESCOPE_RTOL
        and F1 <= F0 + GRACE
    )
    record = {
        "t": t,
        "objective_before": F0,
        "objective_after": F1,
        "delta_norm": delta,
        "L_G": L_G,
        "c_G": c_G,
        "blocks": blocks,
        "bounds_ok": bool(bounds_ok),
        "margins": margins,
        "telescope_err": tel_err,
        "telescope_ok": bool(tel_err <= TELESCOPE_RTOL),
        "passed": bool(passed),
    }
    if errors:
        record["errors"] = errors
    return state, G, record


def certify(Y, targets, state, G, n_iters=50, g_steps=1, c_factor=1.01, alpha=None, beta=None,
            stop_tol=None, rng=None):
    """Run ``n_iters`` certified sweeps at fixed weights; returns ``(state, G, certificate)``."""
    hp = state.hp
    alpha = hp.alpha if alpha is None else alpha
    beta = hp.beta if beta is None else beta
    cert = PalmCertificate(premise_ok=c_factor > 1.0)
    if not cert.premise_ok:
        cert.notes.append(f"c_G = {c_factor:g} * L_G does not exceed L_G")
    rng = rng if rng is not None else np.random.default_rng(hp.seed + 2)
    for t in range(n_iters):
        state, G, record = certified_sweep(Y, state, G, targets, alpha, beta, g_steps, c_factor, rng=rng, t=t)
        cert.iterations.append(record)
        if record.get("errors") or not np.isfinite(record["objective_after"]):
            cert.notes.extend(record.get("errors", []))
            cert.notes.append(f"sweep {t} could not be completed; stopping")
            break
        if stop_tol is not None and record["delta_norm"] < stop_tol:
            break
    return state, G, cert


def run_certification(Y, labels, hp, n_classes=None, n_iters=50, topk_warmup=30, enet_warmup=50,
                      g_steps=50, c_factor=1.01, stop_tol=None):
    """Warm-start, then certify ``n_iters`` supervised convex sweeps at fixed ``(alpha, beta)``.

    The warm start is uncertified: ``topk_warmup`` Top-K LISTA / ridge
    dictionary iterations seed the atoms, then ``enet_warmup`` elastic-net /
    ridge dictionary iterations move them close to a critical point of the
    reconstruction objective. Returns ``(state, G, certificate)``.
    """
    from .trainer import init_state, warmup_phase

    Y = np.asarray(Y, dtype=np.float64)
    labels = np.asarray(labels)
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    targets = build_targets(labels, hp.K, C)
    rng = np.random.default_rng(hp.seed)
    state = init_state(Y, hp, EncoderKind.TOPK_LISTA, C, rng=rng)
    if topk_warmup:
        state, _ = warmup_phase(Y, state, n_iters=topk_warmup, rng=rng)
    state = ModelState(D=state.D, A=np.zeros((hp.K, hp.K)), W=np.zeros((C, hp.K)), hp=hp,
                       encoder_kind=EncoderKind.FISTA_LASSO)
    if enet_warmup:
        state, _ = warmup_phase(Y, state, n_iters=enet_warmup, rng=rng, dictionary_update="closed")
    G = fista_lasso(Y, state.D, hp.lam, hp.mu_G)
    state.A = update_lc_matrix(G, targets.Q, hp.alpha, hp.mu_A)
    state.W = update_classifier(G, targets.H, hp.beta, hp.rho_W)
    return certify(Y, targets, state, G, n_iters=n_iters, g_steps=g_steps, c_factor=c_factor,
                   stop_tol=stop_tol, rng=rng)
