"""Two-stage training: unsupervised warm-up, then ramped supervision.

One outer iteration updates the blocks in the fixed order
G (encoder) -> D -> A -> W, followed by gradient steps on the LISTA
feedback matrices when the Top-K encoder is used.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .encoders import (
    FistaConfig,
    fista_lasso,
    init_b_stack,
    lista_backward,
    lista_forward,
    prox_grad_G_supervised,
)
from .errors import ConfigError, DimensionError, DivergenceError, NonFiniteError
from .evaluation import classify
from .model import (
    EncoderKind,
    ModelState,
    as_finite,
    grad_smooth_G,
    lipschitz_G,
    objective_convex,
    objective_topk,
)
from .updates import (
    normalize_columns,
    update_classifier,
    update_dictionary_closed,
    update_dictionary_pgd,
    update_lc_matrix,
)

log = logging.getLogger(__name__)

DIVERGENCE_RTOL = 1e-9


@dataclass(frozen=True)
class Schedule:
    warmup_iters: int
    ramp_iters: int
    alpha_max: float
    beta_max: float
    shape: str = "linear"

    def __post_init__(self):
        if self.warmup_iters < 0 or self.ramp_iters < 1:
            raise ConfigError("warmup_iters must be >= 0 and ramp_iters >= 1")
        if self.alpha_max < 0 or self.beta_max < 0:
            raise ConfigError("alpha_max and beta_max must be nonnegative")
        if self.shape != "linear":
            raise ConfigError(f"unknown schedule shape {self.shape!r}")

    @classmethod
    def from_hp(cls, hp):
        return cls(hp.warmup_iters, hp.ramp_iters, hp.alpha, hp.beta)


@dataclass(frozen=True)
class BTrainConfig:
    learning_rate: float = 1e-2
    inner_steps: int = 5
    grad_clip: float = 1e3
    max_halvings: int = 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.inner_steps < 0:
            raise ConfigError("inner_steps must be >= 0")
        if not self.grad_clip > 0:
            raise ConfigError("grad_clip must be > 0")


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    codes: np.ndarray | None = None

    @property
    def n_iters(self):
        return len(self.records)

    def column(self, key):
        return [r[key] for r in self.records]

    def first_iter_reaching(self, key, threshold):
        for r in self.records:
            v = r.get(key)
            if v is not None and v >= threshold:
                return r["t"]
        return None


def schedule_factor(t, sched):
    if t < 0:
        raise ConfigError("iteration index must be >= 0")
    if t < sched.warmup_iters:
        return 0.0
    return float(min(max((t - sched.warmup_iters + 1) / sched.ramp_iters, 0.0), 1.0))


def ramp(t, sched):
    """Supervision weights ``(alpha_t, beta_t)`` at outer iteration ``t``."""
    s = schedule_factor(t, sched)
    return sched.alpha_max * s, sched.beta_max * s


def init_state(Y, hp, encoder_kind, n_classes, rng=None):
    """Seeded initial model: ``K`` distinct normalised samples as atoms, zero A and W."""
    Y = as_finite(Y, "Y")
    rng = rng if rng is not None else np.random.default_rng(hp.seed)
    d, N = Y.shape
    K = hp.K
    if K <= N:
        D = Y[:, rng.choice(N, size=K, replace=False)].copy()
    else:
        D = np.concatenate([Y, rng.standard_normal((d, K - N))], axis=1)
    D = normalize_columns(D, rng=rng)
    encoder_kind = EncoderKind.parse(encoder_kind)
    B_stack = init_b_stack(D, hp.n_layers) if encoder_kind is EncoderKind.TOPK_LISTA else None
    return ModelState(
        D=D,
        A=np.zeros((K, K)),
        W=np.zeros((n_classes, K)),
        hp=hp,
        encoder_kind=encoder_kind,
        B_stack=B_stack,
    )


def encode(Y, state, fista_cfg=None):
    if state.encoder_kind is EncoderKind.TOPK_LISTA:
        return lista_forward(Y, state)[0]
    return fista_lasso(Y, state.D, state.hp.lam, state.hp.mu_G, fista_cfg)


def lista_loss(Y, targets, state, alpha, beta):
    G, _ = lista_forward(Y, state)
    return objective_topk(state, Y, G, targets, alpha, beta)


def _loss_and_grads(Y, targets, state, alpha, beta):
    G, trace = lista_forward(Y, state)
    loss = objective_topk(state, Y, G, targets, alpha, beta)
    upstream = grad_smooth_G(Y, state.D, G, state.A, state.W, targets, alpha, beta, 0.0)
    return loss, lista_backward(trace, state, upstream)


def b_gradient_step(Y, targets, state, alpha_t, beta_t, b_cfg):
    """``inner_steps`` backtracked gradient steps on the feedback matrices.

    Each step halves the learning rate until the loss does not increase; if
    no halving succeeds the feedback matrices are left unchanged.
    """
    if state.encoder_kind is not EncoderKind.TOPK_LISTA:
        raise ConfigError("feedback matrices only exist for the Top-K LISTA encoder")
    state = state.copy()
    loss, grads = _loss_and_grads(Y, targets, state, alpha_t, beta_t)
    for _ in range(b_cfg.inner_steps):
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise NonFiniteError("non-finite gradient for the LISTA feedback matrices")
        gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if gnorm == 0.0:
            break
        scale = min(1.0, b_cfg.grad_clip / gnorm)
        lr = b_cfg.learning_rate
        accepted = False
        for _ in range(b_cfg.max_halvings + 1):
            trial = state.copy()
            trial.B_stack = [B - lr * scale * g for B, g in zip(state.B_stack, grads)]
            trial_loss = lista_loss(Y, targets, trial, alpha_t, beta_t)
            if trial_loss <= loss:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
        state = trial
        loss, grads = _loss_and_grads(Y, targets, state, alpha_t, beta_t)
    return state


def _check_inputs(Y, targets, hp):
    Y = as_finite(Y, "Y")
    if targets.Q.shape != (hp.K, Y.shape[1]) or targets.H.shape[1] != Y.shape[1]:
        raise DimensionError("targets do not match the feature matrix / dictionary size")
    return Y


def _reconstruction_objective(state, Y, G):
    """Objective the unsupervised encoders descend: fit, ridge on D and elastic net on G."""
    hp = state.hp
    f = 0.5 * np.sum((Y - state.D @ G) ** 2) + 0.5 * hp.eps_D * np.sum(state.D ** 2)
    if state.encoder_kind is EncoderKind.FISTA_LASSO:
        f += 0.5 * hp.mu_G * np.sum(G ** 2) + hp.lam * np.sum(np.abs(G))
    return float(f)


def warmup_phase(Y, state, hp=None, fista_cfg=None, rng=None, n_iters=None, dictionary_update=None):
    """Reconstruction-only alternation of encoder and dictionary update.

    ``dictionary_update`` is ``"closed"`` (ridge solve, the Top-K default) or
    ``"pgd"`` (one projected step, the FISTA default). Returns the fitted
    state and the per-iteration reconstruction errors.
    """
    hp = hp or state.hp
    Y = as_finite(Y, "Y")
    rng = rng if rng is not None else np.random.default_rng(hp.seed + 1)
    n_iters = hp.warmup_iters if n_iters is None else n_iters
    state = state.copy()
    topk = state.encoder_kind is EncoderKind.TOPK_LISTA
    if dictionary_update is None:
        dictionary_update = "closed" if topk else "pgd"
    if dictionary_update not in ("closed", "pgd"):
        raise ConfigError(f"unknown dictionary update {dictionary_update!r}")
    errors = []
    for _ in range(n_iters):
        G = encode(Y, state, fista_cfg)
        if dictionary_update == "closed":
            state.D = update_dictionary_closed(Y, G, hp.eps_D, rng=rng)
        else:
            state.D = update_dictionary_pgd(state.D, Y, G, hp.eps_D, rng=rng)
        if topk:
            state.B_stack = init_b_stack(state.D, hp.n_layers)
        errors.append(float(np.linalg.norm(Y - state.D @ G)))
    return state, errors


def _supervised_G(Y, state, targets, G, alpha, beta, g_steps, c_factor):
    for _ in range(g_steps):
        L = lipschitz_G(state.D, state.A, state.W, state.hp, alpha, beta)
        G_new = prox_grad_G_supervised(Y, state, targets, G, 1.0 / (c_factor * L), alpha, beta)
        done = np.array_equal(G_new, G)
        G = G_new
        if done:
            break
    return G


def train(
    Y,
    targets,
    hp,
    encoder_kind,
    b_cfg=None,
    fista_cfg=None,
    supervised_convex=False,
    g_steps=50,
    c_factor=1.01,
    eval_set=None,
    check_divergence=True,
):
    """Warm-up then ramped supervision for ``hp.max_outer`` outer iterations.

    ``eval_set=(Y_test, labels_test)`` records held-out accuracy per iteration.
    ``supervised_convex`` switches the FISTA pipeline's G-update from the
    unsupervised elastic-net solve to proximal steps on the full G-block
    objective.
    """
    encoder_kind = EncoderKind.parse(encoder_kind)
    Y = _check_inputs(Y, targets, hp)
    b_cfg = b_cfg or BTrainConfig()
    fista_cfg = fista_cfg or FistaConfig()
    if c_factor <= 1.0:
        raise ConfigError("c_factor must exceed 1 so the prox step is below 1/L_G")
    sched = Schedule.from_hp(hp)
    rng = np.random.default_rng(hp.seed)
    state = init_state(Y, hp, encoder_kind, targets.n_classes, rng=rng)
    report = TrainReport()
    objective = objective_convex if encoder_kind is EncoderKind.FISTA_LASSO else objective_topk
    K, N = hp.K, Y.shape[1]
    G = np.zeros((K, N))
    prev_alpha = prev_beta = None
    prev_track = None

    for t in range(hp.max_outer):
        t0 = time.perf_counter()
        alpha_t, beta_t = ramp(t, sched)
        phase = "warmup" if t < hp.warmup_iters else ("ramp" if t < hp.warmup_iters + hp.ramp_iters else "supervised")
        Z_prev = (state.D.copy(), G.copy(), state.A.copy(), state.W.copy())
        f_start = objective(state, Y, G, targets, alpha_t, beta_t)
        decreases = {}

        # G block
        if encoder_kind is EncoderKind.TOPK_LISTA:
            G = lista_forward(Y, state)[0]
        elif supervised_convex and phase != "warmup":
            G = _supervised_G(Y, state, targets, G, alpha_t, beta_t, g_steps, c_factor)
        else:
            G = fista_lasso(Y, state.D, hp.lam, hp.mu_G, fista_cfg, G0=G if t else None)
        f_G = objective(state, Y, G, targets, alpha_t, beta_t)
        decreases["G"] = f_start - f_G

        # D block
        if encoder_kind is EncoderKind.TOPK_LISTA:
            state.D = update_dictionary_closed(Y, G, hp.eps_D, rng=rng)
        else:
            state.D = update_dictionary_pgd(state.D, Y, G, hp.eps_D, rng=rng)
        f_D = objective(state, Y, G, targets, alpha_t, beta_t)
        decreases["D"] = f_G - f_D

        # A and W blocks
        state.A = update_lc_matrix(G, targets.Q, alpha_t, hp.mu_A)
        f_A = objective(state, Y, G, targets, alpha_t, beta_t)
        decreases["A"] = f_D - f_A
        state.W = update_classifier(G, targets.H, beta_t, hp.rho_W)
        f_W = objective(state, Y, G, targets, alpha_t, beta_t)
        decreases["W"] = f_A - f_W

        if encoder_kind is EncoderKind.TOPK_LISTA:
            if phase == "warmup":
                state.B_stack = init_b_stack(state.D, hp.n_layers)
            else:
                state = b_gradient_step(Y, targets, state, alpha_t, beta_t, b_cfg)

        delta = float(np.sqrt(sum(
            np.sum((a - b) ** 2) for a, b in zip(Z_prev, (state.D, G, state.A, state.W))
        )))
        if encoder_kind is EncoderKind.FISTA_LASSO and supervised_convex and phase != "warmup":
            tracked = f_W
        else:
            tracked = _reconstruction_objective(state, Y, G)
        fixed = (alpha_t, beta_t) == (prev_alpha, prev_beta)
        if (
            check_divergence
            and encoder_kind is EncoderKind.FISTA_LASSO
            and fixed
            and prev_track is not None
            and tracked > prev_track + DIVERGENCE_RTOL * (1.0 + abs(prev_track))
        ):
            raise DivergenceError(
                f"objective rose from {prev_track:.12g} to {tracked:.12g} at iteration {t}", report
            )
        prev_alpha, prev_beta, prev_track = alpha_t, beta_t, tracked

        record = {
            "t": t,
            "phase": phase,
            "alpha": alpha_t,
            "beta": beta_t,
            "objective": f_W,
            "tracked_objective": tracked,
            "decrease_G": decreases["G"],
            "decrease_D": decreases["D"],
            "decrease_A": decreases["A"],
            "decrease_W": decreases["W"],
            "delta_norm": delta,
            "norm_G": float(np.linalg.norm(G)),
            "norm_A": float(np.linalg.norm(state.A)),
            "norm_W": float(np.linalg.norm(state.W)),
            "mean_nnz": float(np.count_nonzero(G) / N),
            "train_acc": float(np.mean(classify(G, state.W) == targets.labels)),
            "test_acc": None,
        }
        if eval_set is not None:
            Y_test, labels_test = eval_set
            G_test = encode(Y_test, state, fista_cfg)
            record["test_acc"] = float(np.mean(classify(G_test, state.W) == np.asarray(labels_test)))
        record["wall_time"] = time.perf_counter() - t0
        report.records.append(record)
        log.debug("iter %d %s objective=%.6g acc=%.4f", t, phase, f_W, record["train_acc"])

    report.codes = G
    return state, report
