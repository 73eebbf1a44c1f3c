import numpy as np
import pytest

from lcsparse import trainer
from lcsparse.diagnostics import certify
from lcsparse.errors import ConfigError, DivergenceError
from lcsparse.io import SyntheticSpec, generate_synthetic
from lcsparse.model import EncoderKind, HyperParams, build_targets
from lcsparse.trainer import (
    BTrainConfig,
    Schedule,
    b_gradient_step,
    init_state,
    lista_loss,
    ramp,
    schedule_factor,
    train,
    warmup_phase,
)
from lcsparse.updates import update_classifier, update_lc_matrix


def test_schedule_examples():
    s = Schedule(2, 3, 1.5, 0.5)
    assert ramp(0, s) == (0.0, 0.0)
    assert ramp(1, s) == (0.0, 0.0)
    assert ramp(2 + 3 - 1, s) == (1.5, 0.5)
    assert schedule_factor(3, s) == pytest.approx(2 / 3)
    assert ramp(3, s) == pytest.approx((1.0, 1 / 3))
    assert ramp(100, s) == (1.5, 0.5)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule(0, 0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        Schedule(1, 1, -1.0, 1.0)
    with pytest.raises(ConfigError):
        schedule_factor(-1, Schedule(1, 1, 1.0, 1.0))


def test_warmup_reconstruction_error_on_planted_dictionary():
    Y, _, _, _ = generate_synthetic(SyntheticSpec(d=32, N=500, K=64, C=4, T=3, seed=0))
    hp = HyperParams(K=64, T=3, warmup_iters=5)
    state = init_state(Y, hp, "fista", 4)
    _, errors = warmup_phase(Y, state)
    rmse = errors[-1] / np.sqrt(Y.size)
    assert len(errors) == 5
    assert rmse < 0.1 * np.linalg.norm(Y) / np.sqrt(Y.size)


def test_warmup_single_sample_full_budget(rng):
    y = rng.standard_normal((6, 1))
    hp = HyperParams(K=3, T=3, warmup_iters=0, eps_D=1e-6)
    state = init_state(np.hstack([y, rng.standard_normal((6, 2))]), hp, "topk", 1)
    state, errors = warmup_phase(y, state, n_iters=30)
    assert errors[-1] < 1e-3 * np.linalg.norm(y)
    coef = np.linalg.lstsq(state.D, y, rcond=None)[0]
    assert np.linalg.norm(state.D @ coef - y) < 1e-10


@pytest.mark.parametrize("kind", ["topk", "fista"])
def test_warmup_zero_data(rng, kind):
    hp = HyperParams(K=4, T=2)
    state = init_state(rng.standard_normal((5, 10)), hp, kind, 2)
    out, errors = warmup_phase(np.zeros((5, 10)), state, n_iters=2)
    G = trainer.encode(np.zeros((5, 10)), out)
    assert not np.any(G)
    assert errors == [0.0, 0.0]
    assert np.allclose(np.linalg.norm(out.D, axis=0), 1.0)


def test_warmup_rejects_unknown_update(rng):
    state = init_state(rng.standard_normal((5, 10)), HyperParams(K=4, T=2), "topk", 2)
    with pytest.raises(ConfigError):
        warmup_phase(rng.standard_normal((5, 10)), state, dictionary_update="ksvd")


def _separable(N=300, seed=0):
    Y, labels, _, _ = generate_synthetic(
        SyntheticSpec(d=16, N=N, K=30, C=3, T=3, noise_sigma=0.05, cluster_separation=3.0, seed=seed))
    return Y, labels


def test_zero_supervision_is_extended_warmup():
    Y, labels = _separable(120)
    hp = HyperParams(K=30, T=3, alpha=0.0, beta=0.0, max_outer=6)
    t = build_targets(labels, 30, 3)
    state, report = train(Y, t, hp, "fista")
    G = report.codes
    assert np.allclose(state.A, update_lc_matrix(G, t.Q, 0.0, hp.mu_A))
    assert np.allclose(state.W, update_classifier(G, t.H, 0.0, hp.rho_W))
    assert all(r["alpha"] == 0.0 for r in report.records)


@pytest.mark.parametrize("kind,convex", [("topk", False), ("fista", False), ("fista", True)])
def test_separable_clusters_reach_high_train_accuracy(kind, convex):
    Y, labels = _separable()
    hp = HyperParams(K=30, T=3, max_outer=10)
    _, report = train(Y, build_targets(labels, 30, 3), hp, kind, supervised_convex=convex)
    assert report.n_iters == 10
    assert report.first_iter_reaching("train_acc", 0.99) is not None


def test_convex_pipeline_keeps_certifying_after_training():
    Y, labels = _separable(150)
    hp = HyperParams(K=30, T=3, max_outer=6)
    t = build_targets(labels, 30, 3)
    state, report = train(Y, t, hp, "fista", supervised_convex=True)
    _, _, cert = certify(Y, t, state, report.codes, n_iters=4, g_steps=5)
    assert all(blk["h1"] for it in cert.iterations for blk in it["blocks"].values())
    assert cert.passed


def test_training_is_deterministic():
    Y, labels = _separable(90)
    hp = HyperParams(K=30, T=3, max_outer=6, seed=3)
    t = build_targets(labels, 30, 3)
    runs = [train(Y, t, hp, "topk") for _ in range(2)]
    (s1, r1), (s2, r2) = runs
    assert np.array_equal(s1.D, s2.D) and np.array_equal(s1.W, s2.W)
    assert all(np.array_equal(a, b) for a, b in zip(s1.B_stack, s2.B_stack))
    strip = [{k: v for k, v in r.items() if k != "wall_time"} for r in r1.records]
    assert strip == [{k: v for k, v in r.items() if k != "wall_time"} for r in r2.records]


def test_divergence_is_reported(monkeypatch):
    Y, labels = _separable(90)
    hp = HyperParams(K=30, T=3, max_outer=8)
    t = build_targets(labels, 30, 3)
    real = trainer.update_dictionary_pgd
    calls = {"n": 0}

    def sabotaged(D, Y, G, eps_D, c_D=None, rng=None):
        calls["n"] += 1
        D = real(D, Y, G, eps_D, c_D=c_D, rng=rng)
        if calls["n"] == 7:
            D = np.roll(D, 1, axis=0)
        return D

    monkeypatch.setattr(trainer, "update_dictionary_pgd", sabotaged)
    with pytest.raises(DivergenceError) as info:
        train(Y, t, hp, "fista")
    assert info.value.report.n_iters == 6


def test_train_rejects_bad_prox_factor():
    Y, labels = _separable(30)
    with pytest.raises(ConfigError):
        train(Y, build_targets(labels, 30, 3), HyperParams(K=30, T=3), "fista", c_factor=1.0)


def _tiny_lista(seed):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((5, 12))
    labels = np.arange(12) % 2
    hp = HyperParams(K=6, T=2, n_layers=3)
    state = init_state(Y, hp, EncoderKind.TOPK_LISTA, 2, rng=rng)
    state.A = 0.1 * rng.standard_normal((6, 6))
    state.W = 0.1 * rng.standard_normal((2, 6))
    return Y, build_targets(labels, 6, 2), state


@pytest.mark.parametrize("seed", range(10))
def test_b_steps_never_increase_loss(seed):
    Y, t, state = _tiny_lista(seed)
    before = lista_loss(Y, t, state, 1.0, 1.0)
    after_state = b_gradient_step(Y, t, state, 1.0, 1.0, BTrainConfig(inner_steps=20))
    assert lista_loss(Y, t, after_state, 1.0, 1.0) <= before


def test_b_step_scales_with_learning_rate():
    Y, t, state = _tiny_lista(0)
    sizes = []
    for lr in (1e-6, 1e-7):
        new = b_gradient_step(Y, t, state, 1.0, 1.0, BTrainConfig(learning_rate=lr, inner_steps=1))
        sizes.append(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(new.B_stack, state.B_stack))))
    assert sizes[0] > 0
    assert sizes[0] / sizes[1] == pytest.approx(10.0, rel=1e-3)


def test_b_step_zero_loss_leaves_b_unchanged():
    # orthonormal dictionary, exact 1-sparse data and matching targets: every term vanishes
    K = 3
    D = np.eye(4, K)
    hp = HyperParams(K=K, T=1, n_layers=2, mu_A=1e-300, rho_W=1e-300, eps_D=1e-300)
    Y = D @ np.eye(K)
    state = init_state(Y, hp, "topk", 3)
    state.D = D
    state.B_stack = [D.T.copy(), D.T.copy()]
    labels = np.arange(3)
    t = build_targets(labels, K, 3)
    state.A = np.eye(K)
    state.W = np.eye(3, K)
    new = b_gradient_step(Y, t, state, 1.0, 1.0, BTrainConfig())
    assert all(np.array_equal(a, b) for a, b in zip(new.B_stack, state.B_stack))
