import json

import numpy as np
import pytest

from lcsparse.diagnostics import (
    certify,
    check_bounds,
    check_h1,
    g_block_drop,
    gradient_audit,
    h2_witness_closed_form,
    h2_witness_D,
    h2_witness_G,
)
from lcsparse.encoders import fista_lasso, prox_grad_G_supervised, supervised_G_objective, FistaConfig
from lcsparse.model import lipschitz_D, lipschitz_G
from lcsparse.updates import update_dictionary_pgd, update_lc_matrix
from conftest import random_state


def test_check_h1_arithmetic():
    assert check_h1(10.0, 9.0, 1.0, 0.5) == (True, 1.0)
    ok, a = check_h1(3.0, 3.0, 0.0, 0.5)
    assert ok and a is None
    assert check_h1(10.0, 9.9, 1.0, 0.5)[0] is False


def test_g_step_decrease_with_double_lipschitz(rng):
    state, Y, G, t = random_state(rng, d=6, K=8, N=7)
    L = lipschitz_G(state.D, state.A, state.W, state.hp)
    c = 2 * L
    G_new = prox_grad_G_supervised(Y, state, t, G, 1 / c)
    drop = supervised_G_objective(Y, state, G, t) - supervised_G_objective(Y, state, G_new, t)
    ok, a = check_h1(drop, 0.0, np.linalg.norm(G_new - G), (c - L) / 2)
    assert ok and a >= (c - L) / 2 - 1e-10
    # the exact expansion agrees with the direct difference away from the fixed point
    assert g_block_drop(Y, state, G, G_new, t, state.hp.alpha, state.hp.beta) == pytest.approx(drop, rel=1e-9)


def test_h2_witness_at_stationary_point(rng):
    state, Y, _, t = random_state(rng, d=6, K=8, N=5, alpha=0.0, beta=0.0)
    G = fista_lasso(Y, state.D, state.hp.lam, state.hp.mu_G, FistaConfig(rel_tol=1e-15, max_iters=100000))
    c = 1.01 * lipschitz_G(state.D, state.A, state.W, state.hp)
    res = h2_witness_G(Y, G, G, state.D, state.A, state.W, t, state.hp, c)
    assert res["witness_norm"] <= 1e-8
    assert res["passed"] and res["membership"]


def test_h2_witness_after_random_prox_step(rng):
    state, Y, G, t = random_state(rng)
    c = 1.3 * lipschitz_G(state.D, state.A, state.W, state.hp)
    G_new = prox_grad_G_supervised(Y, state, t, G, 1 / c)
    res = h2_witness_G(Y, G, G_new, state.D, state.A, state.W, t, state.hp, c)
    assert res["witness_norm"] <= res["bound"]
    assert res["passed"] and res["membership"]


def test_h2_witness_detects_non_prox_point(rng):
    state, Y, G, t = random_state(rng)
    c = 1.3 * lipschitz_G(state.D, state.A, state.W, state.hp)
    G_new = prox_grad_G_supervised(Y, state, t, G, 1 / c) + 0.1
    assert not h2_witness_G(Y, G, G_new, state.D, state.A, state.W, t, state.hp, c)["membership"]


def test_h2_witness_dictionary_step(rng):
    state, Y, G, _ = random_state(rng)
    c = lipschitz_D(G, state.hp.eps_D)
    D_new = update_dictionary_pgd(state.D, Y, G, state.hp.eps_D, c_D=c)
    res = h2_witness_D(Y, G, state.D, D_new, state.hp.eps_D, c)
    assert res["passed"] and res["membership"]
    bogus = D_new.copy()
    bogus[:, 0] = state.D[:, 0]
    assert not h2_witness_D(Y, G, state.D, bogus, state.hp.eps_D, c)["membership"]


def test_closed_form_witness_is_exactly_zero(rng):
    G = rng.standard_normal((5, 9))
    Q = rng.standard_normal((5, 9))
    A = update_lc_matrix(G, Q, 1.0, 0.5)
    res = h2_witness_closed_form(A, G, Q, 1.0, 0.5)
    assert res["witness_norm"] == 0.0
    assert res["membership"]
    assert not h2_witness_closed_form(A + 0.1, G, Q, 1.0, 0.5)["membership"]


def test_bounds_zero_model(rng):
    state, Y, G, t = random_state(rng)
    state.A[:] = 0
    state.W[:] = 0
    ok, margins = check_bounds(state, np.zeros_like(G), Y, t)
    assert ok and all(m >= 0 for m in margins.values())


def test_bounds_hold_after_update_and_fail_when_scaled(rng):
    state, Y, G, t = random_state(rng)
    state.A = update_lc_matrix(G, t.Q, state.hp.alpha, state.hp.mu_A)
    state.W[:] = 0
    ok, margins = check_bounds(state, G, Y, t)
    assert margins["A"] >= 0
    state.A *= 1e6
    ok, margins = check_bounds(state, G, Y, t)
    assert not ok and margins["A"] < 0


def test_bounds_flag_non_unit_atoms(rng):
    state, Y, G, t = random_state(rng)
    state.D[:, 1] *= 1.01
    ok, margins = check_bounds(state, np.zeros_like(G), Y, t)
    assert not ok and margins["D"] < 0


def test_gradient_audit_linear_only(rng):
    # no quadratic couplings left: only mu_G keeps the G-block smooth part curved
    state, Y, G, t = random_state(rng, alpha=0.0, beta=0.0)
    state.D[:] = 0
    ok, worst = gradient_audit(Y, state, G, t, "G", probes=5)
    assert ok and worst < 1e-9


@pytest.mark.parametrize("block", ["G", "D"])
def test_gradient_audit_random_instance(rng, block):
    state, Y, G, t = random_state(rng, d=7, K=9, C=3, N=12)
    ok, worst = gradient_audit(Y, state, G, t, block, probes=20, tol=1e-5)
    assert ok, worst


def test_gradient_audit_validates():
    with pytest.raises(ValueError):
        gradient_audit(None, None, None, None, probes=0)


def _small_certificate(rng, c_factor=1.01, n=3):
    state, Y, G, t = random_state(rng, d=8, K=6, C=2, N=20)
    return certify(Y, t, state, G, n_iters=n, g_steps=3, c_factor=c_factor)[2]


def test_certificate_passes_and_telescopes(rng):
    cert = _small_certificate(rng)
    assert cert.passed
    for it in cert.iterations:
        assert it["telescope_err"] <= 1e-9
        assert it["objective_after"] <= it["objective_before"] + 1e-10
        for blk in it["blocks"].values():
            assert blk["a_min_measured"] is None or blk["a_min_measured"] > 0


def test_certificate_detects_oversized_step(rng):
    cert = _small_certificate(rng, c_factor=0.25)
    assert not cert.passed
    assert not cert.premise_ok
    assert any(kind == "h1" for _, _, kind in cert.failures())


def test_certificate_serialisation_is_deterministic(rng):
    a = _small_certificate(np.random.default_rng(5))
    b = _small_certificate(np.random.default_rng(5))
    assert a.to_json() == b.to_json()
    assert a.to_text() == b.to_text()
    data = json.loads(a.to_json())
    assert data["passed"] is True and len(data["iterations"]) == 3
    assert a.to_text().splitlines()[0] == "certificate\tPASS"
