import numpy as np
import pytest

from lcsparse.model import EncoderKind, HyperParams, ModelState, build_targets
from lcsparse.encoders import init_b_stack

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, d=6, K=6, C=2, N=10, kind="fista", alpha=1.0, beta=1.0, **hp_kw):
    hp = HyperParams(K=K, T=min(2, K), alpha=alpha, beta=beta, **hp_kw)
    D = rng.standard_normal((d, K))
    D /= np.linalg.norm(D, axis=0)
    kind = EncoderKind.parse(kind)
    state = ModelState(
        D=D,
        A=0.3 * rng.standard_normal((K, K)),
        W=0.3 * rng.standard_normal((C, K)),
        hp=hp,
        encoder_kind=kind,
        B_stack=init_b_stack(D, hp.n_layers) if kind is EncoderKind.TOPK_LISTA else None,
    )
    labels = np.arange(N) % C
    Y = rng.standard_normal((d, N))
    G = rng.standard_normal((K, N))
    return state, Y, G, build_targets(labels, K, C)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
