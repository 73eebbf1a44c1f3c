"""Feature/label/model files and the synthetic class-subspace generator.

Feature file (little-endian)::

    8 bytes   magic  b"SDLFEAT1"
    u32       rows   (feature dimension d)
    u32       cols   (sample count N)
    u8        dtype  (0x01 = float32)
    rows*cols*4 bytes payload, column-major (one sample after another)

Model file (little-endian)::

    8 bytes   magic  b"SDLMODL1"
    u8        encoder kind (0 = topk, 1 = fista)
    u32 x4    d, K, C, number of feedback matrices (0 for fista)
    f64 x7    alpha, beta, mu_A, rho_W, eps_D, mu_G, lam
    u32 x6    K, T, n_layers, warmup_iters, ramp_iters, max_outer
    i64       seed
    float64 payload, column-major: D (d x K), A (K x K), W (C x K), B_0..B_{n-1} (K x d)
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DimensionError,
    NonFiniteError,
    TruncatedError,
    UnsupportedDTypeError,
    VersionError,
)
from .model import EncoderKind, HyperParams, ModelState

FEATURE_MAGIC = b"SDLFEAT1"
MODEL_MAGIC = b"SDLMODL1"
DTYPE_F32 = 0x01

_FEAT_HEADER = struct.Struct("<8sIIB")
_MODEL_HEAD = struct.Struct("<8sBIIII")
_MODEL_HP = struct.Struct("<7d6Iq")
_KIND_CODES = {EncoderKind.TOPK_LISTA: 0, EncoderKind.FISTA_LASSO: 1}


def _atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def encode_features(Y):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise DimensionError("feature matrix must be 2-D")
    if not np.all(np.isfinite(Y)):
        raise NonFiniteError("refusing to write non-finite features")
    d, N = Y.shape
    payload = np.asarray(Y, dtype="<f4").tobytes(order="F")
    return _FEAT_HEADER.pack(FEATURE_MAGIC, d, N, DTYPE_F32) + payload


def decode_features(buf):
    buf = bytes(buf)
    if len(buf) < 8 or buf[:8] != FEATURE_MAGIC:
        raise BadMagicError("not a feature file (bad magic)")
    if len(buf) < _FEAT_HEADER.size:
        raise TruncatedError("feature header is truncated")
    _, d, N, dtype = _FEAT_HEADER.unpack_from(buf)
    if dtype != DTYPE_F32:
        raise UnsupportedDTypeError(f"unsupported dtype code 0x{dtype:02x}")
    expected = d * N * 4
    payload = buf[_FEAT_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedError(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise DataError(f"payload has {len(payload) - expected} trailing bytes")
    if d == 0 or N == 0:
        raise DataError(f"empty feature matrix ({d}x{N})")
    raw = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteError("feature file contains NaN or Inf")
    return raw.reshape((d, N), order="F").astype(np.float64)


def save_features(Y, path):
    _atomic_write(path, encode_features(Y))


def load_features(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    return decode_features(buf)


def save_labels(labels, path):
    labels = np.asarray(labels)
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels), encoding="utf-8")


def parse_labels(text):
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        try:
            values.append(int(s))
        except ValueError:
            raise DataError(f"line {lineno}: not an integer label: {s[:40]!r}") from None
    if not values:
        raise DataError("label file is empty")
    if min(values) < 0:
        raise DataError("labels must be nonnegative")
    return np.asarray(values, dtype=np.int64)


def load_labels(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read label file {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"label file is not UTF-8: {exc}") from None
    return parse_labels(text)


def encode_model(state):
    hp = state.hp
    B_stack = state.B_stack or []
    d, K = state.D.shape
    C = state.W.shape[0]
    head = _MODEL_HEAD.pack(MODEL_MAGIC, _KIND_CODES[state.encoder_kind], d, K, C, len(B_stack))
    hp_bytes = _MODEL_HP.pack(
        hp.alpha, hp.beta, hp.mu_A, hp.rho_W, hp.eps_D, hp.mu_G, hp.lam,
        hp.K, hp.T, hp.n_layers, hp.warmup_iters, hp.ramp_iters, hp.max_outer,
        hp.seed,
    )
    parts = [head, hp_bytes]
    for M in [state.D, state.A, state.W, *B_stack]:
        parts.append(np.asarray(M, dtype="<f8").tobytes(order="F"))
    return b"".join(parts)


def decode_model(buf):
    buf = bytes(buf)
    if len(buf) < 8:
        raise TruncatedError("model file is truncated")
    if buf[:8] != MODEL_MAGIC:
        if buf[:6] == MODEL_MAGIC[:6]:
            raise VersionError(f"unsupported model version {buf[6:8]!r}")
        raise VersionError("not a model file (bad magic)")
    if len(buf) < _MODEL_HEAD.size + _MODEL_HP.size:
        raise TruncatedError("model header is truncated")
    _, kind_code, d, K, C, n_B = _MODEL_HEAD.unpack_from(buf)
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise DataError(f"unknown encoder code {kind_code}")
    kind = kinds[kind_code]
    vals = _MODEL_HP.unpack_from(buf, _MODEL_HEAD.size)
    names = ["alpha", "beta", "mu_A", "rho_W", "eps_D", "mu_G", "lam",
             "K", "T", "n_layers", "warmup_iters", "ramp_iters", "max_outer", "seed"]
    try:
        hp = HyperParams(**dict(zip(names, vals)))
    except ConfigError as exc:
        raise DataError(f"model file carries invalid hyperparameters: {exc}") from None
    shapes = [(d, K), (K, K), (C, K)] + [(K, d)] * n_B
    expected = sum(r * c for r, c in shapes) * 8
    offset = _MODEL_HEAD.size + _MODEL_HP.size
    if len(buf) - offset < expected:
        raise TruncatedError(f"model payload has {len(buf) - offset} bytes, expected {expected}")
    if len(buf) - offset > expected:
        raise DataError("model file has trailing bytes")
    mats = []
    for r, c in shapes:
        n = r * c * 8
        mats.append(np.frombuffer(buf, dtype="<f8", count=r * c, offset=offset).reshape((r, c), order="F").astype(np.float64))
        offset += n
    for M in mats:
        if not np.all(np.isfinite(M)):
            raise NonFiniteError("model file contains non-finite values")
    D, A, W, *B_stack = mats
    try:
        return ModelState(D=D, A=A, W=W, hp=hp, encoder_kind=kind, B_stack=B_stack if n_B else None)
    except DimensionError as exc:
        raise DimensionError(f"inconsistent model file: {exc}") from None


def save_model(state, path):
    _atomic_write(path, encode_model(state))


def load_model(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return decode_model(buf)


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 32
    N: int = 500
    K: int = 30
    C: int = 3
    T: int = 3
    noise_sigma: float = 0.0
    cluster_separation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.N, self.K, self.C, self.T) < 1:
            raise ConfigError("d, N, K, C, T must be positive")
        if self.K % self.C != 0:
            raise ConfigError(f"K={self.K} must be divisible by C={self.C}")
        if self.T > self.K // self.C:
            raise ConfigError(f"T={self.T} exceeds atoms per class K/C={self.K // self.C}")
        if self.noise_sigma < 0 or self.cluster_separation < 0:
            raise ConfigError("noise_sigma and cluster_separation must be nonnegative")


def generate_synthetic(spec):
    """Class-subspace data ``Y = D_true G_true + noise``.

    ``D_true`` has random unit atoms; class ``c`` owns atoms
    ``[c*K/C, (c+1)*K/C)``. Each sample uses ``T`` distinct atoms of its own
    class with coefficients ``cluster_separation + s*m``, where ``s`` is a
    random sign and ``m ~ U[0.5, 1.5]``. A positive separation also tilts
    every atom of a class towards a random class direction (weight
    ``cluster_separation`` against a unit-scale Gaussian), so a large value
    pushes the class clouds apart; zero separation gives symmetric,
    well-conditioned codes over isotropic atoms.
    """
    rng = np.random.default_rng(spec.seed)
    d, N, K, C, T = spec.d, spec.N, spec.K, spec.C, spec.T
    per = K // C
    D = rng.standard_normal((d, K))
    if spec.cluster_separation > 0:
        # atoms of one class lean towards a shared class direction
        U = rng.standard_normal((d, C))
        U /= np.linalg.norm(U, axis=0)
        D = D / np.sqrt(d) + spec.cluster_separation * np.repeat(U, per, axis=1)
    D /= np.linalg.norm(D, axis=0)
    labels = np.arange(N) % C
    rng.shuffle(labels)
    G = np.zeros((K, N))
    for j in range(N):
        c = labels[j]
        support = c * per + rng.choice(per, size=T, replace=False)
        signs = rng.choice([-1.0, 1.0], size=T)
        G[support, j] = spec.cluster_separation + signs * rng.uniform(0.5, 1.5, size=T)
    Y = D @ G
    if spec.noise_sigma > 0:
        Y = Y + spec.noise_sigma * rng.standard_normal((d, N))
    return Y, labels.astype(np.int64), D, G
