"""Command-line entry point: ``lcsparse {train,eval,synth,certify}``.

Runs are driven by a flat ``key = value`` config file (``#`` starts a
comment). Unknown keys are rejected. Exit codes: 0 ok, 2 config error,
3 data error, 4 divergence or numerical failure, 5 certification failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path


from .diagnostics import run_certification
from .encoders import FistaConfig
from .errors import ConfigError, DataError, DivergenceError, NumericalError
from .evaluation import classify, encode_test, metrics, render_metrics
from .io import (
    SyntheticSpec,
    generate_synthetic,
    load_features,
    load_labels,
    load_model,
    save_features,
    save_labels,
    save_model,
)
from .model import EncoderKind, HyperParams, build_targets
from .trainer import BTrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_CERTIFY = 5

log = logging.getLogger("lcsparse")

# key -> (type, default)
_KEYS = {
    "K": (int, 520),
    "T": (int, 50),
    "alpha": (float, 1.0),
    "beta": (float, 1.0),
    "mu_A": (float, 1.0),
    "rho_W": (float, 1.0),
    "eps_D": (float, 1e-2),
    "mu_G": (float, 1e-1),
    "lam": (float, 1e-2),
    "n_layers": (int, 10),
    "warmup_iters": (int, 2),
    "ramp_iters": (int, 3),
    "max_outer": (int, 30),
    "seed": (int, 0),
    "encoder": (str, "topk"),
    "features": (str, ""),
    "labels": (str, ""),
    "test_features": (str, ""),
    "test_labels": (str, ""),
    "synth_d": (int, 32),
    "synth_N": (int, 500),
    "synth_K": (int, 30),
    "synth_C": (int, 3),
    "synth_T": (int, 3),
    "synth_noise_sigma": (float, 0.0),
    "synth_cluster_separation": (float, 0.0),
    "synth_seed": (int, 0),
    "b_learning_rate": (float, 1e-2),
    "b_inner_steps": (int, 5),
    "b_grad_clip": (float, 1e3),
    "fista_max_iters": (int, 2000),
    "fista_rel_tol": (float, 1e-8),
    "supervised_convex": (bool, False),
    "g_steps": (int, 50),
    "c_factor": (float, 1.01),
    "certify_iters": (int, 50),
    "certify_topk_warmup": (int, 30),
    "certify_enet_warmup": (int, 50),
}

# the instance certified when no config is given
CERTIFY_DEFAULTS = {
    "K": 30,
    "T": 3,
    "mu_A": 1e4,
    "rho_W": 1e4,
    "eps_D": 1e-3,
    "lam": 0.2,
    "max_outer": 50,
}

_HP_KEYS = HyperParams.field_names()


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text, base=None):
    """Parse ``key = value`` lines into a dict of typed values over ``base``."""
    cfg = default_config() if base is None else dict(base)
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        typ = _KEYS[key][0]
        try:
            cfg[key] = _parse_bool(value) if typ is bool else typ(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects {typ.__name__}, got {value!r}") from None
    return cfg


def default_config():
    return {k: v for k, (_, v) in _KEYS.items()}


def load_config(path, base=None):
    if path is None:
        return dict(base) if base is not None else default_config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)


def hyperparams_from(cfg):
    return HyperParams(**{k: cfg[k] for k in _HP_KEYS})


def _synth_spec(cfg):
    return SyntheticSpec(
        d=cfg["synth_d"],
        N=cfg["synth_N"],
        K=cfg["synth_K"],
        C=cfg["synth_C"],
        T=cfg["synth_T"],
        noise_sigma=cfg["synth_noise_sigma"],
        cluster_separation=cfg["synth_cluster_separation"],
        seed=cfg["synth_seed"],
    )


def _load_dataset(cfg):
    """Training (and optional test) data from files, or synthetic when no files are set."""
    if cfg["features"]:
        if not cfg["labels"]:
            raise ConfigError("'features' is set but 'labels' is not")
        Y = load_features(cfg["features"])
        labels = load_labels(cfg["labels"])
        test = None
        if cfg["test_features"]:
            test = (load_features(cfg["test_features"]), load_labels(cfg["test_labels"]))
    else:
        Y, labels, _, _ = generate_synthetic(_synth_spec(cfg))
        test = None
    if labels.shape[0] != Y.shape[1]:
        raise DataError(f"{Y.shape[1]} feature columns but {labels.shape[0]} labels")
    if test is not None and test[1].shape[0] != test[0].shape[1]:
        raise DataError("test features and labels disagree in length")
    return Y, labels, test


def _write_text(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


_REPORT_COLUMNS = [
    "t", "phase", "alpha", "beta", "objective", "tracked_objective",
    "decrease_G", "decrease_D", "decrease_A", "decrease_W", "delta_norm",
    "norm_G", "norm_A", "norm_W", "mean_nnz", "train_acc", "test_acc",
]


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report_tsv(report):
    """Structured report: a version line, a header line, one tab-separated row per iteration."""
    lines = ["# lcsparse-train-report 1", "\t".join(_REPORT_COLUMNS)]
    for r in report.records:
        lines.append("\t".join(_fmt(r[c]) for c in _REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


def render_report_table(report):
    head = f"{'iter':>4}  {'phase':<10} {'alpha':>6} {'objective':>14} {'delta':>10} {'nnz':>6} {'train':>7} {'test':>7}"
    lines = [head, "-" * len(head)]
    for r in report.records:
        test = "-" if r["test_acc"] is None else f"{r['test_acc']:.4f}"
        lines.append(
            f"{r['t']:>4}  {r['phase']:<10} {r['alpha']:>6.3f} {r['objective']:>14.6g} "
            f"{r['delta_norm']:>10.3e} {r['mean_nnz']:>6.2f} {r['train_acc']:>7.4f} {test:>7}"
        )
    return "\n".join(lines) + "\n"


def _apply_overrides(cfg, args):
    if getattr(args, "encoder", None):
        cfg["encoder"] = args.encoder
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    EncoderKind.parse(cfg["encoder"])
    return cfg


def _certify(cfg, out, c_factor=None):
    hp = hyperparams_from(cfg)
    Y, labels, _ = _load_dataset(cfg)
    if Y.shape[1] == 0:
        raise DataError("empty dataset")
    _, _, cert = run_certification(
        Y, labels, hp,
        n_iters=cfg["certify_iters"],
        topk_warmup=cfg["certify_topk_warmup"],
        enet_warmup=cfg["certify_enet_warmup"],
        g_steps=cfg["g_steps"],
        c_factor=cfg["c_factor"] if c_factor is None else c_factor,
    )
    _write_text(out / "certificate.txt", cert.to_text())
    _write_text(out / "certificate.json", cert.to_json())
    return cert


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    hp = hyperparams_from(cfg)
    b_cfg = BTrainConfig(cfg["b_learning_rate"], cfg["b_inner_steps"], cfg["b_grad_clip"])
    f_cfg = FistaConfig(max_iters=cfg["fista_max_iters"], rel_tol=cfg["fista_rel_tol"])
    Y, labels, test = _load_dataset(cfg)
    C = int(labels.max()) + 1
    targets = build_targets(labels, hp.K, C)
    state, report = train(
        Y, targets, hp, cfg["encoder"], b_cfg=b_cfg, fista_cfg=f_cfg,
        supervised_convex=cfg["supervised_convex"], g_steps=cfg["g_steps"],
        c_factor=cfg["c_factor"], eval_set=test,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(state, out / "model.sdl")
    _write_text(out / "report.tsv", render_report_tsv(report))
    table = render_report_table(report)
    _write_text(out / "report.txt", table)
    print(table, end="")
    if args.certify:
        cert = _certify(cfg, out)
        print(f"certificate: {'PASS' if cert.passed else 'FAIL'}")
        if not cert.passed:
            return EXIT_CERTIFY
    return EXIT_OK


def cmd_eval(args):
    state = load_model(args.model)
    Y = load_features(args.features)
    labels = load_labels(args.labels)
    if labels.shape[0] != Y.shape[1]:
        raise DataError(f"{Y.shape[1]} feature columns but {labels.shape[0]} labels")
    G = encode_test(Y, state)
    pred = classify(G, state.W)
    text = render_metrics(metrics(pred, labels, G, n_classes=state.n_classes))
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "metrics.txt", text)
    return EXIT_OK


def cmd_synth(args):
    cfg = load_config(args.config)
    for key in ("d", "N", "K", "C", "T", "noise_sigma", "cluster_separation"):
        val = getattr(args, key)
        if val is not None:
            cfg["synth_" + key] = val
    if args.seed is not None:
        cfg["synth_seed"] = args.seed
    spec = _synth_spec(cfg)
    n_test = args.test_N or 0
    if n_test < 0:
        raise ConfigError("--test-N must be nonnegative")
    full = SyntheticSpec(spec.d, spec.N + n_test, spec.K, spec.C, spec.T, spec.noise_sigma,
                         spec.cluster_separation, spec.seed)
    Y, labels, D, G = generate_synthetic(full)
    N = spec.N
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_features(Y[:, :N], out / "features.sdlf")
    save_labels(labels[:N], out / "labels.txt")
    save_features(D, out / "D_true.sdlf")
    save_features(G[:, :N], out / "G_true.sdlf")
    if n_test:
        save_features(Y[:, N:], out / "test_features.sdlf")
        save_labels(labels[N:], out / "test_labels.txt")
    print(f"wrote {spec.d}x{N} features to {out}")
    return EXIT_OK


def cmd_certify(args):
    base = default_config()
    base.update(CERTIFY_DEFAULTS)
    cfg = load_config(args.config, base)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cert = _certify(cfg, out, c_factor=args.c_factor)
    print(cert.to_text(), end="")
    return EXIT_OK if cert.passed else EXIT_CERTIFY


def build_parser():
    p = argparse.ArgumentParser(prog="lcsparse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config")
    t.add_argument("--certify", action="store_true", help="also certify the convex pipeline")
    t.add_argument("--encoder", choices=["topk", "fista"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic class-subspace dataset")
    s.add_argument("--config")
    s.add_argument("--d", type=int)
    s.add_argument("--N", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--C", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    s.add_argument("--cluster-separation", dest="cluster_separation", type=float)
    s.add_argument("--test-N", dest="test_N", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("certify", help="certify the supervised convex pipeline")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--c-factor", dest="c_factor", type=float,
                   help="G proximal constant as a multiple of L_G (below 1 forces a violation)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_certify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
