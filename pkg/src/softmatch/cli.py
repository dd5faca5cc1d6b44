"""Command-line front end.

Subcommands: equiv, w1, bound, probe, dynamics, deq, invert, lemmas.
Machine-readable JSON goes to stdout (or --out); a one-line human summary
goes to stderr. Exit codes: 0 all checks pass, 1 invariant violation,
2 usage or configuration error. Every report embeds the seed, a hash of
the resolved configuration, and the library version, which is enough to
replay any reported instance.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, bounds, probes
from .dynamics import TransformerLayerSpec, deq_solve, invert_residual, run_particles
from .equiv import run_equivalence
from .errors import ConfigError
from .kernels import (
    AttentionConfig,
    FfnConfig,
    Head,
    IdentityLookup,
    LinearLookup,
    MultiHeadConfig,
)
from .measures import DomainBox, PointCloud, load_cloud_any, load_measure_any
from .potentials import DotProduct, Gaussian, ScaledDotProduct
from .probes import ProbeConfig, probe_component, probe_contraction
from .transport import w1

log = logging.getLogger("softmatch")


# ---------------------------------------------------------------------------
# Strict config parsing (unknown fields rejected)
# ---------------------------------------------------------------------------

def _check_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)} in {where}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"missing fields {sorted(missing)} in {where}")


def _matrix(obj, where: str) -> np.ndarray:
    try:
        m = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where} is not numeric: {e}") from None
    if m.ndim != 2:
        raise ConfigError(f"{where} must be a matrix")
    return m


def build_potential(spec: dict, default_dim: int | None = None):
    _check_keys(spec, {"kind", "scale", "dim", "W_Q", "W_K"}, {"kind"}, "potential")
    kind = spec["kind"]
    if kind == "gaussian":
        dim = spec.get("dim", default_dim)
        if dim is None:
            raise ConfigError("gaussian potential needs 'dim' (or a box/-d flag)")
        return Gaussian(int(dim))
    if kind == "dot_product":
        dim = spec.get("dim", default_dim)
        if dim is None:
            raise ConfigError("dot_product potential needs 'dim' (or a box/-d flag)")
        return DotProduct(scale=float(spec.get("scale", 1.0)), dim=int(dim))
    if kind == "scaled_dot_product":
        if "W_Q" not in spec or "W_K" not in spec:
            raise ConfigError("scaled_dot_product needs W_Q and W_K")
        return ScaledDotProduct(
            w_q=_matrix(spec["W_Q"], "W_Q"),
            w_k=_matrix(spec["W_K"], "W_K"),
            scale=float(spec.get("scale", 1.0)),
        )
    raise ConfigError(f"unknown potential kind {kind!r}")


def build_lookup(spec: dict | None, dim: int):
    if spec is None:
        return IdentityLookup(dim)
    _check_keys(spec, {"kind", "W_V"}, {"kind"}, "lookup")
    kind = spec["kind"]
    if kind == "identity":
        return IdentityLookup(dim)
    if kind == "linear":
        if "W_V" not in spec:
            raise ConfigError("linear lookup needs W_V")
        return LinearLookup(_matrix(spec["W_V"], "W_V"))
    raise ConfigError(f"unknown lookup kind {kind!r}")


def build_attention(config: dict, default_dim: int | None = None) -> AttentionConfig:
    _check_keys(
        config, {"potential", "lookup", "heads", "ffn", "box"}, set(), "config"
    )
    if "potential" not in config:
        raise ConfigError("config needs a 'potential'")
    pot = build_potential(config["potential"], default_dim)
    return AttentionConfig(potential=pot, lookup=build_lookup(config.get("lookup"), pot.dim))


def build_multi_head(config: dict, default_dim: int | None = None) -> MultiHeadConfig:
    heads = []
    for i, spec in enumerate(config["heads"]):
        _check_keys(spec, {"potential", "lookup", "W_O"}, {"potential", "W_O"}, f"heads[{i}]")
        pot = build_potential(spec["potential"], default_dim)
        cfg = AttentionConfig(pot, build_lookup(spec.get("lookup"), pot.dim))
        heads.append(Head(attention=cfg, w_o=_matrix(spec["W_O"], f"heads[{i}].W_O")))
    return MultiHeadConfig(heads)


def build_layer(config: dict, default_dim: int | None = None):
    """Single attention config, or a multi-head (+ optional FFN) layer."""
    _check_keys(
        config, {"potential", "lookup", "heads", "ffn", "box"}, set(), "config"
    )
    if config.get("heads"):
        mh = build_multi_head(config, default_dim)
        if config.get("ffn"):
            return TransformerLayerSpec(mh, build_ffn(config["ffn"]))
        return mh
    return build_attention(config, default_dim)


def build_ffn(spec: dict) -> FfnConfig:
    _check_keys(spec, {"layers", "activation"}, {"layers"}, "ffn")
    layers = []
    for i, layer in enumerate(spec["layers"]):
        _check_keys(layer, {"W", "b"}, {"W"}, f"ffn.layers[{i}]")
        w = _matrix(layer["W"], f"ffn.layers[{i}].W")
        b = np.asarray(layer.get("b", np.zeros(w.shape[0])), dtype=np.float64)
        layers.append((w, b))
    return FfnConfig(layers, spec.get("activation", "identity"))


def build_box(spec: dict | None, d: int | None, radius: float | None) -> DomainBox:
    if spec is not None:
        _check_keys(spec, {"lower", "upper", "radius"}, set(), "box")
        if "radius" in spec:
            if d is None:
                raise ConfigError("box radius form needs the dimension")
            return DomainBox.cube(float(spec["radius"]), int(d))
        if "lower" not in spec or "upper" not in spec:
            raise ConfigError("box needs lower and upper (or radius)")
        return DomainBox(spec["lower"], spec["upper"])
    if radius is not None:
        if d is None:
            raise ConfigError("a box radius needs the dimension")
        return DomainBox.cube(float(radius), int(d))
    return DomainBox.unbounded(d)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Subcommand implementations; each returns (report_dict, ok)
# ---------------------------------------------------------------------------

def cmd_equiv(args, config):
    report = run_equivalence(
        trials=args.trials,
        d_choices=tuple(int(x) for x in args.dims.split(",")),
        n_max=args.n_max,
        seed=args.seed,
        sabotage=args.sabotage,
    )
    return report, bool(report["pass"])


def cmd_w1(args, config):
    mu = load_measure_any(args.source)
    nu = load_measure_any(args.target)
    res = w1(mu, nu, method=args.method)
    return res.to_dict(include_plan=args.plan), True


def _probe_cfg_from_args(args, d: int, domain: DomainBox) -> ProbeConfig:
    return ProbeConfig(
        seed=args.seed,
        trials=args.trials,
        d=d,
        n_range=(args.n_min, args.n_max),
        domain=domain,
        sampling_radius=args.radius,
        perturbation=args.perturbation,
        jitter_sigma=args.jitter_sigma,
    )


def cmd_bound(args, config):
    d = args.d
    theorem = args.theorem
    if theorem in ("unbounded-gaussian", "unbounded-equal-n"):
        cfg = build_attention(config, default_dim=d) if config.get("potential") else None
        lookup = cfg.lookup if cfg else build_lookup(config.get("lookup"), d)
        if theorem == "unbounded-gaussian":
            rep = bounds.bound_unbounded_gaussian(
                lookup, d, args.n, args.m, include_tight_c=args.tight_c
            )
        else:
            rep = bounds.bound_unbounded_equal_n(lookup, d, args.n)
        return rep.to_dict(), rep.status == "ok"
    box = build_box(config.get("box"), d, args.box_radius)
    cfg = build_attention(config, default_dim=box.dim or d)
    if theorem == "bounded":
        rep = bounds.bound_bounded_contraction(cfg, box)
        return rep.to_dict(), rep.status == "ok"
    if theorem == "component-taus":
        rep = bounds.bound_component_taus(cfg, box)
        return rep.to_dict(), rep.status == "ok"
    if theorem == "pointwise":
        val = bounds.bound_pointwise_query(cfg, box)
        return {"theorem": "BoundedPointwiseCorollary", "value": val}, True
    if theorem == "cross-attention":
        if args.q is None:
            raise ConfigError("cross-attention bound needs --q")
        q = np.array([float(v) for v in args.q.split(",")])
        val = bounds.bound_cross_attention(cfg, box, q)
        return {"theorem": "CrossAttention", "value": val, "q": q.tolist()}, True
    raise ConfigError(f"unknown theorem {theorem!r}")


def cmd_probe(args, config):
    d = args.d
    theorem = args.theorem
    if theorem == "unbounded-gaussian":
        domain = DomainBox.unbounded(d)
        probe = _probe_cfg_from_args(args, d, domain)
        cfg = build_attention(
            config if config.get("potential") else {"potential": {"kind": "gaussian"}},
            default_dim=d,
        )
        # conservative: the bound at the smallest support size any trial
        # can draw (the constant grows with min(N, M))
        bound = bounds.bound_unbounded_gaussian(
            cfg.lookup, d, args.n_min, args.n_min
        ).value
        result = probe_contraction(cfg, probe, bound=bound)
    elif theorem == "bounded":
        box = build_box(config.get("box"), d, args.box_radius or 1.0)
        probe = _probe_cfg_from_args(args, d, box)
        cfg = build_attention(
            config if config.get("potential") else {"potential": {"kind": "gaussian"}},
            default_dim=d,
        )
        bound = bounds.bound_bounded_contraction(cfg, box).value
        result = probe_contraction(cfg, probe, bound=bound)
    elif theorem.startswith("component-"):
        kind = {
            "component-projection": "projection",
            "component-lookup": "lookup",
            "component-softmatch-x": "softmatch_in_x",
            "component-softmatch-measure": "softmatch_in_measure",
        }.get(theorem)
        if kind is None:
            raise ConfigError(f"unknown probe theorem {theorem!r}")
        needs_box = kind in ("softmatch_in_x", "softmatch_in_measure")
        box = build_box(config.get("box"), d, args.box_radius or (1.0 if needs_box else None))
        probe = _probe_cfg_from_args(args, d, box)
        potential = None
        lookup = None
        if needs_box:
            potential = build_potential(
                config.get("potential", {"kind": "gaussian"}), default_dim=d
            )
        if kind == "lookup":
            lookup = build_lookup(config.get("lookup"), d)
        result = probe_component(kind, probe, potential=potential, lookup=lookup)
    else:
        raise ConfigError(f"unknown probe theorem {theorem!r}")

    if args.ratios_csv:
        with open(args.ratios_csv, "w") as fh:
            fh.write("ratio\n")
            for r in result.ratios:
                fh.write(f"{r!r}\n")
    return result.to_dict(), result.violations == 0


def cmd_dynamics(args, config):
    x0 = load_cloud_any(args.cloud)
    layer = build_layer(config, default_dim=x0.dim)
    traj = run_particles(layer, x0, steps=args.steps)
    if args.states_out:
        with open(args.states_out, "w") as fh:
            for state in traj.states:
                fh.write(json.dumps({"points": state.points.tolist()}) + "\n")
    report = {
        "depth": traj.depth,
        "per_step_w1": list(traj.per_step_w1),
        "final_state": traj.states[-1].points.tolist(),
    }
    return report, True


def cmd_deq(args, config):
    x = load_cloud_any(args.cloud)
    layer = build_layer(config, default_dim=x.dim)
    h0 = load_cloud_any(args.h0) if args.h0 else PointCloud(np.zeros_like(x.points))
    res = deq_solve(layer, x, h0, tol=args.tol, max_iter=args.max_iter)
    return res.to_dict(), res.converged


def cmd_invert(args, config):
    y = load_cloud_any(args.cloud)
    layer = build_layer(config, default_dim=y.dim)
    res = invert_residual(layer, y, tol=args.tol, max_iter=args.max_iter, seed=args.seed)
    return res.to_dict(), res.converged


def cmd_lemmas(args, config):
    report = {}
    ok = True
    ran = False
    if args.ratio or not (args.product or args.local_lip):
        ran = True
        r = probes.check_ratio_lemma(args.nmax, seed=args.seed)
        report["ratio_lemma"] = r
        ok = ok and r["all_within_bound"] and r["ascent_consistent"]
    if args.product or not (args.ratio or args.local_lip):
        ran = True
        r = probes.check_product_lemma(args.trials, seed=args.seed)
        report["product_lemma"] = r
        ok = ok and r["subadditive"]
    if args.local_lip or not (args.ratio or args.product):
        ran = True
        r = probes.check_local_lip_lemma(seed=args.seed)
        report["local_lip_lemma"] = r
        ok = ok and r["all_consistent"]
    if not ran:
        raise ConfigError("nothing to check")
    return report, ok


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="softmatch",
        description="Attention as measure transport: kernels, exact W1, "
        "contraction bounds, and empirical probes.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON config file (overrides flags)")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")

    sp = sub.add_parser("equiv", help="kernel-vs-matrix equivalence suite")
    common(sp)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--dims", default="1,2,4,8")
    sp.add_argument("--n-max", type=int, default=16)
    sp.add_argument("--sabotage", action="store_true",
                    help="perturb one weight; the suite must fail")
    sp.set_defaults(fn=cmd_equiv)

    sp = sub.add_parser("w1", help="exact W1 between two point-cloud files")
    common(sp)
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--method", choices=("auto", "flow", "assignment"), default="auto")
    sp.add_argument("--plan", action="store_true", help="include the coupling matrix")
    sp.set_defaults(fn=cmd_w1)

    sp = sub.add_parser("bound", help="evaluate a theorem constant")
    common(sp)
    sp.add_argument(
        "--theorem",
        required=True,
        choices=(
            "bounded", "pointwise", "unbounded-gaussian", "unbounded-equal-n",
            "cross-attention", "component-taus",
        ),
    )
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--box-radius", type=float)
    sp.add_argument("--q", help="comma-separated query vector")
    sp.add_argument("--tight-c", action="store_true",
                    help="attach the numerically maximized gradient constant")
    sp.set_defaults(fn=cmd_bound)

    sp = sub.add_parser("probe", help="randomized contraction probe")
    common(sp)
    sp.add_argument(
        "--theorem",
        required=True,
        choices=(
            "bounded", "unbounded-gaussian", "component-projection",
            "component-lookup", "component-softmatch-x",
            "component-softmatch-measure",
        ),
    )
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--n-min", type=int, default=2)
    sp.add_argument("--n-max", type=int, default=8)
    sp.add_argument("--radius", type=float, default=5.0)
    sp.add_argument("--box-radius", type=float)
    sp.add_argument("--perturbation", choices=probes.PERTURBATIONS, default="resample")
    sp.add_argument("--jitter-sigma", type=float, default=0.1)
    sp.add_argument("--ratios-csv", help="dump every sampled ratio for plotting")
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("dynamics", help="iterate self-attention layers")
    common(sp)
    sp.add_argument("cloud")
    sp.add_argument("--steps", type=int, default=4)
    sp.add_argument("--states-out", help="JSON-lines trajectory export")
    sp.set_defaults(fn=cmd_dynamics)

    sp = sub.add_parser("deq", help="deep-equilibrium fixed point")
    common(sp)
    sp.add_argument("cloud")
    sp.add_argument("--h0", help="initial state file (default: zeros)")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.set_defaults(fn=cmd_deq)

    sp = sub.add_parser("invert", help="invert a residual attention block")
    common(sp)
    sp.add_argument("cloud")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.set_defaults(fn=cmd_invert)

    sp = sub.add_parser("lemmas", help="auxiliary lemma checks")
    common(sp)
    sp.add_argument("--ratio", action="store_true")
    sp.add_argument("--nmax", type=int, default=200)
    sp.add_argument("--product", action="store_true")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--local-lip", action="store_true")
    sp.set_defaults(fn=cmd_lemmas)

    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SOFTMATCH_LOG_LEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(getattr(args, "config", None))
        report, ok = args.fn(args, config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 2

    envelope = {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config_hash": _config_hash(
            {"args": {k: v for k, v in vars(args).items() if k != "fn"}, "config": config}
        ),
        "version": __version__,
        "report": report,
    }
    blob = json.dumps(envelope, indent=2)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(blob + "\n")
    else:
        print(blob)
    print(
        f"softmatch {args.command}: {'pass' if ok else 'FAIL'}",
        file=sys.stderr,
    )
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
