"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 budget exceeded or
intractable integral, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, bounds, coder
from .codecs import model_for, optimal_m
from .eval import empirical_curve, expected_redundancy, reproduce_figure
from .family import (
    FamilyError,
    IntractableError,
    ParamFamily,
    ParamVector,
    SamplingError,
    SequenceSample,
    all_sequences,
    jeffreys_integral,
    markov_log2_jeffreys_bracket,
    sample_sequences,
)
from .typeclass import BudgetExceeded

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 0, 2, 3, 4

_SIZE_RE = re.compile(r"^\s*(\d+)\s*(kb|mb|gb|b)?\s*$", re.IGNORECASE)
_SIZE_UNITS = {None: 1, "b": 1, "kb": 1024, "mb": 1024**2, "gb": 1024**3}


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


def parse_size(text: str) -> int:
    """``"8"`` -> 8, ``"256kB"`` -> 262144 (sizes are powers of 1024)."""
    match = _SIZE_RE.match(str(text))
    if not match:
        raise argparse.ArgumentTypeError(f"bad length {text!r}; use an integer with optional kB/MB suffix")
    value = int(match.group(1)) * _SIZE_UNITS[match.group(2) and match.group(2).lower()]
    if value < 1:
        raise argparse.ArgumentTypeError("length must be >= 1")
    return value


def parse_family(text: str) -> ParamFamily:
    try:
        return ParamFamily.parse(text)
    except FamilyError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def parse_m(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        m = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("m must be an integer or 'auto'") from None
    if not 0 <= m <= 20:
        raise argparse.ArgumentTypeError("m must lie in [0, 20]")
    return m


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


@dataclass
class RunConfig:
    subcommand: str
    family: str | None = None
    n: int | None = None
    m: int | str | None = None
    seed: int = 0
    samples: int | None = None
    out: str | None = None
    format: str = "csv"
    options: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        d = vars(args).copy()
        sub = d.pop("command")
        d.pop("func", None)
        fam = d.pop("family", None)
        base = {
            "subcommand": sub,
            "family": str(fam) if fam is not None else None,
            "n": d.pop("n", None),
            "m": d.pop("m", None),
            "seed": d.pop("seed", 0),
            "samples": d.pop("samples", None),
            "out": d.pop("out", None),
            "format": d.pop("format", "csv"),
        }
        cfg = cls(**base, options=d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.samples is not None and self.samples < 1:
            raise ConfigError("sample counts must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")

    def to_meta(self) -> dict:
        return {"redlab_version": __version__, "config": asdict(self)}


def _write_meta(cfg: RunConfig, out_dir: Path, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = cfg.to_meta() | (extra or {})
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))


def _theta(family: ParamFamily, values: list[float]) -> ParamVector:
    """Row-major parameters; a single number for a binary memoryless family is ``P(1)``."""
    probs = np.asarray(values, dtype=float)
    if family.kind.value == "memoryless" and family.k == 2 and probs.size == 1:
        return ParamVector.bernoulli(float(probs[0]))
    if probs.size != int(np.prod(family.param_shape)):
        raise ConfigError(f"{family} needs {int(np.prod(family.param_shape))} theta values, got {probs.size}")
    return ParamVector(family, probs.reshape(family.param_shape))


def _bits(v: float) -> str:
    return f"{v:.3f}"


# -- subcommands -----------------------------------------------------------------


def cmd_bounds(cfg: RunConfig) -> int:
    family = ParamFamily.parse(cfg.family)
    n = cfg.n
    opts = cfg.options
    d = family.d
    report: dict = {"family": str(family), "d": d, "n": n}
    report["two_stage_penalty"] = bounds.two_stage_penalty(d)
    report["two_stage_penalty_asymptotic"] = bounds.two_stage_penalty_asymptotic(d)
    report["log2_unit_ball_volume"] = bounds.log_unit_ball_volume(d) / math.log(2)
    report["main_term"] = bounds.main_term(d, n)
    if opts.get("main_term_only"):
        lj = opts.get("log2_integral")
        source = "caller-supplied"
        if lj is None and family.kind.value == "markov1":
            lo, hi = markov_log2_jeffreys_bracket(family.k, seed=cfg.seed)
            lj, source = 0.5 * (lo + hi), f"AM-GM/Jensen bracket [{lo:.1f}, {hi:.1f}]"
        report["approximate"] = True
        report["log2_integral"] = lj
        report["log2_integral_source"] = source if lj is not None else "omitted"
        if lj is not None:
            report["minimax"] = 0.5 * d * math.log2(n / (2 * math.pi)) + lj
            report["minimax_two_stage"] = report["minimax"] + report["two_stage_penalty"]
    else:
        J = jeffreys_integral(family, seed=cfg.seed)
        report["integral"] = J.to_dict()
        report["minimax"] = bounds.minimax_redundancy(family, n, J)
        report["minimax_two_stage"] = bounds.minimax_two_stage(family, n, J)
        report["approximate"] = False
    if opts.get("json"):
        print(json.dumps(report, indent=2))
    else:
        print(f"family            {family} (d={d}), n={n}")
        if "integral" in report:
            J = report["integral"]
            se = f" +/- {J['se']:.4g}" if J["se"] else ""
            print(f"jeffreys integral {J['value']:.6g}{se} ({J['method']})")
        elif report.get("log2_integral") is not None:
            print(f"log2 integral     {report['log2_integral']:.1f} ({report['log2_integral_source']}, approximate)")
        print(f"main term         {_bits(report['main_term'])} bits" + (" [approximate]" if report["approximate"] else ""))
        if "minimax" in report:
            print(f"minimax           {_bits(report['minimax'])} bits")
            print(f"minimax two-stage {_bits(report['minimax_two_stage'])} bits")
        print(f"g(d)              {_bits(report['two_stage_penalty'])} bits (asymptotic {_bits(report['two_stage_penalty_asymptotic'])})")
        print(f"log2 C_d          {report['log2_unit_ball_volume']:.3f}")
    if cfg.out:
        _write_meta(cfg, Path(cfg.out), {"report": report})
    return EXIT_OK


def cmd_curve(cfg: RunConfig) -> int:
    family = ParamFamily.parse(cfg.family)
    p0 = cfg.options.get("p0") or bounds.default_p0_grid()
    kind = cfg.options["kind"]
    J = jeffreys_integral(family, seed=cfg.seed)
    if kind == "thm1":
        curve = bounds.thm1_curve(family, cfg.n, p0, J)
    elif kind == "thm2":
        curve = bounds.thm2_curve(family, cfg.n, p0, J)
    else:
        curve = bounds.minimax_line(family, cfg.n, p0, kind == "minimax2p", J)
    for p, r, flag in curve.points():
        suffix = "" if flag == "ok" else f" [{flag}]"
        print(f"P0={p:.3f} R0={_bits(r)}{suffix}")
    if cfg.out:
        out = Path(cfg.out)
        _write_meta(cfg, out, {"provenance": curve.provenance})
        name = f"{kind}-n{cfg.n}.{cfg.format}"
        (out / name).write_text(curve.to_csv() if cfg.format == "csv" else curve.to_json())
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    family = ParamFamily.parse(cfg.family)
    opts = cfg.options
    kind = opts["model"]
    m = cfg.m
    if kind in ("two_stage", "cond_two_stage") and (m is None or m == "auto"):
        m, achieved = optimal_m(family, cfg.n, "minimax", kind)
        print(f"optimal m = {m} (minimax {_bits(achieved)} bits over the interior grid)")
    theta_text = opts.get("theta")
    if theta_text is not None:
        theta = _theta(family, theta_text)
        model = model_for(kind, family, n=cfg.n, m=m, theta=theta)
        est = expected_redundancy(theta, model, cfg.n, mode=opts.get("mode", "auto"), samples=cfg.samples or 10_000, seed=cfg.seed)
        se = f" +/- {est.se:.3g}" if est.se else ""
        print(f"expected redundancy {_bits(est.value)}{se} bits ({est.mode})")
        result = {"redundancy": est.value, "se": est.se, "mode": est.mode, "m": m}
        if est.mode != "monte-carlo" and est.value < -1e-9 and kind != "two_stage":
            raise InvariantViolation(f"negative redundancy {est.value} for a complete code")
    else:
        if kind == "ideal":
            raise ConfigError("an empirical curve needs a universal model, not 'ideal'")
        r0 = opts.get("r0") or list(np.round(np.linspace(0, 0.5 * family.d * math.log2(cfg.n) + 2, 21), 6))
        curve = empirical_curve(family, cfg.n, kind, cfg.samples or 1000, cfg.seed, r0, m=m, threads=opts.get("threads", 1))
        for r, f, h in curve.points():
            print(f"R0={_bits(r)} fraction={f:.3f} +/- {h:.3f}")
        result = {"m": curve.m, "points": curve.points()}
        if np.any(np.diff(curve.fraction) > 0):
            raise InvariantViolation("exceedance fraction increased with R0")
    if cfg.out:
        out = Path(cfg.out)
        _write_meta(cfg, out, {"result": result})
        if "points" in result:
            lines = ["series,n,p0_or_r0,value,ci"] + [f"{kind},{cfg.n},{r!r},{f!r},{h!r}" for r, f, h in result["points"]]
            (out / f"empirical-{kind}-n{cfg.n}.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_figures(cfg: RunConfig) -> int:
    opts = cfg.options
    bundle = reproduce_figure(
        opts["id"], empirical=opts.get("empirical", False), theta_samples=cfg.samples or 1000,
        seed=cfg.seed, threads=opts.get("threads", 1),
    )
    bundle.meta["run"] = cfg.to_meta()
    out = Path(cfg.out or f"{opts['id']}-bundle")
    bundle.write(out)
    print(f"{bundle.figure}: {len(bundle.curves)} bound series, {len(bundle.empirical)} empirical series -> {out}")
    for name, c in bundle.curves.items():
        if c.kind.value in ("minimax", "minimax2p"):
            print(f"  {name}: {_bits(float(c.r0[0]))} bits")
    return EXIT_OK


def cmd_codec(cfg: RunConfig) -> int:
    family = ParamFamily.parse(cfg.family)
    opts = cfg.options
    kind = opts["model"]
    theta = None
    if kind == "ideal":
        if opts.get("theta") is None:
            raise ConfigError("--model ideal needs --theta")
        theta = _theta(family, opts["theta"])
    m = cfg.m
    if kind == "two_stage" and (m is None or m == "auto"):
        m, _ = optimal_m(family, cfg.n, "minimax", "two_stage")
    model = model_for(kind, family, n=cfg.n, m=m, theta=theta)

    if opts.get("decode"):
        stream, cmodel, n = coder.unpack(Path(opts["decode"]).read_bytes())
        x = coder.decode(stream, cmodel, n)
        print(str(x))
        return EXIT_OK

    if opts.get("input") is not None:
        x = SequenceSample(family, np.array([int(c) for c in opts["input"].replace(" ", "").split(",")] if "," in opts["input"] else [int(c) for c in opts["input"]]))
        stream = coder.encode(x, model)
        print(f"{x.n} symbols -> {stream.bit_count} bits (ideal {model.length(x):.3f})")
        if opts.get("output"):
            Path(opts["output"]).write_bytes(coder.pack(stream, model, x.n))
        return EXIT_OK

    if opts.get("roundtrip_all"):
        X = all_sequences(family.k, cfg.n)
    else:
        count = cfg.samples or 1000
        rng = np.random.default_rng(cfg.seed)
        src = theta if theta is not None else ParamVector(family, np.full(family.param_shape, 1.0 / family.k))
        X = sample_sequences(src, cfg.n, count, rng)
    ok = within = 0
    excess = []
    for row in X:
        x = SequenceSample(family, row)
        stream = coder.encode(x, model)
        ok += np.array_equal(coder.decode(stream, model, cfg.n).symbols, row)
        within += stream.bit_count <= coder.ceil_bound(x, model)
        excess.append(stream.bit_count - model.length(x))
    total = X.shape[0]
    print(f"{ok}/{total} round-trips OK")
    print(f"{within}/{total} within ceil(ideal)+2 bits; mean overhead {np.mean(excess):.3f} bits")
    if cfg.out:
        _write_meta(cfg, Path(cfg.out), {"roundtrips_ok": ok, "total": total, "within_bound": within})
    if ok != total or within != total:
        raise InvariantViolation("coder round-trip or length bound failed")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redlab", description="Finite-length redundancy laboratory for universal source coding.")
    p.add_argument("--version", action="version", version=f"redlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, family=True, n=True):
        if family:
            sp.add_argument("--family", type=parse_family, required=True, help="family spec, e.g. memoryless:3 or markov1:2")
        if n:
            sp.add_argument("--n", type=parse_size, required=True, help="sequence length; kB/MB suffixes multiply by 1024")
        sp.add_argument("--seed", type=int, default=0, help="64-bit unsigned master seed (default 0)")
        sp.add_argument("--out", help="output directory (meta.json and data files)")

    sp = sub.add_parser("bounds", help="minimax redundancy, two-stage penalty and unit-ball volume")
    common(sp)
    sp.add_argument("--json", action="store_true", help="machine-readable output")
    sp.add_argument("--main-term-only", action="store_true", help="skip the exact Jeffreys integral (large families)")
    sp.add_argument("--log2-integral", type=float, help="external log2 Jeffreys constant for --main-term-only")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("curve", help="probability bound curve (P0, R0)")
    common(sp)
    sp.add_argument("--kind", choices=["thm1", "thm2", "minimax", "minimax2p"], default="thm1")
    sp.add_argument("--p0", type=_float_list, help="comma-separated P0 values (default 0.01..0.99)")
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("eval", help="expected redundancy at theta, or an empirical exceedance curve")
    common(sp)
    sp.add_argument("--model", choices=["ideal", "two_stage", "cond_two_stage", "mixture"], default="cond_two_stage")
    sp.add_argument("--m", type=parse_m, default="auto", help="grid bits or 'auto' (minimax-optimal)")
    sp.add_argument("--theta", type=_float_list, help="source parameters, comma-separated (row-major for Markov)")
    sp.add_argument("--mode", choices=["auto", "exact", "naive", "monte-carlo"], default="auto")
    sp.add_argument("--samples", type=int, help="theta samples for curves (default 1000) or sequence samples for MC")
    sp.add_argument("--r0", type=_float_list, help="comma-separated R0 levels for the empirical curve")
    sp.add_argument("--threads", type=int, default=1, help="worker cap; output does not depend on it")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("figures", help="write a figure dataset bundle")
    common(sp, family=False, n=False)
    sp.add_argument("--id", choices=["fig1", "fig2", "fig3", "fig4"], required=True)
    sp.add_argument("--empirical", action="store_true", help="overlay empirical curves at reduced n (figs 1-3)")
    sp.add_argument("--samples", type=int, help="theta samples for empirical overlays (default 1000)")
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_figures)

    sp = sub.add_parser("codec", help="arithmetic-coding round trips and encode/decode")
    common(sp)
    sp.add_argument("--model", choices=["ideal", "mixture", "two_stage"], default="mixture")
    sp.add_argument("--m", type=parse_m, default="auto")
    sp.add_argument("--theta", type=_float_list)
    sp.add_argument("--samples", type=int, help="random round trips (default 1000)")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--roundtrip-all", action="store_true", help="every sequence of length n")
    g.add_argument("--input", help="symbols to encode, e.g. 0110 or 0,2,1")
    g.add_argument("--decode", help="URLB container file to decode")
    sp.add_argument("--output", help="container file for --input")
    sp.set_defaults(func=cmd_codec)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_args(args)
        return args.func(cfg)
    except (InvariantViolation, coder.CodingError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except IntractableError as exc:
        print(f"error: {exc}\nhint: rerun with --main-term-only", file=sys.stderr)
        return EXIT_BUDGET
    except (BudgetExceeded, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

if __name__ == "__main__":
    sys.exit(main())
