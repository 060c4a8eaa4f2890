"""focklab command line: evaluate kernels, Berezin transforms and operator norms,
and classify Toeplitz products T_u T_v* with u = e^g, v = e^{-g}.

Every command writes ``<name>.report.json`` (schema 1) and, when the result
is curve-valued, ``<name>.curve.csv`` with columns parameter, value, est_err.
Exit codes: 0 success, 2 evidence contradicts the theorem verdict,
1 numeric failure, 64 bad usage.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (LEMMA_IDS, direct_log_integral, envelope_verify, hx_analyze, hx_problem,
                          laplace_estimate, rate_verify)
from .berezin import product_sweep, rate_check, ray_sweep, worst_ray
from .operator import log_sarason_F, lemma3_points, norm_growth_curve, schur_bound
from .quadrature import QuadratureSpec
from .special_fn import _BRANCH_NAMES, kernel, kernel_diag_asymptotic, log_kernel_diag, ml_log
from .symbols import FockContext, PolynomialSymbol, format_coefficient, membership_test, parse_coefficient

SCHEMA = 1
EXIT_OK, EXIT_ERROR, EXIT_INCONSISTENT, EXIT_USAGE = 0, 1, 2, 64
COMMANDS = ("ml-eval", "kernel", "berezin", "compress-norm", "schur", "classify", "laplace-check", "envelope")
CLASSIFY_NS = (24, 48, 96, 192)
BEREZIN_XS = (1.0, 1.316, 1.732, 2.280, 3.0)
F_XS = tuple(float(x) for x in np.geomspace(1.0, 12.0, 8))


def load_thresholds(path: str | None = None) -> dict:
    if path:
        text = Path(path).read_text()
    else:
        text = resources.files("focklab").joinpath("thresholds.json").read_text()
    data = json.loads(text)
    for key in ("plateau", "blowup", "rate_tolerance"):
        if key not in data:
            raise ValueError(f"thresholds file lacks {key!r}")
    return data


@dataclass
class RunConfig:
    command: str
    m: float = 1.0
    g: tuple = (0j,)
    seed: int = 42
    out_dir: str = "."
    name: str | None = None
    n_radial: int | None = None
    n_angular: int | None = None
    tol: float | None = None
    thresholds: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if not self.m >= 1:
            raise ValueError("m must be >= 1")
        if self.name is None:
            self.name = self.command

    @property
    def symbol(self) -> PolynomialSymbol:
        return PolynomialSymbol(tuple(self.g))

    @property
    def spec(self) -> QuadratureSpec:
        return QuadratureSpec(self.n_radial or 64, self.n_angular or 64, None, self.tol or 1e-14)

    def to_dict(self) -> dict:
        d = {"command": self.command, "m": self.m, "g": [format_coefficient(c) for c in self.g],
             "seed": self.seed, "quadrature": {"n_radial": self.n_radial, "n_angular": self.n_angular,
                                                "tol": self.tol}}
        d["options"] = {k: v for k, v in sorted(self.options.items())}
        return d


@dataclass
class ClassifierVerdict:
    theorem_verdict: str
    evidence: dict
    consistent: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_report(payload: dict) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "value", "est_err"])
    for p, v, e in rows:
        w.writerow([p, repr(float(v)), repr(float(e))])
    return buf.getvalue()


def _complex_list(text: str) -> list:
    return [parse_coefficient(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def _top_delta(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v[-1] - v[len(v) // 2])


def _trend_verdict(values, th: dict) -> str:
    """bounded-consistent when the top half is flat, unbounded-consistent
    when it rises monotonically by more than the blow-up factor (log)."""
    v = np.asarray(values, dtype=float)
    top = v[len(v) // 2:]
    delta = _top_delta(v)
    if delta <= math.log(th["plateau"]):
        return "bounded-consistent"
    if np.all(np.diff(top) > 0) and (delta > math.log(th["blowup"]) or np.all(np.diff(np.diff(top)) >= -1e-9)):
        return "unbounded-consistent"
    return "inconclusive"


# ---------------------------------------------------------------- classify

def classify(g: PolynomialSymbol, ctx, thresholds: dict | None = None, Ns=CLASSIFY_NS,
             berezin_xs=BEREZIN_XS, f_xs=F_XS, spec: QuadratureSpec | None = None, seed: int = 42,
             schur: bool = True) -> ClassifierVerdict:
    """Theorem verdict (bounded iff deg g <= m) plus numeric evidence.

    Evidence: the compression-norm curve, the Berezin product along the worst
    ray, the Schur bound (bounded cases), and |F| along the test points where
    an unbounded product must make F blow up.  ``consistent`` is False only
    when some evidence contradicts the verdict; inconclusive items are listed.
    """
    th = thresholds or load_thresholds()
    m = float(getattr(ctx, "m", ctx))
    fctx = ctx if isinstance(ctx, FockContext) else FockContext(m)
    spec = spec or QuadratureSpec(64, 64, tol=1e-14)
    d = g.degree
    for sym in (g, -g):
        mem = membership_test(sym, fctx)
        if mem.in_space is False or (mem.in_space is None and 2 * g.leading_modulus >= 1):
            return ClassifierVerdict("n/a", {"membership": {"in_space": mem.in_space, "reason": mem.reason}},
                                     True, "symbol not in space")
    verdict = "bounded" if d <= m else "unbounded"
    evidence = {}

    curve = norm_growth_curve(g, fctx, Ns, th["plateau"], th["blowup"], seed=seed)
    evidence["norm_curve"] = curve.to_dict()

    if d >= 1:
        ps = product_sweep(g, m, berezin_xs, spec)
        bv = _trend_verdict(ps.log_values, th)
        evidence["berezin_ray"] = {"phi": ps.phi, "xs": list(ps.xs), "log_product": list(ps.log_values),
                                   "top_delta": _top_delta(ps.log_values), "verdict": bv}
        lf = [float(log_sarason_F(g, 1.0, m, *lemma3_points(g, m, x))[0]) for x in f_xs]
        evidence["F_grid"] = {"xs": list(f_xs), "log_abs_F": lf, "top_delta": _top_delta(lf),
                              "verdict": _trend_verdict(lf, th)}
    else:
        evidence["berezin_ray"] = {"log_product": [0.0], "verdict": "bounded-consistent"}
        evidence["F_grid"] = {"log_abs_F": [0.0], "verdict": "bounded-consistent"}

    if verdict == "bounded" and schur:
        rep = schur_bound(g, m, grid=[0.0, 1.0, 2.0, 3.0], spec=spec, a_sweep=(), n_psi=4)
        sigma = max(curve.sigmas)
        ok = sigma <= rep.norm_bound * (1 + 1e-6)
        evidence["schur_sup"] = {"sup_value": rep.sup_value, "norm_bound": rep.norm_bound,
                                 "sigma_max": sigma,
                                 "verdict": "bounded-consistent" if ok else "unbounded-consistent"}

    opposite = "unbounded-consistent" if verdict == "bounded" else "bounded-consistent"
    contradicting = [k for k, v in evidence.items() if v.get("verdict") == opposite]
    inconclusive = [k for k, v in evidence.items() if v.get("verdict") == "inconclusive"]
    reason = ""
    if contradicting:
        reason = "contradicting evidence: " + ", ".join(contradicting)
    elif inconclusive:
        reason = "inconclusive evidence: " + ", ".join(inconclusive)
    return ClassifierVerdict(verdict, evidence, not contradicting, reason)


# ---------------------------------------------------------------- commands

def _cmd_ml_eval(cfg: RunConfig):
    zs = cfg.options["z"]
    res, rows = [], []
    for z in zs:
        la, ph, er, code = ml_log(np.array([z]), cfg.m)
        res.append({"z": z, "log_abs": float(la[0]), "phase": float(ph[0]), "est_rel_err": float(er[0]),
                    "branch": _BRANCH_NAMES[int(code[0])]})
        rows.append((format_coefficient(z), float(la[0]), float(er[0])))
    return {"values": res}, rows, EXIT_OK


def _cmd_kernel(cfg: RunConfig):
    out, rows = {}, []
    zs, ws = cfg.options.get("z") or [], cfg.options.get("w") or []
    if len(zs) != len(ws):
        raise ValueError("--z and --w need the same number of points")
    pairs = []
    for z, w in zip(zs, ws):
        kv = kernel(cfg.m, z, w)
        pairs.append({"z": z, "w": w, "log_abs": kv.log_abs, "phase": kv.phase, "est_rel_err": kv.est_rel_err,
                      "branch": kv.branch})
        rows.append((f"{format_coefficient(z)};{format_coefficient(w)}", kv.log_abs, kv.est_rel_err))
    out["pairs"] = pairs
    diag = []
    for x in cfg.options.get("diag") or []:
        lk = float(log_kernel_diag(cfg.m, x))
        la = kernel_diag_asymptotic(cfg.m, x, log=True)
        diag.append({"x": x, "log_K": lk, "log_asymptotic": la, "ratio": math.exp(lk - la)})
        rows.append((f"diag x={x!r}", math.exp(lk - la), 0.0))
    out["diagonal"] = diag
    return out, rows, EXIT_OK


def _cmd_berezin(cfg: RunConfig):
    g = cfg.symbol
    xs = cfg.options.get("xs") or [1.0, 1.5, 2.0, 2.5, 3.0]
    phi = cfg.options.get("phi")
    sweep = ray_sweep(g, cfg.m, xs, cfg.spec, phi)
    out = {"phi": sweep.phi, "xs": list(sweep.xs), "log_B": list(sweep.log_values),
           "est_rel_err": list(sweep.est_errs)}
    if cfg.options.get("rate"):
        out["rate"] = rate_check(g, cfg.m, cfg.spec).to_dict()
    rows = [(f"x={x!r}", v, e) for x, v, e in zip(sweep.xs, sweep.log_values, sweep.est_errs)]
    return out, rows, EXIT_OK


def _cmd_compress_norm(cfg: RunConfig, th: dict):
    Ns = cfg.options.get("Ns") or [cfg.options.get("N") or 64]
    curve = norm_growth_curve(cfg.symbol, FockContext(cfg.m), Ns, th["plateau"], th["blowup"], seed=cfg.seed)
    rows = [(f"N={n}", s, e) for n, s, e in zip(curve.Ns, curve.sigmas, curve.err_bounds)]
    return curve.to_dict(), rows, EXIT_OK


def _cmd_schur(cfg: RunConfig):
    grid = cfg.options.get("grid") or [0.0, 0.5, 1.0, 1.5, 2.0, 3.0]
    rep = schur_bound(cfg.symbol, cfg.m, grid=grid, spec=cfg.spec)
    rows = [(f"x={x!r}", h, 0.0) for x, h in zip(rep.grid, rep.H_values)]
    return rep.to_dict(), rows, EXIT_OK


def _cmd_classify(cfg: RunConfig, th: dict):
    Ns = cfg.options.get("Ns") or CLASSIFY_NS
    v = classify(cfg.symbol, FockContext(cfg.m), th, Ns=Ns, spec=cfg.spec, seed=cfg.seed)
    curve = v.evidence.get("norm_curve")
    rows = []
    if curve:
        rows = [(f"N={n}", s, e) for n, s, e in zip(curve["Ns"], curve["sigmas"], curve["err_bounds"])]
    code = EXIT_OK if v.consistent else EXIT_INCONSISTENT
    return v.to_dict(), rows, code


def _cmd_laplace(cfg: RunConfig):
    o = cfg.options
    m, d, a, C = cfg.m, o.get("d") or 2 * cfg.m, o.get("a") or 0.3, o.get("C") or 0.0
    out, rows = {}, []
    if o.get("x"):
        x = o["x"]
        hx = hx_analyze(m, d, a, C, x)
        prob = hx_problem(m, d, a, C, x)
        est = laplace_estimate(prob)
        direct = direct_log_integral(prob)
        out["hx"] = hx.to_dict()
        out["laplace"] = {"r_x": est.r_x, "c_x": est.c_x, "log_value": est.log_value, "log_direct": direct,
                          "ratio": math.exp(est.log_value - direct)}
    xs = o.get("xs")
    if xs:
        rep = rate_verify(m, d, a, xs)
        out["rate"] = rep.to_dict()
        rows = [(f"x={x!r}", hr, abs(hr - 1)) for x, hr in zip(rep.xs, rep.h_ratios)]
    return out, rows, EXIT_OK


def _cmd_envelope(cfg: RunConfig):
    rep = envelope_verify(cfg.options["lemma"], cfg.m, refine=not cfg.options.get("no_refine"))
    rows = [(";".join(f"{k}={v:g}" for k, v in pt.items()), r, 0.0) for pt, r in zip(rep.grid, rep.ratios)]
    return rep.to_dict(), rows, EXIT_OK


def run(cfg: RunConfig) -> int:
    """Execute one command, write its report (and curve), return the exit code."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"{cfg.name}.report.json"
    payload = {"schema": SCHEMA, "version": __version__, "config": cfg.to_dict()}
    try:
        th = load_thresholds(cfg.thresholds)
        handlers = {
            "ml-eval": lambda: _cmd_ml_eval(cfg),
            "kernel": lambda: _cmd_kernel(cfg),
            "berezin": lambda: _cmd_berezin(cfg),
            "compress-norm": lambda: _cmd_compress_norm(cfg, th),
            "schur": lambda: _cmd_schur(cfg),
            "classify": lambda: _cmd_classify(cfg, th),
            "laplace-check": lambda: _cmd_laplace(cfg),
            "envelope": lambda: _cmd_envelope(cfg),
        }
        result, rows, code = handlers[cfg.command]()
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        payload.update(status="error", error={"type": type(exc).__name__, "message": str(exc)})
        report_path.write_text(dumps_report(payload))
        print(f"focklab: {cfg.command} failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    payload.update(status="ok" if code == EXIT_OK else "inconsistent", result=result)
    report_path.write_text(dumps_report(payload))
    if rows:
        (out_dir / f"{cfg.name}.curve.csv").write_text(curve_csv(rows))
    return code


# ---------------------------------------------------------------- argparse

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--m", type=float, default=1.0, help="weight exponent (m >= 1)")
    common.add_argument("--g", default="0", help='symbol coefficients, lowest degree first, e.g. "0,1+0.5i"')
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--name", default=None, help="report base name (default: command)")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--n-radial", type=int, default=None)
    common.add_argument("--n-angular", type=int, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--thresholds", default=None, help="thresholds JSON (default: packaged file)")

    p = _Parser(prog="focklab", description="Toeplitz products on Fock-type spaces")
    p.add_argument("--version", action="version", version=f"focklab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ml-eval", parents=[common], help="Mittag-Leffler E_{1/m,1/m}")
    s.add_argument("--z", required=True, type=_complex_list)
    s = sub.add_parser("kernel", parents=[common], help="reproducing kernel values")
    s.add_argument("--z", type=_complex_list, default=[])
    s.add_argument("--w", type=_complex_list, default=[])
    s.add_argument("--diag", type=_float_list, default=[], help="x values for K(x,x) vs its asymptotic")
    s = sub.add_parser("berezin", parents=[common], help="growth function B(z) along a ray")
    s.add_argument("--xs", type=_float_list, default=None)
    s.add_argument("--phi", type=float, default=None)
    s.add_argument("--rate", action="store_true", help="also fit the growth rate")
    s = sub.add_parser("compress-norm", parents=[common], help="compression norms of T_u T_v*")
    s.add_argument("--N", type=int, default=None)
    s.add_argument("--Ns", type=lambda t: [int(v) for v in _float_list(t)], default=None)
    s = sub.add_parser("schur", parents=[common], help="Schur-test bound")
    s.add_argument("--grid", type=_float_list, default=None)
    s = sub.add_parser("classify", parents=[common], help="theorem verdict with numeric evidence")
    s.add_argument("--Ns", type=lambda t: [int(v) for v in _float_list(t)], default=None)
    s = sub.add_parser("laplace-check", parents=[common], help="h_x minimizer and Laplace estimate")
    s.add_argument("--d", type=float, default=None)
    s.add_argument("--a", type=float, default=None)
    s.add_argument("--C", type=float, default=None)
    s.add_argument("--x", type=float, default=None)
    s.add_argument("--xs", type=_float_list, default=None)
    s = sub.add_parser("envelope", parents=[common], help="integral envelope checks")
    s.add_argument("--lemma", required=True, choices=LEMMA_IDS)
    s.add_argument("--no-refine", action="store_true")
    return p


_OPTION_KEYS = {
    "ml-eval": ("z",), "kernel": ("z", "w", "diag"), "berezin": ("xs", "phi", "rate"),
    "compress-norm": ("N", "Ns"), "schur": ("grid",), "classify": ("Ns",),
    "laplace-check": ("d", "a", "C", "x", "xs"), "envelope": ("lemma", "no_refine"),
}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    opts = {k: getattr(ns, k) for k in _OPTION_KEYS[ns.command] if getattr(ns, k, None) not in (None, [], False)}
    return RunConfig(command=ns.command, m=ns.m, g=PolynomialSymbol.parse(ns.g).coeffs, seed=ns.seed,
                     out_dir=ns.out, name=ns.name, n_radial=ns.n_radial, n_angular=ns.n_angular, tol=ns.tol,
                     thresholds=ns.thresholds, options=opts)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"focklab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
