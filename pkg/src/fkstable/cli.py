"""Command-line entry point: ``fkstable <command> [--model M] [--config C] [--out DIR] [--seed S] [--threads N]``.

Every output file starts with ``# key=value`` lines (command, model hash,
seed, version); JSON outputs carry the same data under ``meta``.
Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core_model import ConfigError, DomainError, ModelSpec, constants_for, load_model

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("envelope", "simulate", "verify", "barrier", "duhamel")


def default_model() -> ModelSpec:
    return ModelSpec.power_law(1, 0.5, 1.0, 1.0)


def _strict(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")
    return obj


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclasses.dataclass
class RunConfig:
    command: str
    model: ModelSpec
    model_path: str | None
    params: dict
    out: Path
    seed: int
    threads: int

    @property
    def meta(self) -> dict:
        return {"command": self.command, "model_hash": self.model.hash(), "seed": self.seed,
                "version": __version__}


def _header(fh, meta):
    for k in sorted(meta):
        fh.write(f"# {k}={meta[k]}\n")


def _write_csv(path: Path, meta: dict, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _header(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(u) for u in np.ravel(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _point(model: ModelSpec, v):
    a = np.asarray(v, dtype=float)
    if model.d == 1:
        if a.size != 1:
            raise ConfigError("points must be scalars for d = 1")
        return float(a.reshape(()))
    if a.shape != (model.d,):
        raise ConfigError(f"points must have {model.d} coordinates")
    return a


def _points(model, seq, where):
    if not isinstance(seq, list) or not seq:
        raise ConfigError(f"{where} must be a nonempty list")
    return [_point(model, v) for v in seq]


# ---------------------------------------------------------------- envelope

ENVELOPE_REGIMES = ("free", "small-upper", "small-lower", "global-upper", "large", "green")


def cmd_envelope(cfg: RunConfig) -> int:
    from . import envelopes as E

    p = _strict(cfg.params, {"t", "x", "y", "regimes", "lambda", "T"}, "envelope config")
    m = cfg.model
    regimes = p.get("regimes", list(ENVELOPE_REGIMES))
    bad = sorted(set(regimes) - set(ENVELOPE_REGIMES))
    if bad:
        raise ConfigError(f"unknown regimes {bad}")
    ts = [float(t) for t in p.get("t", [1.0])]
    xs = _points(m, p.get("x", [1.0]), "x")
    ys = _points(m, p.get("y", [1.0]), "y")
    lam = float(p.get("lambda", 1.0))
    T = float(p.get("T", 1.0))
    fns = {
        "free": lambda t, x, y: E.EnvelopeValue(E.wtq(m, t, x, y), E.Regime.FREE_KERNEL),
        "small-upper": lambda t, x, y: E.small_time_envelope(m, t, x, y, "upper", lam, T),
        "small-lower": lambda t, x, y: E.small_time_envelope(m, t, x, y, "lower", lam, T),
        "global-upper": lambda t, x, y: E.global_upper(m, t, x, y),
        "large": lambda t, x, y: E.large_time_envelope(m, t, x, y),
        "green": lambda t, x, y: E.green_envelope(m, x, y),
    }
    rows = []
    for reg in regimes:
        for t in ([None] if reg == "green" else ts):
            for x in xs:
                for y in ys:
                    try:
                        ev = fns[reg](t, x, y)
                        rows.append([reg, ev.regime.value, _fmt(t), _fmt(x), _fmt(y), _fmt(ev.value), ""])
                    except DomainError as exc:
                        rows.append([reg, "", _fmt(t), _fmt(x), _fmt(y), "", str(exc)])
    _write_csv(cfg.out / "envelope.csv", cfg.meta, ["request", "regime", "t", "x", "y", "value", "note"], rows)
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def cmd_simulate(cfg: RunConfig) -> int:
    from . import montecarlo as MC

    p = _strict(cfg.params, {"quantity", "x", "t", "n", "dt", "y", "h", "center", "radius", "mode",
                             "kappa_scale"}, "simulate config")
    m = cfg.model
    if "kappa_scale" in p:
        m = m.with_kappa(m.kappa.scaled(float(p["kappa_scale"])))
    q = p.get("quantity", "survival")
    xs = _points(m, p.get("x", [1.0]), "x")
    t, n, dt = float(p.get("t", 1.0)), int(p.get("n", 10000)), float(p.get("dt", 1e-3))
    rows = []
    if q == "survival":
        for i, x in enumerate(xs):
            e = MC.estimate_survival(m, x, t, n, dt, MC.derive_seed(cfg.seed, i), threads=cfg.threads)
            rows.append([q, _fmt(t), _fmt(x), "", _fmt(e.mean), _fmt(e.stderr), n, e.seed_root, ""])
    elif q == "kernel":
        from .verify import mc_kernel_rows

        ys = _points(m, p.get("y", [1.0]), "y")
        h = p.get("h")
        for i, x in enumerate(xs):
            seed = MC.derive_seed(cfg.seed, i)
            hh = None if h is None else float(h)
            rows_x = mc_kernel_rows(m, t, x, ys, n, dt, seed, hh, cfg.threads)
            for y, v, se, b in zip(ys, rows_x.value, rows_x.stderr, rows_x.budget):
                rows.append([q, _fmt(t), _fmt(x), _fmt(y), _fmt(v), _fmt(se), n, seed,
                             json.dumps({"h": hh, "bias_budget": float(b)}, sort_keys=True)])
    elif q == "exit":
        mode = p.get("mode", "exit-prob")
        if mode not in MC.EXIT_MODES or mode == "exit-position-histogram":
            raise ConfigError(f"unsupported exit mode {mode!r}")
        radius = float(p.get("radius", 0.5))
        for i, x in enumerate(xs):
            center = _point(m, p["center"]) if "center" in p else x
            seed = MC.derive_seed(cfg.seed, i)
            e = MC.estimate_exit(m, x, center, radius, t, n, dt, seed, mode=mode, threads=cfg.threads)
            rows.append([f"{q}:{mode}", _fmt(t), _fmt(x), "", _fmt(e.mean), _fmt(e.stderr), n, seed,
                         json.dumps({"flagged": e.flagged, "radius": radius}, sort_keys=True)])
    else:
        raise ConfigError(f"unknown quantity {q!r}")
    _write_csv(cfg.out / "simulate.csv", cfg.meta,
               ["quantity", "t", "x", "y", "mean", "stderr", "n", "seed", "extra"], rows)
    return EXIT_OK


# ---------------------------------------------------------------- verify

VERIFY_CHECKS = ("three-p", "one-step", "survival", "small-time", "large-time", "green")


def _one_step_report(model, p, ceiling):
    from .verify import Estimates, decay_slope, fit_from_arrays, one_step_integral

    _strict(p, {"R", "t_factor", "x_factor", "y_factor"}, "one-step config")
    a, b1 = model.alpha, model.psi.beta1
    vals, pts = [], []
    for R in p.get("R", [1, 2, 4, 8, 16]):
        R = float(R)
        t = float(p.get("t_factor", 1.0)) * R ** a
        x, y = float(p.get("x_factor", 2.5)) * R, float(p.get("y_factor", -3.0)) * R
        v = one_step_integral(model, R, t, x, y)
        vals.append(v)
        pts.append((t, x, y))
    slope = decay_slope(vals) if len(vals) > 1 else math.nan
    env = np.array([v.R ** (a - b1) for v in vals])
    rep = fit_from_arrays("one-step-decay", model.hash(), np.array(pts),
                          Estimates(np.array([v.value for v in vals]), np.array([v.error for v in vals])),
                          None, env, ceiling, aux=[{"R": v.R} for v in vals],
                          params={"slope": slope, "target_slope": -(b1 - a) + 0.2})
    rep.passed = rep.passed and (math.isnan(slope) or slope <= -(b1 - a) + 0.2)
    return rep


def cmd_verify(cfg: RunConfig) -> int:
    from . import verify as V
    from .duhamel import KernelOracle, OracleSpec

    p = _strict(cfg.params, {"ceiling", "checks"}, "verify config")
    ceiling = float(p.get("ceiling", V.DEFAULT_CEILING))
    checks = _strict(p.get("checks", {"three-p": {}}), VERIFY_CHECKS, "checks")
    m = cfg.model
    reports = []
    oracle = None

    def get_oracle(spec):
        nonlocal oracle
        if oracle is None:
            oracle = KernelOracle(m, OracleSpec(**_strict(spec, {f.name for f in dataclasses.fields(OracleSpec)},
                                                          "oracle spec")))
        return oracle

    for name in VERIFY_CHECKS:
        if name not in checks:
            continue
        c = checks[name] if checks[name] is not None else {}
        if name == "three-p":
            _strict(c, {"alpha", "n"}, "three-p config")
            for a in c.get("alpha", [m.alpha]):
                pts = V.three_p_sweep(float(a), int(c.get("n", 10000)), cfg.seed)
                rep = V.three_p_check(1, float(a), pts, f"three-p:alpha={float(a)!r}", ceiling)
                reports.append(rep)
        elif name == "one-step":
            reports.append(_one_step_report(m, c, ceiling))
        elif name == "survival":
            fields = {f.name for f in dataclasses.fields(V.SurvivalSweeps)}
            _strict(c, fields, "survival config")
            kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in c.items()}
            reports += V.survival_bound_suite(m, V.SurvivalSweeps(**kw), cfg.seed, cfg.threads, ceiling)
        elif name == "small-time":
            _strict(c, {"t", "x", "y", "oracle"}, "small-time config")
            reports.append(V.small_time_sweep(get_oracle(c.get("oracle", {})), c.get("t", [0.1, 0.5, 1.0]),
                                              c.get("x", [0.1, 1.0]), c.get("y", [-0.5, 1.5]), ceiling=ceiling))
        elif name == "large-time":
            _strict(c, {"t", "x", "y", "n", "dt", "h"}, "large-time config")
            reports.append(V.large_time_sweep(m, c.get("t", [2.0, 4.0]), c.get("x", [0.5, 1.5]),
                                              c.get("y", [-1.0, 0.8]), int(c.get("n", 20000)),
                                              float(c.get("dt", 5e-3)), float(c.get("h", 0.2)), cfg.seed,
                                              cfg.threads, ceiling))
        elif name == "green":
            _strict(c, {"x", "y", "t_end", "oracle"}, "green config")
            reports.append(V.green_sweep(get_oracle(c.get("oracle", {})), c.get("x", [0.3, 1.0]),
                                         c.get("y", [-0.8, 0.7]), float(c.get("t_end", 50.0)), ceiling))
    V.emit_report(reports, cfg.out / "verify.csv", cfg.meta)
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"violation: {r.check_id} C_lower={r.fitted_C_lower:.6g} C_upper={r.fitted_C_upper:.6g} "
              f"ceiling={r.ceiling:.6g}", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------- barrier

def cmd_barrier(cfg: RunConfig) -> int:
    from .barrier import BarrierPhi, QuadSpec, generator_check

    p = _strict(cfg.params, {"R", "radii", "tol", "quad"}, "barrier config")
    R = float(p.get("R", 1.0))
    if not 0.0 < R <= 1.0:
        raise ConfigError("the barrier is defined for R in (0, 1]")
    m = cfg.model
    qs = QuadSpec(**_strict(p.get("quad", {}), {f.name for f in dataclasses.fields(QuadSpec)}, "quad"))
    tol = float(p.get("tol", 1e-4))
    const = constants_for(m)
    phi = BarrierPhi(m, R, const)
    radii = [float(f) * const.eps0 * R for f in p.get("radii", [0.25, 0.5, 0.75])]
    pts = []
    for r in radii:
        x = np.zeros(m.d)
        x[0] = r
        pts.append(x if m.d > 1 else r)
    rep = generator_check(phi, m, pts, qs, tol)
    rows = []
    for row in rep.rows:
        rows.append({"radius": row.radius, "pv": row.pv, "pv_error": row.pv_error, "kappa_term": row.kappa_term,
                     "generator": row.generator, "margin": row.generator + rep.bound,
                     "pv_ok": row.pv <= rep.bound + tol, "passed": row.passed})
    passed = rep.passed and all(r["pv_ok"] for r in rows)
    out = {"meta": cfg.meta, "R": R, "eps0": const.eps0, "delta0": const.delta0, "c0": const.c0,
           "lambda": m.lam, "bound": rep.bound, "tol": tol, "rows": rows, "passed": passed}
    with open(cfg.out / "barrier.json", "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    meta = dict(cfg.meta, eps0=repr(const.eps0), delta0=repr(const.delta0), c0=repr(const.c0),
                bound=repr(rep.bound))
    cols = ["radius", "pv", "pv_error", "kappa_term", "generator", "margin", "pv_ok", "passed"]
    _write_csv(cfg.out / "barrier.csv", meta, cols, [[_fmt(r[c]) for c in cols] for r in rows])
    return EXIT_OK if passed else EXIT_CHECK


# ---------------------------------------------------------------- duhamel

def cmd_duhamel(cfg: RunConfig) -> int:
    from .duhamel import KernelOracle, OracleSpec, write_table_csv

    p = _strict(cfg.params, {"t", "x", "y", "spec", "table"}, "duhamel config")
    spec = OracleSpec(**_strict(p.get("spec", {}), {f.name for f in dataclasses.fields(OracleSpec)}, "spec"))
    orc = KernelOracle(cfg.model, spec)
    xs = [float(v) for v in p.get("x", [0.5])]
    ys = [float(v) for v in p.get("y", [0.5])]
    rows = []
    ts = [float(orc.snap(float(t))) for t in p.get("t", [0.5])]
    for t in ts:
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        ov = orc.value(t, X, Y)
        for x, y, v, b in zip(X.ravel(), Y.ravel(), np.ravel(ov.value), np.ravel(ov.budget)):
            rows.append([_fmt(t), _fmt(x), _fmt(y), _fmt(v), _fmt(b), int(ov.flagged)])
    _write_csv(cfg.out / "duhamel.csv", dict(cfg.meta, tau=repr(orc.tau)),
               ["t", "x", "y", "value", "budget", "flagged"], rows)
    if p.get("table", False):
        write_table_csv(orc.table(ts[0]), cfg.model, cfg.out / "duhamel_table.csv")
    return EXIT_OK


HANDLERS = {"envelope": cmd_envelope, "simulate": cmd_simulate, "verify": cmd_verify, "barrier": cmd_barrier,
            "duhamel": cmd_duhamel}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fkstable", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--model", help="model JSON file (default: d=1, alpha=0.5, psi=r, kappa=1/|x|)")
    ap.add_argument("--config", help="command config JSON file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def make_config(args) -> RunConfig:
    if not 0 <= args.seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        raise ConfigError("threads must be >= 1")
    model = load_model(args.model) if args.model else default_model()
    params = _load_json(args.config) if args.config else {}
    if not isinstance(params, dict):
        raise ConfigError("config must be a JSON object")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(args.command, model, args.model, params, out, int(args.seed), int(args.threads))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
