"""Batch runner: ``nilflow-lab <experiment> [options]``, plus ``plot`` and ``regress``.

Every run writes one directory holding ``manifest.json`` (the resolved
configuration, the package version and payload hashes) and the payload
files.  The directory is assembled under a temporary name and renamed into
place; a lock file keeps two runs away from the same target.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import shutil
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import algebra as A
from . import diophantine as D
from . import equidist as E
from . import mixing as MX
from . import nilmanifold as NM
from . import width as W
from ._io import dumps, gnuplot_script, to_jsonable, write_csv

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_REGRESSION = 0, 2, 3, 4

EXPERIMENTS = ("jacobi", "transversality", "return-map", "diophantine", "decay", "width",
               "step3-width", "good-points", "mixing")

COMMON = {"algebra": None, "alpha": None, "T": None, "L": None, "rho": "homogeneous", "seed": 0,
          "threads": None}

DEFAULTS = {
    "jacobi": {"algebra": "free:3:3"},
    "transversality": {"algebra": "triangular:3", "functional": None, "predicate": "polynomial",
                       "homogeneous": False},
    "return-map": {"algebra": "heisenberg", "R": 1000, "tol": 1e-9},
    "diophantine": {"alpha": "golden", "N": 100000, "n_N": 12, "delta_min": 1e-6, "n_delta": 20,
                    "nu": 1.05, "r_max": 1000000},
    "decay": {"algebra": "heisenberg", "alpha": "golden", "T": 2 ** 20, "T_min": 2 ** 10,
              "method": "auto", "dt": 1 / 64, "center": 0.5, "width": 0.3},
    "width": {"algebra": "heisenberg", "alpha": "(sqrt5-1)/2", "T": 5, "L": 20000, "I": 0.5,
              "samples_per_unit": 4},
    "step3-width": {"algebra": "triangular:3", "alpha": "sqrt2-1,sqrt3-1", "T": 10000, "T_width": 20,
                    "t": "1,2,3", "eps": 0.1, "nu": 1.1},
    "good-points": {"algebra": "heisenberg", "alpha": "(sqrt5-1)/2", "zeta": 0.1, "points": 10,
                    "count": 2, "w": None, "I": 0.5},
    "mixing": {"algebra": "f23-lattice", "A": "2,1,1,1", "samples": 1000000, "n_max": 10,
               "shifts": 16, "renorm_points": 100, "renorm_t": "0.1,1,5", "tol": 1e-9},
}

MAIN_PAYLOAD = {e: e.replace("-", "_") + ".json" for e in EXPERIMENTS}


class ValidationError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


class RegressionFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config


def parse_number(v):
    """Integers, decimals, fractions and powers like 2^24."""
    if v is None or isinstance(v, (int, float)):
        return v
    s = str(v).strip()
    m = re.fullmatch(r"(\d+)\^(\d+)", s)
    if m:
        return int(m.group(1)) ** int(m.group(2))
    if re.fullmatch(r"-?\d+", s):
        return int(s)
    if re.fullmatch(r"-?\d+/\d+", s):
        return float(Fraction(s))
    try:
        x = float(s)
    except ValueError:
        raise ValidationError(f"not a number: {v!r}") from None
    return int(x) if x.is_integer() and "e" in s.lower() and abs(x) < 2 ** 53 else x


def resolve(experiment, overrides):
    if experiment not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {experiment!r}")
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[experiment])
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if cfg.get("threads") is None:
        cfg["threads"] = int(os.environ.get("NILFLOW_LAB_THREADS", "1"))
    for k in ("T", "L", "R", "N", "samples", "n_max", "points", "T_width", "T_min", "r_max", "dt",
              "tol", "nu", "zeta", "eps", "I", "w", "count", "shifts", "renorm_points", "seed",
              "threads", "n_N", "n_delta", "delta_min", "samples_per_unit", "center", "width"):
        if k in cfg and cfg[k] is not None:
            cfg[k] = parse_number(cfg[k])
    for k in ("T", "L", "R", "N", "samples", "points", "T_width", "threads", "dt", "tol", "r_max",
              "count", "shifts"):
        if cfg.get(k) is not None and not cfg[k] > 0:
            raise ValidationError(f"{k} must be positive, got {cfg[k]}")
    for k in ("homogeneous", "force"):
        if isinstance(cfg.get(k), str):
            cfg[k] = cfg[k].lower() in ("1", "true", "yes")
    cfg["experiment"] = experiment
    return cfg


def _algebra(cfg):
    try:
        return A.load_algebra(cfg["algebra"])
    except A.JacobiError:
        raise
    except (A.AlgebraError, ValueError, FileNotFoundError) as e:
        raise ValidationError(f"algebra {cfg['algebra']!r}: {e}") from e


def _rho(cfg):
    r = cfg.get("rho", "homogeneous")
    if isinstance(r, str) and r != "homogeneous":
        return [Fraction(v) for v in r.split(",")]
    return r


def _alpha_values(alg, cfg):
    if cfg.get("alpha") is None:
        return A.generic_alpha(alg, seed=cfg["seed"])
    vec = D.parse_alpha(cfg["alpha"])
    return tuple(c.rational if c.rational is not None else c.value for c in vec.comps)


def _random_point(alg, seed, n=None):
    rng = np.random.default_rng(seed)
    if n is None:
        return NM.GroupElement.make(alg, rng.random(alg.dim).tolist(), "float")
    return [NM.GroupElement.make(alg, rng.random(alg.dim).tolist(), "float") for _ in range(n)]


def _floats(s):
    return [float(parse_number(v)) for v in str(s).split(",")]


# ---------------------------------------------------------------------------
# experiments: each returns {filename: payload}; payloads are dicts or (header, rows)


def exp_jacobi(cfg):
    alg = _algebra(cfg)
    bad = A.check_jacobi(alg)
    notes = []
    if alg.name == "free:3:3":
        nb = A.free3_named_basis(alg)
        rel = nb["Z2"] - nb["Z6"] + nb["Z7"]
        notes.append("Z2 - Z6 + Z7 = 0 " + ("holds" if rel.is_zero() else "FAILS"))
    return {"jacobi.json": {"algebra": alg.describe(), "violations": [list(t) for t in bad],
                            "notes": notes}}


def exp_transversality(cfg):
    alg = _algebra(cfg)
    alpha = _alpha_values(alg, cfg)
    x = alg.flow_vector(alpha)
    out = {"algebra": alg.describe(), "alpha": [str(a) for a in alpha],
           "plain": A.check_transversality(alg, x).to_dict()}
    if cfg.get("functional"):
        layers = None if cfg["functional"] == "generic" else [int(v) for v in cfg["functional"].split(",")]
        lam = A.generic_functional(alg, layers, seed=cfg["seed"])
        out["functional"] = [str(v) for v in lam]
        out["generalized"] = A.check_generalized_transversality(
            alg, x, lam, cfg["predicate"], bool(cfg["homogeneous"])).to_dict()
    return {"transversality.json": out}


def exp_return_map(cfg):
    alg = _algebra(cfg)
    alpha = _alpha_values(alg, cfg)
    x = alg.flow_vector(alpha)
    rng = np.random.default_rng(cfg["seed"])
    p = NM.SectionPoint(Fraction(int(rng.integers(0, 1000)), 1000),
                        tuple(Fraction(int(v), 1000) for v in rng.integers(0, 1000, len(alg.ideal))))
    R = int(cfg["R"])
    err = NM.return_map_error(alg, p, x, list(range(-R, R + 1)))
    return {"return_map.json": {"algebra": alg.describe(), "alpha": [str(a) for a in alpha],
                                "point": {"theta": str(p.theta), "s": [str(v) for v in p.s]},
                                "R": R, "error": err, "tol": cfg["tol"], "ok": err <= cfg["tol"]}}


def exp_diophantine(cfg):
    alpha = D.parse_alpha(cfg["alpha"])
    N = int(cfg["N"])
    N_grid = sorted({int(round(v)) for v in np.logspace(1, math.log10(N), int(cfg["n_N"]))})
    d_grid = [float(v) for v in np.logspace(math.log10(cfg["delta_min"]), 0, int(cfg["n_delta"]))]
    ev = D.membership_evidence(alpha, cfg["nu"], N_grid, d_grid)
    lb = D.dio_lower_bound(alpha, int(cfg["r_max"]), nu=1.0)
    rows = [[r.N, r.delta, r.count, r.bound, r.ratio, r.ambiguous] for r in ev.grid]
    return {"diophantine.json": {"alpha": alpha.describe(), "evidence": ev.to_dict(),
                                 "N_grid": N_grid, "delta_grid": d_grid,
                                 "lower_bound": vars(lb)},
            "counts.csv": (["N", "delta", "count", "bound", "ratio", "ambiguous"], rows)}


def _decay_method(alg, cfg):
    m = cfg["method"]
    if m == "auto":
        return "return-phase" if alg.name == "triangular:3" else "birkhoff"
    if m not in ("birkhoff", "return-phase", "weyl"):
        raise ValidationError(f"unknown decay method {m!r}")
    return m


def exp_decay(cfg):
    alg = _algebra(cfg)
    method = _decay_method(alg, cfg)
    T = int(cfg["T"])
    lo = int(cfg["T_min"])
    Ts = [t for t in E.dyadic(int(math.log2(lo)), int(math.log2(T)))]
    vec = D.parse_alpha(cfg["alpha"])
    if method == "weyl":
        c = vec.comps[0]
        coeffs = [0, 0, c.rational if c.rational is not None else c.digits(40)[0]]
        series = E.weyl_series(coeffs, Ts)
        fit = E.fit_decay(Ts, [series[t] for t in Ts])
        obs = {"kind": "weyl", "coefficients": [str(v) for v in coeffs]}
    else:
        x = alg.flow_vector(vec.values)
        if method == "birkhoff":
            f = E.PeriodizedBump((cfg["center"],) * alg.dim, (cfg["width"],) * alg.dim)
            x0 = _random_point(alg, cfg["seed"])
            series = E.birkhoff_series(alg, x, f, x0, Ts, cfg["dt"])
            obs = f.to_dict()
            obs["x0"] = list(x0.coords)
        else:
            m = [0] * len(alg.ideal)
            m[-1] = 1
            f = E.ReturnPhase(tuple(m))
            rng = np.random.default_rng(cfg["seed"])
            p = NM.SectionPoint(float(rng.random()), tuple(rng.random(len(alg.ideal)).tolist()))
            p = NM.SectionPoint(Fraction(p.theta), tuple(Fraction(v) for v in p.s))
            series, _ = E.return_phase_series(alg, x, f, p, Ts)
            obs = f.to_dict()
        mode = "step3_uniform" if method == "return-phase" and alg.name == "triangular:3" else "main"
        theo = E.theoretical_exponent(alg, mode, x.to_exact() if mode == "main" else None)
        fit = E.fit_decay(Ts, [series[t] for t in Ts], theoretical=theo, mode=mode)
    rows = [[t, complex(series[t]).real, complex(series[t]).imag, abs(series[t])] for t in Ts]
    return {"decay.json": {"algebra": alg.describe(), "method": method, "observable": obs,
                           "fit": fit.to_dict()},
            "series.csv": (["T", "real", "imag", "abs"], rows)}


def exp_width(cfg):
    alg = _algebra(cfg)
    x = _random_point(alg, cfg["seed"])
    rep = W.width_lower_bound(alg, cfg["alpha"], x, cfg["T"], cfg["L"], _rho(cfg), cfg["I"],
                              int(cfg["samples_per_unit"]))
    rows = [e.to_row() for e in rep.events]
    header = ["r"] + [f"s_{alg.labels[i]}" for i in alg.ideal] + ["eps", "delta", "j", "capped"]
    return {"width.json": {"algebra": alg.describe(), "report": rep.to_dict()},
            "events.csv": (header, rows)}


def exp_step3_width(cfg):
    alg = _algebra(cfg)
    x = _random_point(alg, cfg["seed"])
    recs = []
    for t in _floats(cfg["t"]):
        recs.append(W.step3_width(alg, cfg["alpha"], x, cfg["T"], t, cfg["eps"], cfg["nu"], profile=False))
        recs.append(W.step3_width(alg, cfg["alpha"], x, cfg["T_width"], t, cfg["eps"], cfg["nu"], n_max=-1))
    fit = W.step3_fit(recs, cfg["eps"])
    rows = [[t, n, c, fit.C_count * ref, c / (fit.C_count * ref) if fit.C_count else float("nan")]
            for t, n, c, ref, _ in fit.count_cells]
    return {"step3_width.json": {"records": [r.to_dict() for r in recs], "fit": fit.to_dict()},
            "dyadic.csv": (["t", "n", "count", "bound", "ratio"], rows)}


def exp_good_points(cfg):
    alg = _algebra(cfg)
    pts = _random_point(alg, cfg["seed"], int(cfg["points"]))
    reps = [W.good_point_check(alg, cfg["alpha"], p, None, cfg["zeta"], cfg["w"], _rho(cfg), cfg["I"],
                               count=int(cfg["count"])) for p in pts]
    good = sum(r.good for r in reps)
    return {"good_points.json": {"points": [list(p.coords) for p in pts],
                                 "reports": [r.to_dict() for r in reps],
                                 "good": good, "fraction": good / len(reps)}}


def exp_mixing(cfg):
    ent = [int(v) for v in str(cfg["A"]).split(",")]
    if len(ent) != 4:
        raise ValidationError("A needs four integers a,b,c,d")
    try:
        aut = MX.build_automorphism([ent[:2], ent[2:]])
    except MX.AutomorphismError as e:
        raise ValidationError(str(e)) from e
    rng = np.random.default_rng(cfg["seed"])
    x = rng.random((aut.alg.dim, int(cfg["renorm_points"])))
    ren = {}
    if aut.hyperbolic:
        for t in _floats(cfg["renorm_t"]):
            ren[repr(t)] = MX.check_renormalization(aut, x, t)
    f, g = MX.default_bumps()
    ser = MX.correlation_decay(aut, f, g, int(cfg["n_max"]), int(cfg["samples"]), int(cfg["shifts"]),
                               int(cfg["seed"])) if aut.hyperbolic else None
    out = {"automorphism": aut.to_dict(), "renormalization": ren,
           "renormalization_ok": all(v <= cfg["tol"] for v in ren.values()),
           "correlation": None if ser is None else ser.to_dict(),
           "observables": [f.to_dict(), g.to_dict()]}
    files = {"mixing.json": out}
    if ser is not None:
        files["correlation.csv"] = (["n", "real", "imag", "stderr"],
                                    [[n, v, 0.0, e] for n, v, e in zip(ser.n, ser.values, ser.stderr)])
    return files


RUNNERS = {"jacobi": exp_jacobi, "transversality": exp_transversality, "return-map": exp_return_map,
           "diophantine": exp_diophantine, "decay": exp_decay, "width": exp_width,
           "step3-width": exp_step3_width, "good-points": exp_good_points, "mixing": exp_mixing}


def _numeric_verdict(experiment, files):
    main = files[MAIN_PAYLOAD[experiment]]
    if experiment == "return-map" and not main["ok"]:
        return f"return map error {main['error']:.3e} exceeds {main['tol']:.1e}"
    if experiment == "mixing" and not main["renormalization_ok"]:
        return "renormalization identity error exceeds tolerance"
    return None


# ---------------------------------------------------------------------------
# bundles


def _render(payload):
    if isinstance(payload, tuple):
        header, rows = payload
        import io
        buf = io.StringIO()
        from ._io import _cell
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_cell(v) for v in row) + "\n")
        return buf.getvalue()
    return dumps(payload) + "\n"


def default_out(cfg):
    h = hashlib.sha256(dumps({k: v for k, v in cfg.items() if k != "out"}).encode()).hexdigest()[:10]
    return Path("nilflow-runs") / f"{cfg['experiment']}-{h}"


def run(cfg, out=None, force=False):
    """Run one resolved config and write its bundle; returns (bundle dir, files)."""
    files = RUNNERS[cfg["experiment"]](cfg)
    out = Path(out) if out else default_out(cfg)
    texts = {name: _render(p) for name, p in files.items()}
    manifest = {"artifact": "nilflow_lab", "version": __version__,
                "config": {k: v for k, v in cfg.items() if k != "out"},
                "payloads": {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(texts.items())}}
    texts["manifest.json"] = dumps(manifest) + "\n"
    write_bundle(out, texts, force)
    return out, files


def write_bundle(out: Path, texts, force=False):
    out.parent.mkdir(parents=True, exist_ok=True)
    lock = out.parent / (out.name + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(f"{out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        if out.exists() and not force:
            raise ValidationError(f"{out} exists; pass --force to replace it")
        tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        for name, text in texts.items():
            (tmp / name).write_text(text)
        if out.exists():
            shutil.rmtree(out)
        os.rename(tmp, out)
    finally:
        lock.unlink(missing_ok=True)


def load_bundle(path):
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise ValidationError(f"{path} is not a bundle (no manifest.json)")
    out = {}
    for p in sorted(path.iterdir()):
        if p.suffix == ".json":
            out[p.name] = json.loads(p.read_text())
        elif p.suffix == ".csv":
            with open(p) as fh:
                out[p.name] = list(csv.reader(fh))
    return out


# ---------------------------------------------------------------------------
# plots


def emit_plot(bundle, kind):
    bundle = Path(bundle)
    data = load_bundle(bundle)
    man = data["manifest.json"]
    exp = man["config"]["experiment"]
    if kind == "decay":
        if "decay.json" not in data:
            raise ValidationError("missing series")
        fit = data["decay.json"]["fit"]
        rows = fit["series"]
        plots = ["$data using 1:2 with linespoints title 'measured'",
                 f"exp({fit['intercept']!r}) * x**({fit['slope']!r}) title 'fit slope {fit['slope']:.4f}'"]
        if fit.get("theoretical_slope") is not None:
            s = fit["theoretical_slope"]
            t0, v0 = rows[0]
            plots.append(f"{v0!r} * (x/{t0!r})**({s!r}) dashtype 2 title 'reference slope {fit['theoretical_exponent']}'")
        text = gnuplot_script(f"{exp} {man['config']['algebra']}", {"data": rows}, plots, "T", "|average|",
                              logx=True, logy=True)
    elif kind == "dyadic":
        if "dyadic.csv" not in data:
            raise ValidationError("missing series")
        rows = [r for r in data["dyadic.csv"][1:]]
        text = gnuplot_script("dyadic return counts", {"data": rows},
                              ["$data using ($2+0.15*$1):3 with boxes title 'count'",
                               "$data using ($2+0.15*$1):4 with points title 'fitted bound'"],
                              "n", "count", logy=True, extra=["set style fill solid 0.5", "set boxwidth 0.12"])
    elif kind == "width":
        if "step3_width.json" not in data:
            raise ValidationError("missing series")
        fit = data["step3_width.json"]["fit"]
        if fit.get("C_eps") is None:
            raise ValidationError("missing series")
        rows = [[c["t"], c["avg_inv_w"]] for c in fit["width_cells"]]
        eps = data["manifest.json"]["config"]["eps"]
        text = gnuplot_script("average inverse width", {"data": rows},
                              ["$data using 1:2 with linespoints title 'average 1/w'",
                               f"{fit['C_eps']!r} * exp({eps!r} * x) dashtype 2 title 'C_eps e^(eps t)'"],
                              "t", "average 1/w", logy=True)
    elif kind == "correlation":
        corr = data.get("mixing.json", {}).get("correlation")
        if not corr:
            raise ValidationError("missing series")
        rows = [[n, abs(v), e] for n, v, e in zip(corr["n"], corr["values"], corr["stderr"])]
        plots = ["$data using 1:2:3 with yerrorbars title '|C_n|'"]
        if corr.get("rate") is not None:
            plots.append(f"exp({corr['intercept']!r} + {corr['rate']!r} * x) title 'fit'")
        lam = corr["lambda"]
        plots.append(f"{rows[0][1]!r} * {lam!r}**(-x/6.0) dashtype 2 title 'lambda^(-n/6)'")
        text = gnuplot_script("correlation decay", {"data": rows}, plots, "n", "|correlation|", logy=True)
    else:
        raise ValidationError(f"unknown plot kind {kind!r}")
    path = bundle / f"plot-{kind}.gp"
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# regression


def _walk(a, b, path, tol, out):
    if isinstance(a, dict) and isinstance(b, dict):
        for k in a:
            if k not in b:
                out["failures"].append({"field": f"{path}.{k}", "reason": "missing in bundle"})
            else:
                _walk(a[k], b[k], f"{path}.{k}", tol, out)
        for k in b:
            if k not in a:
                out["warnings"].append({"field": f"{path}.{k}", "reason": "new field"})
        return
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out["failures"].append({"field": path, "reason": f"length {len(a)} != {len(b)}"})
            return
        for i, (u, v) in enumerate(zip(a, b)):
            _walk(u, v, f"{path}[{i}]", tol, out)
        return
    fa, fb = _as_float(a), _as_float(b)
    if fa is not None and fb is not None and not isinstance(a, bool):
        rtol, atol = _tol_for(path, tol)
        if not (math.isclose(fa, fb, rel_tol=rtol, abs_tol=atol) or (math.isnan(fa) and math.isnan(fb))):
            out["failures"].append({"field": path, "golden": a, "bundle": b, "rtol": rtol, "atol": atol})
        return
    if a != b:
        out["failures"].append({"field": path, "golden": a, "bundle": b})


def _as_float(v):
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _tol_for(path, tol):
    for pat, val in tol["fields"].items():
        if re.search(pat, path):
            return val, tol["atol"]
    return tol["rtol"], tol["atol"]


def regress(golden, bundle, rtol=1e-9, atol=0.0, fields=None):
    g = load_bundle(golden)
    b = load_bundle(bundle)
    report = {"failures": [], "warnings": [], "schema": []}
    if g["manifest.json"]["config"]["experiment"] != b["manifest.json"]["config"]["experiment"]:
        raise ValidationError("schema mismatch: bundles come from different experiments")
    tol = {"rtol": rtol, "atol": atol, "fields": dict(fields or {})}
    for name in g:
        if name == "manifest.json":
            continue
        if name not in b:
            report["failures"].append({"field": name, "reason": "payload missing in bundle"})
            continue
        _walk(g[name], b[name], name, tol, report)
    for name in b:
        if name not in g:
            report["warnings"].append({"field": name, "reason": "new payload"})
    report["ok"] = not report["failures"]
    return report


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="nilflow-lab", description="Nilflow experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--algebra")
        s.add_argument("--alpha")
        s.add_argument("--T")
        s.add_argument("--L")
        s.add_argument("--rho")
        s.add_argument("--seed")
        s.add_argument("--threads")
        s.add_argument("--out")
        s.add_argument("--force", action="store_true")
        s.add_argument("--config", help="JSON file with extra or overriding keys")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="any experiment parameter, e.g. --set samples=100000")
    pl = sub.add_parser("plot")
    pl.add_argument("bundle")
    pl.add_argument("--kind", required=True, choices=["decay", "dyadic", "width", "correlation"])
    rg = sub.add_parser("regress")
    rg.add_argument("golden")
    rg.add_argument("bundle")
    rg.add_argument("--rtol", type=float, default=1e-9)
    rg.add_argument("--atol", type=float, default=0.0)
    rg.add_argument("--field-tol", action="append", default=[], metavar="REGEX=RTOL")
    return p


def _fail(code, kind, msg, **extra):
    sys.stderr.write(json.dumps(to_jsonable({"error": kind, "message": msg, "exit_code": code, **extra}),
                                sort_keys=True) + "\n")
    return code


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "run":
        argv = argv[1:]
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code else EXIT_OK
    try:
        if args.command == "plot":
            print(emit_plot(args.bundle, args.kind))
            return EXIT_OK
        if args.command == "regress":
            fields = dict((k, float(v)) for k, v in (s.split("=", 1) for s in args.field_tol))
            rep = regress(args.golden, args.bundle, args.rtol, args.atol, fields)
            print(dumps(rep))
            return EXIT_OK if rep["ok"] else EXIT_REGRESSION
        over = {}
        if args.config:
            over.update(json.loads(Path(args.config).read_text()))
        for s in args.set:
            if "=" not in s:
                raise ValidationError(f"--set needs KEY=VALUE, got {s!r}")
            k, v = s.split("=", 1)
            over[k] = v
        for k in ("algebra", "alpha", "T", "L", "rho", "seed", "threads"):
            if getattr(args, k) is not None:
                over[k] = getattr(args, k)
        cfg = resolve(args.command, over)
        out, files = run(cfg, args.out, args.force)
        bad = _numeric_verdict(cfg["experiment"], files)
        print(out)
        if bad:
            return _fail(EXIT_NUMERIC, "numerical_failure", bad, bundle=str(out))
        return EXIT_OK
    except A.JacobiError as e:
        return _fail(EXIT_VALIDATION, "jacobi_violation", str(e), violations=[list(v) for v in e.violations])
    except (ValidationError, A.AlgebraError, MX.AutomorphismError, NM.LatticeError, FileNotFoundError,
            json.JSONDecodeError) as e:
        return _fail(EXIT_VALIDATION, "validation", str(e))
    except (NM.ReturnMapMismatch, MX.RenormalizationError, D.PrecisionError, E.FitError, E.BudgetError,
            W.ChartError, FloatingPointError) as e:
        return _fail(EXIT_NUMERIC, "numerical_failure",
                     f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
