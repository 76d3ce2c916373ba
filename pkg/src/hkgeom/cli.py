"""``hkgeom`` command line: one subcommand per operation.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
subcommand's option names), ``--out``, ``--seed``, ``--tol NAME=VALUE``,
``--golden DIR`` and ``--dry-run``. Explicit flags override the config file,
which overrides the defaults.

Exit codes: 0 success, 1 malformed config or input, 2 verification failure.
A JSON report goes to stdout and, with ``--out``, to ``report.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger("hkgeom")


class ConfigError(Exception):
    """Malformed configuration or input; the message names the location."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"command line: {message}")


# ------------------------------------------------------------------ plumbing

@dataclass
class Command:
    name: str
    help: str
    run: Callable
    tolerances: dict = field(default_factory=dict)
    defaults: dict = field(default_factory=dict)
    kinds: dict = field(default_factory=dict)
    needs_out: bool = False
    out_is_file: bool = False


@dataclass
class Context:
    command: Command
    params: dict
    tol: dict
    out: Path | None
    seed: int
    outputs: list = field(default_factory=list)

    def _path(self, name: str) -> Path:
        if self.out is None:
            raise ConfigError(f"{self.command.name}: --out is required to write {name}")
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def record(self, path: Path) -> None:
        self.outputs.append(str(path.relative_to(self.out)) if self.out and not self.command.out_is_file
                            else str(path))

    def write_csv(self, name: str, header, rows) -> Path | None:
        """Write a table with shortest round-trip float formatting; skipped without --out."""
        if self.out is None:
            return None
        path = self._path(name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.record(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self._path(name)
        path.write_text(text)
        self.record(path)
        return path


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (Fraction, Path)):
        return str(v)
    return v


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


class Report:
    def __init__(self):
        self.measured: dict = {}
        self.failures: list = []

    def check(self, name: str, value, tol: float, kind: str = "max") -> bool:
        """Record a measured value against a tolerance; ``kind`` is max (value <= tol) or min."""
        self.measured[name] = value
        ok = bool(value <= tol) if kind == "max" else bool(value >= tol)
        if not ok:
            self.failures.append({"check": name, "value": value, "tolerance": tol, "kind": kind})
        return ok

    def fail(self, name: str, message: str) -> None:
        self.failures.append({"check": name, "message": message})


# option helpers: defaults live on the Command so config values can be merged below explicit flags

def _opt(cmd: Command, p, name: str, default=None, kind=str, help="", choices=None, required=False):
    dest = name.lstrip("-").replace("-", "_")
    cmd.defaults[dest] = default
    cmd.kinds[dest] = (kind, choices, required)
    shown = "" if default is None else f" (default {default})"
    if kind is bool:
        p.add_argument(name, dest=dest, action="store_true", default=argparse.SUPPRESS, help=help + shown)
    else:
        p.add_argument(name, dest=dest, type=kind, choices=choices, default=argparse.SUPPRESS,
                       help=help + shown + (" [required]" if required else ""))


def _vec3(text: str) -> tuple:
    vals = [float(x) for x in str(text).replace(" ", "").split(",")]
    if len(vals) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(vals)


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _coerce(cmd: Command, key: str, value, where: str):
    kind, choices, _ = cmd.kinds[key]
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            out = value
        elif kind in (int, float) and isinstance(value, bool):
            raise ValueError("expected a number")
        elif kind is int and isinstance(value, float) and value != int(value):
            raise ValueError("expected an integer")
        elif isinstance(value, (list, tuple)) and kind is not str:
            out = kind(",".join(str(x) for x in value))
        else:
            out = kind(value) if not isinstance(value, (list, dict)) else value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: key {key!r}: {exc}") from None
    if choices is not None and out not in choices:
        raise ConfigError(f"{where}: key {key!r}: {out!r} is not one of {list(choices)}")
    return out


COMMON = ("config", "out", "seed", "tol", "golden", "dry_run")


def _load_config(path: str, cmd: Command) -> tuple[dict, dict]:
    where = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{where}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}:1:1: the config must be a JSON object")
    params, tol = {}, {}
    allowed = set(cmd.defaults) | {"out", "seed", "tolerances", "golden"}
    for raw, value in doc.items():
        key = raw.replace("-", "_")
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {raw!r}; allowed: {sorted(allowed)}")
        if key == "tolerances":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: key 'tolerances': expected an object")
            for name, v in value.items():
                tol[name] = _tol_value(cmd, name, v, f"{where}: tolerances")
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}: key 'seed': expected an integer")
            params[key] = value
        elif key in ("out", "golden"):
            if not isinstance(value, str):
                raise ConfigError(f"{where}: key {raw!r}: expected a path string")
            params[key] = value
        else:
            params[key] = _coerce(cmd, key, value, where)
    return params, tol


def _tol_value(cmd: Command, name: str, value, where: str) -> float:
    if name not in cmd.tolerances:
        raise ConfigError(f"{where}: unknown tolerance {name!r}; known: {sorted(cmd.tolerances)}")
    try:
        if isinstance(value, bool):
            raise ValueError
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: tolerance {name!r} must be a number") from None
    if not v >= 0:
        raise ConfigError(f"{where}: tolerance {name!r} must be non-negative")
    return v


def _resolve(cmd: Command, ns: argparse.Namespace) -> tuple[dict, dict, dict]:
    given = vars(ns)
    conf, conf_tol = ({}, {}) if not given.get("config") else _load_config(given["config"], cmd)
    params = dict(cmd.defaults)
    params.update({k: v for k, v in conf.items() if k in cmd.defaults})
    params.update({k: v for k, v in given.items() if k in cmd.defaults})
    for key, (_, _, required) in cmd.kinds.items():
        if required and params.get(key) is None:
            raise ConfigError(f"{cmd.name}: missing required option --{key.replace('_', '-')}")
    tol = {k: d for k, (d, _) in cmd.tolerances.items()}
    tol.update(conf_tol)
    for item in given.get("tol") or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"command line: --tol expects NAME=VALUE, got {item!r}")
        tol[name] = _tol_value(cmd, name, value, "command line --tol")
    common = {"out": given.get("out", conf.get("out")), "seed": given.get("seed", conf.get("seed", 0)),
              "golden": given.get("golden", conf.get("golden")), "dry_run": given.get("dry_run", False)}
    return params, tol, common


def _golden_compare(ctx: Context, golden: Path) -> dict:
    mismatched, missing = [], []
    base = ctx.out if not ctx.command.out_is_file else ctx.out.parent
    for name in ctx.outputs:
        produced = Path(name) if ctx.command.out_is_file else base / name
        ref = golden / produced.name if ctx.command.out_is_file else golden / name
        if not ref.exists():
            missing.append(name)
        elif ref.read_bytes() != produced.read_bytes():
            mismatched.append(name)
    return {"dir": str(golden), "checked": len(ctx.outputs), "mismatched": mismatched, "missing": missing}


# ------------------------------------------------------------ gh-build etc.

GH_KINDS = ("flat", "constant", "taub-nut", "single-center", "multi-center", "log-radial", "linear")
GH_BOXES = {
    "constant": ((-1, -1, -1), (1, 1, 1)),
    "multi_center": ((-2.9, -2.7, -2.8), (3.1, 3.3, 3.2)),
    "log_radial": ((2, -3, -3), (8, 3, 3)),
    "linear": ((-1, -1, 1), (1, 1, 3)),
}


def _gh_source(p: dict) -> tuple[str, dict]:
    kind = p["kind"]
    if kind in ("flat", "constant"):
        return "constant", {"c": p["c"]}
    if kind == "log-radial":
        return "log_radial", {"k": p["k"]}
    if kind == "linear":
        return "linear", {"b": p["b"]}
    centers = [_vec3(c) for c in str(p["centers"]).split(";")]
    weights = list(_floats(p["weights"])) if p.get("weights") else [1.0] * len(centers)
    constant = 0.0 if kind == "single-center" else p["c"]
    return "multi_center", {"centers": centers, "weights": weights, "constant": constant}


def _gh_chart(p: dict, kind: str):
    from .discrete_calculus import GridChart
    lo, hi = GH_BOXES[kind]
    lo = _vec3(p["lower"]) if p.get("lower") else lo
    hi = _vec3(p["upper"]) if p.get("upper") else hi
    return GridChart.box(lo, hi, (p["n"],) * 3), lo, hi


def _gh_options(cmd: Command, sp) -> None:
    _opt(cmd, sp, "--kind", "flat", str, "potential family", GH_KINDS)
    _opt(cmd, sp, "--c", 1.0, float, "constant term (flat, taub-nut, multi-center)")
    _opt(cmd, sp, "--centers", "0,0,0", str, "centers as 'x,y,z;x,y,z'")
    _opt(cmd, sp, "--weights", None, str, "positive weights, one per center (default 1 each)")
    _opt(cmd, sp, "--k", 1.0, float, "log-radial coefficient")
    _opt(cmd, sp, "--b", 1.0, float, "linear coefficient")
    _opt(cmd, sp, "--lower", None, str, "chart lower corner 'x,y,z' (default per kind)")
    _opt(cmd, sp, "--upper", None, str, "chart upper corner 'x,y,z' (default per kind)")
    _opt(cmd, sp, "--n", 32, int, "nodes per base axis")
    _opt(cmd, sp, "--nt", 8, int, "nodes along the circle")
    _opt(cmd, sp, "--circle-length", None, float, "circle period (default 2 pi times the smallest weight)")


def _gh_geometry(p: dict):
    from . import gibbons_hawking as gh
    kind, params = _gh_source(p)
    chart, lo, hi = _gh_chart(p, kind)
    return gh.geometry(kind, params, chart, p.get("circle_length"), nt=p["nt"]), kind, params


def cmd_gh_build(ctx: Context, rep: Report) -> None:
    from .discrete_calculus import FormField, write_field
    from .triple_algebra import hk_residual, write_triple
    p = ctx.params
    geo, kind, params = _gh_geometry(p)
    res = hk_residual(geo.triple)
    rep.check("hk_residual", res, ctx.tol["hk_residual"])
    rep.measured["closedness_residual"] = float(np.max(geo.closedness_residual()))
    rep.measured["grid"] = list(geo.triple.chart.extents)
    write_triple(ctx._path("."), geo.triple)
    for name in ("omega1.hkf", "omega2.hkf", "omega3.hkf", "vol0.hkf", "manifest.json"):
        ctx.record(ctx.out / name)
    base = geo.potential.base_chart
    write_field(ctx._path("potential.hkf"),
                FormField(base, 0, {(): np.ascontiguousarray(np.broadcast_to(geo.potential.V, base.extents))}))
    ctx.record(ctx.out / "potential.hkf")
    desc = {k: p[k] for k in ("kind", "c", "centers", "weights", "k", "b", "lower", "upper", "n", "nt",
                              "circle_length")}
    desc["source"] = {"kind": kind, "params": params}
    desc["circle_length_used"] = geo.circle_length
    ctx.write_text("gh.json", _dump(desc))


def cmd_gh_profile(ctx: Context, rep: Report) -> None:
    from . import gibbons_hawking as gh
    p = dict(ctx.params)
    if p.get("geometry"):
        src = Path(p["geometry"]) / "gh.json"
        try:
            desc = json.loads(src.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{src}: {exc}") from None
        p.update({k: desc[k] for k in ("kind", "c", "centers", "weights", "k", "b", "lower", "upper", "n", "nt",
                                        "circle_length")})
    geo, kind, _ = _gh_geometry(p)
    radii = _floats(p["radii"])
    faces = {"linear": ((2, 0),)}.get(kind, ())
    base_point = _vec3(p["base_point"]) if p.get("base_point") else None
    prof = gh.curvature_profile(geo, radii, base_point=base_point, allow_faces=faces)
    ctx.write_csv("profile.csv", ("r", "maxRm", "vol"), prof.rows)
    rep.measured["kappa"] = prof.kappa
    rep.measured["curvature_decay"] = prof.decay
    rep.measured["rows"] = [list(r) for r in prof.rows]


def cmd_triple_check(ctx: Context, rep: Report) -> None:
    from .triple_algebra import hk_residual, read_triple
    path = Path(ctx.params["triple"])
    if not (path / "manifest.json").exists():
        raise ConfigError(f"{path}: no manifest.json (expected a directory written by gh-build or hk-solve)")
    t = read_triple(path)
    rep.check("hk_residual", hk_residual(t), ctx.tol["hk_residual"])
    rep.check("closedness_residual", t.closedness_residual(order=ctx.params["order"]), ctx.tol["closedness"])
    rep.measured["grid"] = list(t.chart.extents)


def _random_potential(chart, rng, terms: int = 3) -> np.ndarray:
    """Smooth periodic 3x3 matrix potential from a few random Fourier modes."""
    x = chart.coordinates()
    lengths = [n * h for n, h in zip(chart.extents, chart.spacing)]
    out = np.zeros(tuple(chart.extents) + (3, 3))
    for _ in range(terms):
        a, b = rng.integers(0, 3, size=2)
        k = rng.integers(-1, 2, size=4)
        if not k.any():
            k[0] = 1
        phase = 2 * np.pi * sum(ki * xi / L for ki, xi, L in zip(k, x, lengths)) + rng.uniform(0, 2 * np.pi)
        out[..., a, b] += rng.normal() * np.cos(phase)
    return out


def cmd_hk_solve(ctx: Context, rep: Report) -> None:
    from .discrete_calculus import GridChart
    from .triple_algebra import DefiniteTriple, NoContraction, deform, hk_residual, read_triple, solve_hyperkahler
    p = ctx.params
    if p.get("triple"):
        t = read_triple(p["triple"])
    else:
        n = p["n"]
        chart = GridChart.box((0,) * 4, (1,) * 4, (n,) * 4, periodic=(True,) * 4)
        flat = DefiniteTriple.flat(chart)
        pot = p["eps"] * _random_potential(chart, np.random.default_rng(ctx.seed))
        t = flat + deform(flat, pot).theta
    rep.measured["start_residual"] = hk_residual(t)
    try:
        res = solve_hyperkahler(t, tol=ctx.tol["solver"], max_iter=p["max_iter"])
    except NoContraction as exc:
        rep.fail("contraction", str(exc))
        return
    rep.measured["iterations"] = res.iterations
    rep.check("hk_residual", res.hk_residual, ctx.tol["hk_residual"])
    rep.check("max_ratio", max(res.ratios, default=0.0), ctx.tol["ratio"])
    if ctx.out is not None:
        res.write_log(ctx._path("iterations.csv"))
        ctx.record(ctx.out / "iterations.csv")
        from .triple_algebra import write_triple
        write_triple(ctx._path("solved"), res.triple)
        for name in ("omega1.hkf", "omega2.hkf", "omega3.hkf", "vol0.hkf", "manifest.json"):
            ctx.record(ctx.out / "solved" / name)


# ----------------------------------------------------------------- sk-eval

SK_MODELS = {"cone": "cone", "typei": "typeI", "typeii": "typeII", "typeiii": "typeIII"}


def cmd_sk_eval(ctx: Context, rep: Report) -> None:
    from . import special_kahler as sk
    p = ctx.params
    kind = SK_MODELS.get(p["model"].lower().replace("_", "").replace("-", ""))
    if kind is None:
        raise ConfigError(f"sk-eval: unknown model {p['model']!r}; expected one of {sorted(SK_MODELS)}")
    if kind in ("cone", "typeIII") and p.get("beta") is None:
        raise ConfigError(f"sk-eval: the {kind} model needs --beta")
    try:
        F = sk.parse_polynomial(p["F"])
        f = sk.parse_polynomial(p["f"])
        beta = Fraction(p["beta"]) if p.get("beta") is not None else None
        model = {"cone": lambda: sk.SKModel.cone(beta), "typeI": lambda: sk.SKModel.type_I(f),
                 "typeII": lambda: sk.SKModel.type_II(f), "typeIII": lambda: sk.SKModel.type_III(beta, F)}[kind]()
    except (ValueError, TypeError, ZeroDivisionError, SyntaxError) as exc:
        raise ConfigError(f"sk-eval: {exc}") from None
    out = sk.verify_curvature_identity(model, p["r_in"], p["r_out"], n_r=p["n_r"], n_phi=p["n_phi"])
    r, phi = out["r"], out["phi"]
    dens = np.broadcast_to(sk.density(model, r, phi), r.shape)
    rows = zip(r.ravel(), phi.ravel(), dens.ravel(), out["S"].ravel(), out["rhs"].ravel())
    ctx.write_csv("sk.csv", ("r", "phi", "density", "S", "4theta2"), rows)
    rep.measured["model"] = kind
    if out["max_4theta2"] == 0:
        rep.check("max_S", out["max_S"], ctx.tol["flat"])
    else:
        rep.check("rel", out["rel"], ctx.tol["rel"])
        rep.measured["max_S"] = out["max_S"]
    rep.measured["max_4theta2"] = out["max_4theta2"]


# --------------------------------------------------------------- monodromy

def cmd_monodromy(ctx: Context, rep: Report) -> None:
    from . import monodromy as mono
    p = ctx.params
    if p["action"] != "classify":
        raise ConfigError(f"monodromy: unknown action {p['action']!r}")
    try:
        m = mono.parse_matrix(p["matrix"])
        cls = mono.classify_integral(m) if p["integral"] else mono.classify_real(m)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"monodromy: {exc}") from None
    record = cls.record()
    rep.measured["record"] = record
    if ctx.out is not None:
        ctx.write_text("record.json", _dump(record))


# --------------------------------------------------------------- cone-solve

def _read_table(path: str, first: str) -> tuple[np.ndarray, dict]:
    """A CSV whose first column is ``first``; returns it and the remaining columns by header."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if not rows or rows[0][0].strip() != first:
        raise ConfigError(f"{path}:1: first column must be {first!r}")
    header = [h.strip() for h in rows[0]]
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(x) for x in row])
        except ValueError as exc:
            raise ConfigError(f"{path}:{i}: {exc}") from None
    arr = np.array(data, float).reshape(-1, len(header))
    x = arr[:, 0]
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise ConfigError(f"{path}: column {first!r} must be strictly increasing with at least two rows")
    return x, {h: arr[:, i] for i, h in enumerate(header[1:], start=1)}


def _extend(x: np.ndarray, y: np.ndarray, power: float) -> Callable:
    """Quintic spline in log x on the samples; beyond the last one y_last (x / x_last)^power.

    The residual checks use order-6 differences, so the interpolant must be smoother than C^1.
    """
    from scipy.interpolate import make_interp_spline
    k = min(5, len(x) - 1)
    spline = make_interp_spline(np.log(x), y, k=k)

    def f(s):
        s = np.asarray(s, float)
        inside = spline(np.log(np.clip(s, x[0], x[-1])))
        return np.where(s <= x[-1], inside, y[-1] * (s / x[-1]) ** power)
    return f


def _mode_key(text: str, where: str) -> tuple[int, int]:
    try:
        j, c = text.split(".")
        return int(j), int(c)
    except ValueError:
        raise ConfigError(f"{where}: column {text!r} must be 'j.component'") from None


def _spectrum(p):
    from . import cone_poisson as cone
    try:
        return cone.build_spectrum(p["d"], p["cross"], p["modes"], beta=p["beta"])
    except ValueError as exc:
        raise ConfigError(f"{exc}") from None


def cmd_cone_solve(ctx: Context, rep: Report) -> None:
    from . import cone_poisson as cone
    p = ctx.params
    spec = _spectrum(p)
    r, cols = _read_table(p["v"], "r")
    if r[0] > p["R"] * (1 + 1e-12) or r[-1] < p["r_max"] * (1 - 1e-12):
        raise ConfigError(f"{p['v']}: samples must cover [R, r_max] = [{p['R']}, {p['r_max']}]")
    # beyond the samples the source keeps the slowest decay the weighted norm allows
    v = {_mode_key(h, p["v"]): _extend(r, y, -p["delta"]) for h, y in cols.items()}
    try:
        sol = cone.solve(spec, v, p["delta"], R=p["R"], r_max=p["r_max"], n=p["n"])
    except (cone.ResonantWeight, KeyError, ValueError) as exc:
        raise ConfigError(f"cone-solve: {exc}") from None
    except cone.TailDivergence as exc:
        rep.fail("tail", str(exc))
        return
    keys = sorted(sol.coeffs)
    ctx.write_csv("modes.csv", ["r"] + [f"{j}.{c}" for j, c in keys],
                  zip(sol.r, *[sol.coeffs[k] for k in keys]))
    nodes, _ = spec.quadrature(p["angular_nodes"])
    stride = max(1, len(sol.r) // 100)
    field_ = sol.reconstruct(nodes)[::stride]
    names = ("theta",) if spec.cross_section == "circle" else ("theta", "phi")
    rows = []
    for ri, row in zip(sol.r[::stride], field_):
        for q in range(row.size):
            rows.append((ri,) + tuple(nd[q] for nd in nodes) + (row[q],))
    ctx.write_csv("field.csv", ("r",) + names + ("u",), rows)
    # sup-relative: residual over the sup of the source on the grid
    scale = max((float(np.max(np.abs(s))) for s in sol.sources.values()), default=0.0) or 1.0
    rep.check("residual", sol.max_residual() / scale, ctx.tol["residual"])
    growth = sol.growth_exponent()
    rep.measured["growth_exponent"] = growth
    rep.check("growth_excess", growth - (2 - p["delta"]), ctx.tol["growth_slack"])
    rep.measured["weighted_constant"] = sol.weighted_constant()
    rep.measured["j0"] = spec.j0(p["delta"])


def cmd_cone_spectrum(ctx: Context, rep: Report) -> None:
    spec = _spectrum(ctx.params)
    rows = [(m.j, m.label, m.lam, m.multiplicity, m.mu_plus, m.mu_minus) for m in spec.modes]
    ctx.write_csv("spectrum.csv", ("j", "label", "lam", "multiplicity", "mu_plus", "mu_minus"), rows)
    rep.measured["modes"] = [list(r) for r in rows]
    rep.measured["exceptional_weights"] = list(spec.gamma)
    rep.measured["growth_resonances"] = list(spec.gamma_growth)


# ------------------------------------------------------------- calabi-solve

def cmd_calabi_solve(ctx: Context, rep: Report) -> None:
    from . import calabi_poisson as cp
    p = ctx.params
    if p.get("mode_file"):
        idx, cols = _read_table(p["mode_file"], "k")
        need = {"j", "lam", "multiplicity"}
        if not need <= set(cols):
            raise ConfigError(f"{p['mode_file']}:1: columns {sorted(need)} are required")
        try:
            modes = [cp.CalabiMode(int(k), int(j), float(lam), int(m))
                     for k, j, lam, m in zip(idx, cols["j"], cols["lam"], cols["multiplicity"])]
        except ValueError as exc:
            raise ConfigError(f"{p['mode_file']}: {exc}") from None
    else:
        modes = cp.heisenberg_spectrum(p["mode_count"])
    z, cols = _read_table(p["v"], "z")
    if z[0] > p["w"] * (1 + 1e-12) or z[-1] < p["z_max"] * (1 - 1e-12):
        raise ConfigError(f"{p['v']}: samples must cover [w, z_max] = [{p['w']}, {p['z_max']}]")
    by_k = {}
    for h, y in cols.items():
        try:
            by_k[int(h)] = y
        except ValueError:
            raise ConfigError(f"{p['v']}:1: column {h!r} must be a mode index k") from None
    unknown = set(by_k) - {m.k for m in modes}
    if unknown:
        raise ConfigError(f"{p['v']}:1: no modes with k in {sorted(unknown)}")
    zero = lambda s: np.zeros_like(np.asarray(s, float))
    # beyond the samples the coefficient decays like the weight z^tau
    vs = [_extend(z, by_k[m.k], p["tau"]) if m.k in by_k else zero for m in modes]
    try:
        sol = cp.solve(modes, vs, p["tau"], p["w"], z_max=p["z_max"], n=p["n"])
    except (cp.ResonantWeight, ValueError) as exc:
        raise ConfigError(f"calabi-solve: {exc}") from None
    except cp.TailDivergence as exc:
        rep.fail("tail", str(exc))
        return
    ctx.write_csv("u.csv", ["z"] + [str(m.k) for m in modes], zip(sol.z, *[s.u for s in sol.solutions]))
    rep.check("residual", sol.max_residual(), ctx.tol["residual"])
    rep.measured["per_mode_C"] = list(sol.per_mode_constants)
    rep.measured["C_star"] = sol.C_star
    rep.measured["b"] = sol.b
    rep.measured["global_C"] = sol.global_constant
    rep.measured["assembly_bound"] = sol.assembly_bound
    if sol.global_constant > sol.assembly_bound * (1 + 1e-12):
        rep.fail("global_bound", "global constant exceeds the per-mode assembly bound")
    rep.measured["fitted_exponents"] = [sol.fitted_exponent(i) if np.any(s.u) else None
                                        for i, s in enumerate(sol.solutions)]


# --------------------------------------------------------------------- end

def _end_params(p: dict) -> dict:
    fam = p["family"]
    out = {}
    for key in {"ALE": ("order",), "ALF_A": ("k", "c"), "ALF_D": ("k", "c"), "ALG": ("beta",),
                "ALGstar_I": ("k",), "ALGstar_Istar": ("k",), "ALH": ("lengths", "angles"),
                "ALHstar": ("b",)}[fam]:
        if p.get(key) is None:
            continue
        val = p[key]
        if key in ("lengths", "angles"):
            val = _floats(val)
        elif key in ("k", "order", "b"):
            val = int(val) if float(val) == int(float(val)) else float(val)
        out[key] = val
    return out


def cmd_end(ctx: Context, rep: Report) -> None:
    from . import model_ends as me
    p = ctx.params
    if p["action"] == "build":
        if not p.get("family"):
            raise ConfigError("end build: --family is required")
        try:
            end = me.build_end(p["family"], _end_params(p), resolution=p["resolution"])
        except (me.InadmissibleAngle, me.InadmissibleParameter, ValueError) as exc:
            raise ConfigError(f"end build: {exc}") from None
        from .triple_algebra import write_triple
        rep.measured["label"] = end.label
        rep.check("hk_residual", end.hk_residual(), ctx.tol["hk_residual"])
        if ctx.out is not None:
            write_triple(ctx._path("triple"), end.geometry.triple)
            for name in ("omega1.hkf", "omega2.hkf", "omega3.hkf", "vol0.hkf", "manifest.json"):
                ctx.record(ctx.out / "triple" / name)
        if p["measure"]:
            r, vol = end.volume_profile()
            ctx.write_csv("profile.csv", ("r", "vol"), zip(r, vol))
            m = end.measure()
            rep.measured["kappa"] = m.kappa
            rep.check("kappa_error", abs(m.kappa - end.expected.kappa), ctx.tol["kappa"])
        params = {k: v for k, v in end.params.items()}
        desc = {"family": end.family, "label": end.label, "params": params,
                "expected": vars(end.expected), "quotient": end.quotient}
        if ctx.out is not None:
            ctx.write_text("end.json", _dump(desc))
        rep.measured["expected"] = vars(end.expected)
        return
    if p["action"] != "classify":
        raise ConfigError(f"end: unknown action {p['action']!r}")
    if not p.get("profile"):
        raise ConfigError("end classify: --profile is required")
    r, cols = _read_table(p["profile"], "r")
    if "vol" not in cols:
        raise ConfigError(f"{p['profile']}:1: a 'vol' column is required")
    from . import gibbons_hawking as gh
    from . import monodromy as mono
    try:
        kappa = gh.fit_exponent(r, cols["vol"])
        mat = mono.parse_matrix(p["monodromy"]) if p.get("monodromy") else None
    except ValueError as exc:
        raise ConfigError(f"end classify: {exc}") from None
    m = me.Measurement(kappa, p["kappa_err"], p.get("cone"), mat, p.get("fiber"))
    rep.measured["kappa"] = kappa
    try:
        cands = me.classify_end(m)
    except me.AmbiguousDimension as exc:
        rep.fail("classification", str(exc))
        return
    except mono.NotUnimodular as exc:
        raise ConfigError(f"end classify: {exc}") from None
    rep.measured["dimension"] = me.cone_dimension(kappa, p["kappa_err"])
    rep.measured["candidates"] = sorted(cands)


# ------------------------------------------------------------ gauss-bonnet

def cmd_gauss_bonnet(ctx: Context, rep: Report) -> None:
    from . import gibbons_hawking as gh
    from .discrete_calculus import GridChart
    p = ctx.params
    radii = sorted(_floats(p["radii"]))
    half = 1.2 * radii[-1]
    # an even node count keeps the center off the grid
    chart = GridChart.box((-half,) * 3, (half,) * 3, (16,) * 3)
    geo = gh.geometry("multi_center", {"constant": p["c"]}, chart)
    out = gh.gauss_bonnet_profile(geo, radii, n_u=p["n_u"], n_v=p["n_v"], n_phi=p["n_phi"])
    ctx.write_csv("gauss_bonnet.csv", ("R", "bulk", "boundary", "chi"),
                  [(g.radius, g.bulk, g.boundary, g.chi) for g in out])
    rep.measured["chi"] = [g.chi for g in out]
    rep.check("chi_error", abs(out[-1].chi - 1.0), ctx.tol["chi"])
    rep.measured["bulk_over_8pi2"] = out[-1].bulk / (8 * math.pi ** 2)


# -------------------------------------------------------------- verify-all

def cmd_verify_all(ctx: Context, rep: Report) -> None:
    from . import acceptance
    p = ctx.params
    try:
        only = [int(x) for x in _floats(p["only"])] if p.get("only") else None
    except ValueError as exc:
        raise ConfigError(f"verify-all: --only: {exc}") from None
    if only and any(not 1 <= i <= len(acceptance.CHECKS) for i in only):
        raise ConfigError(f"verify-all: --only takes criterion numbers 1..{len(acceptance.CHECKS)}")
    rows = []
    for i in (only or range(1, len(acceptance.CHECKS) + 1)):
        res = acceptance.run_check(i, quick=p["quick"])
        print(res.line(), file=sys.stderr, flush=True)
        rows.append({"number": res.number, "name": res.name, "passed": res.passed, "measured": res.measured})
        if not res.passed:
            rep.fail(f"criterion {res.number}", res.name)
    rep.measured["criteria"] = rows
    rep.measured["quick"] = p["quick"]


# ----------------------------------------------------------------- plot

def _scale(vals, lo, hi, logscale):
    v = np.log10(vals) if logscale else np.asarray(vals, float)
    a, b = float(np.min(v)), float(np.max(v))
    span = b - a or 1.0
    return lo + (v - a) / span * (hi - lo), a, b


def _svg_lines(x, ys, names, logscale, title) -> str:
    W, H, m = 640, 420, 60
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    px, x0, x1 = _scale(x, m, W - 20, logscale)
    allys = np.concatenate(ys)
    _, y0, y1 = _scale(allys, 0, 1, logscale)
    span = y1 - y0 or 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{m}" y="30" width="{W - 20 - m}" height="{H - 30 - m}" fill="none" stroke="black"/>']
    for i, (y, name) in enumerate(zip(ys, names)):
        v = np.log10(y) if logscale else np.asarray(y, float)
        py = (H - m) - (v - y0) / span * (H - m - 30)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        col = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{m + 8}" y="{48 + 16 * i}" font-size="12" fill="{col}">{name}</text>')
    fmt = (lambda v: f"1e{v:.2g}") if logscale else (lambda v: f"{v:.4g}")
    out.append(f'<text x="{m}" y="{H - m + 16}" font-size="11">{fmt(x0)}</text>')
    out.append(f'<text x="{W - 20}" y="{H - m + 16}" font-size="11" text-anchor="end">{fmt(x1)}</text>')
    out.append(f'<text x="{m - 4}" y="{H - m}" font-size="11" text-anchor="end">{fmt(y0)}</text>')
    out.append(f'<text x="{m - 4}" y="40" font-size="11" text-anchor="end">{fmt(y1)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _svg_heatmap(x, y, v, title) -> str:
    xs, ys = np.unique(x), np.unique(y)
    grid = np.full((ys.size, xs.size), np.nan)
    grid[np.searchsorted(ys, y), np.searchsorted(xs, x)] = v
    W, H, m = 640, 420, 40
    cw, ch = (W - 2 * m) / xs.size, (H - 2 * m) / ys.size
    lo, hi = np.nanmin(grid), np.nanmax(grid)
    span = hi - lo or 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W // 2}" y="24" text-anchor="middle" font-size="14">{title} [{lo:.4g}, {hi:.4g}]</text>']
    for i in range(ys.size):
        for j in range(xs.size):
            if np.isnan(grid[i, j]):
                continue
            t = (grid[i, j] - lo) / span
            rgb = (int(255 * t), int(64 + 96 * (1 - abs(2 * t - 1))), int(255 * (1 - t)))
            out.append(f'<rect x="{m + j * cw:.2f}" y="{H - m - (i + 1) * ch:.2f}" width="{cw + 0.05:.2f}" '
                       f'height="{ch + 0.05:.2f}" fill="rgb{rgb}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(ctx: Context, rep: Report) -> None:
    p = ctx.params
    try:
        with open(p["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"{p['csv']}: {exc.strerror}") from None
    header = rows[0] if rows else []
    wanted = [p["x"]] + [c for c in str(p["y"]).split(",") if c]
    if p["kind"] == "heatmap":
        if not p.get("z"):
            raise ConfigError("plot: heatmap needs --z")
        wanted.append(p["z"])
    for c in wanted:
        if c not in header:
            raise ConfigError(f"{p['csv']}:1: no column {c!r}; have {header}")
    try:
        data = {c: np.array([float(r[header.index(c)]) for r in rows[1:] if r]) for c in wanted}
    except ValueError as exc:
        raise ConfigError(f"{p['csv']}: {exc}") from None
    title = p.get("title") or Path(p["csv"]).name
    if p["kind"] == "heatmap":
        svg = _svg_heatmap(data[p["x"]], data[wanted[1]], data[p["z"]], title)
    else:
        logscale = p["kind"] == "loglog"
        x = data[p["x"]]
        ys = [data[c] for c in wanted[1:]]
        if logscale:
            keep = (x > 0) & np.all([y > 0 for y in ys], axis=0)
            if not keep.any():
                raise ConfigError("plot: log-log needs positive data")
            x, ys = x[keep], [y[keep] for y in ys]
        order = np.argsort(x, kind="stable")
        svg = _svg_lines(x[order], [y[order] for y in ys], wanted[1:], logscale, title)
    path = ctx.out
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    ctx.record(path)
    rep.measured["points"] = int(data[p["x"]].size)


# ------------------------------------------------------------------ table

def _commands() -> tuple[_Parser, dict]:
    parser = _Parser(prog="hkgeom", description="Hyperkähler model geometries: build, solve, verify.")
    parser.add_argument("--log-level", default="WARNING", help="logging level for library messages")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    cmds = {}

    def add(name, help, run, tolerances=None, needs_out=False, out_is_file=False):
        cmd = Command(name, help, run, dict(tolerances or {}), needs_out=needs_out, out_is_file=out_is_file)
        tol_doc = "; ".join(f"{k}={d:g} ({doc})" for k, (d, doc) in cmd.tolerances.items()) or "none"
        sp = sub.add_parser(name, help=help, description=f"{help} Tolerances: {tol_doc}.")
        sp.add_argument("--config", help="JSON object of option values (keys as option names)")
        sp.add_argument("--out", default=argparse.SUPPRESS,
                        help="output file" if out_is_file else "output directory")
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
        sp.add_argument("--tol", action="append", default=argparse.SUPPRESS, metavar="NAME=VALUE",
                        help="override a tolerance")
        sp.add_argument("--golden", default=argparse.SUPPRESS, help="compare outputs byte-for-byte with DIR")
        sp.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                        help="validate the configuration without computing")
        cmds[name] = cmd
        return cmd, sp

    cmd, sp = add("gh-build", "Sample a Gibbons-Hawking geometry and write its triple.", cmd_gh_build,
                  {"hk_residual": (1e-10, "max interior hyperkähler residual")}, needs_out=True)
    _gh_options(cmd, sp)

    cmd, sp = add("gh-profile", "Ball volume and max |Rm| against distance (CSV r, maxRm, vol).", cmd_gh_profile)
    _gh_options(cmd, sp)
    _opt(cmd, sp, "--geometry", None, str, "directory written by gh-build (overrides the kind options)")
    _opt(cmd, sp, "--radii", "0.5,1,1.5,2", str, "comma-separated radii")
    _opt(cmd, sp, "--base-point", None, str, "base point 'x,y,z' (default the first center)")

    cmd, sp = add("triple-check", "Residuals of a stored definite triple.", cmd_triple_check,
                  {"hk_residual": (1e-10, "max interior hyperkähler residual"),
                   "closedness": (math.inf, "max closedness residual; reported only by default")})
    _opt(cmd, sp, "--triple", None, str, "triple directory", required=True)
    _opt(cmd, sp, "--order", 2, int, "finite-difference order for closedness")

    cmd, sp = add("hk-solve", "Picard solve for a hyperkähler triple near a flat torus one.", cmd_hk_solve,
                  {"hk_residual": (1e-8, "final hyperkähler residual"),
                   "ratio": (0.5, "largest contraction ratio"),
                   "solver": (1e-9, "stopping residual of the iteration")})
    _opt(cmd, sp, "--triple", None, str, "periodic input triple directory (default perturbed flat torus)")
    _opt(cmd, sp, "--n", 16, int, "nodes per axis of the unit 4-torus")
    _opt(cmd, sp, "--eps", 1e-3, float, "amplitude of the random perturbation")
    _opt(cmd, sp, "--max-iter", 20, int, "iteration cap")

    cmd, sp = add("sk-eval", "Special Kähler model on a ring: CSV r, phi, density, S, 4theta2.", cmd_sk_eval,
                  {"rel": (0.03, "relative mismatch of S and 4|Theta|^2"),
                   "flat": (1e-8, "max |S| for flat models")})
    _opt(cmd, sp, "--model", "typeIII", str, "cone, typeI, typeII or typeIII")
    _opt(cmd, sp, "--beta", None, str, "cone angle beta as p/q (cone, typeIII)")
    _opt(cmd, sp, "--F", "z", str, "typeIII polynomial F(z)")
    _opt(cmd, sp, "--f", "0", str, "typeI/typeII holomorphic polynomial f(z)")
    _opt(cmd, sp, "--r-in", 0.2, float, "inner ring radius")
    _opt(cmd, sp, "--r-out", 0.5, float, "outer ring radius")
    _opt(cmd, sp, "--n-r", 200, int, "radial samples")
    _opt(cmd, sp, "--n-phi", 64, int, "angular samples")

    cmd, sp = add("monodromy", "Classify an SL(2) matrix up to conjugation.", cmd_monodromy)
    sp.add_argument("action", choices=("classify",))
    cmd.defaults["action"] = "classify"
    cmd.kinds["action"] = (str, ("classify",), False)
    _opt(cmd, sp, "--matrix", None, str, "matrix as 'a,b;c,d'", required=True)
    _opt(cmd, sp, "--integral", False, bool, "classify up to SL(2,Z) conjugation")

    cone_tol = {"residual": (1e-8, "sup-relative ODE residual"),
                "growth_slack": (0.05, "allowed excess of the growth exponent over 2 - delta")}
    for name, run, help in (("cone-solve", cmd_cone_solve, "Poisson equation on a cone, mode by mode."),
                            ("cone-spectrum", cmd_cone_spectrum, "Cross-section spectrum and radial exponents.")):
        cmd, sp = add(name, help, run, cone_tol if name == "cone-solve" else None)
        _opt(cmd, sp, "--d", 3, int, "cone dimension (2 or 3)")
        _opt(cmd, sp, "--cross", "sphere", str, "cross-section", ("circle", "sphere", "projective_sphere"))
        _opt(cmd, sp, "--beta", 1.0, float, "circle cone angle over 2 pi")
        _opt(cmd, sp, "--modes", 4, int, "number of distinct eigenvalues")
        if name == "cone-solve":
            _opt(cmd, sp, "--delta", 0.4, float, "weight delta in (0, 1)")
            _opt(cmd, sp, "--R", 1.0, float, "inner radius")
            _opt(cmd, sp, "--r-max", 100.0, float, "outer radius of the grid")
            _opt(cmd, sp, "--n", 2000, int, "radial cells")
            _opt(cmd, sp, "--v", None, str, "source CSV: column r then one column 'j.component' per mode",
                 required=True)
            _opt(cmd, sp, "--angular-nodes", 4, int, "quadrature order for field.csv")

    cmd, sp = add("calabi-solve", "Mode-by-mode solve on the nilmanifold end with certificates.", cmd_calabi_solve,
                  {"residual": (1e-7, "sup-relative ODE residual per mode")})
    _opt(cmd, sp, "--tau", -1.0, float, "decay rate tau < 0, tau != -3")
    _opt(cmd, sp, "--w", 2.0, float, "inner end of the z range")
    _opt(cmd, sp, "--mode-file", None, str, "modes CSV with columns k, j, lam, multiplicity")
    _opt(cmd, sp, "--mode-count", 8, int, "Heisenberg modes used when no mode file is given")
    _opt(cmd, sp, "--v", None, str, "source CSV: column z then one column per mode index k", required=True)
    _opt(cmd, sp, "--z-max", 20.0, float, "outer end of the z grid")
    _opt(cmd, sp, "--n", 800, int, "z cells")

    cmd, sp = add("end", "Build a model end or classify a measured volume profile.", cmd_end,
                  {"hk_residual": (1e-10, "hyperkähler residual of the built end"),
                   "kappa": (0.15, "|measured - expected| volume exponent with --measure")})
    sp.add_argument("action", choices=("build", "classify"))
    cmd.defaults["action"] = "build"
    cmd.kinds["action"] = (str, ("build", "classify"), False)
    from .model_ends import FAMILIES
    _opt(cmd, sp, "--family", None, str, "model family", FAMILIES)
    _opt(cmd, sp, "--beta", None, str, "ALG cone angle p/q")
    _opt(cmd, sp, "--k", None, float, "ALF/ALG* integer parameter")
    _opt(cmd, sp, "--c", None, float, "ALF asymptotic circle constant")
    _opt(cmd, sp, "--b", None, float, "ALH* degree")
    _opt(cmd, sp, "--order", None, float, "ALE group order")
    _opt(cmd, sp, "--lengths", None, str, "ALH torus lengths 'a,b,c'")
    _opt(cmd, sp, "--angles", None, str, "ALH torus angles 'alpha,beta,gamma'")
    _opt(cmd, sp, "--resolution", 16, int, "nodes per axis of the check chart")
    _opt(cmd, sp, "--measure", False, bool, "also write profile.csv and fit the volume exponent")
    _opt(cmd, sp, "--profile", None, str, "CSV with columns r, vol (classify)")
    _opt(cmd, sp, "--kappa-err", 0.1, float, "half-width of the exponent interval (classify)")
    _opt(cmd, sp, "--monodromy", None, str, "monodromy matrix 'a,b;c,d' (classify)")
    _opt(cmd, sp, "--fiber", None, str, "fiber type: abelian or nilpotent (classify)")
    _opt(cmd, sp, "--cone", None, str, "tangent cone descriptor, e.g. R3/Z2 (classify)")

    cmd, sp = add("gauss-bonnet", "Bulk and boundary Gauss-Bonnet terms on Taub-NUT balls.", cmd_gauss_bonnet,
                  {"chi": (0.05, "|chi - 1| at the largest radius")})
    _opt(cmd, sp, "--c", 1.0, float, "Taub-NUT constant")
    _opt(cmd, sp, "--radii", "1,2.154,4.642,10", str, "comma-separated ball radii")
    _opt(cmd, sp, "--n-u", 4, int, "radial quadrature nodes per panel")
    _opt(cmd, sp, "--n-v", 4, int, "polar quadrature nodes per hemisphere")
    _opt(cmd, sp, "--n-phi", 1, int, "azimuthal nodes")

    cmd, sp = add("verify-all", "Run the acceptance criteria and report measured values.", cmd_verify_all)
    _opt(cmd, sp, "--quick", False, bool, "reduced resolutions, same tolerances")
    _opt(cmd, sp, "--only", None, str, "comma-separated criterion numbers")

    cmd, sp = add("plot", "Render a CSV as an SVG line plot or heatmap.", cmd_plot, needs_out=True, out_is_file=True)
    _opt(cmd, sp, "--csv", None, str, "input CSV", required=True)
    _opt(cmd, sp, "--x", "r", str, "x column")
    _opt(cmd, sp, "--y", "vol", str, "y column(s), comma-separated")
    _opt(cmd, sp, "--z", None, str, "value column for heatmaps")
    _opt(cmd, sp, "--kind", "loglog", str, "plot kind", ("loglog", "linear", "heatmap"))
    _opt(cmd, sp, "--title", None, str, "plot title")
    return parser, cmds


DEFAULT_OUT = {"gh-build": "geo", "hk-solve": "hk_out", "plot": "plot.svg"}


def run(argv=None) -> int:
    parser, cmds = _commands()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=getattr(logging, str(ns.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        cmd = cmds[ns.command]
        params, tol, common = _resolve(cmd, ns)
        out = common["out"]
        if out is None and cmd.needs_out:
            if cmd.name == "end":
                out = None
            else:
                out = DEFAULT_OUT[cmd.name]
        if cmd.name == "end" and params["action"] == "build" and out is None:
            out = "end"
        if common["golden"] and out is None:
            raise ConfigError(f"{cmd.name}: --golden needs --out")
        ctx = Context(cmd, params, tol, Path(out) if out else None, int(common["seed"]))
        if common["dry_run"]:
            _validate_inputs(cmd, params)
            sys.stdout.write(_dump({"command": cmd.name, "dry_run": True, "ok": True, "params": params,
                                    "tolerances": tol, "out": out, "seed": ctx.seed}))
            return 0
        rep = Report()
        try:
            cmd.run(ctx, rep)
        except (ValueError, KeyError) as exc:
            # parameter errors surfacing from the library: bad input, not a failed verification
            raise ConfigError(f"{cmd.name}: {exc}") from None
    except ConfigError as exc:
        print(f"hkgeom: error: {exc}", file=sys.stderr)
        return 1
    report = {"command": cmd.name, "ok": not rep.failures, "measured": rep.measured,
              "failures": rep.failures, "tolerances": tol, "outputs": list(ctx.outputs)}
    if common["golden"]:
        g = _golden_compare(ctx, Path(common["golden"]))
        report["golden"] = g
        if g["mismatched"] or g["missing"]:
            report["ok"] = False
            report["failures"].append({"check": "golden", "message": "outputs differ from the golden files"})
    text = _dump(report)
    if ctx.out is not None and not cmd.out_is_file:
        ctx.out.mkdir(parents=True, exist_ok=True)
        (ctx.out / "report.json").write_text(text)
    sys.stdout.write(text)
    return 0 if report["ok"] else 2


def _validate_inputs(cmd: Command, params: dict) -> None:
    for key in ("v", "mode_file", "profile", "csv", "config"):
        path = params.get(key)
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{cmd.name}: --{key.replace('_', '-')}: no such file {path!r}")
    for key in ("triple", "geometry"):
        path = params.get(key)
        if path is not None and not (Path(path) / ("manifest.json" if key == "triple" else "gh.json")).exists():
            raise ConfigError(f"{cmd.name}: --{key}: {path!r} is not a {key} directory")
    if cmd.name == "monodromy":
        from . import monodromy as mono
        try:
            mono.parse_matrix(params["matrix"])
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"monodromy: {exc}") from None
    if cmd.name in ("gh-build", "gh-profile") and not params.get("geometry"):
        try:
            kind, _ = _gh_source(params)
            _gh_chart(params, kind)
        except ValueError as exc:
            raise ConfigError(f"{cmd.name}: {exc}") from None


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
