"""Run configuration: YAML grammar, validation and construction of solver objects.

Grammar (YAML)::

    mode: simulate            # simulate | mms_verify | extension_test
    grid:
      dim: 2
      extents: [1.0, 1.0]
      counts: [32, 32]
      topology: [periodic, walled]            # per axis
      boundary: {y-: DirichletTemp, y+: NeumannTemp}
    fluid: {mu: 0.5, lambda: 0.1, kappa: 0.8, cv: 1.5, G: "-0.5*y"}
    data:                       # expressions in x, y (not needed with an mms block)
      rho0: "1"
      theta0: "1"
      u0: ["0", "0"]
      theta_B: "1"              # expression, or a mapping face -> expression
      u_B: ["0", "0"]           # vector expression, or a mapping face -> vector
      q_B: "0"
    stepper: {dt: 1.0e-3, t_end: 1.0, cfl_safety: 0.5, p: 2.0, q: 4.0}
    monitor: {M: auto, min_principle_tol: 1.0e-6, blowup_amplitude: 1.0e8,
              blowup_rate: 50, blowup_window: 10,
              terminate_on: [HittingTime, BlowupSuspected, PositivityLoss]}
    output: {dir: out, snapshot_every: 0}
    mms:                        # optional manufactured solution in x, y, t
      rho: "..."
      theta: "..."
      u: ["...", "..."]
      t_end: 0.1
      dt_coeff: 2.0             # dt = dt_coeff * h^2 in convergence studies
      expected_order: {rho: 0.9, theta: 1.9, u: 1.9, time: 0.9}
      source_scale: 1.0         # != 1 deliberately breaks the forcing
      temporal: {n: 32, dts: [8.0e-3, 4.0e-3, 2.0e-3]}   # optional, at least 3 steps
    extension_test:             # optional oracles for mode extension_test
      theta_exact: "..."
      u_exact: ["...", "..."]
      tol: 1.0e-4

Every violated hypothesis is collected and reported together, each tagged
with the condition it mirrors (``LEa1``, ``PP4``, ``PP5``, ``PP7``,
``PP8``, ``PP9``, ``deco``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .constitutive import FluidParams
from .elliptic import BoundaryData
from .expressions import Expr, ExpressionError, parse_expr
from .grid import Grid, GridError, ScalarField, TempBC, VectorField, build_grid, parse_face
from .monitor import MonitorConfig
from .state import State
from .stepper import StepperConfig, exponent_violation

MODES = ("simulate", "mms_verify", "extension_test")


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


# ---------------------------------------------------------------------------
# YAML with line numbers


class _LineDict(dict):
    lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=deep)
        out[key] = loader.construct_object(vnode, deep=deep)
        out.lines[key] = knode.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _line(section, key) -> str:
    ln = getattr(section, "lines", {}).get(key)
    return f"line {ln}: " if ln else ""


def load_yaml(text: str) -> dict:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError([f"{where}YAML parse error: {getattr(e, 'problem', e)}"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["configuration must be a mapping of sections"])
    return doc


# ---------------------------------------------------------------------------
# config object


@dataclass
class RunConfig:
    mode: str
    grid: Grid
    fluid: dict
    data: dict
    stepper: dict
    monitor: MonitorConfig
    output: dict
    mms: dict | None = None
    extension_test: dict | None = None
    raw: dict = field(default_factory=dict, repr=False)

    # -- solver objects ---------------------------------------------------

    def fluid_params(self, grid: Grid | None = None) -> FluidParams:
        grid = grid or self.grid
        G = ScalarField(grid, self.fluid["G"](*grid.mesh))
        f = self.fluid
        return FluidParams(f["mu"], f["lambda"], f["kappa"], f["cv"], G=G, G_reg=f.get("G_reg", "W1q"))

    def boundary_data(self, grid: Grid | None = None) -> BoundaryData:
        grid = grid or self.grid
        return BoundaryData(grid, *_sample_boundary(self.data, grid))

    def initial_state(self, grid: Grid | None = None) -> State:
        grid = grid or self.grid
        m = grid.mesh
        d = self.data
        return State(0.0, ScalarField(grid, d["rho0"](*m)), ScalarField(grid, d["theta0"](*m)),
                     VectorField(grid, np.stack([c(*m) for c in d["u0"]])))

    def stepper_config(self, sources=None) -> StepperConfig:
        s = self.stepper
        return StepperConfig(s["dt"], s["t_end"], s["cfl_safety"], s["p"], s["q"], sources)

    def with_counts(self, counts) -> Grid:
        g = self.grid
        return Grid(g.dim, g.extents, tuple(int(c) for c in counts), g.topology, g.boundary)


def _sample_boundary(data: dict, grid: Grid):
    def per_face(value, faces):
        if isinstance(value, dict):
            return {f: value[f] for f in faces}
        return {f: value for f in faces}

    u_B, theta_B, q_B = {}, {}, {}
    for f, v in per_face(data["u_B"], grid.walled_faces).items():
        fc = grid.face_coords(f)
        u_B[f] = tuple(c(*fc) for c in v)
    for f, v in per_face(data["theta_B"], grid.dirichlet_faces).items():
        theta_B[f] = v(*grid.face_coords(f))
    for f, v in per_face(data["q_B"], grid.neumann_faces).items():
        q_B[f] = v(*grid.face_coords(f))
    return u_B, theta_B, q_B


# ---------------------------------------------------------------------------
# parsing


def _num(section: dict, key: str, errs: list, default=None, positive=False, nonneg=False):
    if key not in section:
        if default is None:
            errs.append(f"missing key '{key}'")
            return None
        return default
    v = section[key]
    try:
        v = float(v)
    except (TypeError, ValueError):
        errs.append(f"{_line(section, key)}'{key}' must be a number, got {v!r}")
        return None
    if positive and not v > 0:
        errs.append(f"{_line(section, key)}'{key}' must be > 0, got {v}")
    if nonneg and not v >= 0:
        errs.append(f"{_line(section, key)}'{key}' must be >= 0, got {v}")
    return v


def _expr(section: dict, key: str, errs: list, dim: int, vector=False, variables=("x", "y", "z"), default=None):
    if key not in section:
        if default is None:
            errs.append(f"missing key '{key}'")
            return None
        val = default
    else:
        val = section[key]
    ln = _line(section, key)
    try:
        if vector:
            if not isinstance(val, (list, tuple)) or len(val) != dim:
                errs.append(f"{ln}'{key}' must be a list of {dim} expressions")
                return None
            return tuple(parse_expr(v, variables) for v in val)
        return parse_expr(val, variables)
    except ExpressionError as e:
        errs.append(f"{ln}{key}: {e}")
        return None


def parse_config(text: str, output_dir: str | None = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises :class:`ConfigError` listing every problem found, hypothesis
    violations tagged with the condition they break.
    """
    doc = load_yaml(text)
    errs: list[str] = []
    known = {"mode", "grid", "fluid", "data", "stepper", "monitor", "output", "mms", "extension_test"}
    for k in doc:
        if k not in known:
            errs.append(f"{_line(doc, k)}unknown section '{k}'")

    mode = str(doc.get("mode", "simulate")).replace("-", "_")
    if mode not in MODES:
        errs.append(f"{_line(doc, 'mode')}mode must be one of {MODES}, got {mode!r}")

    gsec = doc.get("grid")
    if not isinstance(gsec, dict):
        raise ConfigError(errs + ["missing 'grid' section"])
    dim = int(gsec.get("dim", 0) or 0)
    if dim not in (1, 2):
        raise ConfigError(errs + [f"{_line(gsec, 'dim')}grid.dim must be 1 or 2, got {gsec.get('dim')!r}"])

    fsec = doc.get("fluid", {}) or {}
    dsec = doc.get("data", {}) or {}
    ssec = doc.get("stepper", {}) or {}
    msec = doc.get("monitor", {}) or {}
    osec = doc.get("output", {}) or {}
    mms_sec = doc.get("mms")
    ext_sec = doc.get("extension_test")

    # fluid
    fluid = {
        "mu": _num(fsec, "mu", errs, positive=True),
        "lambda": _num(fsec, "lambda", errs, nonneg=True),
        "kappa": _num(fsec, "kappa", errs, positive=True),
        "cv": _num(fsec, "cv", errs, positive=True),
        "G": _expr(fsec, "G", errs, dim, default="0"),
        "G_reg": str(fsec.get("G_reg", "W1q")),
    }
    if fluid["G_reg"] not in ("W1q", "W2q"):
        errs.append(f"{_line(fsec, 'G_reg')}G_reg must be W1q or W2q")

    # stepper; only simulate runs need explicit dt and t_end
    need_stepper = mode == "simulate"
    stepper = {
        "dt": _num(ssec, "dt", errs, positive=True, default=None if need_stepper else 1e-3),
        "t_end": _num(ssec, "t_end", errs, nonneg=True, default=None if need_stepper else 0.0),
        "cfl_safety": _num(ssec, "cfl_safety", errs, default=0.5, positive=True),
        "p": _num(ssec, "p", errs, default=2.0),
        "q": _num(ssec, "q", errs, default=4.0),
    }
    if stepper["cfl_safety"] is not None and stepper["cfl_safety"] > 1:
        errs.append(f"{_line(ssec, 'cfl_safety')}cfl_safety must lie in (0, 1]")
    if stepper["p"] is not None and stepper["q"] is not None:
        msg = exponent_violation(stepper["p"], stepper["q"])
        if msg:
            errs.append(f"{_line(ssec, 'p')}{msg}")

    # monitor
    try:
        mkw = {k: msec[k] for k in msec}
        if "terminate_on" in mkw:
            mkw["terminate_on"] = tuple(mkw["terminate_on"])
        if "compat_thresholds" in mkw:
            base = MonitorConfig().compat_thresholds
            base.update({k: float(v) for k, v in mkw["compat_thresholds"].items()})
            mkw["compat_thresholds"] = base
        for k in ("min_principle_tol", "blowup_amplitude", "blowup_rate"):
            if k in mkw:
                mkw[k] = float(mkw[k])
        if "M" in mkw and mkw["M"] != "auto":
            mkw["M"] = float(mkw["M"])
        monitor = MonitorConfig(p=stepper["p"] or 2.0, q=stepper["q"] or 4.0,
                                **{k: v for k, v in mkw.items() if k not in ("p", "q")})
    except (TypeError, ValueError) as e:
        errs.append(f"monitor: {e}")
        monitor = MonitorConfig()

    output = {"dir": str(osec.get("dir", "nsflab_out")), "snapshot_every": int(osec.get("snapshot_every", 0))}
    if output_dir is not None:
        output["dir"] = output_dir

    # grid; the Gamma_D alternative is checked below against the actual q_B values
    try:
        grid = build_grid(dim, gsec.get("extents", [1.0] * dim), gsec.get("counts", []),
                          gsec.get("boundary", {}) or {}, gsec.get("topology"), neumann_flux_zero=True)
    except (GridError, ValueError, TypeError) as e:
        raise ConfigError(errs + [f"grid: {e}"]) from None

    # data
    mms = None
    if mms_sec is not None:
        mms = {
            "rho": _expr(mms_sec, "rho", errs, dim, variables=("x", "y", "z", "t")),
            "theta": _expr(mms_sec, "theta", errs, dim, variables=("x", "y", "z", "t")),
            "u": _expr(mms_sec, "u", errs, dim, vector=True, variables=("x", "y", "z", "t")),
            "t_end": _num(mms_sec, "t_end", errs, default=stepper["t_end"] or 0.1, positive=True),
            "dt_coeff": _num(mms_sec, "dt_coeff", errs, default=2.0, positive=True),
            "source_scale": _num(mms_sec, "source_scale", errs, default=1.0),
            "expected_order": {"rho": 0.9, "theta": 1.9, "u": 1.9, "time": 0.9},
            "temporal": None,
        }
        for k, v in (mms_sec.get("expected_order") or {}).items():
            if k not in mms["expected_order"]:
                errs.append(f"{_line(mms_sec, 'expected_order')}unknown expected_order key {k!r}")
            else:
                mms["expected_order"][k] = float(v)
        tb = mms_sec.get("temporal")
        if tb is not None:
            if not isinstance(tb, dict) or "n" not in tb or len(tb.get("dts") or []) < 3:
                errs.append(f"{_line(mms_sec, 'temporal')}mms.temporal needs 'n' and at least three 'dts'")
            else:
                mms["temporal"] = {"n": int(tb["n"]), "dts": [float(v) for v in tb["dts"]]}
        if errs:
            raise ConfigError(errs)
        data = _data_from_mms(mms, grid)
    else:
        data = {
            "rho0": _expr(dsec, "rho0", errs, dim),
            "theta0": _expr(dsec, "theta0", errs, dim),
            "u0": _expr(dsec, "u0", errs, dim, vector=True, default=["0"] * dim),
            "u_B": _face_data(dsec, "u_B", errs, dim, grid.walled_faces, vector=True, default=["0"] * dim),
            "theta_B": _face_data(dsec, "theta_B", errs, dim, grid.dirichlet_faces, vector=False,
                                  default="1" if not grid.dirichlet_faces else None),
            "q_B": _face_data(dsec, "q_B", errs, dim, grid.neumann_faces, vector=False, default="0"),
        }

    ext = None
    if ext_sec is not None:
        ext = {"theta_exact": _expr(ext_sec, "theta_exact", errs, dim, default="nan") if "theta_exact" in ext_sec else None,
               "u_exact": _expr(ext_sec, "u_exact", errs, dim, vector=True) if "u_exact" in ext_sec else None,
               "tol": _num(ext_sec, "tol", errs, default=1e-4, positive=True)}

    if _complete(data):
        errs.extend(hypothesis_violations(grid, data, stepper))
    if errs:
        raise ConfigError(errs)
    return RunConfig(mode, grid, fluid, data, stepper, monitor, output, mms, ext, raw=copy.deepcopy(dict(doc)))


def _face_data(section, key, errs, dim, faces, vector, default=None):
    if key not in section:
        if not faces:
            return {}
        if default is None:
            errs.append(f"missing key '{key}' (needed on faces {faces})")
            return None
        val = default
        wrapped = {key: val}
        return {f: _expr(wrapped, key, errs, dim, vector) for f in faces}
    val = section[key]
    if isinstance(val, dict):
        missing = [f for f in faces if f not in val]
        if missing:
            errs.append(f"{_line(section, key)}'{key}' lacks faces {missing}")
            return None
        return {f: _expr(val, f, errs, dim, vector) for f in faces}
    e = _expr(section, key, errs, dim, vector)
    return {f: e for f in faces}


def _data_from_mms(mms: dict, grid: Grid) -> dict:
    """Initial and boundary data of a manufactured solution, taken at t = 0."""
    import sympy as sym

    from .mms import SPACE, _lambdify

    data = {"rho0": mms["rho"], "theta0": mms["theta"], "u0": tuple(mms["u"])}
    data["u_B"] = {f: data["u0"] for f in grid.walled_faces}
    data["theta_B"] = {f: data["theta0"] for f in grid.dirichlet_faces}
    xs = SPACE[: grid.dim]
    th = mms["theta"].sympy()
    qb = {}
    for f in grid.neumann_faces:
        axis, side = parse_face(f)
        fn = _lambdify(side * sym.diff(th, xs[axis]), xs)
        qb[f] = lambda *c, fn=fn: fn(0.0, *c)
    data["q_B"] = qb
    return data


def manufactured_from(cfg: "RunConfig"):
    """The :class:`~nsflab.mms.Manufactured` triple described by the ``mms`` block."""
    from .mms import Manufactured

    m = cfg.mms
    return Manufactured(m["rho"].sympy(), m["theta"].sympy(), tuple(c.sympy() for c in m["u"]),
                        cfg.fluid["G"].sympy())


def _complete(obj) -> bool:
    if obj is None:
        return False
    if isinstance(obj, dict):
        return all(_complete(v) for v in obj.values())
    if isinstance(obj, tuple):
        return all(_complete(v) for v in obj)
    return True


def hypothesis_violations(grid: Grid, data: dict, stepper: dict) -> list[str]:
    """Pointwise checks of the data hypotheses at the grid nodes."""
    out = []
    m = grid.mesh
    try:
        rho0 = data["rho0"](*m)
        if rho0.min() <= 0:
            out.append(f"rho0 <= 0 (min {rho0.min():.6g}) violates PP4 (min rho0 > 0)")
        th0 = data["theta0"](*m)
        if th0.min() <= 0:
            out.append(f"theta0 <= 0 (min {th0.min():.6g}) violates PP5 (inf theta0 > 0)")
        for f, e in data["theta_B"].items():
            v = e(*grid.face_coords(f))
            if v.min() <= 0:
                out.append(f"theta_B <= 0 on {f} (min {v.min():.6g}) violates PP7 (inf theta_B > 0)")
        for f, e in data["u_B"].items():
            axis, _ = parse_face(f)
            un = np.abs(e[axis](*grid.face_coords(f))).max()
            if un > 1e-12:
                out.append(f"u_B . n != 0 on {f} (max |u_B . n| = {un:.3e}) violates PP8 (u_B . n = 0)")
        qmin = np.inf
        qnonzero = False
        for f, e in data["q_B"].items():
            v = e(*grid.face_coords(f))
            qmin = min(qmin, float(v.min()))
            qnonzero |= bool(np.any(v != 0))
        if qmin < 0:
            out.append(f"q_B < 0 (min {qmin:.6g}) violates PP9 (q_B >= 0)")
        if not grid.dirichlet_faces and qnonzero:
            out.append("Gamma_D is empty but q_B != 0, violating deco (either Gamma_D nonempty or q_B = 0)")
    except ExpressionError as e:
        out.append(str(e))
    return out


def load_config(path, output_dir: str | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), output_dir)
