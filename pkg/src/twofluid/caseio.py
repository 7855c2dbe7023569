"""Case configuration, boundary/initial data and on-disk output.

Configuration is flat "key = value" text; '#' starts a comment and
bracketed section headers are allowed but purely cosmetic.  All physical
keys are dimensional (SI); the dt_* controller keys are dimensionless
(they bound the scaled step of the adaptive controller).  Unknown keys
are rejected.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .fem import FunctionSpace
from .mesh import generate_rect_mesh
from .physics import FluidProperties, Scales


@dataclass
class CaseConfig:
    # material properties (SI)
    rho_g: float = 10.0
    rho_l: float = 1000.0
    mu_g: float = 2e-5
    mu_l: float = 5e-3
    d_b: float = 1e-3
    gravity: float = 9.81
    # reference scales (SI)
    x_scale: float = 0.05
    v_scale: float = 0.0616
    h_ref: float = 0.1
    # interfacial pressure coefficient (0.25 uniform bubbles; 0 disables)
    c_p: float = 0.25
    # rectangular column geometry (m) and resolution
    width: float = 0.05
    height: float = 0.1
    nx: int = 50
    ny: int = 100
    diagonal: str = "alternating"
    # solver switches and tolerances
    bounded: bool = True
    supg: bool = True
    tol_step: float = 1e-4
    tol_linear: float = 1e-10
    tol_vi: float = 1e-10
    alpha_ln_floor: float = 1e-5
    # dimensionless time-step controller bounds
    dt_init: float = 1e-4
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    # end time (seconds)
    t_end: float = 2.5
    # sparger inlet profile (SI): gaussian in x with linear ramp in time
    inlet_peak_velocity: float = 0.0616
    inlet_peak_alpha: float = 0.026
    inlet_ramp_time: float = 0.625
    inlet_sigma: float = 0.1
    inlet_half_width: float = 0.025
    # diagnostics and output
    slip_alpha_floor: float = 0.005
    output_every: float = 0.05
    log_rejected_steps: bool = False
    output_dir: str = "out"

    def props(self):
        p = FluidProperties(rho_g=self.rho_g, rho_l=self.rho_l, mu_g=self.mu_g,
                            mu_l=self.mu_l, d_b=self.d_b, g=self.gravity)
        p.validate()
        return p

    def scales(self):
        return Scales(x_s=self.x_scale, v_s=self.v_scale, g_s=self.gravity,
                      h_ref=self.h_ref)

    def build_mesh(self):
        return generate_rect_mesh(self.width / self.x_scale,
                                  self.height / self.x_scale,
                                  self.nx, self.ny, self.diagonal)

    def validate(self):
        positive = ("rho_g", "rho_l", "mu_g", "mu_l", "d_b", "gravity",
                    "x_scale", "v_scale", "h_ref", "width", "height",
                    "tol_step", "tol_linear", "tol_vi", "alpha_ln_floor",
                    "dt_init", "dt_min", "dt_max", "inlet_ramp_time",
                    "inlet_sigma", "inlet_half_width")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError("must be positive", key=name)
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("mesh resolution must be at least 1", key="nx")
        if self.diagonal not in ("right", "left", "alternating"):
            raise ConfigError(f"unknown rule '{self.diagonal}'", key="diagonal")
        if self.t_end < 0:
            raise ConfigError("must be nonnegative", key="t_end")
        if not 0.0 <= self.inlet_peak_alpha <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="inlet_peak_alpha")
        if not 0.0 < self.slip_alpha_floor < 1.0:
            raise ConfigError("must lie in (0, 1)", key="slip_alpha_floor")
        if self.rho_l < self.rho_g:
            raise ConfigError("liquid must be the heavy phase", key="rho_l")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(CaseConfig)}


def _parse_value(key, raw, lineno):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got '{raw}'", line=lineno)
    if kind == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"expected an integer, got '{raw}'",
                              line=lineno) from exc
    if kind == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"expected a number, got '{raw}'",
                              line=lineno) from exc
    return raw


def parse_config(text):
    """Parse configuration text into a validated CaseConfig."""
    cfg = CaseConfig()
    for lineno, line in enumerate(io.StringIO(text), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got '{stripped}'",
                              line=lineno)
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key '{key}'", line=lineno)
        setattr(cfg, key, _parse_value(key, raw, lineno))
    return cfg.validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg):
    """Serialize a CaseConfig; parse_config(dump_config(c)) == c."""
    lines = []
    for f in fields(CaseConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg, pairs):
    """Apply 'key=value' override strings (CLI --set) onto a config."""
    for i, pair in enumerate(pairs):
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key '{key}'")
        setattr(cfg, key, _parse_value(key, raw, lineno=i + 1))
    return cfg.validate()


# ---------------------------------------------------------------------------
# boundary and initial data

def inlet_profiles(x, t, cfg):
    """Sparger inlet values at position x (m) and time t (s): gas vertical
    speed (m/s) and gas fraction, both ramped linearly until t = ramp time.

        v(x, t) = min(t/t0, 1) * v_peak * exp(-(x/w)^2 / (2 sigma^2))
    """
    ramp = min(t / cfg.inlet_ramp_time, 1.0)
    shape = np.exp(-((np.asarray(x) / cfg.inlet_half_width) ** 2)
                   / (2.0 * cfg.inlet_sigma ** 2))
    return ramp * cfg.inlet_peak_velocity * shape, ramp * cfg.inlet_peak_alpha * shape


@dataclass
class SpaceSet:
    mesh: object
    p1: FunctionSpace
    vec: FunctionSpace


def build_spaces(mesh):
    return SpaceSet(mesh, FunctionSpace.scalar_p1(mesh),
                    FunctionSpace.vector_p2(mesh))


def initial_state(mesh, cfg, spaces=None):
    """Quiescent start: no gas, zero velocities, hydrostatic liquid pressure
    P(y) = rho_l g (h_ref - y), nondimensionalized by rho_l g h_ref."""
    from .ipcs import State  # deferred: ipcs imports this module

    if spaces is None:
        spaces = build_spaces(mesh)
    p1, vec = spaces.p1, spaces.vec
    y_m = p1.node_coords[:, 1] * cfg.x_scale
    p_tilde = (cfg.h_ref - y_m) / cfg.h_ref
    return State(
        alpha_g=p1.field(np.zeros(p1.dof_count)),
        alpha_l=p1.field(np.ones(p1.dof_count)),
        v_g=vec.field(),
        v_l=vec.field(),
        p_l=p1.field(p_tilde),
        t_tilde=0.0,
    )


# ---------------------------------------------------------------------------
# output writers

def _fmt(x):
    return f"{x:.17g}"


def write_snapshot(state, mesh, path):
    """Legacy-VTK ASCII unstructured grid with point data alpha_g and
    pressure plus 3-component vectors v_g, v_l sampled at the vertices."""
    nv = mesh.n_vertices
    alpha = state.alpha_g.coefficients[:nv]
    pressure = state.p_l.coefficients[:nv]
    v_g = state.v_g.vertex_values()
    v_l = state.v_l.vertex_values()
    grid = mesh.grid or {}
    title = (f"twofluid snapshot t_tilde={_fmt(state.t_tilde)}"
             f" nx={grid.get('nx', 0)} ny={grid.get('ny', 0)}")
    lines = ["# vtk DataFile Version 2.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    nc = mesh.n_cells
    lines.append(f"CELLS {nc} {4 * nc}")
    for a, b, c in mesh.cells:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nc}")
    lines.extend(["5"] * nc)
    lines.append(f"POINT_DATA {nv}")
    for name, values in (("alpha_g", alpha), ("pressure", pressure)):
        lines.append(f"SCALARS {name} double")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)
    for name, vec in (("v_g", v_g), ("v_l", v_l)):
        lines.append(f"VECTORS {name} double")
        lines.extend(f"{_fmt(vx)} {_fmt(vy)} 0" for vx, vy in vec)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write snapshot '{path}': {exc}") from exc
    return path


def read_snapshot(path):
    """Read back a write_snapshot file: (vertices, cells, point_data, meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    meta = {}
    for token in lines[1].split():
        if "=" in token:
            key, val = token.split("=", 1)
            meta[key] = float(val)
    i = lines.index(next(ln for ln in lines if ln.startswith("POINTS")))
    npts = int(lines[i].split()[1])
    verts = np.array([[float(v) for v in lines[i + 1 + k].split()[:2]]
                      for k in range(npts)])
    i = i + 1 + npts
    ncells = int(lines[i].split()[1])
    cells = np.array([[int(v) for v in lines[i + 1 + k].split()[1:]]
                      for k in range(ncells)], dtype=np.int32)
    data = {}
    j = i + 1 + ncells
    while j < len(lines):
        parts = lines[j].split()
        if not parts:
            j += 1
            continue
        if parts[0] == "SCALARS":
            name = parts[1]
            vals = np.array([float(lines[j + 2 + k]) for k in range(npts)])
            data[name] = vals
            j += 2 + npts
        elif parts[0] == "VECTORS":
            name = parts[1]
            vals = np.array([[float(v) for v in lines[j + 1 + k].split()[:2]]
                             for k in range(npts)])
            data[name] = vals
            j += 1 + npts
        else:
            j += 1
    return verts, cells, data, meta


SERIES_COLUMNS = ("t_seconds", "dt_seconds", "holdup", "min_alpha_g",
                  "max_alpha_g", "slip_velocity_avg_mps",
                  "bubble_reynolds_avg", "accepted")


class SeriesWriter:
    """Appends fixed-order CSV rows; the header is written once."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(",".join(SERIES_COLUMNS) + "\n")

    def write_row(self, t_seconds, dt_seconds, holdup, min_alpha, max_alpha,
                  slip, reynolds, accepted):
        row = (_fmt(t_seconds), _fmt(dt_seconds), _fmt(holdup),
               _fmt(min_alpha), _fmt(max_alpha), _fmt(slip), _fmt(reynolds),
               str(int(accepted)))
        self._fh.write(",".join(row) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_series(path):
    """Load a series.csv into a dict of column arrays."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    arr = np.array(rows) if rows else np.empty((0, len(header)))
    return {name: arr[:, k] for k, name in enumerate(header)}
