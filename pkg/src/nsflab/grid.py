"""Uniform rectangular grids, sampled fields and second-order difference operators.

Nodes are vertex centred: a walled axis with ``n`` cells carries ``n + 1``
nodes including both wall nodes, a periodic axis carries ``n`` nodes.  Every
node owns a dual cell (half cells at walls), which gives the trapezoidal
quadrature weights used by all integrals in the package.

Field values are stored with ``ij`` indexing: ``values[i, j]`` sits at
``(x_i, y_j)``.  Vector fields carry a leading component axis, tensor fields
two leading axes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

AXES = "xyz"


class TempBC(str, Enum):
    DIRICHLET = "DirichletTemp"
    NEUMANN = "NeumannTemp"

    @classmethod
    def parse(cls, tag) -> "TempBC":
        if isinstance(tag, cls):
            return tag
        key = str(tag).strip().lower()
        if key in ("dirichlet", "dirichlettemp", "d"):
            return cls.DIRICHLET
        if key in ("neumann", "neumanntemp", "n"):
            return cls.NEUMANN
        raise ValueError(f"unknown temperature boundary tag {tag!r}")


class GridError(ValueError):
    pass


def face_name(axis: int, side: int) -> str:
    return f"{AXES[axis]}{'-' if side < 0 else '+'}"


def parse_face(face: str) -> tuple[int, int]:
    """``"y+"`` -> ``(1, +1)``."""
    if len(face) != 2 or face[0] not in AXES or face[1] not in "+-":
        raise GridError(f"bad face name {face!r}")
    return AXES.index(face[0]), (1 if face[1] == "+" else -1)


@dataclass(frozen=True)
class Grid:
    dim: int
    extents: tuple[float, ...]
    counts: tuple[int, ...]
    topology: tuple[str, ...]
    boundary: tuple[tuple[str, TempBC], ...] = ()

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extents, self.counts))

    @property
    def boundary_map(self) -> dict[str, TempBC]:
        return dict(self.boundary)

    def periodic(self, axis: int) -> bool:
        return self.topology[axis] == "periodic"

    @cached_property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(n if self.periodic(a) else n + 1 for a, n in enumerate(self.counts))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def walled_faces(self) -> list[str]:
        return [face_name(a, s) for a in range(self.dim) if not self.periodic(a) for s in (-1, 1)]

    @property
    def dirichlet_faces(self) -> list[str]:
        return [f for f, t in self.boundary if t is TempBC.DIRICHLET]

    @property
    def neumann_faces(self) -> list[str]:
        return [f for f, t in self.boundary if t is TempBC.NEUMANN]

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.arange(m) * h for m, h in zip(self.node_shape, self.spacing))

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.coords, indexing="ij"))

    @cached_property
    def axis_weights(self) -> tuple[np.ndarray, ...]:
        """1D dual-cell lengths per axis (half cells at walls)."""
        out = []
        for a in range(self.dim):
            w = np.full(self.node_shape[a], self.spacing[a])
            if not self.periodic(a):
                w[0] *= 0.5
                w[-1] *= 0.5
            out.append(w)
        return tuple(out)

    @cached_property
    def weights(self) -> np.ndarray:
        """Dual-cell volumes; trapezoidal quadrature weights summing to |Omega|."""
        w = self.axis_weights[0]
        for a in range(1, self.dim):
            w = np.multiply.outer(w, self.axis_weights[a])
        return w

    def face_index(self, face: str) -> tuple:
        axis, side = parse_face(face)
        if axis >= self.dim or self.periodic(axis):
            raise GridError(f"face {face} is not a wall of this grid")
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if side < 0 else -1
        return tuple(idx)

    def face_shape(self, face: str) -> tuple[int, ...]:
        axis, _ = parse_face(face)
        return tuple(m for a, m in enumerate(self.node_shape) if a != axis)

    def face_coords(self, face: str) -> tuple[np.ndarray, ...]:
        """Node coordinates restricted to a wall, one array per axis."""
        return tuple(c[self.face_index(face)] for c in self.mesh)

    def outward_normal(self, face: str) -> np.ndarray:
        axis, side = parse_face(face)
        n = np.zeros(self.dim)
        n[axis] = side
        return n

    @cached_property
    def wall_mask(self) -> np.ndarray:
        m = np.zeros(self.node_shape, dtype=bool)
        for f in self.walled_faces:
            m[self.face_index(f)] = True
        return m

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        m = np.zeros(self.node_shape, dtype=bool)
        for f in self.dirichlet_faces:
            m[self.face_index(f)] = True
        return m

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.weights))


def build_grid(
    dim: int,
    extents: Sequence[float],
    counts: Sequence[int],
    boundary_map: Mapping[str, str | TempBC] | None = None,
    topology: Sequence[str] | None = None,
    neumann_flux_zero: bool = True,
) -> Grid:
    """Validate and construct a :class:`Grid`.

    ``neumann_flux_zero`` declares ``q_B == 0``; it is required when no wall
    carries a Dirichlet temperature tag.
    """
    if dim not in (1, 2, 3):
        raise GridError(f"dim must be 1, 2 or 3, got {dim}")
    extents = tuple(float(L) for L in extents)
    counts = tuple(int(n) for n in counts)
    topology = tuple(topology) if topology is not None else ("walled",) * dim
    if not (len(extents) == len(counts) == len(topology) == dim):
        raise GridError("extents, counts and topology need one entry per axis")
    if any(L <= 0 for L in extents):
        raise GridError(f"extents must be positive, got {extents}")
    if any(n < 8 for n in counts):
        raise GridError(f"counts must be >= 8, got {counts}")
    for t in topology:
        if t not in ("walled", "periodic"):
            raise GridError(f"topology must be 'walled' or 'periodic', got {t!r}")

    boundary_map = dict(boundary_map or {})
    tags = {}
    for a in range(dim):
        for s in (-1, 1):
            f = face_name(a, s)
            if topology[a] == "periodic":
                if f in boundary_map:
                    raise GridError(f"face {f} lies on a periodic axis and takes no tag")
                continue
            if f not in boundary_map:
                raise GridError(f"walled face {f} lacks a temperature tag")
            tags[f] = TempBC.parse(boundary_map.pop(f))
    if boundary_map:
        raise GridError(f"unknown faces in boundary map: {sorted(boundary_map)}")

    has_dirichlet = any(t is TempBC.DIRICHLET for t in tags.values())
    has_neumann = any(t is TempBC.NEUMANN for t in tags.values())
    if has_neumann and not has_dirichlet and not neumann_flux_zero:
        raise GridError("Gamma_D is empty but q_B != 0 was declared (need Gamma_D nonempty or q_B = 0)")
    return Grid(dim, extents, counts, topology, tuple(sorted(tags.items())))


# ---------------------------------------------------------------------------
# fields


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"{what} has non-finite value at index {tuple(bad)}")


class _FieldOps:
    grid: Grid
    values: np.ndarray

    def _new(self, values):
        return type(self)(self.grid, values)

    def _other(self, other):
        if isinstance(other, _FieldOps):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self._new(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._other(other))

    def __rsub__(self, other):
        return self._new(self._other(other) - self.values)

    def __mul__(self, other):
        return self._new(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._new(self.values / self._other(other))

    def __neg__(self):
        return self._new(-self.values)


@dataclass(frozen=True, eq=False)
class ScalarField(_FieldOps):
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.node_shape:
            v = np.broadcast_to(v, self.grid.node_shape).copy()
        _check_finite(v, "scalar field")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(*grid.mesh), grid.node_shape))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.node_shape, float(c)))


@dataclass(frozen=True, eq=False)
class VectorField(_FieldOps):
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = (self.grid.dim, *self.grid.node_shape)
        if v.shape != shape:
            v = np.broadcast_to(v, shape).copy()
        _check_finite(v, "vector field")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        comps = fn(*grid.mesh)
        return cls(grid, np.stack([np.broadcast_to(c, grid.node_shape) for c in comps]))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.dim, *grid.node_shape)))

    def normal_trace(self, face: str) -> np.ndarray:
        axis, side = parse_face(face)
        return side * self.values[axis][self.grid.face_index(face)]


@dataclass(frozen=True, eq=False)
class TensorField(_FieldOps):
    grid: Grid
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = (self.grid.dim, self.grid.dim, *self.grid.node_shape)
        if v.shape != shape:
            raise ValueError(f"tensor field needs shape {shape}, got {v.shape}")
        _check_finite(v, "tensor field")
        if self.symmetric and not np.allclose(v, np.swapaxes(v, 0, 1), rtol=0, atol=1e-12 * (1 + np.abs(v).max())):
            raise ValueError("tensor field tagged symmetric is not symmetric")
        object.__setattr__(self, "values", v)

    def _new(self, values):
        return TensorField(self.grid, values)


# ---------------------------------------------------------------------------
# difference kernels on raw arrays; spatial axes are the trailing ``dim`` axes


def _ax(arr: np.ndarray, grid: Grid, axis: int) -> int:
    return arr.ndim - grid.dim + axis


def _sl(ndim: int, ax: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[ax] = s
    return tuple(idx)


def d1(arr: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """First derivative: centred inside, one-sided second order at walls, wrapped when periodic."""
    h = grid.spacing[axis]
    ax = _ax(arr, grid, axis)
    if grid.periodic(axis):
        return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) / (2 * h)
    out = np.empty_like(arr, dtype=float)
    n = arr.ndim
    out[_sl(n, ax, slice(1, -1))] = (arr[_sl(n, ax, slice(2, None))] - arr[_sl(n, ax, slice(None, -2))]) / (2 * h)
    out[_sl(n, ax, 0)] = (-3 * arr[_sl(n, ax, 0)] + 4 * arr[_sl(n, ax, 1)] - arr[_sl(n, ax, 2)]) / (2 * h)
    out[_sl(n, ax, -1)] = (3 * arr[_sl(n, ax, -1)] - 4 * arr[_sl(n, ax, -2)] + arr[_sl(n, ax, -3)]) / (2 * h)
    return out


def gradient_array(arr: np.ndarray, grid: Grid) -> np.ndarray:
    """Stack of partial derivatives; the new component axis goes in front of the spatial axes."""
    parts = [d1(arr, grid, a) for a in range(grid.dim)]
    return np.stack(parts, axis=arr.ndim - grid.dim)


def divergence_array(vec: np.ndarray, grid: Grid) -> np.ndarray:
    return sum(d1(vec[a], grid, a) for a in range(grid.dim))


def grad(f: ScalarField) -> VectorField:
    return VectorField(f.grid, gradient_array(f.values, f.grid))


def div(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, divergence_array(v.values, v.grid))


def jacobian(v: VectorField) -> TensorField:
    """``J[i, j] = d v_i / d x_j``."""
    return TensorField(v.grid, gradient_array(v.values, v.grid))


def sym_grad(v: VectorField) -> TensorField:
    J = gradient_array(v.values, v.grid)
    return TensorField(v.grid, 0.5 * (J + np.swapaxes(J, 0, 1)), symmetric=True)


@dataclass(frozen=True)
class Closure:
    """Boundary closure for :func:`laplacian`.

    ``dirichlet`` maps a wall to its boundary values, ``neumann`` maps a wall
    to the outward normal derivative.  Values may be scalars or arrays over
    the wall nodes.  At a node shared by a Dirichlet and a Neumann wall the
    Dirichlet value wins.
    """

    dirichlet: Mapping[str, object] = field(default_factory=dict)
    neumann: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def all_dirichlet(cls, grid: Grid, value=0.0) -> "Closure":
        return cls({f: value for f in grid.walled_faces}, {})

    @classmethod
    def all_neumann(cls, grid: Grid, flux=0.0) -> "Closure":
        return cls({}, {f: flux for f in grid.walled_faces})

    def check(self, grid: Grid) -> None:
        for f in grid.walled_faces:
            n = (f in self.dirichlet) + (f in self.neumann)
            if n != 1:
                raise GridError(f"closure must give exactly one condition on face {f}")


def laplacian_array(arr: np.ndarray, grid: Grid, closure: Closure | None) -> np.ndarray:
    if grid.walled_faces:
        if closure is None:
            raise GridError("laplacian on a walled grid needs a boundary closure")
        closure.check(grid)
        arr = np.array(arr, dtype=float, copy=True)
        for f, g in closure.dirichlet.items():
            arr[grid.face_index(f)] = g
    out = np.zeros_like(arr, dtype=float)
    for a in range(grid.dim):
        h2 = grid.spacing[a] ** 2
        if grid.periodic(a):
            out += (np.roll(arr, -1, axis=a) - 2 * arr + np.roll(arr, 1, axis=a)) / h2
            continue
        n = arr.ndim
        lap = np.empty_like(arr)
        lap[_sl(n, a, slice(1, -1))] = (
            arr[_sl(n, a, slice(2, None))] - 2 * arr[_sl(n, a, slice(1, -1))] + arr[_sl(n, a, slice(None, -2))]
        ) / h2
        for side, (b0, b1, b2) in ((-1, (0, 1, 2)), (1, (-1, -2, -3))):
            f = face_name(a, side)
            f0, f1, f2 = arr[_sl(n, a, b0)], arr[_sl(n, a, b1)], arr[_sl(n, a, b2)]
            if f in closure.dirichlet:
                ghost = 3 * f0 - 3 * f1 + f2
            else:
                ghost = f1 + 2 * grid.spacing[a] * np.asarray(closure.neumann[f], dtype=float)
            lap[_sl(n, a, b0)] = (ghost - 2 * f0 + f1) / h2
        out += lap
    return out


def laplacian(f: ScalarField, closure: Closure | None = None) -> ScalarField:
    """Standard (2d+1)-point Laplacian with ghost values from ``closure``.

    Dirichlet ghosts extrapolate quadratically through the boundary value;
    Neumann ghosts reflect with the prescribed outward flux.
    """
    return ScalarField(f.grid, laplacian_array(f.values, f.grid, closure))


# ---------------------------------------------------------------------------
# interpolation


def interpolate(values: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node values at ``points`` of shape ``(m, dim)``.

    ``values`` may carry leading component axes.  Periodic axes wrap; walled
    axes clamp to the closed domain.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lead = values.shape[: values.ndim - grid.dim]
    idx0, frac = [], []
    for a in range(grid.dim):
        h = grid.spacing[a]
        s = points[:, a] / h
        if grid.periodic(a):
            s = np.mod(s, grid.node_shape[a])
            i = np.floor(s).astype(int)
            t = s - i
            i = i % grid.node_shape[a]
            j = (i + 1) % grid.node_shape[a]
        else:
            s = np.clip(s, 0.0, grid.counts[a])
            i = np.minimum(np.floor(s).astype(int), grid.counts[a] - 1)
            t = s - i
            j = i + 1
        idx0.append((i, j))
        frac.append(t)
    out = np.zeros((*lead, points.shape[0]))
    for corner in range(2**grid.dim):
        w = np.ones(points.shape[0])
        index = []
        for a in range(grid.dim):
            bit = (corner >> a) & 1
            w = w * (frac[a] if bit else 1.0 - frac[a])
            index.append(idx0[a][bit])
        out += w * values[(Ellipsis, *index)]
    return out


# ---------------------------------------------------------------------------
# binary snapshots

SNAPSHOT_MAGIC = b"NSFF"
SNAPSHOT_VERSION = 1


def write_snapshot(path, fields: Mapping[str, ScalarField | VectorField], t: float = 0.0) -> None:
    """Little-endian layout::

        "NSFF" | u32 version | u32 dim | u32 counts[dim] | f64 extents[dim]
        | u8 periodic[dim] | f64 t | u32 nfields
        | per field: 16-byte ASCII name, u32 ncomp, u32 rank (0 scalar, 1 vector),
          f64 payload (row-major, component-major)
    """
    fields = dict(fields)
    grid = next(iter(fields.values())).grid
    d = grid.dim
    buf = bytearray()
    buf += SNAPSHOT_MAGIC
    buf += struct.pack(f"<II{d}I{d}d{d}BdI", SNAPSHOT_VERSION, d, *grid.counts, *grid.extents,
                       *(int(grid.periodic(a)) for a in range(d)), float(t), len(fields))
    for name, fld in fields.items():
        if fld.grid != grid:
            raise ValueError("all snapshot fields must share one grid")
        raw = name.encode("ascii")
        if len(raw) > 16:
            raise ValueError(f"field name {name!r} longer than 16 bytes")
        vals = np.ascontiguousarray(fld.values, dtype="<f8")
        rank = 0 if isinstance(fld, ScalarField) else 1
        ncomp = 1 if rank == 0 else vals.shape[0]
        buf += raw.ljust(16, b"\0") + struct.pack("<II", ncomp, rank) + vals.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_snapshot(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns ``(header, arrays)``; arrays are shaped ``(ncomp, *node_shape)`` or ``node_shape``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not an NSFF snapshot")
    off = 4
    version, d = struct.unpack_from("<II", data, off)
    off += 8
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    counts = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    extents = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    periodic = struct.unpack_from(f"<{d}B", data, off)
    off += d
    t, nfields = struct.unpack_from("<dI", data, off)
    off += 12
    shape = tuple(n if p else n + 1 for n, p in zip(counts, periodic))
    npts = int(np.prod(shape))
    arrays = {}
    for _ in range(nfields):
        name = data[off:off + 16].rstrip(b"\0").decode("ascii")
        off += 16
        ncomp, rank = struct.unpack_from("<II", data, off)
        off += 8
        arr = np.frombuffer(data, dtype="<f8", count=ncomp * npts, offset=off).copy()
        off += 8 * ncomp * npts
        arrays[name] = arr.reshape(shape) if rank == 0 else arr.reshape((ncomp, *shape))
    header = {"version": version, "dim": d, "counts": counts, "extents": extents,
              "periodic": tuple(bool(p) for p in periodic), "t": t}
    return header, arrays
