"""Boundary data, their interior extensions, and the elliptic kernels behind them.

Two discrete operators live here:

* a finite-volume flux operator on the dual cells, ``K phi ~ -div(c grad phi)``
  integrated over each cell, used for every scalar solve with mixed
  Dirichlet/Neumann walls (harmonic extension, implicit heat step);
* the Lame operator ``L u = mu lap u + (mu/3 + lambda) grad div u`` on
  non-wall nodes, with compact second differences and a centred mixed
  derivative, used for the velocity extension and the implicit viscous step.

Both are symmetric once wall unknowns are eliminated, so a Jacobi
preconditioned conjugate gradient iteration handles every solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .constitutive import FluidParams
from .grid import Closure, Grid, ScalarField, TempBC, VectorField, parse_face

logger = logging.getLogger(__name__)

RTOL = 1e-10
MAXITER = 100_000


class SolverError(RuntimeError):
    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


def pcg(A, b: np.ndarray, x0: np.ndarray | None = None, rtol: float = RTOL, maxiter: int = MAXITER):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns ``(x, history)`` where ``history`` holds residual norms.  Raises
    :class:`SolverError` with the history if ``||b - A x|| <= rtol ||b||`` is
    not reached within ``maxiter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), [0.0]
    minv = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    tol = rtol * bnorm
    r = b - A @ x
    history = [float(np.linalg.norm(r))]
    it = 0
    while history[-1] > tol:
        # restart from the true residual guards against drift of the recursive one
        z = minv * r
        p = z.copy()
        rz = r @ z
        while it < maxiter:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                raise SolverError("operator is not positive definite on the Krylov space", history)
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rn = float(np.linalg.norm(r))
            history.append(rn)
            if rn <= tol:
                break
            z = minv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if it >= maxiter:
            raise SolverError(f"PCG did not reach rtol={rtol} in {maxiter} iterations "
                              f"(last residual {history[-1] / bnorm:.3e})", history)
        r = b - A @ x
        history[-1] = float(np.linalg.norm(r))
    return x, history


# ---------------------------------------------------------------------------
# boundary data


def _face_values(grid: Grid, face: str, value, ncomp: int | None = None) -> np.ndarray:
    shape = grid.face_shape(face)
    if callable(value):
        value = value(*grid.face_coords(face))
    if ncomp is None:
        return np.array(np.broadcast_to(np.asarray(value, dtype=float), shape))
    comps = list(value) if isinstance(value, (list, tuple)) else value
    arr = np.asarray([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in comps])
    if arr.shape != (ncomp, *shape):
        raise ValueError(f"velocity trace on {face} needs {ncomp} components")
    return arr


@dataclass
class BoundaryData:
    """Time-independent wall data.

    ``u_B[face]`` has shape ``(d, *face_shape)``; ``theta_B`` lives on the
    Dirichlet faces and ``q_B`` (outward normal derivative of the
    temperature) on the Neumann faces.
    """

    grid: Grid
    u_B: dict[str, np.ndarray] = field(default_factory=dict)
    theta_B: dict[str, np.ndarray] = field(default_factory=dict)
    q_B: dict[str, np.ndarray] = field(default_factory=dict)
    u_ext: VectorField | None = None
    theta_ext: ScalarField | None = None

    def __post_init__(self):
        g = self.grid
        d = g.dim
        self.u_B = {f: _face_values(g, f, self.u_B.get(f, np.zeros(d)), d) for f in g.walled_faces}
        missing = set(g.dirichlet_faces) - set(self.theta_B)
        if missing:
            raise ValueError(f"theta_B missing on Dirichlet faces {sorted(missing)}")
        self.theta_B = {f: _face_values(g, f, self.theta_B[f]) for f in g.dirichlet_faces}
        self.q_B = {f: _face_values(g, f, self.q_B.get(f, 0.0)) for f in g.neumann_faces}

        for f, ub in self.u_B.items():
            axis, _ = parse_face(f)
            scale = 1.0 + np.abs(ub).max()
            if np.abs(ub[axis]).max() > 1e-12 * scale:
                raise ValueError(f"u_B has a normal component on face {f}; walls need u_B . n = 0")
        trace = self.velocity_trace()
        for f, ub in self.u_B.items():
            if not np.allclose(trace[(slice(None), *g.face_index(f))], ub, rtol=0, atol=1e-12):
                raise ValueError(f"u_B disagrees between faces at a corner of face {f}")
        for f, tb in self.theta_B.items():
            if np.any(tb <= 0):
                raise ValueError(f"theta_B must be positive on Gamma_D (face {f}, min {tb.min()!r})")

    @classmethod
    def from_functions(cls, grid: Grid, u_B: Callable | None = None, theta_B: Callable | float | None = None,
                       q_B: Callable | float | None = None) -> "BoundaryData":
        ub = {f: u_B for f in grid.walled_faces} if u_B is not None else {}
        tb = {f: theta_B for f in grid.dirichlet_faces} if theta_B is not None else {}
        qb = {f: q_B for f in grid.neumann_faces} if q_B is not None else {}
        return cls(grid, ub, tb, qb)

    @property
    def flux_nonnegative(self) -> bool:
        return all(np.all(q >= 0) for q in self.q_B.values())

    @property
    def flux_zero(self) -> bool:
        return all(np.all(q == 0) for q in self.q_B.values())

    @property
    def theta_B_min(self) -> float:
        if not self.theta_B:
            return np.inf
        return float(min(v.min() for v in self.theta_B.values()))

    def velocity_trace(self) -> np.ndarray:
        """Full-grid array carrying ``u_B`` on wall nodes and zero elsewhere."""
        g = self.grid
        out = np.zeros((g.dim, *g.node_shape))
        for f, ub in self.u_B.items():
            out[(slice(None), *g.face_index(f))] = ub
        return out

    def theta_trace(self) -> np.ndarray:
        g = self.grid
        out = np.zeros(g.node_shape)
        for f, tb in self.theta_B.items():
            out[g.face_index(f)] = tb
        return out

    def closure(self) -> Closure:
        return Closure(dict(self.theta_B), dict(self.q_B))


# ---------------------------------------------------------------------------
# scalar flux operator


def _diag_positions(A: sp.csr_matrix) -> np.ndarray:
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    pos = np.flatnonzero(A.indices == rows)
    if pos.size != A.shape[0]:
        raise ValueError("matrix pattern lacks a full diagonal")
    return pos


def _canonical(A) -> sp.csr_matrix:
    """CSR with summed duplicates and sorted indices, so products never depend on cache history."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    A._diag_pos = _diag_positions(A) if A.shape[0] == A.shape[1] else None
    return A


def _shifted(A: sp.csr_matrix, mass: np.ndarray, scale: float) -> sp.csr_matrix:
    out = sp.csr_matrix((scale * A.data, A.indices, A.indptr), shape=A.shape)
    out.data[A._diag_pos] += mass
    return out


def flux_operator(grid: Grid, coeff: np.ndarray | None = None) -> sp.csr_matrix:
    """Dual-cell matrix ``K`` with ``(K phi)_j ~ int_{cell j} -div(c grad phi)`` (interior fluxes only)."""
    shape = grid.node_shape
    N = grid.n_nodes
    idx = np.arange(N).reshape(shape)
    c = np.ones(shape) if coeff is None else np.asarray(coeff, dtype=float)
    rows, cols, vals = [], [], []
    for a in range(grid.dim):
        if grid.periodic(a):
            left, right = idx, np.roll(idx, -1, axis=a)
        else:
            left = np.take(idx, np.arange(shape[a] - 1), axis=a)
            right = np.take(idx, np.arange(1, shape[a]), axis=a)
        area = np.ones(shape)
        for b in range(grid.dim):
            if b != a:
                area = area * grid.axis_weights[b].reshape([-1 if k == b else 1 for k in range(grid.dim)])
        l, r = left.ravel(), right.ravel()
        cf = 0.5 * (c.ravel()[l] + c.ravel()[r])
        w = cf * area.ravel()[l] / grid.spacing[a]
        rows += [l, r, l, r]
        cols += [l, r, r, l]
        vals += [w, w, -w, -w]
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return K.tocsr()


def neumann_vector(grid: Grid, neumann: Mapping[str, np.ndarray], coeff: np.ndarray | None = None) -> np.ndarray:
    """Boundary flux contributions ``int_{face of cell} c g``."""
    b = np.zeros(grid.node_shape)
    c = np.ones(grid.node_shape) if coeff is None else np.asarray(coeff, dtype=float)
    for f, g in neumann.items():
        axis, _ = parse_face(f)
        area = np.ones(grid.face_shape(f))
        others = [k for k in range(grid.dim) if k != axis]
        for pos, k in enumerate(others):
            area = area * grid.axis_weights[k].reshape([-1 if q == pos else 1 for q in range(len(others))])
        sl = grid.face_index(f)
        b[sl] += c[sl] * np.asarray(g, dtype=float) * area
    return b.ravel()


@dataclass
class ScalarSystem:
    """``K`` split into unknown/known blocks for a given set of Dirichlet walls."""

    grid: Grid
    dirichlet_faces: tuple[str, ...]
    K: sp.csr_matrix
    unknown: np.ndarray
    known: np.ndarray
    K_uu: sp.csr_matrix
    K_uk: sp.csr_matrix

    @property
    def singular(self) -> bool:
        return self.known.size == 0

    def shifted(self, mass: np.ndarray, scale: float) -> sp.csr_matrix:
        """``diag(mass) + scale * K_uu`` without re-assembling the sparsity pattern."""
        return _shifted(self.K_uu, mass, scale)


@lru_cache(maxsize=32)
def scalar_system(grid: Grid, dirichlet_faces: tuple[str, ...]) -> ScalarSystem:
    return _make_scalar_system(grid, dirichlet_faces, None)


def _make_scalar_system(grid, dirichlet_faces, coeff) -> ScalarSystem:
    K = flux_operator(grid, coeff)
    mask = np.zeros(grid.node_shape, dtype=bool)
    for f in dirichlet_faces:
        mask[grid.face_index(f)] = True
    flat = mask.ravel()
    unknown = np.flatnonzero(~flat)
    known = np.flatnonzero(flat)
    return ScalarSystem(grid, tuple(dirichlet_faces), K, unknown, known,
                        _canonical(K[unknown][:, unknown]), _canonical(K[unknown][:, known]))


def _split_faces(grid: Grid, dirichlet: Mapping, neumann: Mapping):
    for f in grid.walled_faces:
        if (f in dirichlet) + (f in neumann) != 1:
            raise ValueError(f"face {f} needs exactly one of a Dirichlet or a Neumann condition")
    extra = (set(dirichlet) | set(neumann)) - set(grid.walled_faces)
    if extra:
        raise ValueError(f"conditions given on faces that are not walls: {sorted(extra)}")
    dvals = {f: _face_values(grid, f, v) for f, v in dirichlet.items()}
    nvals = {f: _face_values(grid, f, v) for f, v in neumann.items()}
    return dvals, nvals


def solve_mixed_poisson(
    rhs: ScalarField,
    dirichlet: Mapping[str, object],
    neumann: Mapping[str, object],
    coeff: ScalarField | None = None,
    x0: ScalarField | None = None,
    rtol: float = RTOL,
    maxiter: int = MAXITER,
) -> ScalarField:
    """Solve ``-div(coeff grad phi) = rhs`` with ``phi = dirichlet`` and ``d_n phi = neumann``.

    Without Dirichlet walls the problem is solvable only if
    ``int rhs + oint coeff * neumann = 0``; the mean-zero solution is returned.
    At a node shared by a Dirichlet and a Neumann wall the Dirichlet value is used.
    """
    grid = rhs.grid
    dvals, nvals = _split_faces(grid, dirichlet, neumann)
    c = None if coeff is None else coeff.values
    if c is not None and np.any(c <= 0):
        raise ValueError("coefficient must be positive")
    dfaces = tuple(sorted(dvals))
    system = scalar_system(grid, dfaces) if c is None else _make_scalar_system(grid, dfaces, c)

    phi = np.zeros(grid.node_shape)
    for f in dfaces:
        phi[grid.face_index(f)] = dvals[f]
    phi_flat = phi.ravel()
    b_full = (grid.weights * rhs.values).ravel() + neumann_vector(grid, nvals, c)
    b = b_full[system.unknown] - system.K_uk @ phi_flat[system.known]

    if system.singular:
        scale = np.abs(b).sum() + 1e-300
        if abs(b.sum()) > 1e-10 * scale:
            raise ValueError(f"pure-Neumann problem is incompatible: int rhs + oint flux = {b.sum():.3e}")
        b = b - b.mean()

    guess = None if x0 is None else x0.values.ravel()[system.unknown]
    x, _ = pcg(system.K_uu, b, guess, rtol=rtol, maxiter=maxiter)
    phi_flat = phi_flat.copy()
    phi_flat[system.unknown] = x
    phi = phi_flat.reshape(grid.node_shape)
    if system.singular:
        phi = phi - grid.integrate(phi) / grid.volume
    return ScalarField(grid, phi)


def extend_temperature(bd: BoundaryData, theta0: ScalarField) -> ScalarField:
    """Harmonic extension of the temperature data; the constant ``min theta0`` when Gamma_D is empty."""
    grid = bd.grid
    if not grid.dirichlet_faces:
        ext = ScalarField.constant(grid, float(theta0.values.min()))
    else:
        # a constant first guess makes constant data exact instead of exact to rtol
        guess = np.mean(np.concatenate([v.ravel() for v in bd.theta_B.values()]))
        ext = solve_mixed_poisson(ScalarField.constant(grid, 0.0), bd.theta_B, bd.q_B,
                                  x0=ScalarField.constant(grid, float(guess)))
    if np.any(ext.values <= 0):
        raise ValueError(f"temperature extension is not positive (min {ext.values.min():.3e})")
    return ext


# ---------------------------------------------------------------------------
# Lame operator


def _d2_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if periodic:
        D[0, n - 1] = 1.0
        D[n - 1, 0] = 1.0
    else:
        D[0, :] = 0.0
        D[n - 1, :] = 0.0
    return (D / h**2).tocsr()


def _d1_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    off = np.ones(n - 1)
    D = sp.diags([-off, off], [-1, 1], format="lil")
    if periodic:
        D[0, n - 1] = -1.0
        D[n - 1, 0] = 1.0
    else:
        D[0, :] = 0.0
        D[n - 1, :] = 0.0
    return (D / (2 * h)).tocsr()


def _embed(grid: Grid, axis: int, op1d: sp.spmatrix) -> sp.csr_matrix:
    mats = [op1d if a == axis else sp.identity(grid.node_shape[a], format="csr") for a in range(grid.dim)]
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass
class LameSystem:
    grid: Grid
    L: sp.csr_matrix
    unknown: np.ndarray
    known: np.ndarray
    L_uu: sp.csr_matrix
    L_uk: sp.csr_matrix

    def shifted(self, mass: np.ndarray, scale: float) -> sp.csr_matrix:
        """``diag(mass) + scale * L_uu``."""
        return _shifted(self.L_uu, mass, scale)


@lru_cache(maxsize=32)
def lame_system(grid: Grid, mu: float, lam: float) -> LameSystem:
    """Block operator over component-major unknowns ``(u_0 nodes, u_1 nodes, ...)``."""
    d = grid.dim
    N = grid.n_nodes
    c = mu / 3.0 + lam
    D2 = [_embed(grid, a, _d2_1d(grid.node_shape[a], grid.spacing[a], grid.periodic(a))) for a in range(d)]
    D1 = [_embed(grid, a, _d1_1d(grid.node_shape[a], grid.spacing[a], grid.periodic(a))) for a in range(d)]
    lap = sum(D2)
    blocks = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            if i == j:
                blocks[i][j] = mu * lap + c * D2[i]
            else:
                blocks[i][j] = c * (D1[i] @ D1[j])
    L = sp.bmat(blocks, format="csr")
    wall = np.tile(grid.wall_mask.ravel(), d)
    unknown = np.flatnonzero(~wall)
    known = np.flatnonzero(wall)
    return LameSystem(grid, L, unknown, known, _canonical(L[unknown][:, unknown]), _canonical(L[unknown][:, known]))


def lame_apply(u: np.ndarray, grid: Grid, params: FluidParams) -> np.ndarray:
    """``div S(D u)`` at non-wall nodes (wall rows are zero)."""
    system = lame_system(grid, params.mu, params.lam)
    out = np.zeros(u.size)
    out[system.unknown] = (system.L @ u.ravel())[system.unknown]
    return out.reshape(u.shape)


def extend_velocity(bd: BoundaryData, params: FluidParams, rtol: float = RTOL) -> VectorField:
    """Solve ``div S(grad u) = 0`` with ``u = u_B`` on every wall."""
    grid = bd.grid
    if not grid.walled_faces:
        return VectorField.zeros(grid)
    system = lame_system(grid, params.mu, params.lam)
    trace = bd.velocity_trace().ravel()
    b = system.L_uk @ trace[system.known]
    x, _ = pcg(-system.L_uu, b, rtol=rtol)
    out = trace.copy()
    out[system.unknown] = x
    return VectorField(grid, out.reshape((grid.dim, *grid.node_shape)))


def attach_extensions(bd: BoundaryData, params: FluidParams, theta0: ScalarField) -> BoundaryData:
    bd.u_ext = extend_velocity(bd, params)
    bd.theta_ext = extend_temperature(bd, theta0)
    return bd
