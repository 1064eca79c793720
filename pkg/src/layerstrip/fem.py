"""Sparse assembly and solves for bilinear elements on a :class:`RectMesh`.

Operator convention::

    -diffusion * lap(u) - advection . grad(u) + reaction * u = rhs

so ``lap q + b . grad q = f`` maps to ``diffusion=1, advection=b,
reaction=0, rhs=-f``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .bessel import k1_over_k0
from .mesh import MeshError, RectMesh, ScalarField

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solve failed; ``residual`` holds the achieved relative residual."""

    def __init__(self, msg, residual=float("nan")):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class SparseSystem:
    mesh: RectMesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    robin: bool = False
    clamped: int = 0

    @property
    def is_constrained(self) -> bool:
        return self.robin or self.constrained.size > 0


@dataclass(frozen=True)
class RobinSpec:
    """``du/dn + kappa u = 0`` on every side of the mesh.

    ``kappa`` is either a positive constant (cm^-1) or a callable
    ``kappa(x, z, nx, nz)`` evaluated at edge quadrature points with the
    outward normal ``(nx, nz)``; callables must return values >= 0.
    """

    kappa: float | Callable

    def __post_init__(self):
        if not callable(self.kappa) and not self.kappa > 0:
            raise ValueError(f"Robin coefficient must be positive, got {self.kappa}")

    @classmethod
    def matched(cls, source: tuple[float, float], k: float) -> "RobinSpec":
        """Coefficient that the free-space solution ``K0(k r)`` satisfies exactly.

        ``kappa = k K1(k r)/K0(k r) * (r_hat . n)``, clipped at zero on faces
        turned towards the source.
        """
        sx, sz = float(source[0]), float(source[1])

        def kappa(x, z, nx, nz):
            dx, dz = x - sx, z - sz
            r = np.hypot(dx, dz)
            cos = (dx * nx + dz * nz) / r
            return np.maximum(k * k1_over_k0(k * r) * cos, 0.0)

        return cls(kappa)


def _coo_pattern(mesh):
    nodes = mesh.elements
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    return rows, cols


def _as_nodal(mesh, value, name):
    if value is None:
        return np.zeros(mesh.node_count)
    if isinstance(value, ScalarField):
        if value.mesh != mesh:
            raise MeshError(f"{name} lives on a different mesh")
        return value.values
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.node_count, float(arr))
    if arr.size != mesh.node_count:
        raise MeshError(f"{name} has {arr.size} values, mesh has {mesh.node_count} nodes")
    return arr.reshape(-1)


def _matrix(mesh, diffusion, bx, bz, react, rule):
    N, dNx, dNz, w = kernels.reference_tables(mesh.hx, mesh.hz, rule)
    local = kernels.element_matrices(mesh.elements, N, dNx, dNz, w, diffusion, bx, bz, react)
    rows, cols = _coo_pattern(mesh)
    n = mesh.node_count
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def mass_matrix(mesh: RectMesh, rule: str = "gauss") -> sp.csr_matrix:
    zero = np.zeros(mesh.node_count)
    return _matrix(mesh, 0.0, zero, zero, np.ones(mesh.node_count), rule)


def assemble_elliptic(mesh: RectMesh, diffusion: float = 1.0, advection=None, reaction=None,
                      rhs=None, load: Optional[np.ndarray] = None,
                      rule: str = "gauss") -> SparseSystem:
    """Galerkin system of ``-diffusion lap u - advection.grad u + reaction u = rhs``.

    ``advection`` is a pair of nodal fields (x and z components), ``reaction``
    and ``rhs`` nodal fields or constants.  ``load`` adds a ready-made load
    vector (e.g. from :func:`point_source_load`).  Negative reaction values
    are clamped to zero and counted in ``SparseSystem.clamped``.
    """
    if advection is None:
        bx = bz = np.zeros(mesh.node_count)
    else:
        bx = _as_nodal(mesh, advection[0], "advection[0]")
        bz = _as_nodal(mesh, advection[1], "advection[1]")
    c = _as_nodal(mesh, reaction, "reaction")
    neg = int(np.count_nonzero(c < 0))
    if neg:
        log.warning("reaction negative at %d nodes; clamped to 0 for assembly", neg)
        c = np.maximum(c, 0.0)
    A = _matrix(mesh, float(diffusion), bx, bz, c, rule)
    b = np.zeros(mesh.node_count)
    if rhs is not None:
        f = _as_nodal(mesh, rhs, "rhs")
        if np.any(f):
            b += mass_matrix(mesh, rule) @ f
    if load is not None:
        load = np.asarray(load, dtype=float)
        if load.shape != (mesh.node_count,):
            raise MeshError("load vector size does not match the mesh")
        b += load
    return SparseSystem(mesh, A, b, clamped=neg)


def apply_dirichlet(system: SparseSystem, values, nodes=None) -> SparseSystem:
    """Impose ``u = values`` on ``nodes`` (all boundary nodes by default).

    Constrained rows and columns become identity; the eliminated columns
    move into the right-hand side.
    """
    mesh = system.mesh
    if nodes is None:
        nodes = mesh.boundary_nodes
    nodes = np.asarray(nodes, dtype=np.int64)
    if isinstance(values, ScalarField):
        values = values.values[nodes]
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 0:
        vals = np.full(nodes.size, float(vals))
    if vals.size != nodes.size:
        raise MeshError(f"{nodes.size} constrained nodes but {vals.size} values supplied")
    if not np.all(np.isfinite(vals)):
        raise MeshError("Dirichlet values must be finite")
    n = mesh.node_count
    g = np.zeros(n)
    g[nodes] = vals
    fixed = np.zeros(n, dtype=bool)
    fixed[nodes] = True
    keep = sp.diags((~fixed).astype(float))
    A = (keep @ system.matrix @ keep + sp.diags(fixed.astype(float))).tocsr()
    A.sort_indices()
    b = np.where(fixed, g, system.rhs - system.matrix @ g)
    allc = np.union1d(system.constrained, nodes)
    return replace(system, matrix=A, rhs=b, constrained=allc,
                   values=g[allc])


def apply_boundary_values(system: SparseSystem, values: dict[str, np.ndarray]) -> SparseSystem:
    """Dirichlet data given per side (``left/right/bottom/top``), ordered along the side.

    Corner nodes take the mean of the two sides' values.
    """
    mesh = system.mesh
    acc = np.zeros(mesh.node_count)
    cnt = np.zeros(mesh.node_count)
    for name in ("left", "right", "bottom", "top"):
        if name not in values:
            raise MeshError(f"missing boundary values for side {name!r}")
        idx = mesh.side(name)
        v = np.asarray(values[name], dtype=float)
        if v.size != idx.size:
            raise MeshError(f"side {name!r} needs {idx.size} values, got {v.size}")
        acc[idx] += v
        cnt[idx] += 1
    b = mesh.boundary_nodes
    return apply_dirichlet(system, acc[b] / cnt[b], b)


_SIDES = (("bottom", 0.0, -1.0), ("top", 0.0, 1.0), ("left", -1.0, 0.0), ("right", 1.0, 0.0))


def robin_matrix(mesh: RectMesh, spec: RobinSpec, diffusion: float = 1.0) -> sp.csr_matrix:
    """``diffusion * int_{boundary} kappa u v`` with two-point Gauss per edge."""
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    N1 = np.stack([(1 - gp) / 2, (1 + gp) / 2], axis=1)  # (gauss point, local node)
    rows, cols, vals = [], [], []
    X, Z = mesh.coords
    for name, nx_, nz_ in _SIDES:
        idx = mesh.side(name)
        a, b = idx[:-1], idx[1:]
        h = mesh.hx if name in ("bottom", "top") else mesh.hz
        # quadrature point coordinates, shape (edges, 2)
        px = X[a][:, None] * N1[:, 0] + X[b][:, None] * N1[:, 1]
        pz = Z[a][:, None] * N1[:, 0] + Z[b][:, None] * N1[:, 1]
        if callable(spec.kappa):
            kap = np.asarray(spec.kappa(px.ravel(), pz.ravel(), nx_, nz_)).reshape(px.shape)
        else:
            kap = np.full(px.shape, float(spec.kappa))
        if np.any(kap < 0) or not np.all(np.isfinite(kap)):
            raise ValueError("Robin coefficient must be finite and non-negative")
        loc = np.einsum("eq,qa,qb->eab", kap, N1, N1) * (h / 2.0) * diffusion
        pair = np.stack([a, b], axis=1)
        rows.append(np.repeat(pair, 2, axis=1).ravel())
        cols.append(np.tile(pair, (1, 2)).ravel())
        vals.append(loc.ravel())
    n = mesh.node_count
    R = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    R.sum_duplicates()
    return R


def apply_robin(system: SparseSystem, spec: RobinSpec, diffusion: float = 1.0) -> SparseSystem:
    if system.constrained.size:
        raise MeshError("Robin terms must be added before Dirichlet constraints")
    A = (system.matrix + robin_matrix(system.mesh, spec, diffusion)).tocsr()
    A.sort_indices()
    return replace(system, matrix=A, robin=True)


def point_source_load(mesh: RectMesh, position: Sequence[float], support: str = "domain",
                      rule: str = "gauss") -> np.ndarray:
    """Load vector of the pseudo-delta ``c * eta`` at the node nearest ``position``.

    ``eta`` is that node's bilinear hat.  With ``support="domain"`` the
    constant ``c`` makes ``c * eta`` integrate to one over the mesh (a boundary
    hat has half the area of an interior one).  With ``support="plane"`` the
    hat is normalised on the whole plane, ``c = 1/(hx hz)``, which is the
    right choice when the mesh truncates a free-space problem whose source
    sits on the truncation boundary.
    """
    x, z = position
    node = mesh.nearest_node(float(x), float(z))
    M = mass_matrix(mesh, rule)
    col = M[:, [node]].toarray().ravel()
    if support == "domain":
        c = 1.0 / col.sum()
    elif support == "plane":
        c = 1.0 / (mesh.hx * mesh.hz)
    else:
        raise ValueError(f"unknown support {support!r}")
    return c * col


def solve(system: SparseSystem) -> ScalarField:
    """Direct sparse LU solve with a relative-residual check of ``RESIDUAL_TOL``."""
    A = system.matrix.tocsc()
    b = system.rhs
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() <= 1e-13 * piv.max():
        raise SolverError("matrix is numerically singular (pivot ratio %.3g)"
                          % (piv.min() / piv.max()))
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0 else 1.0
    res = np.linalg.norm(A @ x - b) / scale
    for _ in range(3):
        if not np.isfinite(res) or res <= RESIDUAL_TOL:
            break
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / scale
    if not np.all(np.isfinite(x)) or not res <= RESIDUAL_TOL:
        raise SolverError(f"linear solve did not reach relative residual {RESIDUAL_TOL:g}", res)
    return ScalarField(system.mesh, x)


def gradient(field: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Central differences inside, second-order one-sided at the boundary."""
    m = field.mesh
    if m.nx < 2 or m.nz < 2:
        raise MeshError("gradient needs at least 2 elements per direction")
    gz, gx = np.gradient(field.grid, m.hz, m.hx, edge_order=2)
    return ScalarField(m, gx), ScalarField(m, gz)


def l2_norm(field: ScalarField | np.ndarray, mesh: Optional[RectMesh] = None,
            M: Optional[sp.csr_matrix] = None) -> float:
    """``sqrt(int f^2)`` via the bilinear mass matrix."""
    if isinstance(field, ScalarField):
        mesh, v = field.mesh, field.values
    else:
        v = np.asarray(field, dtype=float)
    if M is None:
        M = mass_matrix(mesh)
    return float(np.sqrt(max(v @ (M @ v), 0.0)))
