"""Weak-form recovery of the coefficient from a positive field ``u``.

Test functions are tensor products of clamped quadratic B-splines on a
coarse grid over the reconstruction rectangle, keeping only those that
vanish on the boundary.  With ``cells = (30, 15)`` there are 32 x 17
functions per axis pair and 30 x 15 = 450 interior ones.

For every interior test function ``eta_k`` we require

    -int grad(u) . grad(eta_k) = int (a u) eta_k,

expand ``a u = sum_l alpha_l eta_l``, solve the Gram system for ``alpha``
and divide by ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .mesh import MeshError, RectMesh, ScalarField

_GAUSS3 = np.polynomial.legendre.leggauss(3)
U_FLOOR = 1e-300


def _knots(a, b, cells):
    inner = np.linspace(a, b, cells + 1)
    return np.concatenate([[a, a], inner, [b, b]])


def _design(knots, x, deriv=0):
    nb = knots.size - 3
    spl = BSpline(knots, np.eye(nb), 2, extrapolate=False)
    if deriv:
        spl = spl.derivative(deriv)
    out = spl(x)
    return np.nan_to_num(out)


def _composite_gauss(breaks):
    """3-point Gauss on every sub-interval of sorted ``breaks``."""
    g, w = _GAUSS3
    lo, hi = breaks[:-1], breaks[1:]
    half = (hi - lo) / 2
    pts = ((lo + hi) / 2)[:, None] + half[:, None] * g[None, :]
    wts = half[:, None] * w[None, :]
    return pts.ravel(), wts.ravel()


def _hat_design(nodes, x):
    """Linear interpolation weights and their derivative on a uniform 1D grid."""
    h = nodes[1] - nodes[0]
    n = nodes.size - 1
    f = (x - nodes[0]) / h
    i = np.clip(np.floor(f).astype(int), 0, n - 1)
    t = f - i
    P = np.zeros((x.size, n + 1))
    Dm = np.zeros((x.size, n + 1))
    r = np.arange(x.size)
    P[r, i] = 1 - t
    P[r, i + 1] = t
    Dm[r, i] = -1.0 / h
    Dm[r, i + 1] = 1.0 / h
    return P, Dm


def _merge_breaks(a, b):
    allb = np.union1d(a, b)
    keep = np.concatenate([[True], np.diff(allb) > 1e-12 * max(1.0, abs(allb[-1]))])
    return allb[keep]


@dataclass(frozen=True)
class RecoveryBasis:
    """Quadratic B-spline test space over ``mesh``'s rectangle."""

    mesh: RectMesh
    cells: tuple = (30, 15)

    def __post_init__(self):
        if self.cells[0] < 1 or self.cells[1] < 1:
            raise MeshError("recovery grid needs at least one cell per axis")

    @property
    def size(self) -> int:
        """Number of interior test functions ``K``."""
        return self.cells[0] * self.cells[1]

    @cached_property
    def _tables(self):
        m = self.mesh
        tx = _knots(m.x_min, m.x_max, self.cells[0])
        tz = _knots(m.z_min, m.z_max, self.cells[1])
        # quadrature exact for (bilinear u) x (quadratic spline) on each axis
        xq, wx = _composite_gauss(_merge_breaks(m.x, np.unique(tx)))
        zq, wz = _composite_gauss(_merge_breaks(m.z, np.unique(tz)))
        Bx, dBx = _design(tx, xq), _design(tx, xq, 1)
        Bz, dBz = _design(tz, zq), _design(tz, zq, 1)
        Px, Dx = _hat_design(m.x, xq)
        Pz, Dz = _hat_design(m.z, zq)
        # full (boundary included) Gram factors; interior block is [1:-1, 1:-1]
        Gx = Bx.T @ (wx[:, None] * Bx)
        Gz = Bz.T @ (wz[:, None] * Bz)
        Nx = _design(tx, m.x)
        Nz = _design(tz, m.z)
        return dict(Bx=Bx, dBx=dBx, Bz=Bz, dBz=dBz, wx=wx, wz=wz, Px=Px, Dx=Dx, Pz=Pz,
                    Dz=Dz, Gx=Gx, Gz=Gz, Nx=Nx, Nz=Nz)

    def gram(self) -> np.ndarray:
        """Interior K x K Gram matrix (z-major ordering), for inspection and tests."""
        t = self._tables
        return np.kron(t["Gz"][1:-1, 1:-1], t["Gx"][1:-1, 1:-1])

    def load(self, u: ScalarField) -> np.ndarray:
        """``r_k = -int grad(u) . grad(eta_k)`` as a (cells_z, cells_x) array."""
        t = self._tables
        U = u.grid
        ux = t["Pz"] @ U @ t["Dx"].T
        uz = t["Dz"] @ U @ t["Px"].T
        W = np.outer(t["wz"], t["wx"])
        Bx, dBx = t["Bx"][:, 1:-1], t["dBx"][:, 1:-1]
        Bz, dBz = t["Bz"][:, 1:-1], t["dBz"][:, 1:-1]
        return -(Bz.T @ (W * ux) @ dBx + dBz.T @ (W * uz) @ Bx)

    def _edge_fit(self, values, axis):
        """L2 fit of a piecewise linear edge trace by the 1D spline space.

        The end coefficients equal the end values (clamped splines
        interpolate there); the rest follow from the projection.
        """
        t = self._tables
        B, w, P, G = ((t["Bx"], t["wx"], t["Px"], t["Gx"]) if axis == "x"
                      else (t["Bz"], t["wz"], t["Pz"], t["Gz"]))
        f = P @ values
        c = np.zeros(B.shape[1])
        c[0], c[-1] = values[0], values[-1]
        rhs = B[:, 1:-1].T @ (w * (f - B[:, 0] * c[0] - B[:, -1] * c[-1]))
        c[1:-1] = np.linalg.solve(G[1:-1, 1:-1], rhs)
        return c

    def lifting(self, trace: np.ndarray) -> np.ndarray:
        """Boundary coefficients (zero interior) whose trace fits ``trace``.

        ``trace`` holds nodal values on the whole mesh; only boundary nodes
        are read.
        """
        m = self.mesh
        T = np.asarray(trace, dtype=float).reshape(m.shape)
        C = np.zeros((self.cells[1] + 2, self.cells[0] + 2))
        C[0, :] = self._edge_fit(T[0, :], "x")
        C[-1, :] = self._edge_fit(T[-1, :], "x")
        C[:, 0] = self._edge_fit(T[:, 0], "z")
        C[:, -1] = self._edge_fit(T[:, -1], "z")
        return C

    def coefficients(self, u: ScalarField, trace=None) -> np.ndarray:
        """Full coefficient array of ``a u``: interior from ``G alpha = r``.

        Without ``trace`` the boundary coefficients are zero.  The Gram
        system is solved through its Kronecker structure.
        """
        t = self._tables
        R = self.load(u)
        C = np.zeros((self.cells[1] + 2, self.cells[0] + 2))
        if trace is not None:
            C = self.lifting(trace)
            R = R - (t["Gz"] @ C @ t["Gx"].T)[1:-1, 1:-1]
        A = np.linalg.solve(t["Gz"][1:-1, 1:-1], R)
        C[1:-1, 1:-1] = np.linalg.solve(t["Gx"][1:-1, 1:-1], A.T).T
        return C

    def weighted_coefficients(self, u: ScalarField, boundary_value=None) -> np.ndarray:
        """Full coefficient array of ``a`` itself from the u-weighted system.

        Expands ``a = sum beta_l eta_l`` and solves
        ``sum_l beta_l int u eta_l eta_k = r_k``.  The Gram matrix is no
        longer a Kronecker product, so the K x K system is dense.  Boundary
        coefficients are ``boundary_value`` (0 when ``None``).
        """
        t = self._tables
        cz, cx = self.cells[1] + 2, self.cells[0] + 2
        Uq = t["Pz"] @ u.grid @ t["Px"].T
        W = np.outer(t["wz"], t["wx"]) * Uq
        Bx, Bz = t["Bx"], t["Bz"]
        # G[m, k, n, l] = sum_q W Bz[., m] Bz[., n] Bx[., k] Bx[., l]
        T = W @ (Bx[:, :, None] * Bx[:, None, :]).reshape(Bx.shape[0], -1)
        G = (Bz[:, :, None] * Bz[:, None, :]).reshape(Bz.shape[0], -1).T @ T
        G = G.reshape(cz, cz, cx, cx).transpose(0, 2, 1, 3).reshape(cz * cx, cz * cx)
        C = np.zeros((cz, cx))
        C[0, :] = C[-1, :] = C[:, 0] = C[:, -1] = 0.0 if boundary_value is None else boundary_value
        inner = np.zeros((cz, cx), dtype=bool)
        inner[1:-1, 1:-1] = True
        inner = inner.ravel()
        rhs = self.load(u).ravel() - G[np.ix_(inner, ~inner)] @ C.ravel()[~inner]
        flat = C.ravel()
        flat[inner] = np.linalg.solve(G[np.ix_(inner, inner)], rhs)
        return flat.reshape(cz, cx)

    def evaluate(self, coef: np.ndarray) -> ScalarField:
        """Nodal values of a spline given full or interior-only coefficients."""
        t = self._tables
        coef = np.asarray(coef, dtype=float)
        if coef.shape == (self.cells[1], self.cells[0]):
            full = np.zeros((self.cells[1] + 2, self.cells[0] + 2))
            full[1:-1, 1:-1] = coef
            coef = full
        return ScalarField(self.mesh, t["Nz"] @ coef @ t["Nx"].T)


@dataclass(frozen=True)
class Recovered:
    a: ScalarField
    au: ScalarField
    floored: int
    u_floored: int


def recover_a(u: ScalarField, basis: RecoveryBasis, a_min: float = 0.0,
              a_boundary: float | None = None, unknown: str = "au") -> Recovered:
    """Coefficient ``a = (sum alpha_k eta_k) / u``, floored at ``a_min``.

    Every test function vanishes on the boundary, so without further
    information the recovered product is zero there and strongly biased
    near it.  ``a_boundary`` supplies the known coefficient on the boundary
    (the exterior value of a continuous ``a``): the trace ``a_boundary * u``
    is lifted into the boundary splines and the 450 interior equations
    solve for the rest.

    ``unknown="a"`` expands ``a`` itself against the u-weighted Gram matrix
    instead.  This avoids dividing by ``u``, which amplifies projection
    ringing where ``u`` is small, at the price of a dense solve.
    """
    if unknown not in ("au", "a"):
        raise ValueError(f"unknown must be 'au' or 'a', got {unknown!r}")
    if u.mesh != basis.mesh:
        raise MeshError("field and recovery basis live on different meshes")
    uv = u.values
    low_u = uv < U_FLOOR
    uv = np.where(low_u, U_FLOOR, uv)
    uf = ScalarField(u.mesh, uv)
    if unknown == "au":
        trace = None if a_boundary is None else a_boundary * uv
        au = basis.evaluate(basis.coefficients(uf, trace))
        a = au.values / uv
    else:
        a = basis.evaluate(basis.weighted_coefficients(uf, a_boundary)).values.copy()
        au = ScalarField(u.mesh, a * uv)
    if a_boundary is not None:
        a[u.mesh.boundary_nodes] = a_boundary
    low = a < a_min
    return Recovered(ScalarField(u.mesh, np.where(low, a_min, a)), au,
                     int(np.count_nonzero(low)), int(np.count_nonzero(low_u)))
