"""Element-level kernels for the bilinear finite elements.

Each kernel exists twice: a loop version compiled with numba and a
vectorised numpy version.  :func:`element_matrices` and
:func:`interp_bilinear` dispatch according to :mod:`layerstrip._accel`.
Both paths visit elements and quadrature points in the same order, but
floating-point summation order differs, so they agree to rounding only.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

# local node order inside an element: (i, j), (i+1, j), (i, j+1), (i+1, j+1)
LOCAL_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))


def gauss_rule_1d():
    p = 1.0 / np.sqrt(3.0)
    return np.array([-p, p]), np.array([1.0, 1.0])


def blended_rule_1d():
    """Half two-point Gauss, half trapezoid.

    Integrates the bilinear mass with the 1D weights (1, 10, 1)/12 per node
    pair, which cancels the leading dispersion error of bilinear elements for
    ``-D lap u + mu u`` (fourth-order decay rates instead of second-order).
    """
    p = 1.0 / np.sqrt(3.0)
    return np.array([-p, p, -1.0, 1.0]), np.array([0.5, 0.5, 0.5, 0.5])


RULES = {"gauss": gauss_rule_1d, "blended": blended_rule_1d}


def reference_tables(hx, hz, rule="gauss"):
    """Shape values/derivatives at the tensor quadrature points.

    Returns ``N, dNx, dNz, w`` with shapes ``(nq, 4)`` and ``(nq,)``; ``w``
    already carries the element Jacobian ``hx*hz/4``.
    """
    try:
        pts, wts = RULES[rule]()
    except KeyError:
        raise ValueError(f"unknown quadrature rule {rule!r}") from None
    xi, eta = np.meshgrid(pts, pts, indexing="xy")
    wx, wz = np.meshgrid(wts, wts, indexing="xy")
    xi, eta = xi.ravel(), eta.ravel()
    w = (wx * wz).ravel() * hx * hz / 4.0
    nq = xi.size
    N = np.empty((nq, 4))
    dNx = np.empty((nq, 4))
    dNz = np.empty((nq, 4))
    for a, (ia, ja) in enumerate(LOCAL_OFFSETS):
        sa, ta = 2 * ia - 1, 2 * ja - 1
        N[:, a] = (1 + sa * xi) * (1 + ta * eta) / 4.0
        dNx[:, a] = sa * (1 + ta * eta) / 2.0 / hx
        dNz[:, a] = ta * (1 + sa * xi) / 2.0 / hz
    return N, dNx, dNz, w


def element_nodes(nx, nz):
    ex, ez = np.meshgrid(np.arange(nx), np.arange(nz), indexing="xy")
    n0 = (ez * (nx + 1) + ex).ravel()
    return np.stack([n0, n0 + 1, n0 + nx + 1, n0 + nx + 2], axis=1)


def _element_matrices_numpy(nodes, N, dNx, dNz, w, diffusion, bx, bz, react):
    # coefficients at quadrature points, shape (ne, nq)
    bxq = bx[nodes] @ N.T
    bzq = bz[nodes] @ N.T
    cq = react[nodes] @ N.T
    stiff = np.einsum("q,qa,qb->ab", w, dNx, dNx) + np.einsum("q,qa,qb->ab", w, dNz, dNz)
    out = np.broadcast_to(diffusion * stiff, (nodes.shape[0], 4, 4)).copy()
    # -(b . grad N_b) N_a
    out -= np.einsum("eq,q,qa,qb->eab", bxq, w, N, dNx)
    out -= np.einsum("eq,q,qa,qb->eab", bzq, w, N, dNz)
    out += np.einsum("eq,q,qa,qb->eab", cq, w, N, N)
    return out


@njit
def _element_matrices_loops(nodes, N, dNx, dNz, w, diffusion, bx, bz, react):
    ne = nodes.shape[0]
    nq = w.shape[0]
    out = np.zeros((ne, 4, 4))
    for e in range(ne):
        for q in range(nq):
            bxq = 0.0
            bzq = 0.0
            cq = 0.0
            for a in range(4):
                n = nodes[e, a]
                bxq += N[q, a] * bx[n]
                bzq += N[q, a] * bz[n]
                cq += N[q, a] * react[n]
            wq = w[q]
            for a in range(4):
                for b in range(4):
                    val = diffusion * (dNx[q, a] * dNx[q, b] + dNz[q, a] * dNz[q, b])
                    val -= (bxq * dNx[q, b] + bzq * dNz[q, b]) * N[q, a]
                    val += cq * N[q, a] * N[q, b]
                    out[e, a, b] += wq * val
    return out


def _interp_bilinear_numpy(values, x0, z0, hx, hz, nx, nz, px, pz):
    fx = (px - x0) / hx
    fz = (pz - z0) / hz
    i = np.clip(np.floor(fx).astype(np.int64), 0, nx - 1)
    j = np.clip(np.floor(fz).astype(np.int64), 0, nz - 1)
    tx = fx - i
    tz = fz - j
    g = values.reshape(nz + 1, nx + 1)
    return ((1 - tx) * (1 - tz) * g[j, i] + tx * (1 - tz) * g[j, i + 1]
            + (1 - tx) * tz * g[j + 1, i] + tx * tz * g[j + 1, i + 1])


@njit
def _interp_bilinear_loops(values, x0, z0, hx, hz, nx, nz, px, pz):
    out = np.empty(px.shape[0])
    for k in range(px.shape[0]):
        fx = (px[k] - x0) / hx
        fz = (pz[k] - z0) / hz
        i = int(np.floor(fx))
        j = int(np.floor(fz))
        i = min(max(i, 0), nx - 1)
        j = min(max(j, 0), nz - 1)
        tx = fx - i
        tz = fz - j
        r = j * (nx + 1) + i
        out[k] = ((1 - tx) * (1 - tz) * values[r] + tx * (1 - tz) * values[r + 1]
                  + (1 - tx) * tz * values[r + nx + 1] + tx * tz * values[r + nx + 2])
    return out


def element_matrices(nodes, N, dNx, dNz, w, diffusion, bx, bz, react, use_numba=None):
    """Local 4x4 matrices of ``-diffusion lap u - b.grad u + react u``."""
    if use_numba is None:
        use_numba = HAVE_NUMBA
    fn = _element_matrices_loops if use_numba else _element_matrices_numpy
    return fn(nodes, N, dNx, dNz, w, float(diffusion),
              np.ascontiguousarray(bx, dtype=float), np.ascontiguousarray(bz, dtype=float),
              np.ascontiguousarray(react, dtype=float))


def interp_bilinear(values, x0, z0, hx, hz, nx, nz, px, pz, use_numba=None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    fn = _interp_bilinear_loops if use_numba else _interp_bilinear_numpy
    return fn(np.ascontiguousarray(values, dtype=float), float(x0), float(z0), float(hx),
              float(hz), int(nx), int(nz), np.ascontiguousarray(px, dtype=float),
              np.ascontiguousarray(pz, dtype=float))
