"""Tail function: asymptotic first guess and the relaxed fixed-point accelerator.

The tail is ``T = ln u(., s_high)``.  The first guess fits the far-field
form ``v = -k S + 0.5 ln(pi / (2 S)) + g`` to boundary data on the bottom and
left edges and extends each edge's remainder ``g`` across the rectangle.
The accelerator then alternates weak-form recovery of ``a`` with boundary
value solves for ``u`` until consecutive coefficients agree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fem
from .forward import LOG_FLOOR, MeasurementSet
from .mesh import MeshError, RectMesh, ScalarField
from .metrics import consecutive_diff
from .recovery import RecoveryBasis, recover_a

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """An iteration hit its cap; ``history`` carries what was computed."""

    def __init__(self, msg, history=None, partial=None):
        super().__init__(msg)
        self.history = history or []
        self.partial = partial


@dataclass(frozen=True)
class AcceleratorConfig:
    gamma: float = 1.05
    eps: float = 1e-5
    max_iters: int = 300
    exponent_cap: float = 50.0
    a_min: float = 0.5           # 0.1 * a_background for the default medium
    a_boundary: float | None = 5.0  # exterior coefficient k^2, imposed on the boundary
    relaxed: bool = True         # False: lambda_m == 1
    relative_lambda: bool = True  # scale delta_a by max|a_{m-1}| inside lambda_m
    raise_on_cap: bool = True
    rule: str = "gauss"          # quadrature of the boundary value solves
    unknown: str = "au"          # recovery unknown, see recovery.recover_a

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.unknown not in ("au", "a"):
            raise ValueError(f"unknown must be 'au' or 'a', got {self.unknown!r}")


@dataclass(frozen=True)
class TailFunction:
    T: ScalarField
    grad: tuple
    kind: str                    # "first-guess" or "accelerated"
    iterations: int = 0

    @classmethod
    def from_field(cls, T: ScalarField, kind: str, iterations: int = 0) -> "TailFunction":
        return cls(T, fem.gradient(T), kind, iterations)


@dataclass(frozen=True)
class AcceleratorResult:
    tail: TailFunction
    a1: ScalarField
    history: list                # (m, criterion) pairs
    a_history: list
    floored: list                # floored a-nodes per iteration
    clamped: list                # non-positive u-nodes per iteration
    converged: bool


def pseudo_distance(x, z, s, z_line):
    return np.hypot(np.asarray(x) - s, np.asarray(z) - z_line)


def _far_field(S):
    return 0.5 * np.log(np.pi / (2.0 * S))


def decompose_g(v_traces, along_x, along_z, sources, z_line, k) -> np.ndarray:
    """Average remainder ``g`` of the far-field form over the given sources.

    ``v_traces[j]`` holds ``ln phi`` for source ``sources[j]`` at the edge
    points ``(along_x, along_z)``.
    """
    v_traces = np.atleast_2d(np.asarray(v_traces, dtype=float))
    if v_traces.shape[0] != len(sources):
        raise ValueError(f"got {v_traces.shape[0]} traces for {len(sources)} sources")
    g = np.zeros(v_traces.shape[1])
    for vj, s in zip(v_traces, sources):
        S = pseudo_distance(along_x, along_z, s, z_line)
        g += vj + k * S - _far_field(S)
    return g / len(sources)


def first_guess_tail(ms: MeasurementSet, mesh: RectMesh, k: float, n_sources: int = 3,
                     which: str = "first") -> TailFunction:
    """Mean of the bottom-edge and left-edge far-field extensions at ``s_high``.

    ``g`` is averaged over ``n_sources`` sources: the lowest positions
    (``which="first"``) or the ones closest to ``s_high`` (``"last"``).
    """
    sch = ms.schedule
    if n_sources > sch.P:
        raise ValueError(f"need {n_sources} sources, schedule has {sch.P}")
    if which == "first":
        rows = list(range(n_sources))
    elif which == "last":
        rows = list(range(sch.P - n_sources, sch.P))
    else:
        raise ValueError(f"unknown source selection {which!r}")
    srcs = [sch.positions[r] for r in rows]
    X, Z = mesh.coords
    bottom = mesh.side("bottom")
    left = mesh.side("left")
    try:
        vb = ms.side_values(ms.v[rows].T, mesh)["bottom"].T
        vl = ms.side_values(ms.v[rows].T, mesh)["left"].T
    except MeshError as exc:
        raise ValueError("missing edge data for the first-guess tail") from exc
    g_bottom = decompose_g(vb, X[bottom], Z[bottom], srcs, sch.z_line, k)
    g_left = decompose_g(vl, X[left], Z[left], srcs, sch.z_line, k)
    gb = np.tile(g_bottom, mesh.nz + 1)             # frozen along z
    gl = np.repeat(g_left, mesh.nx + 1)             # frozen along x
    S = pseudo_distance(X, Z, sch.s_high, sch.z_line)
    T = -k * S + _far_field(S) + 0.5 * (gb + gl)
    return TailFunction.from_field(ScalarField(mesh, T), "first-guess")


def relaxation_lambda(m: int, delta_a, gamma: float = 1.05, cap: float = 50.0):
    """``exp(min(pi^2 e^{-(m-1)} delta_a^2, cap)) / gamma^m``, pointwise."""
    if m < 1:
        raise ValueError("iteration index starts at 1")
    d = delta_a.values if isinstance(delta_a, ScalarField) else np.asarray(delta_a, dtype=float)
    expo = np.minimum(np.pi ** 2 * np.exp(-(m - 1.0)) * d * d, cap)
    lam = np.exp(expo) / gamma ** m
    if isinstance(delta_a, ScalarField):
        return ScalarField(delta_a.mesh, lam)
    return lam


def _dirichlet_solve(mesh, a, rhs, boundary, rule="gauss"):
    """``lap w - a w = rhs`` in the rectangle, ``w = boundary`` on its edge."""
    system = fem.assemble_elliptic(mesh, 1.0, reaction=a, rhs=-np.asarray(rhs), rule=rule)
    system = fem.apply_dirichlet(system, boundary)
    return fem.solve(system)


def accelerator_step(u_prev: ScalarField, a_prev: ScalarField, a_cur: ScalarField, m: int,
                     config: AcceleratorConfig = AcceleratorConfig()) -> ScalarField:
    """``u_m = u_{m-1} + p`` with ``lap p - a_m p = lambda_m (a_m - a_{m-1}) u_{m-1}``, ``p = 0`` on the edge."""
    delta = a_cur - a_prev
    if config.relaxed:
        d = delta.values
        if config.relative_lambda:
            # the exponent must be dimensionless; a carries cm^-2
            d = d / np.max(np.abs(a_prev.values))
        lam = relaxation_lambda(m, d, config.gamma, config.exponent_cap)
    else:
        lam = 1.0
    rhs = lam * delta.values * u_prev.values
    p = _dirichlet_solve(u_prev.mesh, a_cur.values, rhs, 0.0, config.rule)
    return u_prev + p


def run_accelerator(first: TailFunction, boundary_u: np.ndarray, basis: RecoveryBasis,
                    config: AcceleratorConfig = AcceleratorConfig()) -> AcceleratorResult:
    """Iterate recovery and boundary value solves until the coefficient settles.

    ``boundary_u`` holds the measured intensity at ``s_high`` on the mesh's
    boundary nodes.
    """
    mesh = first.T.mesh
    u = ScalarField(mesh, np.exp(first.T.values))
    rec = recover_a(u, basis, config.a_min, config.a_boundary, config.unknown)
    a_hist = [rec.a]
    floored = [rec.floored]
    clamped = [rec.u_floored]
    history = []
    # match the measured boundary values at s_high
    u = _dirichlet_solve(mesh, rec.a.values, 0.0, boundary_u, config.rule)
    rec = recover_a(u, basis, config.a_min, config.a_boundary, config.unknown)
    a_hist.append(rec.a)
    floored.append(rec.floored)
    clamped.append(rec.u_floored)
    history.append((1, consecutive_diff(a_hist[-1], a_hist[-2])))
    converged = history[-1][1] <= config.eps
    m = 1
    while not converged and m < config.max_iters:
        m += 1
        u = accelerator_step(u, a_hist[-2], a_hist[-1], m, config)
        rec = recover_a(u, basis, config.a_min, config.a_boundary, config.unknown)
        a_hist.append(rec.a)
        floored.append(rec.floored)
        clamped.append(rec.u_floored)
        crit = consecutive_diff(a_hist[-1], a_hist[-2])
        history.append((m, crit))
        converged = crit <= config.eps
        if not np.isfinite(crit):
            break
    if any(f for f in floored[6:]) or any(c for c in clamped[6:]):
        log.warning("positivity floors still active after iteration 5 (a: %d, u: %d)",
                    floored[-1], clamped[-1])
    T = ScalarField(mesh, np.log(np.maximum(u.values, LOG_FLOOR)))
    tail = TailFunction.from_field(T, "accelerated", m)
    result = AcceleratorResult(tail, a_hist[-1], history, a_hist, floored, clamped, converged)
    if not converged and config.raise_on_cap:
        raise ConvergenceError(f"tail accelerator did not reach eps={config.eps:g} in "
                               f"{config.max_iters} iterations", history, result)
    return result
