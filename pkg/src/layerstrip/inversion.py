"""Layer stripping in the source coordinate.

With ``v = ln u`` and ``q = dv/ds``, the s-derivative of
``lap v + |grad v|^2 = a`` gives ``lap q + 2 grad v . grad q = 0``.  Writing
``v(s_n) = T - h (q_1 + ... + q_n)`` and freezing the quadratic term at the
previous inner iterate turns each interval into a sequence of linear
advection-diffusion solves with Dirichlet data ``psi_n``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .forward import MeasurementSet
from .mesh import RectMesh, ScalarField
from .recovery import RecoveryBasis, recover_a
from .tail import ConvergenceError, TailFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InversionConfig:
    eps: float = 1e-5
    max_inner: int = 100
    cells: tuple = (30, 15)       # recovery grid; 30 x 15 = 450 interior functions
    a_min: float = 0.5
    a_boundary: float | None = 5.0
    raise_on_cap: bool = True
    unknown: str = "au"           # recovery unknown, see recovery.recover_a

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("tolerance must be positive")
        if self.max_inner < 1:
            raise ValueError("max_inner must be >= 1")
        if self.unknown not in ("au", "a"):
            raise ValueError(f"unknown must be 'au' or 'a', got {self.unknown!r}")

    @property
    def K(self) -> int:
        return self.cells[0] * self.cells[1]


@dataclass(frozen=True)
class QStage:
    q: ScalarField
    iterations: int
    history: tuple               # L2 change per inner iteration


@dataclass(frozen=True)
class QSequence:
    stages: tuple = ()

    def __len__(self):
        return len(self.stages)

    @property
    def fields(self) -> tuple:
        return tuple(s.q for s in self.stages)

    def add(self, stage: QStage) -> "QSequence":
        return QSequence(self.stages + (stage,))


@dataclass(frozen=True)
class ReconstructionResult:
    """Everything a run produced.  ``a`` is the mean of ``stages``."""

    a: ScalarField
    stages: tuple
    q: QSequence
    tail: TailFunction
    tail_history: tuple = ()
    metrics: object = None
    extra: ScalarField | None = None


class InversionError(RuntimeError):
    """A stage failed; ``partial`` holds the stages completed so far."""

    def __init__(self, msg, partial=None, history=None):
        super().__init__(msg)
        self.partial = partial
        self.history = history or []


def _advect_solve(mesh, b, data):
    """``lap q + b . grad q = 0`` with ``q = data`` on the boundary."""
    system = fem.assemble_elliptic(mesh, 1.0, advection=(b[0], b[1]))
    system = fem.apply_dirichlet(system, data)
    return fem.solve(system)


def _inner_loop(data, start, drift, tail, h, config, M, label):
    """Fixed-point iteration in the quadratic term for one interval."""
    mesh = tail.T.mesh
    gTx, gTz = tail.grad
    prev = start
    hist = []
    for k in range(1, config.max_inner + 1):
        gx, gz = fem.gradient(prev)
        bx = 2.0 * (gTx.values - drift[0] - h * gx.values)
        bz = 2.0 * (gTz.values - drift[1] - h * gz.values)
        q = _advect_solve(mesh, (bx, bz), data)
        crit = fem.l2_norm(q - prev, M=M)
        hist.append(crit)
        prev = q
        if crit <= config.eps:
            return QStage(q, k, tuple(hist))
    msg = f"{label}: inner loop did not reach eps={config.eps:g} in {config.max_inner} iterations"
    if config.raise_on_cap:
        raise ConvergenceError(msg, hist, QStage(prev, config.max_inner, tuple(hist)))
    log.warning(msg)
    return QStage(prev, config.max_inner, tuple(hist))


def _boundary_data(mesh, psi):
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (mesh.boundary_nodes.size,):
        raise ValueError("psi must hold one value per boundary node")
    return psi


def solve_q1(psi1, tail: TailFunction, h: float, config: InversionConfig = InversionConfig(),
             M=None) -> QStage:
    """First interval: ``q_{1,0} = 0``, no drift from earlier stages."""
    mesh = tail.T.mesh
    M = fem.mass_matrix(mesh) if M is None else M
    zero = np.zeros(mesh.node_count)
    return _inner_loop(_boundary_data(mesh, psi1), ScalarField(mesh, zero), (zero, zero),
                       tail, h, config, M, "q_1")


def solve_qn(n: int, previous, psi_n, tail: TailFunction, h: float,
             config: InversionConfig = InversionConfig(), M=None) -> QStage:
    """Interval ``n >= 2``: start from ``q_{n-1}``, drift ``h * sum grad q_j``."""
    if n < 2 or len(previous) != n - 1:
        raise ValueError(f"stage {n} needs exactly {n - 1} earlier fields")
    mesh = tail.T.mesh
    M = fem.mass_matrix(mesh) if M is None else M
    dx = np.zeros(mesh.node_count)
    dz = np.zeros(mesh.node_count)
    for qj in previous:
        gx, gz = fem.gradient(qj)
        dx += gx.values
        dz += gz.values
    return _inner_loop(_boundary_data(mesh, psi_n), previous[-1], (h * dx, h * dz),
                       tail, h, config, M, f"q_{n}")


def reconstruct_field(qs, tail: TailFunction, h: float):
    """``v = T - h sum q_j`` and ``u = exp(v)``."""
    v = tail.T.values.copy()
    for q in qs:
        v = v - h * q.values
    mesh = tail.T.mesh
    return ScalarField(mesh, v), ScalarField(mesh, np.exp(v))


def stage_mean(stages) -> ScalarField:
    """Arithmetic mean in a fixed summation order."""
    acc = np.zeros_like(stages[0].values)
    for a in stages:
        acc = acc + a.values
    return ScalarField(stages[0].mesh, acc / len(stages))


def run_inversion(ms: MeasurementSet, tail: TailFunction, a1: ScalarField,
                  config: InversionConfig = InversionConfig(), basis: RecoveryBasis | None = None,
                  tail_history=()) -> ReconstructionResult:
    """Strip the ``N`` intervals and average the stage coefficients.

    ``a1`` is the coefficient recovered while building the tail and counts
    as the first stage; the coefficient recovered after interval ``n``
    is stage ``n + 1``.
    With ``N = 1`` the result is ``a1`` itself.
    """
    mesh = tail.T.mesh
    sch = ms.schedule
    h = sch.h
    basis = RecoveryBasis(mesh, config.cells) if basis is None else basis
    M = fem.mass_matrix(mesh)
    stages = [a1]
    qseq = QSequence()
    for n in range(1, sch.N + 1):
        psi = ms.boundary_field_values(ms.psi_n[n - 1], mesh)
        try:
            if n == 1:
                st = solve_q1(psi, tail, h, config, M)
            else:
                st = solve_qn(n, qseq.fields, psi, tail, h, config, M)
        except (ConvergenceError, fem.SolverError) as exc:
            partial = ReconstructionResult(stage_mean(stages), tuple(stages), qseq, tail,
                                           tuple(tail_history))
            raise InversionError(f"stage {n} failed: {exc}", partial,
                                 getattr(exc, "history", [])) from exc
        qseq = qseq.add(st)
        _, u = reconstruct_field(qseq.fields, tail, h)
        stages.append(recover_a(u, basis, config.a_min, config.a_boundary, config.unknown).a)
    # a_{N+1} (after the last interval) is kept for inspection but not averaged
    return ReconstructionResult(stage_mean(stages[:sch.N]), tuple(stages[:sch.N]), qseq, tail,
                                tuple(tail_history), extra=stages[sch.N])
