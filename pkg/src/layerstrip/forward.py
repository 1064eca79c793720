"""Synthetic boundary data: forward solves with a sliding point source.

The forward model is ``D lap u - mu_a u = -delta(x - s, z - B)`` on the
truncation rectangle, closed with a Robin condition.  Boundary traces are
sampled on the reconstruction rectangle, perturbed with multiplicative
noise, smoothed per edge with a least-squares polynomial, log-transformed
and differenced in ``s``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fem
from .mesh import MeshError, RectMesh, ScalarField, build_mesh

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-30
SIDE_ORDER = ("L", "B", "R", "T")
SIDE_NAMES = {"L": "left", "B": "bottom", "R": "right", "T": "top"}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    """Rectangles as ``(x_min, x_max, z_min, z_max)`` in cm."""

    omega: tuple = (5.0, 15.0, 5.0, 10.0)
    omega0: tuple = (0.0, 20.0, 0.0, 15.0)
    omega_prime: tuple = (5.0, 15.0, 5.0, 8.0)
    n_vertical: int = 65
    n_horizontal: int = 31

    def __post_init__(self):
        o, o0 = self.omega, self.omega0
        if not (o0[0] <= o[0] < o[1] <= o0[1] and o0[2] <= o[2] < o[3] <= o0[3]):
            raise DataError("reconstruction rectangle must lie inside the truncation rectangle")
        if self.n_vertical < 2 or self.n_horizontal < 2:
            raise DataError("need at least two measurement points per edge")

    def omega_mesh(self, refine: tuple = (1, 1)) -> RectMesh:
        """Inversion mesh whose boundary nodes include every measurement point.

        ``refine = (rx, rz)`` splits each gap between neighbouring points
        into ``rx`` (horizontal edges) or ``rz`` (vertical edges) elements.
        """
        x0, x1, z0, z1 = self.omega
        rx, rz = int(refine[0]), int(refine[1])
        if rx < 1 or rz < 1:
            raise DataError("mesh refinement factors must be positive integers")
        return build_mesh(x0, x1, z0, z1, rx * (self.n_horizontal - 1), rz * (self.n_vertical - 1))


@dataclass(frozen=True)
class SourceSchedule:
    """Source positions ``(s_i, z_line)`` with uniform spacing ``h``."""

    z_line: float
    positions: tuple

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.size < 2:
            raise DataError("a schedule needs at least two sources")
        gaps = np.diff(p)
        if np.any(gaps <= 0):
            raise DataError("source positions must be strictly increasing")
        if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12):
            raise DataError("source positions must be uniformly spaced")
        object.__setattr__(self, "positions", tuple(float(v) for v in p))

    @classmethod
    def uniform(cls, s_first: float, step: float, count: int, z_line: float) -> "SourceSchedule":
        return cls(float(z_line), tuple(s_first + step * np.arange(count)))

    @property
    def h(self) -> float:
        return (self.positions[-1] - self.positions[0]) / (len(self.positions) - 1)

    @property
    def P(self) -> int:
        return len(self.positions)

    @property
    def N(self) -> int:
        return self.P - 1

    @property
    def s_low(self) -> float:
        return self.positions[0]

    @property
    def s_high(self) -> float:
        return self.positions[-1]

    def interval(self, n: int) -> tuple[float, float]:
        """Interval ``[s_n, s_{n-1}]`` counted downward from ``s_high`` (``n = 1..N``)."""
        if not 1 <= n <= self.N:
            raise DataError(f"interval index {n} outside 1..{self.N}")
        return self.positions[self.P - 1 - n], self.positions[self.P - n]

    def check_outside(self, rect) -> None:
        x0, x1, z0, z1 = rect
        for s in self.positions:
            if x0 <= s <= x1 and z0 <= self.z_line <= z1:
                raise DataError(f"source ({s}, {self.z_line}) lies in the closed reconstruction domain")


@dataclass(frozen=True)
class MeasurementPoints:
    """Boundary points of the reconstruction rectangle, each listed once.

    Order: left bottom-to-top, bottom left-to-right, right bottom-to-top,
    top left-to-right; corners belong to the first side that reaches them.
    """

    side: np.ndarray
    coord: np.ndarray
    x: np.ndarray
    z: np.ndarray

    @classmethod
    def on(cls, geometry: Geometry) -> "MeasurementPoints":
        x0, x1, z0, z1 = geometry.omega
        zv = np.linspace(z0, z1, geometry.n_vertical)
        xh = np.linspace(x0, x1, geometry.n_horizontal)
        side, coord, px, pz = [], [], [], []

        def add(s, c, xs, zs):
            side.extend([s] * len(c))
            coord.extend(c)
            px.extend(xs)
            pz.extend(zs)

        add("L", zv, np.full(zv.size, x0), zv)
        add("B", xh[1:], xh[1:], np.full(xh.size - 1, z0))
        add("R", zv[1:], np.full(zv.size - 1, x1), zv[1:])
        add("T", xh[1:-1], xh[1:-1], np.full(xh.size - 2, z1))
        return cls(np.array(side), np.array(coord), np.array(px), np.array(pz))

    def __len__(self):
        return self.side.size

    def subset(self, sides: str) -> np.ndarray:
        return np.flatnonzero(np.isin(self.side, list(sides)))

    def edge(self, side: str, mesh_side_coords: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Indices of the points lying on one full edge, ordered along it."""
        if side in ("L", "R"):
            xe = self.x[self.subset(side)][0]
            sel = np.flatnonzero(np.abs(self.x - xe) < tol)
            order = np.argsort(self.z[sel])
            along = self.z[sel][order]
        else:
            ze = self.z[self.subset(side)][0]
            sel = np.flatnonzero(np.abs(self.z - ze) < tol)
            order = np.argsort(self.x[sel])
            along = self.x[sel][order]
        idx = sel[order]
        if mesh_side_coords is not None:
            if along.size != len(mesh_side_coords) or not np.allclose(along, mesh_side_coords, atol=1e-9):
                raise MeshError(f"edge {side} points do not match the mesh side")
        return idx

    def edges(self) -> dict[str, np.ndarray]:
        return {s: self.edge(s, None) for s in SIDE_ORDER}


@dataclass(frozen=True)
class MeasurementSet:
    """Traces per source (rows) and measurement point (columns)."""

    schedule: SourceSchedule
    points: MeasurementPoints
    raw: np.ndarray
    noisy: np.ndarray
    denoised: np.ndarray
    v: np.ndarray
    psi: np.ndarray          # (N, npts) forward differences, increasing s
    psi_n: np.ndarray        # (N, npts) interval averages, row n-1 is interval n
    noise_level: float = 0.0
    seed: int = 0
    clamped: int = 0

    def __post_init__(self):
        P, n = self.schedule.P, len(self.points)
        for name in ("raw", "noisy", "denoised", "v"):
            if getattr(self, name).shape != (P, n):
                raise DataError(f"{name} must have shape {(P, n)}")
        if self.psi.shape != (P - 1, n) or self.psi_n.shape != (P - 1, n):
            raise DataError("derivative traces must number P-1")
        if np.any(self.raw <= 0) or np.any(self.denoised <= 0):
            raise DataError("light intensities must be strictly positive")

    def side_values(self, arr: np.ndarray, mesh: RectMesh, log: bool = False) -> dict[str, np.ndarray]:
        """Split one trace into per-side arrays matching ``mesh``'s sides.

        Sides whose nodes fall between measurement points are filled by
        piecewise linear interpolation along the edge, in ``ln`` when
        ``log`` is set.  Extra trailing axes of ``arr`` are carried along.
        """
        arr = np.asarray(arr, dtype=float)
        X, Z = mesh.coords
        out = {}
        for s in SIDE_ORDER:
            ids = mesh.side(SIDE_NAMES[s])
            target = Z[ids] if s in ("L", "R") else X[ids]
            idx = self.points.edge(s, None)
            along = self.points.z[idx] if s in ("L", "R") else self.points.x[idx]
            if target[0] < along[0] - 1e-9 or target[-1] > along[-1] + 1e-9:
                raise MeshError(f"mesh side {SIDE_NAMES[s]} extends past the measured edge")
            out[SIDE_NAMES[s]] = _edge_interp(arr[idx], along, target, log)
        return out

    def boundary_field_values(self, arr: np.ndarray, mesh: RectMesh, log: bool = False) -> np.ndarray:
        """Trace values at ``mesh.boundary_nodes``, interpolated along edges as needed."""
        full = np.zeros(mesh.node_count)
        for name, vals in self.side_values(arr, mesh, log).items():
            full[mesh.side(name)] = vals
        return full[mesh.boundary_nodes]


def _edge_interp(vals, along, target, log):
    if along.size == target.size and np.allclose(along, target, rtol=0, atol=1e-9):
        return vals.copy()
    v = np.log(vals) if log else vals
    if v.ndim == 1:
        out = np.interp(target, along, v)
    else:
        flat = v.reshape(v.shape[0], -1)
        out = np.stack([np.interp(target, along, c) for c in flat.T], axis=1).reshape(
            (target.size,) + v.shape[1:])
    return np.exp(out) if log else out


# ---------------------------------------------------------------------------
# forward solve and trace processing
# ---------------------------------------------------------------------------

def solve_forward(mu_a: ScalarField, D: float, source: Sequence[float],
                  robin: Optional[fem.RobinSpec] = None, omega: Optional[tuple] = None,
                  rule: str = "blended", background_mu: Optional[float] = None) -> ScalarField:
    """Photon density of ``D lap u - mu_a u = -delta(. - source)`` on ``mu_a``'s mesh.

    By default the Robin coefficient is the source-matched one built from the
    background ``k = sqrt(mu_background / D)``, with ``mu_background`` taken
    as the mean of ``mu_a`` on the outer boundary, and the delta is a
    plane-normalised hat.  Passing an explicit constant ``RobinSpec`` gives
    the plain Robin truncation with a domain-normalised hat instead.
    """
    mesh = mu_a.mesh
    if not D > 0:
        raise DataError("diffusion coefficient must be positive")
    if np.any(mu_a.values <= 0):
        raise DataError("absorption must be positive")
    sx, sz = float(source[0]), float(source[1])
    if not mesh.contains(sx, sz):
        raise DataError(f"source ({sx}, {sz}) outside the forward mesh")
    if omega is not None:
        x0, x1, z0, z1 = omega
        if x0 <= sx <= x1 and z0 <= sz <= z1:
            raise DataError(f"source ({sx}, {sz}) lies inside the reconstruction domain")
    if robin is None:
        mu_b = background_mu if background_mu is not None else float(mu_a.values[mesh.boundary_nodes].mean())
        node = mesh.nearest_node(sx, sz)
        X, Z = mesh.coords
        robin = fem.RobinSpec.matched((X[node], Z[node]), np.sqrt(mu_b / D))
        support = "plane"
    else:
        support = "domain"
    load = fem.point_source_load(mesh, (sx, sz), support=support, rule=rule)
    system = fem.assemble_elliptic(mesh, diffusion=D, reaction=mu_a, load=load, rule=rule)
    system = fem.apply_robin(system, robin, diffusion=D)
    u = fem.solve(system)
    if np.any(u.values <= 0):
        raise fem.SolverError("forward solution lost positivity")
    return u


def extract_trace(u: ScalarField, points: MeasurementPoints) -> np.ndarray:
    if not np.all(u.mesh.contains(points.x, points.z)):
        raise MeshError("measurement points fall outside the forward mesh")
    return u.at(points.x, points.z)


def add_noise(trace: np.ndarray, level: float, seed=None, rng=None) -> np.ndarray:
    """``trace * (1 + level * W)`` with ``W ~ U[-1, 1]`` i.i.d."""
    trace = np.asarray(trace, dtype=float)
    if not 0 <= level < 1:
        raise DataError("noise level must lie in [0, 1)")
    if rng is None:
        rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=trace.shape)
    if level == 0:
        return trace.copy()
    return trace * (1.0 + level * w)


def denoise_polyfit(values: np.ndarray, coords: np.ndarray, degree: int = 8,
                    log_domain: bool = False) -> np.ndarray:
    """Least-squares polynomial in the edge coordinate, evaluated back at ``coords``.

    Uses a Legendre basis on the coordinate mapped to [-1, 1].  With
    ``log_domain`` the fit is made to ``ln(values)`` and exponentiated, which
    keeps strictly positive traces positive across many decades.
    """
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if np.unique(coords).size <= degree:
        raise DataError(f"degree-{degree} fit needs more than {degree} distinct abscissae")
    y = np.log(values) if log_domain else values
    fit = np.polynomial.Legendre.fit(coords, y, degree)
    out = fit(coords)
    return np.exp(out) if log_domain else out


def log_transform(trace: np.ndarray, floor: float = LOG_FLOOR) -> tuple[np.ndarray, int]:
    trace = np.asarray(trace, dtype=float)
    low = trace < floor
    return np.log(np.where(low, floor, trace)), int(np.count_nonzero(low))


def s_derivative(v_lo: np.ndarray, v_hi: np.ndarray, s_lo: float, s_hi: float) -> np.ndarray:
    """Forward difference ``(v(s_hi) - v(s_lo)) / (s_hi - s_lo)``."""
    gap = s_hi - s_lo
    if gap == 0:
        raise DataError("zero source gap")
    return (np.asarray(v_hi) - np.asarray(v_lo)) / gap


def average_psi_n(s_samples: Sequence[float], psi_samples: np.ndarray,
                  interval: tuple[float, float]) -> np.ndarray:
    """Mean of ``psi`` over ``[lo, hi)`` from the samples falling inside it.

    Several samples are combined with the trapezoid rule over their span;
    a single sample is returned as is.  A forward difference across the
    whole interval is already the exact interval mean of ``dv/ds``.
    """
    lo, hi = interval
    s = np.asarray(s_samples, dtype=float)
    psi = np.asarray(psi_samples, dtype=float)
    tol = 1e-12 * max(1.0, abs(hi))
    sel = np.flatnonzero((s >= lo - tol) & (s < hi - tol))
    if sel.size == 0:
        raise DataError(f"no psi samples in interval [{lo}, {hi})")
    if sel.size == 1:
        return psi[sel[0]].copy()
    order = sel[np.argsort(s[sel])]
    return np.trapezoid(psi[order], s[order], axis=0) / (s[order[-1]] - s[order[0]])


def denoise_traces(noisy: np.ndarray, points: MeasurementPoints, degree: int = 8) -> np.ndarray:
    """Log-domain polynomial smoothing per edge; corners average both edges."""
    out = np.zeros_like(noisy)
    count = np.zeros(noisy.shape[1])
    for s in SIDE_ORDER:
        idx = points.edge(s, None)
        along = points.z[idx] if s in ("L", "R") else points.x[idx]
        count[idx] += 1
        for r in range(noisy.shape[0]):
            out[r, idx] += np.log(denoise_polyfit(noisy[r, idx], along, degree, log_domain=True))
    return np.exp(out / count)


def generate_measurements(mu_a: ScalarField, D: float, schedule: SourceSchedule,
                          geometry: Geometry = Geometry(), noise_level: float = 0.0,
                          seed: int = 0, degree: int = 8,
                          background_mu: Optional[float] = None) -> MeasurementSet:
    schedule.check_outside(geometry.omega)
    points = MeasurementPoints.on(geometry)
    raw = np.empty((schedule.P, len(points)))
    for i, s in enumerate(schedule.positions):
        u = solve_forward(mu_a, D, (s, schedule.z_line), omega=geometry.omega,
                          background_mu=background_mu)
        raw[i] = extract_trace(u, points)
    return process_traces(raw, schedule, points, noise_level, seed, degree)


def process_traces(raw: np.ndarray, schedule: SourceSchedule, points: MeasurementPoints,
                   noise_level: float = 0.0, seed: int = 0, degree: int = 8,
                   noisy: Optional[np.ndarray] = None) -> MeasurementSet:
    if noisy is None:
        streams = np.random.SeedSequence(seed).spawn(schedule.P)
        noisy = np.stack([add_noise(raw[i], noise_level, rng=np.random.default_rng(streams[i]))
                          for i in range(schedule.P)])
    denoised = denoise_traces(noisy, points, degree)
    v = np.empty_like(denoised)
    clamped = 0
    for i in range(schedule.P):
        v[i], c = log_transform(denoised[i])
        clamped += c
    pos = schedule.positions
    psi = np.stack([s_derivative(v[i], v[i + 1], pos[i], pos[i + 1]) for i in range(schedule.N)])
    psi_n = np.stack([average_psi_n(pos[:-1], psi, schedule.interval(n))
                      for n in range(1, schedule.N + 1)])
    return MeasurementSet(schedule, points, raw, noisy, denoised, v, psi, psi_n,
                          float(noise_level), int(seed), clamped)


# ---------------------------------------------------------------------------
# measurement file
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_measurements(path, ms: MeasurementSet) -> None:
    sch, pts = ms.schedule, ms.points
    lines = [f"sources {sch.P} h {_fmt(sch.h)} z_line {_fmt(sch.z_line)} points {len(pts)}",
             f"noise {_fmt(ms.noise_level)} seed {ms.seed}"]
    for i, s in enumerate(sch.positions):
        lines.append(f"s={_fmt(s)}")
        for k in range(len(pts)):
            lines.append(f"{pts.side[k]} {_fmt(pts.coord[k])} {_fmt(ms.raw[i, k])} "
                         f"{_fmt(ms.noisy[i, k])} {_fmt(ms.denoised[i, k])}")
    for n in range(1, sch.N + 1):
        lo, hi = sch.interval(n)
        j = sch.P - 1 - n
        lines.append(f"psi n={n} s={_fmt(lo)},{_fmt(hi)}")
        for k in range(len(pts)):
            lines.append(f"{pts.side[k]} {_fmt(pts.coord[k])} {_fmt(ms.psi[j, k])} "
                         f"{_fmt(ms.psi_n[n - 1, k])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurements(path, geometry: Geometry = Geometry(), degree: int = 8) -> MeasurementSet:
    """Parse a measurement file; denoised/derived traces are re-derived from the noisy column.

    The file's own denoised column is checked against the recomputation.
    """
    text = Path(path).read_text().split("\n")
    try:
        head = text[0].split()
        P, h, z_line, npts = int(head[1]), float(head[3]), float(head[5]), int(head[7])
        meta = text[1].split()
        level, seed = float(meta[1]), int(meta[3])
        pos, raw, noisy, den = [], [], [], []
        sides, coords = [], []
        line = 2
        for i in range(P):
            if not text[line].startswith("s="):
                raise DataError(f"expected source block at line {line + 1}")
            pos.append(float(text[line][2:]))
            line += 1
            rows = [text[line + k].split() for k in range(npts)]
            line += npts
            if i == 0:
                sides = [r[0] for r in rows]
                coords = [float(r[1]) for r in rows]
            raw.append([float(r[2]) for r in rows])
            noisy.append([float(r[3]) for r in rows])
            den.append([float(r[4]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed measurement file ({exc})") from exc
    schedule = SourceSchedule(z_line, tuple(pos))
    if not np.isclose(schedule.h, h, rtol=1e-12):
        raise DataError(f"{path}: header spacing does not match source positions")
    points = MeasurementPoints.on(geometry)
    if len(points) != npts or list(points.side) != sides or not np.allclose(points.coord, coords):
        raise DataError(f"{path}: measurement points do not match the configured geometry")
    ms = process_traces(np.array(raw), schedule, points, level, seed, degree, noisy=np.array(noisy))
    if not np.allclose(ms.denoised, np.array(den), rtol=1e-12, atol=0):
        raise DataError(f"{path}: denoised column inconsistent with the noisy column")
    return ms
