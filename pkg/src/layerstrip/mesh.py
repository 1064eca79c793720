"""Rectangular tensor meshes and nodal fields."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class RectMesh:
    """Uniform ``nx`` x ``nz`` grid of bilinear elements on a rectangle (cm).

    Node ``(i, j)`` sits at ``(x_min + i*hx, z_min + j*hz)`` and has flat
    index ``j*(nx+1) + i`` (z outer, x inner).
    """

    x_min: float
    x_max: float
    z_min: float
    z_max: float
    nx: int
    nz: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.nz) != self.nz:
            raise MeshError("element counts must be integers")
        if self.nx < 1 or self.nz < 1:
            raise MeshError(f"element counts must be >= 1, got {self.nx}x{self.nz}")
        if not (self.x_min < self.x_max and self.z_min < self.z_max):
            raise MeshError("mesh extents must satisfy x_min < x_max and z_min < z_max")

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def hz(self) -> float:
        return (self.z_max - self.z_min) / self.nz

    @property
    def shape(self) -> tuple[int, int]:
        """Grid shape ``(nz+1, nx+1)``."""
        return (self.nz + 1, self.nx + 1)

    @property
    def node_count(self) -> int:
        return (self.nx + 1) * (self.nz + 1)

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.hx * np.arange(self.nx + 1)

    @cached_property
    def z(self) -> np.ndarray:
        return self.z_min + self.hz * np.arange(self.nz + 1)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat node coordinates ``(X, Z)``."""
        X, Z = np.meshgrid(self.x, self.z, indexing="xy")
        return X.ravel(), Z.ravel()

    def index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    # -- boundary tagging ------------------------------------------------
    def side(self, name: str) -> np.ndarray:
        """Node indices of one side, ordered along increasing coordinate."""
        ids = np.arange(self.node_count).reshape(self.shape)
        if name == "left":
            return ids[:, 0].copy()
        if name == "right":
            return ids[:, -1].copy()
        if name == "bottom":
            return ids[0, :].copy()
        if name == "top":
            return ids[-1, :].copy()
        raise MeshError(f"unknown side {name!r}")

    def tags(self, node: int) -> set[str]:
        i, j = node % (self.nx + 1), node // (self.nx + 1)
        out = set()
        if i == 0:
            out.add("left")
        if i == self.nx:
            out.add("right")
        if j == 0:
            out.add("bottom")
        if j == self.nz:
            out.add("top")
        return out or {"interior"}

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m.ravel()

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def contains(self, x, z, tol: float = 1e-12) -> np.ndarray:
        x, z = np.asarray(x), np.asarray(z)
        return ((x >= self.x_min - tol) & (x <= self.x_max + tol)
                & (z >= self.z_min - tol) & (z <= self.z_max + tol))

    def nearest_node(self, x: float, z: float) -> int:
        if not self.contains(x, z):
            raise MeshError(f"point ({x}, {z}) lies outside the mesh")
        i = int(np.clip(np.rint((x - self.x_min) / self.hx), 0, self.nx))
        j = int(np.clip(np.rint((z - self.z_min) / self.hz), 0, self.nz))
        return int(self.index(i, j))

    def region_mask(self, x_lo, x_hi, z_lo, z_hi, open_: bool = True) -> np.ndarray:
        """Nodes inside a rectangle (open by default, with a small tolerance)."""
        X, Z = self.coords
        tol = 1e-9
        if open_:
            return (X > x_lo + tol) & (X < x_hi - tol) & (Z > z_lo + tol) & (Z < z_hi - tol)
        return (X >= x_lo - tol) & (X <= x_hi + tol) & (Z >= z_lo - tol) & (Z <= z_hi + tol)

    @cached_property
    def elements(self) -> np.ndarray:
        return kernels.element_nodes(self.nx, self.nz)

    def header(self) -> str:
        return f"{self.nx} {self.nz} {self.x_min!r} {self.x_max!r} {self.z_min!r} {self.z_max!r}"


def build_mesh(x_min, x_max, z_min, z_max, nx, nz) -> RectMesh:
    return RectMesh(float(x_min), float(x_max), float(z_min), float(z_max), int(nx), int(nz))


class ScalarField:
    """One finite value per mesh node; values are stored flat and read-only."""

    __slots__ = ("mesh", "values")

    def __init__(self, mesh: RectMesh, values):
        v = np.array(values, dtype=float).reshape(-1)
        if v.size != mesh.node_count:
            raise MeshError(f"field has {v.size} values, mesh has {mesh.node_count} nodes")
        if not np.all(np.isfinite(v)):
            raise MeshError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    @classmethod
    def constant(cls, mesh, c):
        return cls(mesh, np.full(mesh.node_count, float(c)))

    @classmethod
    def from_function(cls, mesh, fn):
        X, Z = mesh.coords
        return cls(mesh, np.broadcast_to(fn(X, Z), X.shape))

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.mesh.shape)

    def __repr__(self):
        return f"ScalarField({self.mesh.nx}x{self.mesh.nz}, min={self.values.min():.4g}, max={self.values.max():.4g})"

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.mesh != self.mesh:
                raise MeshError("fields live on different meshes")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.mesh, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.mesh, self.values - self._other(other))

    def __mul__(self, other):
        return ScalarField(self.mesh, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.mesh, -self.values)

    def at(self, x, z) -> np.ndarray:
        """Bilinear interpolation at points inside the mesh."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        x, z = np.broadcast_arrays(x, z)
        if not np.all(self.mesh.contains(x, z, tol=1e-9)):
            raise MeshError("interpolation point outside the mesh")
        m = self.mesh
        return kernels.interp_bilinear(self.values, m.x_min, m.z_min, m.hx, m.hz, m.nx, m.nz,
                                       x.ravel(), z.ravel()).reshape(x.shape)

    def resample(self, mesh: RectMesh) -> "ScalarField":
        X, Z = mesh.coords
        return ScalarField(mesh, self.at(X, Z))


def write_field(path, field: ScalarField) -> None:
    lines = [field.mesh.header()]
    lines.extend(format(v, ".17g") for v in field.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 6:
        raise MeshError(f"{path}: malformed field header")
    nx, nz = int(head[0]), int(head[1])
    mesh = build_mesh(*map(float, head[2:]), nx, nz)
    vals = np.array([float(t) for t in text[1:] if t.strip()])
    return ScalarField(mesh, vals)
