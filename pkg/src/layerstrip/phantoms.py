"""Absorption phantoms: two circular inclusions in a uniform background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import RectMesh, ScalarField


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    example: int = 1
    centers: tuple = ((7.0, 7.0), (13.0, 7.0))
    radii: tuple = (1.0, 1.0)
    peak: float = 0.3
    background: float = 0.1
    texture: float = 0.1      # white-noise amplitude of example 3
    seed: int = 0

    def __post_init__(self):
        if self.example not in (0, 1, 2, 3):
            raise PhantomError(f"unknown example {self.example}; expected 1, 2 or 3 (0 = background)")
        if len(self.centers) != len(self.radii):
            raise PhantomError("need one radius per inclusion center")


def default_spec(example: int, **overrides) -> PhantomSpec:
    radii = (1.0, 0.6) if example == 3 else (1.0, 1.0)
    kw = dict(example=example, radii=radii)
    kw.update(overrides)
    return PhantomSpec(**kw)


def check_inside(spec: PhantomSpec, omega) -> None:
    x0, x1, z0, z1 = omega
    for (cx, cz), r in zip(spec.centers, spec.radii):
        if not (x0 + r <= cx <= x1 - r and z0 + r <= cz <= z1 - r):
            raise PhantomError(f"inclusion at ({cx}, {cz}) with radius {r} leaves the domain")


def _distance(spec, X, Z):
    """Distance to the nearest center whose disc contains the point (inf outside)."""
    d = np.full(X.shape, np.inf)
    for (cx, cz), r in zip(spec.centers, spec.radii):
        di = np.hypot(X - cx, Z - cz)
        d = np.where(di <= r, np.minimum(d, di), d)
    return d


def mu_a_values(spec: PhantomSpec, X, Z, noise=None) -> np.ndarray:
    X, Z = np.asarray(X, dtype=float), np.asarray(Z, dtype=float)
    out = np.full(X.shape, spec.background)
    if spec.example == 0:
        return out
    d = _distance(spec, X, Z)
    inside = np.isfinite(d)
    if spec.example == 1:
        out[inside] = spec.peak
        return out
    # cos argument in radians, d in cm
    prof = np.cos(np.where(inside, d, 0.0))
    if spec.example == 3:
        if noise is None:
            noise = np.random.default_rng(spec.seed).uniform(-1.0, 1.0, size=X.shape)
        prof = prof * (1.0 + spec.texture * noise)
    out[inside] = np.maximum(spec.peak * prof[inside], spec.background)
    return out


def make_phantom(mesh: RectMesh, spec: PhantomSpec, omega=None) -> ScalarField:
    if omega is not None:
        check_inside(spec, omega)
    X, Z = mesh.coords
    return ScalarField(mesh, mu_a_values(spec, X, Z))
