"""Relative error metrics and the consecutive-difference stopping criterion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError, ScalarField


class MetricsError(ValueError):
    pass


def _values(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float).ravel()


@dataclass(frozen=True)
class MetricsReport:
    """RMSE, MAE and ME normalised by the peak of the truth over the region.

    Attributes
    ----------
    rmse, mae, me : float
    count : int
        Number of grid points in the evaluation region.
    region : tuple or None
        ``(x_lo, x_hi, z_lo, z_hi)`` when known.
    """

    rmse: float
    mae: float
    me: float
    count: int
    region: tuple | None = None
    history: tuple = field(default_factory=tuple)

    def lines(self) -> list[str]:
        return [f"RMSE {self.rmse:.17g}", f"MAE {self.mae:.17g}", f"ME {self.me:.17g}"]


def _check_same(a, b):
    if isinstance(a, ScalarField) and isinstance(b, ScalarField) and a.mesh != b.mesh:
        raise MeshError("fields live on different meshes")


def rmse_mae_me(truth, estimate, region=None) -> MetricsReport:
    """Relative errors of ``estimate`` against ``truth`` over ``region``.

    Parameters
    ----------
    truth, estimate : ScalarField or array_like
    region : tuple, boolean mask or None
        A tuple ``(x_lo, x_hi, z_lo, z_hi)`` selects nodes strictly inside the
        open rectangle (fields only).  A boolean mask is used as is.  ``None``
        uses every point.
    """
    _check_same(truth, estimate)
    t, e = _values(truth), _values(estimate)
    if t.shape != e.shape:
        raise MetricsError(f"shape mismatch {t.shape} vs {e.shape}")
    extents = None
    if region is None:
        mask = np.ones(t.shape, dtype=bool)
    elif isinstance(region, tuple) and len(region) == 4 and not isinstance(region[0], (np.ndarray, list)):
        if not isinstance(truth, ScalarField):
            raise MetricsError("rectangle regions need ScalarField inputs")
        mask = truth.mesh.region_mask(*region, open_=True)
        extents = tuple(float(r) for r in region)
    else:
        mask = np.asarray(region, dtype=bool).ravel()
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise MetricsError("evaluation region holds no grid points")
    t, e = t[mask], e[mask]
    scale = np.max(np.abs(t))
    if scale == 0:
        raise MetricsError("truth vanishes on the evaluation region")
    d = t - e
    rmse = float(np.sqrt(np.sum(d * d)) / (np.sqrt(n) * scale))
    mae = float(np.sum(np.abs(d)) / (n * scale))
    me = float(np.sum(d) / (n * scale))
    return MetricsReport(rmse, mae, me, n, extents)


def consecutive_diff(a_new, a_old) -> float:
    """``sqrt(sum |a_new - a_old|^2) / (sqrt(N) max|a_old|)`` over all points."""
    _check_same(a_new, a_old)
    x, y = _values(a_new), _values(a_old)
    if x.shape != y.shape:
        raise MetricsError(f"shape mismatch {x.shape} vs {y.shape}")
    scale = np.max(np.abs(y))
    if scale == 0:
        raise MetricsError("previous iterate vanishes identically")
    d = x - y
    return float(np.sqrt(np.sum(d * d)) / (np.sqrt(x.size) * scale))


def write_metrics(path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(report.lines()) + "\n")
        fh.write(f"points {report.count}\n")
        if report.region is not None:
            fh.write("region " + " ".join(f"{v:.17g}" for v in report.region) + "\n")


def read_metrics(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            key, *rest = line.split()
            if key in ("RMSE", "MAE", "ME"):
                out[key] = float(rest[0])
    return out
