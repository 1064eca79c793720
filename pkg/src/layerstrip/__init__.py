"""Layer-stripping reconstruction of an absorption coefficient from boundary
data of a running point source in a diffusive medium.

Subpackages are plain modules; the most used names are re-exported here.
"""

__version__ = "0.1.0"

from .mesh import RectMesh, ScalarField, build_mesh, read_field, write_field  # noqa: E402
from .bessel import bessel_k0, bessel_k1  # noqa: E402
from .metrics import MetricsReport, consecutive_diff, rmse_mae_me  # noqa: E402

__all__ = [
    "RectMesh", "ScalarField", "build_mesh", "read_field", "write_field",
    "bessel_k0", "bessel_k1", "MetricsReport", "consecutive_diff", "rmse_mae_me",
    "__version__",
]
