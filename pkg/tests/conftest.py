"""Shared fixtures.  End-to-end runs are computed once per session."""

from functools import cached_property

import numpy as np
import pytest

from layerstrip import pipeline
from layerstrip.config import RunConfig
from layerstrip.forward import solve_forward
from layerstrip.mesh import ScalarField, build_mesh
from layerstrip.recovery import RecoveryBasis

# seed used for every noisy end-to-end run in the suite
RUN_SEED = 1


@pytest.fixture(scope="session")
def forward_mesh():
    return build_mesh(0, 20, 0, 15, 130, 93)


@pytest.fixture(scope="session")
def homogeneous_u(forward_mesh):
    """Forward solve of the background medium with the source at (0, 10)."""
    mu = ScalarField.constant(forward_mesh, 0.1)
    return solve_forward(mu, 0.02, (0.0, 10.0))


class Run:
    """Config, phantom, data and reconstruction of one experiment."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.truth = pipeline.build_phantom(cfg)
        self.ms = pipeline.forward(cfg, self.truth)

    @cached_property
    def out(self):
        return pipeline.invert(self.cfg, self.ms, self.truth)

    @property
    def result(self):
        return self.out.result

    @property
    def accel(self):
        return self.out.accel


@pytest.fixture(scope="session")
def background_run():
    return Run(RunConfig(example=0, noise=0.0))


@pytest.fixture(scope="session")
def example_runs():
    return {ex: Run(RunConfig(example=ex, seed=RUN_SEED)) for ex in (1, 2, 3)}


@pytest.fixture(scope="session")
def unrelaxed_example1(example_runs):
    """lambda_m == 1 accelerator on the Example-1 data, allowed to hit its cap."""
    run = example_runs[1]
    cfg = run.cfg
    mesh = pipeline.inversion_mesh(cfg)
    basis = RecoveryBasis(mesh, tuple(cfg.recovery_cells))
    with np.errstate(over="ignore", invalid="ignore"):
        return pipeline.build_tail(cfg, run.ms, mesh, basis, relaxed=False, raise_on_cap=False)
