"""End-to-end runs driven by a :class:`RunConfig`, plus the result bundle format.

A bundle directory holds::

    a_final.field        mean of the stage coefficients
    a_stage_<n>.field    stage coefficients, n = 1..N
    q_<n>.field          layer-stripping fields
    tail.field           accelerated tail T_1
    iterates/a_1_<m>.field  accelerator iterates, m = 0..m_1
    history.csv          stage, iteration, criterion[, rmse_vs_truth]
    metrics.txt          only when a truth phantom was supplied
    manifest.txt         config, seed, file-format versions
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import FORMAT_VERSIONS, RunConfig
from .forward import Geometry, MeasurementSet, SourceSchedule, generate_measurements
from .inversion import InversionConfig, ReconstructionResult, run_inversion
from .mesh import RectMesh, ScalarField, build_mesh, read_field, write_field
from .metrics import MetricsReport, consecutive_diff, rmse_mae_me, write_metrics
from .phantoms import PhantomSpec, make_phantom
from .recovery import RecoveryBasis
from .tail import AcceleratorConfig, AcceleratorResult, first_guess_tail, run_accelerator

log = logging.getLogger(__name__)


class BundleError(OSError):
    pass


def geometry(cfg: RunConfig) -> Geometry:
    return Geometry(cfg.omega, cfg.omega0, cfg.omega_prime, cfg.points_vertical,
                    cfg.points_horizontal)


def schedule(cfg: RunConfig) -> SourceSchedule:
    return SourceSchedule.uniform(cfg.source_first, cfg.source_step, cfg.source_count, cfg.z_line)


def forward_mesh(cfg: RunConfig) -> RectMesh:
    return build_mesh(*cfg.omega0, cfg.forward_nx, cfg.forward_nz)


def inversion_mesh(cfg: RunConfig) -> RectMesh:
    return geometry(cfg).omega_mesh((cfg.refine_x, cfg.refine_z))


def phantom_spec(cfg: RunConfig) -> PhantomSpec:
    radii = cfg.radii
    if radii is None:
        radii = (1.0, 0.6) if cfg.example == 3 else (1.0, 1.0)
    return PhantomSpec(cfg.example, cfg.center_pairs, tuple(radii), cfg.peak,
                       cfg.mu_background, cfg.texture, cfg.phantom_seed)


def build_phantom(cfg: RunConfig) -> ScalarField:
    """Absorption ``mu_a`` on the forward mesh."""
    return make_phantom(forward_mesh(cfg), phantom_spec(cfg), cfg.omega)


def forward(cfg: RunConfig, mu_a: ScalarField) -> MeasurementSet:
    return generate_measurements(mu_a, cfg.D, schedule(cfg), geometry(cfg), cfg.noise, cfg.seed,
                                 cfg.denoise_degree, background_mu=cfg.mu_background)


def accelerator_config(cfg: RunConfig, **over) -> AcceleratorConfig:
    kw = dict(gamma=cfg.gamma, eps=cfg.eps, max_iters=cfg.max_accel,
              exponent_cap=cfg.exponent_cap, a_min=cfg.a_min, a_boundary=cfg.a_background,
              relaxed=cfg.relaxed, relative_lambda=cfg.relative_lambda,
              unknown=cfg.recovery_unknown)
    kw.update(over)
    return AcceleratorConfig(**kw)


def inversion_config(cfg: RunConfig) -> InversionConfig:
    return InversionConfig(cfg.eps, cfg.max_inner, tuple(cfg.recovery_cells), cfg.a_min,
                           a_boundary=cfg.a_background, unknown=cfg.recovery_unknown)


@dataclass(frozen=True)
class RunOutput:
    result: ReconstructionResult
    accel: AcceleratorResult
    metrics: MetricsReport | None
    mesh: RectMesh


def build_tail(cfg: RunConfig, ms: MeasurementSet, mesh: RectMesh, basis: RecoveryBasis,
               **accel_over) -> AcceleratorResult:
    first = first_guess_tail(ms, mesh, cfg.k, cfg.g_sources, cfg.g_selection)
    boundary_u = ms.boundary_field_values(ms.denoised[-1], mesh, log=True)
    return run_accelerator(first, boundary_u, basis, accelerator_config(cfg, **accel_over))


def invert(cfg: RunConfig, ms: MeasurementSet, truth: ScalarField | None = None) -> RunOutput:
    """First-guess tail, accelerator, layer stripping; metrics if ``truth`` (mu_a) is given."""
    if ms.schedule.P < cfg.g_sources:
        raise ValueError(f"the tail needs {cfg.g_sources} sources, the data hold {ms.schedule.P}")
    mesh = inversion_mesh(cfg)
    basis = RecoveryBasis(mesh, tuple(cfg.recovery_cells))
    accel = build_tail(cfg, ms, mesh, basis)
    result = run_inversion(ms, accel.tail, accel.a1, inversion_config(cfg), basis,
                           tail_history=accel.history)
    metrics = score(cfg, truth, result.a) if truth is not None else None
    return RunOutput(result, accel, metrics, mesh)


def score(cfg: RunConfig, truth_mu: ScalarField, a: ScalarField) -> MetricsReport:
    """Metrics of ``mu_a = D a`` against the truth at the truth mesh's nodes inside Omega'."""
    mask = truth_mu.mesh.region_mask(*cfg.omega_prime, open_=True)
    X, Z = truth_mu.mesh.coords
    est = cfg.D * a.at(X[mask], Z[mask])
    rep = rmse_mae_me(truth_mu.values[mask], est)
    return MetricsReport(rep.rmse, rep.mae, rep.me, rep.count, tuple(cfg.omega_prime))


# ---------------------------------------------------------------------------
# manifest and bundle
# ---------------------------------------------------------------------------

def write_manifest(path, cfg: RunConfig, kind: str, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"# layerstrip {kind} manifest\n")
        fh.write(f"package_version = {__version__}\n")
        for k, v in sorted(FORMAT_VERSIONS.items()):
            fh.write(f"format_{k} = {v}\n")
        fh.write(f"config_sha256 = {cfg.digest()}\n")
        for k, v in sorted((extra or {}).items()):
            fh.write(f"{k} = {v}\n")
        ov = cfg.overrides()
        fh.write("overrides = " + (", ".join(sorted(ov)) if ov else "none") + "\n")
        fh.write("[config]\n")
        fh.write(cfg.to_text())


def read_manifest_config(path) -> RunConfig:
    from .config import parse_config
    with open(path) as fh:
        text = fh.read()
    if "[config]\n" not in text:
        raise BundleError(f"{path}: no config section")
    return parse_config(text.split("[config]\n", 1)[1])


def write_bundle(out_dir, cfg: RunConfig, run: RunOutput, truth: ScalarField | None = None) -> None:
    os.makedirs(os.path.join(out_dir, "iterates"), exist_ok=True)
    res, acc = run.result, run.accel
    write_field(os.path.join(out_dir, "a_final.field"), res.a)
    for n, a in enumerate(res.stages, 1):
        write_field(os.path.join(out_dir, f"a_stage_{n}.field"), a)
    for n, q in enumerate(res.q.fields, 1):
        write_field(os.path.join(out_dir, f"q_{n}.field"), q)
    write_field(os.path.join(out_dir, "tail.field"), res.tail.T)
    for m, a in enumerate(acc.a_history):
        write_field(os.path.join(out_dir, "iterates", f"a_1_{m}.field"), a)
    with open(os.path.join(out_dir, "history.csv"), "w") as fh:
        fh.write("stage,iteration,criterion\n")
        for m, c in acc.history:
            fh.write(f"tail,{m},{c:.17g}\n")
        for n, st in enumerate(res.q.stages, 1):
            for k, c in enumerate(st.history, 1):
                fh.write(f"q{n},{k},{c:.17g}\n")
    if run.metrics is not None:
        write_metrics(os.path.join(out_dir, "metrics.txt"), run.metrics)
    write_manifest(os.path.join(out_dir, "manifest.txt"), cfg, "invert",
                   {"seed": cfg.seed, "tail_iterations": acc.tail.iterations,
                    "tail_converged": str(acc.converged).lower(),
                    "stages": len(res.stages)})


_REQUIRED = ("a_final.field", "tail.field", "history.csv", "manifest.txt")


@dataclass(frozen=True)
class Bundle:
    cfg: RunConfig
    a: ScalarField
    stages: tuple
    iterates: tuple
    history: list


def read_bundle(path) -> Bundle:
    missing = [f for f in _REQUIRED if not os.path.exists(os.path.join(path, f))]
    if missing:
        raise BundleError(f"incomplete bundle {path}: missing {', '.join(missing)}")
    cfg = read_manifest_config(os.path.join(path, "manifest.txt"))
    a = read_field(os.path.join(path, "a_final.field"))
    stages = []
    for n in range(1, cfg.source_count):
        p = os.path.join(path, f"a_stage_{n}.field")
        if not os.path.exists(p):
            raise BundleError(f"incomplete bundle {path}: missing a_stage_{n}.field")
        stages.append(read_field(p))
    iterates = []
    m = 0
    while os.path.exists(p := os.path.join(path, "iterates", f"a_1_{m}.field")):
        iterates.append(read_field(p))
        m += 1
    history = []
    with open(os.path.join(path, "history.csv")) as fh:
        next(fh)
        for line in fh:
            st, it, c = line.strip().split(",")[:3]
            history.append((st, int(it), float(c)))
    return Bundle(cfg, a, tuple(stages), tuple(iterates), history)


def report(bundle: Bundle, truth: ScalarField, out_dir) -> MetricsReport:
    """Write the convergence curves behind the figures and the metrics table."""
    cfg = bundle.cfg
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "consecutive_diff.csv"), "w") as fh:
        fh.write("m,criterion\n")
        for m in range(1, len(bundle.iterates)):
            fh.write(f"{m},{consecutive_diff(bundle.iterates[m], bundle.iterates[m - 1]):.17g}\n")
    with open(os.path.join(out_dir, "rmse_curve.csv"), "w") as fh:
        fh.write("m,rmse\n")
        for m, a in enumerate(bundle.iterates):
            fh.write(f"{m},{score(cfg, truth, a).rmse:.17g}\n")
    rep = score(cfg, truth, bundle.a)
    write_metrics(os.path.join(out_dir, "metrics.txt"), rep)
    return rep


def load_truth(path) -> ScalarField:
    return read_field(path)
