import math
import os
import subprocess
import sys

import numpy as np
import pytest

from layerstrip import cli, kernels, pipeline
from layerstrip._accel import HAVE_NUMBA
from layerstrip.config import ConfigError, RunConfig, load_config, parse_config
from layerstrip.forward import read_measurements
from layerstrip.mesh import ScalarField, build_mesh, read_field
from layerstrip.phantoms import PhantomError, PhantomSpec, default_spec, mu_a_values


# -- configuration -------------------------------------------------------------------

def test_default_config_fidelity():
    c = RunConfig()
    assert c.omega == (5.0, 15.0, 5.0, 10.0)
    assert c.omega0 == (0.0, 20.0, 0.0, 15.0)
    assert c.omega_prime == (5.0, 15.0, 5.0, 8.0)
    assert (c.forward_nx, c.forward_nz) == (130, 93)
    assert c.D == 0.02 and c.mu_background == 0.1
    assert c.a_background == pytest.approx(5.0, rel=1e-15)
    assert c.k == pytest.approx(math.sqrt(5.0), rel=1e-15)
    assert (c.source_first, c.source_step, c.source_count, c.z_line) == (0.0, 0.625, 5, 10.0)
    sch = pipeline.schedule(c)
    assert sch.s_high == 2.5 and sch.N == 4
    assert c.noise == 0.02
    assert c.eps == 1e-5 and c.residual == 1e-10
    assert c.gamma == 1.05
    assert c.recovery_cells[0] * c.recovery_cells[1] == 450
    assert c.g_sources == 3
    assert c.example == 1 and c.peak == 0.3
    assert c.center_pairs == ((7.0, 7.0), (13.0, 7.0))
    assert c.overrides() == {}


def test_config_text_round_trip(tmp_path):
    cfg = RunConfig(example=3, seed=17, noise=0.01, radii=(1.0, 0.5), relaxed=False)
    assert parse_config(cfg.to_text()) == cfg
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nexample = 2\nseed = 9  # trailing\n")
    back = load_config(path)
    assert back.example == 2 and back.seed == 9
    assert set(back.overrides()) == {"example", "seed"}


@pytest.mark.parametrize("text", [
    "exampel = 2",
    "example = 2\nexample = 3",
    "seed = abc",
    "relaxed = maybe",
    "just a line",
    "example = 7",
    "residual = 1e-8",
    "recovery_unknown = mu",
    "g_sources = 9",
    "omega = 5,4,5,10",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- phantoms --------------------------------------------------------------------------

def test_phantom_examples():
    s1 = default_spec(1)
    assert mu_a_values(s1, np.array([7.0, 10.0]), np.array([7.0, 9.0])).tolist() == [0.3, 0.1]
    s2 = default_spec(2)
    v = mu_a_values(s2, np.array([13.0, 14.0, 10.0]), np.array([7.0, 7.0, 7.0]))
    assert v[0] == pytest.approx(0.3, rel=1e-15)
    assert v[1] == pytest.approx(0.3 * math.cos(1.0), rel=1e-15)
    assert v[1] == pytest.approx(0.16209, abs=1e-5)
    assert v[2] == 0.1


def test_example3_without_texture_is_example2():
    X, Z = np.meshgrid(np.linspace(5, 15, 81), np.linspace(5, 10, 41))
    s3 = PhantomSpec(3, radii=(1.0, 0.6), texture=0.0)
    s2 = PhantomSpec(2, radii=(1.0, 0.6))
    assert np.array_equal(mu_a_values(s3, X, Z), mu_a_values(s2, X, Z))
    textured = mu_a_values(default_spec(3), X, Z)
    assert textured.min() >= 0.1 and textured.max() <= 0.3 * 1.1 + 1e-15


def test_phantom_errors():
    with pytest.raises(PhantomError):
        PhantomSpec(4)
    with pytest.raises(PhantomError):
        PhantomSpec(1, radii=(1.0,))
    cfg = RunConfig(centers=(5.5, 7.0, 13.0, 7.0))
    with pytest.raises(PhantomError):
        pipeline.build_phantom(cfg)


# -- subcommands -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    phantom = root / "phantom"
    fwd = root / "fwd"
    inv = root / "inv"
    assert cli.main(["phantom", "--example", "1", "--out", str(phantom)]) == 0
    truth = str(phantom / "phantom.field")
    assert cli.main(["forward", "--truth", truth, "--seed", "3", "--out", str(fwd)]) == 0
    meas = str(fwd / "measurements.txt")
    assert cli.main(["invert", meas, "--seed", "3", "--truth", truth, "--out", str(inv)]) == 0
    return root, truth, meas, inv


def test_forward_output(cli_run):
    _, truth, meas, _ = cli_run
    ms = read_measurements(meas)
    assert ms.raw.shape[0] == 5 and ms.raw.shape[1] >= 95
    assert np.all(ms.raw > 0) and ms.seed == 3 and ms.noise_level == 0.02


def test_forward_without_noise(tmp_path, cli_run):
    _, truth, _, _ = cli_run
    (tmp_path / "c.cfg").write_text("noise = 0\n")
    assert cli.main(["forward", "--config", str(tmp_path / "c.cfg"), "--truth", truth,
                     "--out", str(tmp_path)]) == 0
    ms = read_measurements(tmp_path / "measurements.txt")
    assert np.array_equal(ms.noisy, ms.raw)


def test_bundle_contents(cli_run):
    _, _, _, inv = cli_run
    names = set(os.listdir(inv))
    assert {"a_final.field", "tail.field", "history.csv", "metrics.txt", "manifest.txt"} <= names
    assert {f"a_stage_{n}.field" for n in range(1, 5)} <= names
    assert {f"q_{n}.field" for n in range(1, 5)} <= names
    cfg = pipeline.read_manifest_config(inv / "manifest.txt")
    assert cfg == RunConfig(seed=3)
    assert "overrides = seed" in (inv / "manifest.txt").read_text()


def test_manifest_reproduces_run(cli_run, tmp_path):
    _, truth, meas, inv = cli_run
    cfg = pipeline.read_manifest_config(inv / "manifest.txt")
    (tmp_path / "c.cfg").write_text(cfg.to_text())
    assert cli.main(["invert", meas, "--config", str(tmp_path / "c.cfg"),
                     "--out", str(tmp_path / "again")]) == 0
    for name in ("a_final.field", "tail.field", "q_4.field"):
        assert (inv / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_report(cli_run, tmp_path, capsys):
    _, truth, _, inv = cli_run
    assert cli.main(["report", str(inv), "--truth", truth, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "consecutive_diff.csv").read_text().splitlines()
    assert lines[0] == "m,criterion" and float(lines[-1].split(",")[1]) <= 1e-5
    rm = (tmp_path / "rmse_curve.csv").read_text().splitlines()
    assert len(rm) == len(lines) + 1
    out = capsys.readouterr().out
    assert out.startswith("RMSE ")


def test_report_truth_equals_estimate(cli_run, tmp_path):
    _, _, _, inv = cli_run
    bundle = pipeline.read_bundle(inv)
    fm = pipeline.forward_mesh(bundle.cfg)
    X, Z = fm.coords
    inside = bundle.a.mesh.contains(X, Z)
    vals = np.full(fm.node_count, 0.1)
    vals[inside] = bundle.cfg.D * bundle.a.at(X[inside], Z[inside])
    truth = ScalarField(fm, vals)
    rep = pipeline.report(bundle, truth, tmp_path)
    assert (rep.rmse, rep.mae, rep.me) == (0.0, 0.0, 0.0)


def test_exit_codes(tmp_path, cli_run):
    _, truth, meas, inv = cli_run
    bad = tmp_path / "bad.cfg"
    bad.write_text("exampel = 1\n")
    assert cli.main(["phantom", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["report", str(inv)]) == 2
    capped = tmp_path / "cap.cfg"
    capped.write_text("max_accel = 2\n")
    assert cli.main(["invert", meas, "--config", str(capped), "--out", str(tmp_path / "x")]) == 3
    assert cli.main(["invert", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 4
    assert cli.main(["report", str(tmp_path / "nowhere"), "--truth", truth]) == 4
    with pytest.raises(SystemExit):
        cli.main(["phantom", "--example", "5", "--out", str(tmp_path)])


def test_partial_bundle_on_stage_failure(tmp_path, cli_run):
    _, _, meas, _ = cli_run
    cfg = tmp_path / "inner.cfg"
    cfg.write_text("max_inner = 1\n")
    assert cli.main(["invert", meas, "--config", str(cfg), "--out", str(tmp_path / "p")]) == 3
    assert (tmp_path / "p" / "a_partial.field").exists()


def test_phantom_command(cli_run):
    root = cli_run[0]
    mu = read_field(root / "phantom" / "phantom.field")
    assert mu.mesh.shape == (131, 94) or mu.mesh.node_count == 131 * 94
    assert mu.values.max() == 0.3 and mu.values.min() == 0.1


# -- numba / numpy kernels --------------------------------------------------------------------

def test_kernels_agree():
    rng = np.random.default_rng(0)
    mesh = build_mesh(0, 2, 0, 1, 12, 7)
    n = mesh.node_count
    tabs = kernels.reference_tables(mesh.hx, mesh.hz, "blended")
    bx, bz, c = rng.normal(size=n), rng.normal(size=n), rng.uniform(1, 2, size=n)
    a = kernels.element_matrices(mesh.elements, *tabs, 0.7, bx, bz, c, use_numba=False)
    b = kernels.element_matrices(mesh.elements, *tabs, 0.7, bx, bz, c, use_numba=True)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)
    vals = rng.normal(size=n)
    px, pz = rng.uniform(0, 2, 500), rng.uniform(0, 1, 500)
    args = (vals, 0.0, 0.0, mesh.hx, mesh.hz, 12, 7, px, pz)
    assert np.allclose(kernels.interp_bilinear(*args, use_numba=False),
                       kernels.interp_bilinear(*args, use_numba=True), rtol=1e-14, atol=1e-15)


def test_env_flag_selects_numpy():
    env = dict(os.environ, LAYERSTRIP_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c",
                          "from layerstrip._accel import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["LAYERSTRIP_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c",
                          "from layerstrip._accel import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == ("numba" if HAVE_NUMBA else "numpy")
