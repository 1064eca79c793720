import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from layerstrip import fem
from layerstrip.bessel import BesselDomainError, bessel_k0, bessel_k1, k1_over_k0
from layerstrip.mesh import MeshError, ScalarField, build_mesh, read_field, write_field

# K0 and K1 reference values from mpmath at 40 digits
K0_REF = {
    0.1: 2.42706902470201661251850602043,
    1.0: 0.421024438240708333335627379213,
    2.0: 0.113893872749533435652719574932,
    5.0: 0.00369109833404259427473526100746,
    10.0: 1.77800623161676518113011927995e-05,
    50.0: 3.41016774978949551392067551235e-23,
}
K1_REF = {
    0.1: 9.85384478087060613484854659668,
    1.0: 0.601907230197234574737540001536,
    2.0: 0.139865881816522427284598807035,
    5.0: 0.00404461344545216420836502183754,
    10.0: 1.86487734538255845968168581224e-05,
    50.0: 3.44410222671755561259185303591e-23,
}


def laplace_dirichlet(mesh, g, reaction=None, rhs=None):
    system = fem.assemble_elliptic(mesh, 1.0, reaction=reaction, rhs=rhs)
    return fem.solve(fem.apply_dirichlet(system, g))


# -- mesh -------------------------------------------------------------------

def test_forward_mesh_counts():
    m = build_mesh(0, 20, 0, 15, 130, 93)
    assert m.node_count == 131 * 94 == 12314
    assert m.hx == pytest.approx(2 / 13, rel=1e-15)
    assert m.hz == pytest.approx(15 / 93, rel=1e-15)


def test_single_element_tags():
    m = build_mesh(0, 1, 0, 1, 1, 1)
    assert m.node_count == 4
    assert m.boundary_nodes.size == 4 and m.interior_nodes.size == 0
    for node in range(4):
        assert len(m.tags(node)) == 2


def test_perimeter_count():
    m = build_mesh(5, 15, 5, 10, 10, 5)
    assert m.boundary_nodes.size == 2 * (10 + 5)


def test_tags_one_side_except_corners():
    m = build_mesh(0, 3, 0, 2, 6, 4)
    corners = {m.index(0, 0), m.index(6, 0), m.index(0, 4), m.index(6, 4)}
    for node in m.boundary_nodes:
        assert len(m.tags(int(node))) == (2 if node in corners else 1)
    assert m.tags(int(m.index(2, 2))) == {"interior"}


def test_node_coordinates():
    m = build_mesh(5, 15, 5, 10, 10, 5)
    X, Z = m.coords
    node = m.index(3, 2)
    assert X[node] == pytest.approx(8.0) and Z[node] == pytest.approx(7.0)


@pytest.mark.parametrize("args", [(1, 0, 0, 1, 2, 2), (0, 1, 1, 1, 2, 2), (0, 1, 0, 1, 0, 2),
                                  (0, 1, 0, 1, 2, 0)])
def test_invalid_mesh(args):
    with pytest.raises(MeshError):
        build_mesh(*args)


def test_field_immutable_and_finite():
    m = build_mesh(0, 1, 0, 1, 2, 2)
    f = ScalarField.constant(m, 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0
    with pytest.raises(AttributeError):
        f.values = np.zeros(9)
    with pytest.raises(MeshError):
        ScalarField(m, np.full(9, np.nan))
    with pytest.raises(MeshError):
        ScalarField(m, np.zeros(8))


def test_field_file_round_trip(tmp_path):
    m = build_mesh(0, 2, 0, 1, 4, 3)
    f = ScalarField.from_function(m, lambda x, z: np.exp(x) / 3 + z)
    write_field(tmp_path / "f.field", f)
    g = read_field(tmp_path / "f.field")
    assert g.mesh == m
    assert np.array_equal(g.values, f.values)
    head = (tmp_path / "f.field").read_text().splitlines()[0]
    assert head.split()[:2] == ["4", "3"]


def test_bilinear_interpolation_exact_on_bilinear():
    m = build_mesh(0, 2, 0, 1, 5, 3)
    f = ScalarField.from_function(m, lambda x, z: 1 + 2 * x - z + 0.5 * x * z)
    px, pz = np.array([0.13, 1.71, 2.0]), np.array([0.9, 0.05, 1.0])
    assert np.allclose(f.at(px, pz), 1 + 2 * px - pz + 0.5 * px * pz, atol=1e-14)
    with pytest.raises(MeshError):
        f.at(2.5, 0.5)


# -- assembly and boundary conditions ----------------------------------------

def test_constant_dirichlet_is_harmonic():
    m = build_mesh(0, 1, 0, 1, 8, 6)
    u = laplace_dirichlet(m, 5.0)
    assert np.allclose(u.values, 5.0, atol=1e-12)


def test_zero_data_zero_solution():
    m = build_mesh(0, 1, 0, 1, 8, 6)
    u = laplace_dirichlet(m, 0.0, reaction=2.0)
    assert np.all(u.values == 0.0)


def test_dirichlet_rows_are_identity():
    m = build_mesh(0, 1, 0, 1, 4, 3)
    g = np.arange(m.boundary_nodes.size, dtype=float)
    s = fem.apply_dirichlet(fem.assemble_elliptic(m, 1.0, reaction=1.0), g)
    A = s.matrix.toarray()
    b = m.boundary_nodes
    assert np.array_equal(A[b][:, :], np.eye(m.node_count)[b])
    assert np.array_equal(s.rhs[b], g)
    assert np.all(np.diag(A) != 0)
    # remaining block keeps its symmetry
    i = m.interior_nodes
    assert np.allclose(A[np.ix_(i, i)], A[np.ix_(i, i)].T, atol=1e-15)


def test_dirichlet_missing_values():
    m = build_mesh(0, 1, 0, 1, 4, 3)
    s = fem.assemble_elliptic(m)
    with pytest.raises(MeshError):
        fem.apply_dirichlet(s, np.ones(m.boundary_nodes.size - 1))


def test_mesh_mismatch_rejected():
    m1, m2 = build_mesh(0, 1, 0, 1, 4, 3), build_mesh(0, 1, 0, 1, 3, 3)
    with pytest.raises(MeshError):
        fem.assemble_elliptic(m1, reaction=ScalarField.constant(m2, 1.0))


def test_negative_reaction_clamped_and_counted(caplog):
    m = build_mesh(0, 1, 0, 1, 4, 3)
    c = np.ones(m.node_count)
    c[[3, 7]] = -1.0
    s = fem.assemble_elliptic(m, reaction=c)
    ref = fem.assemble_elliptic(m, reaction=np.maximum(c, 0))
    assert s.clamped == 2
    assert (s.matrix != ref.matrix).nnz == 0
    assert "clamped" in caplog.text


def test_manufactured_order():
    def err(nx, nz):
        m = build_mesh(0, 1, 0, 1, nx, nz)
        exact = ScalarField.from_function(m, lambda x, z: np.sin(np.pi * x) * np.sin(np.pi * z))
        u = laplace_dirichlet(m, 0.0, reaction=1.0, rhs=(2 * np.pi ** 2 + 1) * exact.values)
        return np.abs(u.values - exact.values).max()

    e = [err(8, 6), err(16, 12), err(32, 24)]
    for coarse, fine in zip(e, e[1:]):
        assert 3.5 <= coarse / fine <= 4.5


def test_dense_oracle_laplace():
    m = build_mesh(5, 15, 5, 10, 10, 5)
    X, Z = m.coords
    g = (X ** 2 - Z ** 2 + 3 * X)[m.boundary_nodes]
    s = fem.apply_dirichlet(fem.assemble_elliptic(m, 1.0, reaction=0.5, rhs=1.0), g)
    u = fem.solve(s)
    dense = np.linalg.solve(s.matrix.toarray(), s.rhs)
    assert np.abs(u.values - dense).max() < 1e-9


def test_dirichlet_from_measured_psi(background_run):
    ms = background_run.ms
    m = build_mesh(5, 15, 5, 10, 10, 5)
    g = ms.boundary_field_values(ms.psi_n[0], m)
    X, Z = m.coords
    b = (0.5 * X, -0.2 * Z)
    s = fem.apply_dirichlet(fem.assemble_elliptic(m, 1.0, advection=b), g)
    u = fem.solve(s)
    A = s.matrix.toarray()
    assert np.linalg.norm(A @ u.values - s.rhs) / np.linalg.norm(s.rhs) < 1e-10
    assert np.abs(u.values - np.linalg.solve(A, s.rhs)).max() < 1e-9


def test_robin_large_kappa_approaches_dirichlet():
    m = build_mesh(0, 2, 0, 1.5, 20, 15)
    robin = fem.apply_robin(fem.assemble_elliptic(m, 1.0, reaction=1.0, rhs=1.0), fem.RobinSpec(1e8))
    u_r = fem.solve(robin)
    u_d = laplace_dirichlet(m, 0.0, reaction=1.0, rhs=1.0)
    i = m.interior_nodes
    assert np.abs(u_r.values - u_d.values)[i].max() < 0.01 * np.abs(u_d.values).max()


def test_robin_single_element_by_hand():
    m = build_mesh(0, 1, 0, 1, 1, 1)
    R = fem.robin_matrix(m, fem.RobinSpec(1.0)).toarray()
    # two edges meet at every node; each edge adds h/6 * [[2, 1], [1, 2]]
    expect = np.array([[4, 1, 1, 0], [1, 4, 0, 1], [1, 0, 4, 1], [0, 1, 1, 4]]) / 6.0
    assert np.allclose(R, expect, atol=1e-15)


def test_robin_rejects_nonpositive():
    with pytest.raises(ValueError):
        fem.RobinSpec(0.0)
    with pytest.raises(ValueError):
        fem.RobinSpec(-1.0)


def test_robin_default_coefficient_is_k():
    # far from the source, K1/K0 -> 1 and the matched coefficient tends to k
    k = np.sqrt(0.1 / 0.02)
    spec = fem.RobinSpec.matched((0.0, 0.0), k)
    val = spec.kappa(np.array([400.0]), np.array([0.0]), 1.0, 0.0)
    assert val[0] == pytest.approx(k, rel=1e-3)


def test_robin_after_dirichlet_rejected():
    m = build_mesh(0, 1, 0, 1, 2, 2)
    s = fem.apply_dirichlet(fem.assemble_elliptic(m), 0.0)
    with pytest.raises(MeshError):
        fem.apply_robin(s, fem.RobinSpec(1.0))


# -- point source ------------------------------------------------------------

def test_point_source_interior_node():
    h = 0.25
    m = build_mesh(0, 2, 0, 2, 8, 8)
    node = int(m.index(3, 5))
    load = fem.point_source_load(m, (0.75, 1.25))
    M = fem.mass_matrix(m)
    assert load.sum() == pytest.approx(1.0, rel=1e-14)
    assert load[node] / M[node, node] == pytest.approx(1 / h ** 2, rel=1e-14)


def test_point_source_edge_node():
    h = 0.25
    m = build_mesh(0, 2, 0, 2, 8, 8)
    node = int(m.index(0, 4))
    load = fem.point_source_load(m, (0.0, 1.0))
    M = fem.mass_matrix(m)
    assert load.sum() == pytest.approx(1.0, rel=1e-14)
    assert load[node] / M[node, node] == pytest.approx(1 / (h ** 2 / 2), rel=1e-14)


def test_point_source_snaps_to_nearest_node():
    m = build_mesh(0, 2, 0, 2, 8, 8)
    assert np.array_equal(fem.point_source_load(m, (0.76, 1.2)), fem.point_source_load(m, (0.75, 1.25)))


def test_point_source_outside():
    m = build_mesh(0, 2, 0, 2, 8, 8)
    with pytest.raises(MeshError):
        fem.point_source_load(m, (2.5, 1.0))


# -- solve -------------------------------------------------------------------

def test_identity_solve():
    m = build_mesh(0, 1, 0, 1, 2, 2)
    b = np.zeros(m.node_count)
    b[3] = 1.0
    u = fem.solve(fem.SparseSystem(m, sp.identity(m.node_count, format="csr"), b))
    assert np.array_equal(u.values, b)


def test_pure_neumann_is_singular():
    m = build_mesh(0, 1, 0, 1, 6, 6)
    with pytest.raises(fem.SolverError):
        fem.solve(fem.assemble_elliptic(m, 1.0, rhs=0.0))


def test_solve_is_deterministic():
    m = build_mesh(0, 20, 0, 15, 40, 30)
    X, Z = m.coords
    mu = 0.1 + 0.05 * np.exp(-((X - 7) ** 2 + (Z - 7) ** 2))

    def once():
        s = fem.assemble_elliptic(m, 0.02, reaction=mu, load=fem.point_source_load(m, (1.0, 10.0)))
        return fem.solve(fem.apply_robin(s, fem.RobinSpec(2.0), 0.02)).values

    assert once().tobytes() == once().tobytes()


# -- gradient ----------------------------------------------------------------

def test_gradient_linear_and_quadratic_exact():
    m = build_mesh(0, 3, 0, 2, 7, 5)
    X, Z = m.coords
    gx, gz = fem.gradient(ScalarField.from_function(m, lambda x, z: x))
    assert np.allclose(gx.values, 1.0, atol=1e-12) and np.allclose(gz.values, 0.0, atol=1e-12)
    gx, gz = fem.gradient(ScalarField.from_function(m, lambda x, z: x ** 2))
    assert np.allclose(gx.values, 2 * X, atol=1e-11)


def test_gradient_second_order():
    errs = []
    for n in (20, 40, 80):
        m = build_mesh(0, 3, 0, 1, n, 4)
        X, _ = m.coords
        gx, _ = fem.gradient(ScalarField.from_function(m, lambda x, z: np.sin(x)))
        errs.append(np.abs(gx.values - np.cos(X)).max())
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.5 <= coarse / fine <= 4.5


def test_gradient_degenerate_mesh():
    m = build_mesh(0, 1, 0, 1, 1, 4)
    with pytest.raises(MeshError):
        fem.gradient(ScalarField.constant(m, 1.0))


# -- invariants ----------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=32, max_size=32),
       st.floats(0, 150))
def test_maximum_principle(data, reaction):
    # square elements with reaction * h^2 <= 3 keep the system an M-matrix
    m = build_mesh(0, 1, 0, 1, 8, 8)
    u = laplace_dirichlet(m, np.asarray(data), reaction=reaction)
    assert u.values.min() >= -1e-12


def test_maximum_principle_inversion_mesh():
    from layerstrip import pipeline
    from layerstrip.config import RunConfig
    cfg = RunConfig(example=1)
    mesh = pipeline.inversion_mesh(cfg)
    X, Z = mesh.coords
    a = pipeline.build_phantom(cfg).at(X, Z) / cfg.D
    rng = np.random.default_rng(3)
    g = rng.uniform(0, 1, mesh.boundary_nodes.size) ** 4
    u = laplace_dirichlet(mesh, g, reaction=a)
    assert u.values.min() >= -1e-12


def test_mirror_symmetry():
    from layerstrip.forward import solve_forward
    m = build_mesh(0, 20, 0, 15, 40, 30)
    mu = ScalarField.from_function(m, lambda x, z: 0.1 + 0.05 * np.exp(-((x - 10) ** 2 + (z - 6) ** 2)))
    u = solve_forward(mu, 0.02, (10.0, 12.0))
    g = u.grid
    assert np.abs(g - g[:, ::-1]).max() < 1e-9 * g.max()


# -- Bessel --------------------------------------------------------------------

@pytest.mark.parametrize("z", sorted(K0_REF))
def test_k0_reference(z):
    assert bessel_k0(z) == pytest.approx(K0_REF[z], rel=1e-12)


@pytest.mark.parametrize("z", sorted(K1_REF))
def test_k1_reference(z):
    assert bessel_k1(z) == pytest.approx(K1_REF[z], rel=1e-12)


def test_k0_asymptote_and_monotone():
    z = 50.0
    assert bessel_k0(z) * np.exp(z) * np.sqrt(2 * z / np.pi) == pytest.approx(1.0, abs=1e-2)
    assert bessel_k0(0.1) > bessel_k0(1.0) > bessel_k0(10.0)
    zz = np.linspace(0.05, 30, 400)
    assert np.all(np.diff(bessel_k0(zz)) < 0)


def test_k0_vectorised_matches_scalar():
    zz = np.array([0.1, 1.9, 2.0, 2.1, 7.0, 60.0])
    assert np.array_equal(bessel_k0(zz), np.array([bessel_k0(z) for z in zz]))


def test_bessel_domain():
    for bad in (0.0, -1.0, np.nan):
        with pytest.raises(BesselDomainError):
            bessel_k0(bad)


def test_k1_over_k0_large_argument():
    r = k1_over_k0(np.array([800.0, 5000.0]))
    assert np.all(np.isfinite(r))
    # K1/K0 = 1 + 1/(2z) + O(z^-2)
    assert r[0] == pytest.approx(1 + 1 / 1600, rel=1e-6)
