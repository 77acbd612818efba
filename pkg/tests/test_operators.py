import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from dynbc.geometry import ArcSpec, DomainSpec, build_mesh
from dynbc.operators import (CoupledField, assemble_operator, elliptic_residuals,
                             elliptic_solve, export_sparse_coo, h2_norm, inner_l2,
                             norm_l2)
from dynbc.rng import SplitMix64


def interval_op(n=8, d=1.0, size=1.0):
    mesh = build_mesh(DomainSpec(kind="interval", size=size, n=n))
    return mesh, assemble_operator(mesh, d=d)


def disk_op(n_r=4, n_theta=8, d=1.0, delta=0.5):
    mesh = build_mesh(DomainSpec(kind="disk", n_r=n_r, n_theta=n_theta,
                                 gamma=ArcSpec(0.0, 1.0), gamma0=ArcSpec(0.0, 2.0)))
    return mesh, assemble_operator(mesh, d=d, delta=delta)


def test_constants_are_equilibria():
    for mesh, op in (interval_op(n=8), disk_op()):
        ones = np.ones(mesh.n_nodes)
        scale = max(abs(op.A).max(), 1.0)
        assert np.abs(op.apply_A(ones)).max() <= 1e-12 * scale


def test_weighted_matrix_symmetry():
    mesh, op = disk_op(n_r=4, n_theta=8)
    assert op.sym_defect <= 1e-12
    asym = spla.norm(op.MA - op.MA.T, np.inf)
    assert asym <= 1e-12 * spla.norm(op.MA, np.inf)


def test_inner_product_examples():
    mesh, _ = interval_op()
    ones = CoupledField.constant(mesh, 1.0)
    assert inner_l2(mesh, ones, ones) == pytest.approx(3.0, rel=1e-14)
    dmesh, _ = disk_op()
    dones = CoupledField.constant(dmesh, 1.0)
    assert inner_l2(dmesh, dones, dones) == pytest.approx(3 * np.pi, rel=1e-12)


def test_inner_product_symmetric():
    mesh, _ = interval_op(n=16)
    rng = SplitMix64(1)
    for _ in range(5):
        Y = CoupledField(bulk=rng.normals(mesh.n_nodes), boundary=rng.normals(2))
        Z = CoupledField(bulk=rng.normals(mesh.n_nodes), boundary=rng.normals(2))
        assert inner_l2(mesh, Y, Z) == inner_l2(mesh, Z, Y)


def test_generator_self_adjoint_on_random_pairs():
    mesh, op = disk_op(n_r=3, n_theta=12)
    rng = SplitMix64(2)
    anorm = abs(op.MA).max()
    for _ in range(100):
        y = rng.normals(mesh.n_nodes)
        z = rng.normals(mesh.n_nodes)
        lhs = op.m_inner(op.apply_A(y), z)
        rhs = op.m_inner(y, op.apply_A(z))
        tol = 1e-10 * max(np.linalg.norm(y) * np.linalg.norm(z) * anorm, 1.0)
        assert abs(lhs - rhs) <= tol


def test_dissipativity_energy_identity():
    # <A y, y> equals minus the weighted Dirichlet energies, exactly
    for mesh, op in (interval_op(n=12, d=2.0), disk_op(d=1.5, delta=0.7)):
        rng = SplitMix64(3)
        for _ in range(20):
            y = rng.normals(mesh.n_nodes)
            quad = op.m_inner(op.apply_A(y), y)
            bulk, surf = op.dirichlet_energy(y)
            expected = -op.d * bulk - op.delta * surf
            assert quad <= 1e-10 * max(abs(expected), 1.0)
            assert quad == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_dense_spectrum_oracle():
    mesh, op = interval_op(n=4)
    w = sla.eigh(op.MA.toarray(), np.diag(op.M), eigvals_only=True)
    # kernel is the constants, all other eigenvalues strictly negative
    assert w.max() == pytest.approx(0.0, abs=1e-12)
    assert np.sort(w)[-2] < -1e-8
    # smallest-magnitude nonzero eigenvalue vs an independently built pencil
    h = 0.25
    K = np.zeros((5, 5))
    for i in range(4):  # assemble the Dirichlet form from first principles
        e = np.zeros(5)
        e[i], e[i + 1] = -1.0, 1.0
        K += np.outer(e, e) / h
    M = np.diag(mesh.w_bulk + np.concatenate(([1.0], np.zeros(3), [1.0])))
    w_ref = sla.eigh(-K, M, eigvals_only=True)
    assert np.sort(w)[-2] == pytest.approx(np.sort(w_ref)[-2], abs=1e-10)


def test_dense_spectrum_nonpositive_n16():
    _, op = interval_op(n=16)
    w = sla.eigh(op.MA.toarray(), np.diag(op.M), eigvals_only=True)
    assert np.all(w <= 1e-10)


def test_elliptic_trivial_cases():
    mesh, op = interval_op(n=8)
    u0 = elliptic_solve(op, np.zeros(mesh.n_nodes), np.zeros(2))
    assert np.abs(u0.bulk).max() <= 1e-14
    u1 = elliptic_solve(op, np.zeros(mesh.n_nodes), -np.ones(2))
    assert np.allclose(u1.bulk, 1.0, atol=1e-12)
    assert np.allclose(u1.boundary, 1.0, atol=1e-12)


def test_elliptic_matches_dense_solve():
    mesh, op = interval_op(n=16)
    rng = SplitMix64(4)
    f = rng.normals(mesh.n_nodes)
    g = rng.normals(2)
    u = elliptic_solve(op, f, g)
    # dense oracle: same weak system, dense LU
    E = np.zeros((mesh.n_nodes,) * 2)
    for j, b in enumerate(mesh.boundary_idx):
        E[b, b] = mesh.w_surf[j]
    lhs = op.MA.toarray() - E
    rhs = op.M_omega * f
    rhs[mesh.boundary_idx] += op.M_gamma * g
    ref = np.linalg.solve(lhs, rhs)
    assert np.abs(u.to_dof(mesh) - ref).max() <= 1e-10 * max(np.abs(ref).max(), 1.0)
    rb, rg = elliptic_residuals(op, u, f, g)
    assert rb <= 1e-10 and rg <= 1e-10


def test_elliptic_disk_residuals():
    mesh, op = disk_op(n_r=4, n_theta=16)
    rng = SplitMix64(5)
    f = rng.normals(mesh.n_nodes)
    g = rng.normals(mesh.n_bdry)
    u = elliptic_solve(op, f, g)
    rb, rg = elliptic_residuals(op, u, f, g)
    assert rb <= 1e-10 and rg <= 1e-10


def test_elliptic_regularity_ratio_bounded():
    # second-order-norm amplification across random data stays bounded
    mesh, op = interval_op(n=16)
    rng = SplitMix64(6)
    ratios = []
    for _ in range(20):
        f = rng.normals(mesh.n_nodes)
        g = rng.normals(2)
        u = elliptic_solve(op, f, g)
        data = np.sqrt(np.dot(mesh.w_bulk, f**2) + np.dot(mesh.w_surf, g**2))
        ratios.append(h2_norm(op, u) / data)
    assert all(np.isfinite(r) for r in ratios)
    print(f"\nelliptic second-order amplification: max {max(ratios):.3f} "
          f"over 20 draws")


def test_field_projection():
    mesh, _ = interval_op(n=8)
    Y = CoupledField(bulk=np.arange(9.0), boundary=np.array([100.0, 200.0]))
    dof = Y.to_dof(mesh)
    assert dof[0] == 100.0 and dof[-1] == 200.0
    back = CoupledField.from_dof(mesh, dof)
    assert np.array_equal(back.boundary, [100.0, 200.0])
    assert norm_l2(mesh, back) > 0


def test_sparse_coo_export_sorted():
    _, op = interval_op(n=6)
    header, rows = export_sparse_coo(op.MA)
    assert header == ["row", "col", "value"]
    keys = [(r, c) for r, c, _ in rows]
    assert keys == sorted(keys)


def test_invalid_coefficients_rejected():
    mesh = build_mesh(DomainSpec(kind="interval", n=8))
    with pytest.raises(ValueError, match="diffusivity"):
        assemble_operator(mesh, d=0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        assemble_operator(mesh, d=1.0, delta=-1.0)
