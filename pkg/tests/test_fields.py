"""Grid-operator and geometry-certificate tests.

The difference/quadrature pairing claims below are exact statements
(polynomial exactness, discrete integration by parts), so they are tested
to near machine precision, not with loose tolerances.
"""

import numpy as np
import pytest

from smasim import fields
from smasim.errors import NonPositiveDeterminant, TraceError
from smasim.fields import (DeformationField, Grid, cell_overlap_check,
                           derivative, derivative_adjoint, difference_matrix,
                           distortion_norm, gradient_of_map, integrate,
                           minor_fields, quadrature_weights_1d, read_field,
                           volume_comparison, write_field)


@pytest.mark.parametrize("n", [3, 4, 5, 8, 17])
def test_difference_matrix_exact_on_quadratics(n):
    h = 1.0 / (n - 1)
    D = difference_matrix(n, h)
    x = np.linspace(0.0, 1.0, n)
    np.testing.assert_allclose(D @ np.ones(n), 0.0, atol=1e-13)
    np.testing.assert_allclose(D @ x, 1.0, atol=1e-13)
    np.testing.assert_allclose(D @ x**2, 2 * x, atol=1e-12)


@pytest.mark.parametrize("n", [4, 6, 9])
def test_boundary_closure_error_matches_interior(n):
    # on x^3 the central stencil errs by exactly +h^2; the one-sided rows
    # are built to share that coefficient
    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    err = difference_matrix(n, h) @ x**3 - 3 * x**2
    np.testing.assert_allclose(err, h * h, rtol=1e-9)


@pytest.mark.parametrize("n", [3, 4, 5, 6, 8, 17, 33])
def test_quadrature_pairs_with_difference(n):
    # sum_i w_i (Du)_i == u[-1] - u[0] for all u  <=>  D^T w = e_last - e_first
    h = 0.37
    D = difference_matrix(n, h)
    w = quadrature_weights_1d(n, h)
    target = np.zeros(n)
    target[0], target[-1] = -1.0, 1.0
    np.testing.assert_allclose(D.T @ w, target, atol=1e-13)


@pytest.mark.parametrize("n", [3, 4, 5, 8, 33])
def test_quadrature_total_and_linear_exactness(n):
    h = 1.0 / (n - 1)
    w = quadrature_weights_1d(n, h)
    x = np.linspace(0.0, 1.0, n)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert w @ x == pytest.approx(0.5, abs=1e-14)


def test_quadrature_second_order_on_smooth_integrand():
    errs = []
    for n in (9, 17, 33):
        x = np.linspace(0.0, 1.0, n)
        w = quadrature_weights_1d(n, 1.0 / (n - 1))
        errs.append(abs(w @ np.exp(x) - (np.e - 1.0)))
    rate = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
    assert min(rate) > 1.8


def test_derivative_adjoint_is_transpose():
    grid = Grid((6, 5, 7), extents=(1.0, 2.0, 0.5))
    rng = np.random.default_rng(3)
    f = rng.standard_normal(grid.shape)
    g = rng.standard_normal(grid.shape)
    for axis in range(3):
        lhs = np.sum(derivative(f, grid, axis) * g)
        rhs = np.sum(f * derivative_adjoint(g, grid, axis))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gradient_of_affine_map_is_exact():
    grid = Grid((6, 7, 5), extents=(1.0, 1.3, 0.8))
    A = np.array([[1.1, 0.2, 0.0], [0.0, 0.9, -0.3], [0.1, 0.0, 1.2]])
    b = np.array([0.3, -0.1, 0.0])
    y = np.einsum("ij,...j->...i", A, grid.coordinates()) + b
    mf = minor_fields(y, grid)
    np.testing.assert_allclose(mf.grad, np.broadcast_to(A, mf.grad.shape), atol=1e-11)
    np.testing.assert_allclose(mf.grad_cof, 0.0, atol=1e-10)
    np.testing.assert_allclose(mf.grad_det, 0.0, atol=1e-11)


def test_minor_fields_exact_on_quadratic_shear():
    # y = (x1 + a x2^2, x2, x3): quadratic, so every difference is exact.
    # F = [[1, 2 a x2, 0], [0, 1, 0], [0, 0, 1]], det = 1,
    # cof = [[1, 0, 0], [-2 a x2, 1, 0], [0, 0, 1]], d(cof_21)/dx2 = -2a.
    a = 0.3
    grid = Grid((5, 6, 4))
    X = grid.coordinates()
    y = X.copy()
    y[..., 0] += a * X[..., 1] ** 2
    mf = minor_fields(y, grid)
    np.testing.assert_allclose(mf.det, 1.0, atol=1e-12)
    np.testing.assert_allclose(mf.grad[..., 0, 1], 2 * a * X[..., 1], atol=1e-12)
    np.testing.assert_allclose(mf.cof[..., 1, 0], -2 * a * X[..., 1], atol=1e-12)
    expected = np.zeros(grid.shape + (3, 3, 3))
    expected[..., 1, 0, 1] = -2 * a
    np.testing.assert_allclose(mf.grad_cof, expected, atol=1e-11)
    np.testing.assert_allclose(mf.grad_det, 0.0, atol=1e-11)


def test_integrate_matches_volume():
    grid = Grid((5, 9, 6), extents=(2.0, 1.0, 0.5))
    assert integrate(np.ones(grid.shape), grid) == pytest.approx(grid.volume)
    mf = minor_fields(grid.coordinates(), grid)
    assert integrate(mf.det, grid) == pytest.approx(grid.volume, rel=1e-13)


def test_volume_comparison_identity_and_affine():
    grid = Grid((8, 8, 8))
    rep = volume_comparison(grid.coordinates(), grid)
    assert rep.integral_det == pytest.approx(1.0, rel=1e-12)
    assert abs(rep.residual) <= rep.error_bound
    assert rep.consistent

    y = grid.coordinates() @ np.diag([1.3, 1.0, 0.8]).T
    rep = volume_comparison(y, grid)
    assert rep.integral_det == pytest.approx(1.04, rel=1e-12)
    assert abs(rep.residual) <= rep.error_bound


def test_volume_comparison_requires_orientation():
    grid = Grid((4, 4, 4))
    y = grid.coordinates().copy()
    y[..., 0] *= -1.0
    with pytest.raises(NonPositiveDeterminant):
        volume_comparison(y, grid)


def wrap_fold(grid, alpha=3 * np.pi, r0=0.5):
    """Orientation-preserving overwrap: det = alpha (r0 + x2) > 0, but the
    angular range alpha > 2 pi makes the image cover part of the annulus
    twice.  Analytic image volume = pi (r_out^2 - r_in^2) per unit height."""
    X = grid.coordinates()
    R = r0 + X[..., 1]
    th = alpha * X[..., 0]
    return np.stack([R * np.sin(th), R * np.cos(th), X[..., 2]], axis=-1)


def test_volume_comparison_detects_folding():
    grid = Grid((16, 16, 16))
    y = wrap_fold(grid)
    rep = volume_comparison(y, grid)
    # analytic: integral 3 pi, image 2 pi, folded sheet volume pi; the
    # discrete integral is damped, but well over a quarter of the folded
    # volume must survive
    assert rep.residual >= 0.25 * np.pi
    assert not rep.consistent


def test_distortion_norm_scaling_invariance_value():
    # |c I|^3 / det(c I) = 3 sqrt(3) for every c > 0
    grid = Grid((6, 6, 6))
    for c in (1.0, 2.0):
        y = c * grid.coordinates()
        assert distortion_norm(y, grid, delta=3.0) == pytest.approx(
            3.0 * np.sqrt(3.0), rel=1e-12)


def test_distortion_norm_guards():
    grid = Grid((4, 4, 4))
    with pytest.raises(ValueError):
        distortion_norm(grid.coordinates(), grid, delta=2.0)
    y = grid.coordinates().copy()
    y[..., 0] *= -1.0
    with pytest.raises(NonPositiveDeterminant):
        distortion_norm(y, grid, delta=3.0)


def test_cell_overlap_clean_for_identity_and_stretch():
    grid = Grid((8, 8, 8))
    rep = cell_overlap_check(grid.coordinates(), grid)
    assert rep.injective and rep.count == 0
    y = grid.coordinates() @ np.diag([1.4, 0.9, 1.1]).T
    assert cell_overlap_check(y, grid).count == 0


def test_cell_overlap_detects_planted_collision():
    # teleport the far corner cell onto the origin cell (they share no node)
    grid = Grid((4, 4, 4))
    y = grid.coordinates().copy()
    y[2:, 2:, 2:] -= 2.0 / 3.0
    rep = cell_overlap_check(y, grid)
    assert rep.count >= 1
    assert ((0, 0, 0), (2, 2, 2)) in rep.overlaps


def test_cell_overlap_detects_wrap_fold():
    grid = Grid((8, 8, 8))
    rep = cell_overlap_check(wrap_fold(grid), grid)
    assert rep.count >= 1


def test_field_io_round_trip(tmp_path):
    grid = Grid((5, 4, 6), origin=(0.25, 0.0, -1.0), extents=(0.75, 1.0, 2.0))
    rng = np.random.default_rng(8)
    y = rng.standard_normal(grid.shape + (3,))
    path = tmp_path / "field.bin"
    write_field(path, y, grid)
    back, grid2 = read_field(path)
    assert grid2 == grid
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, y)  # bitwise
    # scalar fields round-trip too
    write_field(path, y[..., 0], grid)
    back, _ = read_field(path)
    np.testing.assert_array_equal(back, y[..., 0])


def test_field_io_rejects_corruption(tmp_path):
    grid = Grid((4, 4, 4))
    path = tmp_path / "field.bin"
    write_field(path, grid.coordinates(), grid)
    data = path.read_bytes()
    path.write_bytes(data[:-16])  # truncate payload
    with pytest.raises(TraceError):
        read_field(path)
    path.write_bytes(b"garbage" + data)
    with pytest.raises(TraceError):
        read_field(path)


def test_grid_and_field_validation():
    with pytest.raises(ValueError):
        Grid((2, 4, 4))
    with pytest.raises(ValueError):
        Grid((4, 4, 4), extents=(0.0, 1.0, 1.0))
    grid = Grid((4, 4, 4))
    with pytest.raises(ValueError):
        DeformationField(grid, np.zeros((4, 4, 3, 3)), np.zeros(grid.shape, bool))
    ident = DeformationField.identity(grid)
    np.testing.assert_array_equal(ident.values, grid.coordinates())
    assert not ident.dirichlet_mask.any()
