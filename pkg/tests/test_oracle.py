"""Closed-form oracle tests: frozen values, cross-checks, classification.

The closed forms are the reference everything else is judged against, so
they get scrutiny of their own: hand-frozen values at simple points,
finite-difference confirmation of every derivative entry, consistency
with the generic tensor kernels, and the integrability classifier gets
checked against analytic thresholds and values.
"""

import numpy as np
import pytest

from smasim import tensors
from smasim.fields import minor_fields
from smasim.oracle import (ConvergenceStudy, ExampleFamily, IntegralVerdict,
                           classify_divergence, example_fields,
                           graded_refinement_values, integrability_report,
                           operator_convergence_study, oracle_identity_checks)


def _dense_grad_cof(nonzeros, base=()):
    out = np.zeros(base + (3, 3, 3))
    for (i, j, k), v in nonzeros.items():
        out[..., i, j, k] = v
    return out


def test_fields_at_unit_point_match_hand_values():
    # at x = (1,1,1) every power collapses and the derivative factors are
    # plain multiples of epsilon
    fam = ExampleFamily(epsilon=0.3)
    o = example_fields(fam, np.array([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(o.y, [1.0, 1.0, 1.0], rtol=1e-14)
    np.testing.assert_allclose(
        o.grad, [[1.0, 0.0, 0.0], [0.7, 1.0, 0.0], [1.3, 0.0, 1.0]],
        rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(
        o.cof, [[1.0, -0.7, -1.3], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        rtol=1e-14, atol=1e-15)
    assert o.det == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(o.grad_det, [2.0, 0.0, 0.0], atol=1e-15)
    expected = _dense_grad_cof({
        (0, 0, 0): 2.0,
        (0, 1, 0): -0.7, (0, 1, 1): -0.7,
        (0, 2, 0): -1.3, (0, 2, 2): -1.3,
        (1, 1, 0): 1.3, (2, 2, 0): 0.7,
    })
    np.testing.assert_allclose(o.grad_cof, expected, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(o.second[(1, 0, 0)], -0.21, rtol=1e-14)
    np.testing.assert_allclose(o.second[(1, 0, 1)], 0.7, rtol=1e-14)
    np.testing.assert_allclose(o.second[(2, 0, 0)], 0.39, rtol=1e-14)
    np.testing.assert_allclose(o.second[(2, 0, 2)], 1.3, rtol=1e-14)


def test_fields_at_generic_point_match_frozen_values():
    # frozen against a 30-digit evaluation of the closed forms at
    # x = (0.5, 0.25, 0.8), epsilon = 0.3
    fam = ExampleFamily(epsilon=0.3)
    o = example_fields(fam, np.array([0.5, 0.25, 0.8]))
    f, g = 0.61557220667245814, 0.40612619817811776
    f1, g1 = 0.8618010893414414, 1.0559281152631062
    np.testing.assert_allclose(
        o.y, [0.5, 0.15389305166811454, 0.32490095854249421], rtol=1e-13)
    np.testing.assert_allclose(
        o.grad,
        [[1.0, 0.0, 0.0],
         [0.21545027233536035, f, 0.0],
         [0.84474249221048494, 0.0, g]],
        rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(
        o.cof,
        [[0.25, -0.0875, -0.52], [0.0, g, 0.0], [0.0, 0.0, f]],
        rtol=1e-13, atol=1e-15)
    assert o.det == pytest.approx(0.25, rel=1e-14)
    np.testing.assert_allclose(o.grad_det, [1.0, 0.0, 0.0], atol=1e-15)
    expected = _dense_grad_cof({
        (0, 0, 0): 1.0,
        (0, 1, 0): -0.175, (0, 1, 1): -0.35,
        (0, 2, 0): -1.04, (0, 2, 2): -0.65,
        (1, 1, 0): g1, (2, 2, 0): f1,
    })
    np.testing.assert_allclose(o.grad_cof, expected, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(o.second[(1, 0, 0)], -0.12927016340121621,
                               rtol=1e-13)
    np.testing.assert_allclose(o.second[(1, 0, 1)], f1, rtol=1e-13)
    np.testing.assert_allclose(o.second[(2, 0, 0)], 0.50684549532629097,
                               rtol=1e-13)
    np.testing.assert_allclose(o.second[(2, 0, 2)], g1, rtol=1e-13)


def test_derivative_entries_match_finite_differences():
    """Every closed-form derivative is confirmed by central differences.

    This catches sign and index-convention slips that pointwise frozen
    values at symmetric points can miss.
    """
    fam = ExampleFamily(epsilon=0.3)
    rng = np.random.default_rng(3)
    X = rng.uniform(0.3, 0.95, (200, 3))
    o = example_fields(fam, X)
    h = 1e-5
    fd_grad = np.zeros_like(o.grad)
    fd_grad_det = np.zeros_like(o.grad_det)
    fd_grad_cof = np.zeros_like(o.grad_cof)
    fd_second = {}
    for k in range(3):
        dx = np.zeros(3)
        dx[k] = h
        plus = example_fields(fam, X + dx)
        minus = example_fields(fam, X - dx)
        fd_grad[..., k] = (plus.y - minus.y) / (2 * h)
        fd_grad_det[..., k] = (plus.det - minus.det) / (2 * h)
        fd_grad_cof[..., k] = (plus.cof - minus.cof) / (2 * h)
        fd_second[k] = (plus.grad - minus.grad) / (2 * h)

    np.testing.assert_allclose(fd_grad, o.grad, rtol=1e-7, atol=1e-8)
    np.testing.assert_allclose(fd_grad_det, o.grad_det, rtol=1e-7, atol=1e-8)
    np.testing.assert_allclose(fd_grad_cof, o.grad_cof, rtol=5e-6, atol=1e-7)
    # the second-gradient dict must list exactly the nonzero entries
    for a in range(3):
        for b in range(3):
            for c in range(b, 3):
                want = o.second.get((a, b, c), np.zeros(len(X)))
                np.testing.assert_allclose(
                    fd_second[c][..., a, b], want, rtol=5e-6, atol=1e-7,
                    err_msg=f"second derivative entry ({a},{b},{c})")


def test_closed_forms_agree_with_generic_kernels():
    checks = oracle_identity_checks(ExampleFamily(epsilon=0.3),
                                    n_points=10 ** 5, seed=7)
    assert checks["passes"]
    assert checks["cofactor_vs_kernel"] <= 1e-12
    assert checks["det_of_cof"] <= 1e-12


def test_determinant_chain_is_exact_under_discrete_operators():
    # grad row 0 and the four entries feeding the determinant are linear
    # or constant in the differenced direction, so the discrete cofactor
    # route reproduces x1^2 and its gradient to roundoff
    fam = ExampleFamily(epsilon=0.3)
    grid = fam.validation_grid((9, 7, 8))
    o = example_fields(fam, grid.coordinates())
    mf = minor_fields(o.y, grid)
    np.testing.assert_allclose(mf.det, o.det, rtol=1e-13)
    np.testing.assert_allclose(mf.grad_det, o.grad_det, atol=1e-10)


def test_epsilon_zero_member_is_reproduced_exactly():
    # the bilinear member (x1, x1 x2, x1 x3) is inside the polynomial
    # exactness range of every operator in the chain
    fam = ExampleFamily(epsilon=0.0, domain=((0.05, 0.05, 0.05),
                                             (0.9, 0.9, 0.9)))
    grid = fam.validation_grid((6, 6, 6))
    o = example_fields(fam, grid.coordinates())
    mf = minor_fields(o.y, grid)
    np.testing.assert_allclose(mf.grad, o.grad, atol=1e-12)
    np.testing.assert_allclose(mf.cof, o.cof, atol=1e-12)
    np.testing.assert_allclose(mf.det, o.det, atol=1e-12)
    np.testing.assert_allclose(mf.grad_det, o.grad_det, atol=1e-10)
    np.testing.assert_allclose(mf.grad_cof, o.grad_cof, atol=1e-10)
    assert not o.second[(1, 0, 0)].any()
    assert not o.second[(2, 0, 0)].any()


def test_graded_quadrature_reproduces_analytic_power_integral():
    vals = graded_refinement_values(lambda x: x ** -0.8)
    assert not classify_divergence(vals)
    v = IntegralVerdict(quantity="probe", exponent=None, values=vals,
                        divergent=False, expected_divergent=False,
                        analytic=5.0)
    assert v.agrees
    assert v.numeric == pytest.approx(5.0, rel=1e-6)


def test_graded_quadrature_flags_power_divergence():
    vals = graded_refinement_values(lambda x: x ** -1.2)
    assert classify_divergence(vals)
    v = IntegralVerdict(quantity="probe", exponent=None, values=vals,
                        divergent=True, expected_divergent=True,
                        analytic=None)
    assert v.agrees
    assert v.numeric is None


def test_classifier_needs_sustained_growth():
    assert not classify_divergence((1.0, 1.1))
    assert not classify_divergence((1.0, 4.0, 4.1))
    assert not classify_divergence((2.0, 2.0, 2.0, 2.0))
    assert classify_divergence((1.0, 4.0, 16.0, 64.0))


@pytest.mark.parametrize("epsilon", [0.1, 0.3, 0.5, 0.7])
def test_integrability_thresholds_across_family(epsilon):
    report = integrability_report(ExampleFamily(epsilon=epsilon))
    assert report.consistent, "\n".join(report.lines())
    flags = [v.divergent for v in report.verdicts]
    # probes straddle each threshold: finite gradient power, divergent
    # gradient power, divergent second-gradient L1, finite and divergent
    # negative determinant powers
    assert flags == [False, True, True, False, True]
    assert not any("MISMATCH" in line for line in report.lines())


def test_explicit_probes_match_analytic_values():
    report = integrability_report(ExampleFamily(epsilon=0.3),
                                  p_probes=(3.0,), s_probes=(0.4,))
    assert report.consistent
    grad_power, _, det_power = report.verdicts
    assert grad_power.analytic == pytest.approx(3.43, rel=1e-12)
    assert grad_power.numeric == pytest.approx(3.43, rel=1e-6)
    assert det_power.analytic == pytest.approx(5.0, rel=1e-12)
    assert det_power.numeric == pytest.approx(5.0, rel=1e-6)


def test_operator_convergence_study_passes():
    study = operator_convergence_study(ExampleFamily(epsilon=0.3))
    orders = study.orders
    assert study.passes, "\n".join(study.lines())
    for name in ("gradient", "cofactor", "cof_gradient"):
        assert 1.8 <= orders[name] <= 3.5
    assert orders["determinant"] == float("inf")
    assert orders["det_gradient"] == float("inf")
    text = "\n".join(study.lines())
    assert text.count("exact to roundoff") == 2
    assert "LOW" not in text


def test_convergence_study_order_fit_and_threshold():
    spacings = (0.1, 0.05, 0.025)
    quadratic = tuple(h * h for h in spacings)
    linear = spacings
    errors = {name: quadratic for name in
              ("gradient", "cofactor", "determinant", "det_gradient")}
    good = ConvergenceStudy(shapes=((4,) * 3,) * 3, spacings=spacings,
                            errors={**errors, "cof_gradient": quadratic})
    assert good.orders["gradient"] == pytest.approx(2.0, abs=1e-12)
    assert good.passes
    slow = ConvergenceStudy(shapes=((4,) * 3,) * 3, spacings=spacings,
                            errors={**errors, "cof_gradient": linear})
    assert not slow.passes
    assert "LOW" in "\n".join(slow.lines())


def test_family_and_probe_validation():
    with pytest.raises(ValueError):
        ExampleFamily(epsilon=1.0)
    with pytest.raises(ValueError):
        ExampleFamily(epsilon=-0.1)
    with pytest.raises(ValueError):
        ExampleFamily(domain=((0.5, 0.5, 0.5), (0.75, 0.5, 0.5)))
    with pytest.raises(ValueError):
        ExampleFamily(domain=((0.25, 0.25, 0.25), (-0.5, 0.5, 0.5)))
    with pytest.raises(ValueError):
        integrability_report(ExampleFamily(epsilon=0.0))
    fam = ExampleFamily(epsilon=0.3)
    with pytest.raises(ValueError):
        example_fields(fam, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        example_fields(fam, np.array([0.0, 0.5, 0.5]))
    touching = ExampleFamily(epsilon=0.3,
                             domain=((0.0, 0.1, 0.1), (0.5, 0.5, 0.5)))
    with pytest.raises(ValueError):
        operator_convergence_study(touching)


def test_validation_grid_covers_the_declared_sub_box():
    fam = ExampleFamily(epsilon=0.3)
    grid = fam.validation_grid((5, 5, 5))
    X = grid.coordinates()
    np.testing.assert_allclose(X[0, 0, 0], fam.domain[0])
    np.testing.assert_allclose(
        X[-1, -1, -1], np.add(fam.domain[0], fam.domain[1]))
