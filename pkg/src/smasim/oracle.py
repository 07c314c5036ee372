"""Closed-form reference fields and integrability analysis.

The oracle is a one-parameter family of separable power-law deformations

    y(x) = (x1, x2 * x1**(1 - epsilon), x3 * x1**(1 + epsilon))

on the unit cube.  Every quantity the discrete pipeline produces (gradient,
cofactor, determinant, their gradients, the nonzero second-gradient
entries) has a hand-derived closed form here, so the difference operators
can be validated against an implementation that shares no code with them.
The family is also the canonical integrability stress test: the gradient
power integrals, one second-gradient entry, and the negative determinant
powers each have a sharp finite/divergent threshold in closed form.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensors
from .fields import Grid, minor_fields


@dataclass(frozen=True)
class ExampleFamily:
    """Power-law oracle family with exponent epsilon in [0, 1).

    epsilon = 0 collapses both transverse powers to the same linear
    factor, leaving the smooth bilinear map (x1, x1 x2, x1 x3); it is
    kept as a smoke case the discrete operators reproduce exactly.
    domain is the default validation sub-box, chosen away from the
    x1 = 0 singularity.
    """

    epsilon: float = 0.3
    domain: tuple = ((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(
                f"epsilon must lie in [0, 1), got {self.epsilon}")
        origin, extents = self.domain
        if len(origin) != 3 or len(extents) != 3:
            raise ValueError("domain must be ((o1,o2,o3), (e1,e2,e3))")
        if any(e <= 0 for e in extents):
            raise ValueError("domain extents must be positive")
        if any(o < 0 or o + e > 1 + 1e-12
               for o, e in zip(origin, extents)):
            raise ValueError("domain must be a sub-box of the unit cube")

    # 1-D ingredients; x may be any positive array
    def f(self, x):
        return np.power(x, 1.0 - self.epsilon)

    def f1(self, x):
        return (1.0 - self.epsilon) * np.power(x, -self.epsilon)

    def f2(self, x):
        e = self.epsilon
        return -e * (1.0 - e) * np.power(x, -1.0 - e)

    def g(self, x):
        return np.power(x, 1.0 + self.epsilon)

    def g1(self, x):
        return (1.0 + self.epsilon) * np.power(x, self.epsilon)

    def g2(self, x):
        e = self.epsilon
        return e * (1.0 + e) * np.power(x, -1.0 + e)

    def validation_grid(self, shape):
        return Grid(shape, origin=self.domain[0], extents=self.domain[1])


@dataclass(frozen=True, eq=False)
class OracleFields:
    """Closed-form fields at the evaluation points.

    Index conventions match minor_fields: grad[..., a, b] = d y_a / d x_b,
    grad_cof[..., i, j, k] = d cof_ij / d x_k.  second holds the four
    nonzero second-gradient values as a dict keyed by (component, b, c)
    for d^2 y_component / d x_b d x_c, upper triangle only.
    """

    y: np.ndarray
    grad: np.ndarray
    cof: np.ndarray
    det: np.ndarray
    grad_det: np.ndarray
    grad_cof: np.ndarray
    second: dict = field(repr=False)


def example_fields(fam, points):
    """Evaluate all closed forms of the family at the given points.

    points is any (..., 3) array of positions with positive first
    coordinate (a grid's coordinates() works directly).
    """
    X = np.asarray(points, dtype=float)
    if X.shape[-1] != 3:
        raise ValueError("points must have coordinate triples on last axis")
    x1, x2, x3 = X[..., 0], X[..., 1], X[..., 2]
    if np.any(x1 <= 0):
        raise ValueError("oracle fields need x1 > 0")
    base = X.shape[:-1]
    f, f1, f2 = fam.f(x1), fam.f1(x1), fam.f2(x1)
    g, g1, g2 = fam.g(x1), fam.g1(x1), fam.g2(x1)

    y = np.stack([x1, x2 * f, x3 * g], axis=-1)

    grad = np.zeros(base + (3, 3))
    grad[..., 0, 0] = 1.0
    grad[..., 1, 0] = x2 * f1
    grad[..., 1, 1] = f
    grad[..., 2, 0] = x3 * g1
    grad[..., 2, 2] = g

    cof = np.zeros(base + (3, 3))
    cof[..., 0, 0] = f * g
    cof[..., 0, 1] = -x2 * f1 * g
    cof[..., 0, 2] = -x3 * f * g1
    cof[..., 1, 1] = g
    cof[..., 2, 2] = f

    det = x1 * x1

    grad_det = np.zeros(base + (3,))
    grad_det[..., 0] = 2.0 * x1

    grad_cof = np.zeros(base + (3, 3, 3))
    grad_cof[..., 0, 0, 0] = 2.0 * x1
    grad_cof[..., 0, 1, 0] = -x2 * (f2 * g + f1 * g1)
    grad_cof[..., 0, 1, 1] = -f1 * g
    grad_cof[..., 0, 2, 0] = -x3 * (f1 * g1 + f * g2)
    grad_cof[..., 0, 2, 2] = -f * g1
    grad_cof[..., 1, 1, 0] = g1
    grad_cof[..., 2, 2, 0] = f1

    second = {
        (1, 0, 0): x2 * f2,
        (1, 0, 1): f1 + np.zeros(base),
        (2, 0, 0): x3 * g2,
        (2, 0, 2): g1 + np.zeros(base),
    }
    return OracleFields(y=y, grad=grad, cof=cof, det=det,
                        grad_det=grad_det, grad_cof=grad_cof, second=second)


# ---- integrability classification ------------------------------------------

# Refinement level L integrates from 10**(-2L) to 1; the graded panels keep
# monomial integrands resolved to near machine precision per level.
_DECADES_PER_LEVEL = 2
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(24)


def graded_refinement_values(integrand, levels=8, panels_per_decade=2):
    """Integrals of integrand over [10**(-2L), 1] for L = 1..levels.

    Panels are log-uniform; each is handled by Gauss-Legendre quadrature,
    which resolves power-law integrands essentially exactly.  Returns the
    nested-value sequence whose growth pattern separates finite from
    divergent integrals.
    """
    total_panels = levels * _DECADES_PER_LEVEL * panels_per_decade
    edges = np.logspace(-_DECADES_PER_LEVEL * levels, 0.0, total_panels + 1)
    a = edges[:-1, None]
    b = edges[1:, None]
    xs = 0.5 * (b - a) * _GAUSS_NODES[None, :] + 0.5 * (b + a)
    panel_vals = 0.5 * (b - a)[:, 0] * (integrand(xs) @ _GAUSS_WEIGHTS)
    tail_sums = np.cumsum(panel_vals[::-1])[::-1]
    per_level = panels_per_decade * _DECADES_PER_LEVEL
    return tuple(float(tail_sums[total_panels - L * per_level])
                 for L in range(1, levels + 1))


def _aitken(values):
    """Aitken extrapolation of a geometrically converging sequence."""
    v = values
    for last, mid, first in zip(v[::-1], v[-2::-1], v[-3::-1]):
        denom = last - 2.0 * mid + first
        if denom != 0.0:
            extrapolated = last - (last - mid) ** 2 / denom
            if np.isfinite(extrapolated):
                return float(extrapolated)
    return float(v[-1])


@dataclass(frozen=True)
class IntegralVerdict:
    """Classification of one 1-D improper integral probe."""

    quantity: str
    exponent: float | None
    values: tuple
    divergent: bool
    expected_divergent: bool
    analytic: float | None

    @property
    def numeric(self):
        return None if self.divergent else _aitken(self.values)

    @property
    def agrees(self):
        if self.divergent != self.expected_divergent:
            return False
        if self.analytic is None or self.divergent:
            return True
        return abs(self.numeric - self.analytic) <= 0.01 * abs(self.analytic)


def classify_divergence(values, growth=1.5, sustained=2):
    """Divergent iff the last `sustained` refinement ratios all exceed growth."""
    ratios = [b / a for a, b in zip(values, values[1:]) if a > 0]
    if len(ratios) < sustained:
        return False
    return all(r > growth for r in ratios[-sustained:])


def integrability_report(fam, p_probes=None, s_probes=(0.4, 0.65)):
    """Numerically classify the family's three singular integral types.

    Gradient powers int |f'|**p dx1 are finite iff p < 1/epsilon; the
    second-gradient entry int |x2 f''| dx diverges for every epsilon in
    (0, 1); the determinant powers int x1**(-2s) dx1 are finite iff
    s < 1/2.  Default p probes sit safely on both sides of the threshold;
    pass explicit probes to hit particular exponents.
    """
    e = fam.epsilon
    if not e > 0:
        raise ValueError("integrability study needs epsilon > 0")
    if p_probes is None:
        p_probes = (max(1.0, 0.75 / e), 1.35 / e)

    verdicts = []
    for p in p_probes:
        vals = graded_refinement_values(
            lambda x: np.abs(fam.f1(x)) ** p)
        finite = e * p < 1.0
        analytic = (1.0 - e) ** p / (1.0 - e * p) if finite else None
        verdicts.append(IntegralVerdict(
            quantity="gradient_power", exponent=float(p), values=vals,
            divergent=classify_divergence(vals),
            expected_divergent=not finite, analytic=analytic))

    # transverse x2 integral folded in exactly (factor 1/2)
    vals = graded_refinement_values(lambda x: 0.5 * np.abs(fam.f2(x)))
    verdicts.append(IntegralVerdict(
        quantity="second_gradient_l1", exponent=None, values=vals,
        divergent=classify_divergence(vals),
        expected_divergent=True, analytic=None))

    for s in s_probes:
        vals = graded_refinement_values(lambda x: np.power(x, -2.0 * s))
        finite = s < 0.5
        analytic = 1.0 / (1.0 - 2.0 * s) if finite else None
        verdicts.append(IntegralVerdict(
            quantity="det_negative_power", exponent=float(s), values=vals,
            divergent=classify_divergence(vals),
            expected_divergent=not finite, analytic=analytic))

    return IntegrabilityReport(epsilon=e, verdicts=tuple(verdicts))


@dataclass(frozen=True)
class IntegrabilityReport:
    epsilon: float
    verdicts: tuple

    @property
    def consistent(self):
        return all(v.agrees for v in self.verdicts)

    def lines(self):
        out = [f"integrability probes at epsilon = {self.epsilon:g}"]
        for v in self.verdicts:
            tag = "divergent" if v.divergent else "finite"
            expect = "divergent" if v.expected_divergent else "finite"
            probe = "" if v.exponent is None else f" @ {v.exponent:g}"
            res = "" if v.numeric is None else f" value {v.numeric:.6g}"
            ref = "" if v.analytic is None else f" (analytic {v.analytic:.6g})"
            ok = "ok" if v.agrees else "MISMATCH"
            out.append(f"  {v.quantity}{probe}: {tag}, expected {expect}"
                       f"{res}{ref} [{ok}]")
        return out


# ---- operator convergence ----------------------------------------------------

_FIRST_DIFFERENCE = ("gradient", "cofactor", "determinant",
                     "det_gradient", "cof_gradient")


@dataclass(frozen=True)
class ConvergenceStudy:
    """Max-norm errors of the discrete operators against the closed forms.

    Quantities the operators reproduce exactly on the family (here the
    determinant chain: the error never leaves the roundoff floor) get
    order +inf rather than a meaningless fit through noise.
    """

    shapes: tuple
    spacings: tuple
    errors: dict
    threshold: float = 1.8
    roundoff_floor: float = 1e-9

    @property
    def orders(self):
        h = np.log(self.spacings)
        out = {}
        for name, errs in self.errors.items():
            if max(errs) <= self.roundoff_floor:
                out[name] = float("inf")
            else:
                out[name] = float(np.polyfit(h, np.log(errs), 1)[0])
        return out

    @property
    def passes(self):
        return all(self.orders[name] >= self.threshold
                   for name in _FIRST_DIFFERENCE)

    def lines(self):
        out = ["operator convergence (max-norm errors, least-squares order)"]
        shapes = " / ".join("x".join(map(str, s)) for s in self.shapes)
        out.append(f"  grids: {shapes}")
        orders = self.orders
        for name, errs in self.errors.items():
            seq = "  ".join(f"{e:.3e}" for e in errs)
            if orders[name] == float("inf"):
                out.append(f"  {name:13s} {seq}  exact to roundoff [ok]")
                continue
            mark = "ok" if orders[name] >= self.threshold else "LOW"
            out.append(f"  {name:13s} {seq}  order {orders[name]:.2f} [{mark}]")
        return out


def operator_convergence_study(fam, shapes=((8, 8, 8), (16, 16, 16),
                                            (32, 32, 32))):
    """Difference every operator against the family on nested grids.

    The family's validation domain must stay away from x1 = 0, where the
    closed forms lose the smoothness the h**2 truncation analysis needs.
    """
    if fam.domain[0][0] <= 0:
        raise ValueError("convergence domain must exclude x1 = 0")
    errors = {name: [] for name in _FIRST_DIFFERENCE}
    spacings = []
    for shape in shapes:
        grid = fam.validation_grid(shape)
        X = grid.coordinates()
        oracle = example_fields(fam, X)
        mf = minor_fields(oracle.y, grid)
        spacings.append(min(grid.spacing))
        errors["gradient"].append(np.max(np.abs(mf.grad - oracle.grad)))
        errors["cofactor"].append(np.max(np.abs(mf.cof - oracle.cof)))
        errors["determinant"].append(np.max(np.abs(mf.det - oracle.det)))
        errors["det_gradient"].append(
            np.max(np.abs(mf.grad_det - oracle.grad_det)))
        errors["cof_gradient"].append(
            np.max(np.abs(mf.grad_cof - oracle.grad_cof)))
    errors = {k: tuple(float(e) for e in v) for k, v in errors.items()}
    return ConvergenceStudy(shapes=tuple(map(tuple, shapes)),
                            spacings=tuple(spacings), errors=errors)


def oracle_identity_checks(fam, n_points=10 ** 6, seed=20, tol=1e-12):
    """Random-point identities tying the closed forms to the kernels.

    The hand-written cofactor must equal the generic kernel applied to the
    hand-written gradient, and det(cof) must equal det**2, both to tol in
    relative terms.  Returns the worst relative deviations.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.05, 1.0, (n_points, 3))
    fields = example_fields(fam, X)
    cof_kernel = tensors.cofactor(fields.grad)
    scale = np.maximum(1.0, np.abs(fields.cof).max(axis=(-2, -1)))
    worst_cof = float(np.max(np.abs(cof_kernel - fields.cof)
                             / scale[..., None, None]))
    det_of_cof = tensors.determinant(fields.cof)
    worst_det = float(np.max(np.abs(det_of_cof - fields.det ** 2)
                             / np.maximum(1.0, fields.det ** 2)))
    return {"cofactor_vs_kernel": worst_cof, "det_of_cof": worst_det,
            "passes": worst_cof <= tol and worst_det <= tol}
