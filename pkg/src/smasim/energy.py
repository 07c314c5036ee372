"""Energy assembly: stored + dissipated - external work on the node grid.

The discrete stored energy is quadrature over nodes of the constitutive
density evaluated on the minor fields of the gradient (see fields module).
Its gradient with respect to nodal positions is assembled by chaining the
transposed difference operators through the same three routes the value
takes:

    direct F-route:        node weight * dPhi/dF
    cofactor-gradient:     Dcof(G)^T applied to the adjoint-differenced
                           sensitivity of |grad cof|^q
    determinant-gradient:  cof(G) scaled by the adjoint-differenced
                           sensitivity of |grad det|^r

Because the quadrature weights satisfy D^T w = e_last - e_first per axis,
states with spatially uniform gradient produce exactly zero force at every
interior node: uniform phases are genuine discrete equilibria, and gradient
checks do not have to fight O(h^0) boundary garbage.

Time enters through a dead body load b(t) . y and through Dirichlet data
y_D(t, x) = x + s(t) (G x + c) on selected box faces.  The partial time
derivative of the reduced energy (interior degrees of freedom frozen) is

    dE/dt = -s_b'(t) integral(b0 . y)  +  sum_{constrained nodes} g . v

with g the unmasked energy gradient (the discrete reaction force) and v
the Dirichlet velocity.  That identity is what the two-sided energy
certificates integrate.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensors
from .fields import derivative_adjoint, integrate, minor_fields

FACE_NAMES = ("x0", "x1", "y0", "y1", "z0", "z1")


@dataclass(frozen=True)
class PiecewiseLinearProfile:
    """Piecewise-linear scalar schedule s(t), clamped outside its knots."""

    times: tuple
    values: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        v = tuple(float(v) for v in self.values)
        if len(t) != len(v) or len(t) < 1:
            raise ValueError("profile needs matching, nonempty knot lists")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("profile knots must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (float(value),))

    @classmethod
    def ramp(cls, horizon, start=0.0, end=1.0):
        return cls((0.0, float(horizon)), (float(start), float(end)))

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))

    def derivative(self, t):
        """Right-sided slope; zero outside the knot span."""
        ts = self.times
        if t < ts[0] or t >= ts[-1]:
            return 0.0
        i = int(np.searchsorted(ts, t, side="right")) - 1
        return (self.values[i + 1] - self.values[i]) / (ts[i + 1] - ts[i])

    def breakpoints_between(self, a, b):
        return tuple(t for t in self.times if a < t < b)


@dataclass(frozen=True, eq=False)
class LoadingProgram:
    """Dead body load plus affine Dirichlet motion on box faces.

    Body force density: s_b(t) * body_force.
    Dirichlet data on the named faces: x + s_d(t) * (matrix @ x + shift).
    """

    body_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    body_profile: PiecewiseLinearProfile = PiecewiseLinearProfile.constant(1.0)
    dirichlet_faces: tuple = ()
    dirichlet_matrix: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dirichlet_shift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dirichlet_profile: PiecewiseLinearProfile = PiecewiseLinearProfile.constant(0.0)

    def __post_init__(self):
        object.__setattr__(self, "body_force",
                           np.asarray(self.body_force, dtype=float).reshape(3))
        object.__setattr__(self, "dirichlet_matrix",
                           np.asarray(self.dirichlet_matrix, dtype=float).reshape(3, 3))
        object.__setattr__(self, "dirichlet_shift",
                           np.asarray(self.dirichlet_shift, dtype=float).reshape(3))
        faces = tuple(self.dirichlet_faces)
        for f in faces:
            if f not in FACE_NAMES:
                raise ValueError(f"unknown face {f!r}; use one of {FACE_NAMES}")
        object.__setattr__(self, "dirichlet_faces", faces)

    def dirichlet_mask(self, grid):
        mask = np.zeros(grid.shape, dtype=bool)
        for f in self.dirichlet_faces:
            axis = "xyz".index(f[0])
            index = 0 if f[1] == "0" else -1
            sl = [slice(None)] * 3
            sl[axis] = index
            mask[tuple(sl)] = True
        return mask

    def dirichlet_values(self, t, grid):
        """Boundary positions at time t, evaluated on the whole grid."""
        X = grid.coordinates()
        s = self.dirichlet_profile(t)
        return X + s * (X @ self.dirichlet_matrix.T + self.dirichlet_shift)

    def dirichlet_velocity(self, t, grid):
        X = grid.coordinates()
        sdot = self.dirichlet_profile.derivative(t)
        return sdot * (X @ self.dirichlet_matrix.T + self.dirichlet_shift)

    def body_force_at(self, t):
        return self.body_profile(t) * self.body_force

    def apply_dirichlet(self, t, y, grid):
        """Overwrite constrained nodes of y with the program values (in place)."""
        mask = self.dirichlet_mask(grid)
        y[mask] = self.dirichlet_values(t, grid)[mask]
        return y

    def time_breakpoints(self, a, b):
        pts = set(self.body_profile.breakpoints_between(a, b))
        pts.update(self.dirichlet_profile.breakpoints_between(a, b))
        return tuple(sorted(pts))


@dataclass(frozen=True)
class SmoothingParams:
    """Solver smoothing: softmin temperature for the wells, Huber width for
    the dissipation.  (0, 0) reproduces the exact nonsmooth objective."""

    tau: float = 1e-3
    eta: float = 1e-5


@dataclass(frozen=True)
class EnergyBreakdown:
    well: float
    regularizer: float
    load: float

    @property
    def stored(self):
        return self.well + self.regularizer

    @property
    def total(self):
        return self.stored - self.load


def external_work(t, y, grid, program):
    """L(t, y) = integral of s_b(t) b0 . y."""
    b = program.body_force_at(t)
    if not b.any():
        return 0.0
    return integrate(np.einsum("...i,i->...", y, b), grid)


def stored_energy_breakdown(y, grid, mat):
    """(well integral, regularizer integral); +inf if orientation fails."""
    mf = minor_fields(y, grid)
    if mf.min_det <= 0.0:
        return np.inf, np.inf
    well, _ = mat.multiwell_energy(mf.grad)
    reg = mat.regularizer_density(mf.grad, mf.grad_cof, mf.grad_det)
    return integrate(well, grid), integrate(reg, grid)


def total_energy(t, y, grid, mat, program):
    well, reg = stored_energy_breakdown(y, grid, mat)
    return EnergyBreakdown(well, reg, external_work(t, y, grid, program))


def internal_state(y, grid, mat):
    """Phase fractions slaved to the deformation, shape (n1, n2, n3, phases)."""
    mf = minor_fields(y, grid)
    return mat.volume_fractions(mf.grad)


def dissipation_functional(z_new, z_old, grid, mat):
    """Domain integral of the weighted l1 phase distance."""
    return integrate(mat.dissipation_density(z_new, z_old), grid)


def _power_safe(base, expo):
    """base**expo with base clamped away from 0 where the result multiplies
    a vanishing factor anyway (avoids 0**negative)."""
    if expo >= 0:
        return base ** expo
    return np.where(base > 0, base, 1.0) ** expo


def incremental_energy(t, y, z_prev, grid, mat, program,
                       smoothing=SmoothingParams(0.0, 0.0),
                       gradient=False, mask=None):
    """Smoothed incremental value, optionally with its nodal gradient.

    value = integral[ softmin-well + regularizer + Huber-dissipation ]
            - external work.

    With smoothing == (0, 0) this is the exact objective of one time
    increment (hard minimum over wells, exact l1 dissipation).  The
    smoothed value never exceeds the exact one.  If det(grad y) <= 0
    anywhere the value is +inf and the gradient is not computed.
    z_prev=None drops the dissipation term entirely (stored - load only).

    mask: boolean array of constrained nodes whose gradient entries are
    zeroed; pass None to keep the raw gradient (used for reaction forces).
    """
    y = np.asarray(y)
    mf = minor_fields(y, grid)
    if mf.min_det <= 0.0:
        return (np.inf, None) if gradient else np.inf
    G, det, cof = mf.grad, mf.det, mf.cof
    W = grid.node_weights()
    eps, p, q, r, s = mat.eps_reg, mat.p, mat.q, mat.r, mat.s

    wellval, sigma = mat.softmin_energy(G, smoothing.tau)
    nF2 = np.sum(G * G, axis=(-2, -1))
    nC2 = np.sum(cof * cof, axis=(-2, -1))
    n1sq = np.sum(mf.grad_cof ** 2, axis=(-3, -2, -1))
    n2sq = np.sum(mf.grad_det ** 2, axis=-1)
    reg = eps * (nF2 ** (p / 2) + nC2 ** (q / 2) + det ** r + det ** (-s)
                 + n1sq ** (q / 2) + n2sq ** (r / 2))

    density = wellval + reg
    if z_prev is not None:
        if gradient:
            lam, dlam = mat.volume_fractions_with_gradient(G)
        else:
            lam = mat.volume_fractions(G)
        density = density + mat.huber_dissipation_density(lam, z_prev, smoothing.eta)

    b = program.body_force_at(t)
    value = integrate(density, grid) \
        - integrate(np.einsum("...i,i->...", y, b), grid)
    if not gradient:
        return value

    # route 1: direct dPhi/dF at each node
    A = np.einsum("...m,...mij->...ij", sigma, mat.well_energy_gradients(G))
    A += eps * p * _power_safe(nF2, p / 2 - 1)[..., None, None] * G
    A += eps * q * _power_safe(nC2, q / 2 - 1)[..., None, None] \
        * tensors.cofactor_derivative(G, cof)
    A += (eps * (r * det ** (r - 1) - s * det ** (-s - 1)))[..., None, None] * cof
    if z_prev is not None:
        dd = mat.huber_dissipation_gradient(lam, z_prev, smoothing.eta)
        A += np.einsum("...m,...mij->...ij", dd, dlam)

    # route 2: |grad cof|^q through the adjoint differences, then Dcof^T
    B = (eps * q * _power_safe(n1sq, q / 2 - 1))[..., None, None, None] * mf.grad_cof
    P = np.zeros(grid.shape + (3, 3))
    for k in range(3):
        P += derivative_adjoint(W[..., None, None] * B[..., k], grid, axis=k)
    # route 3: |grad det|^r, then det's derivative cof(G)
    c3 = (eps * r * _power_safe(n2sq, r / 2 - 1))[..., None] * mf.grad_det
    pc = np.zeros(grid.shape)
    for k in range(3):
        pc += derivative_adjoint(W * c3[..., k], grid, axis=k)

    E = W[..., None, None] * A
    E += tensors.cofactor_derivative(G, P)
    E += pc[..., None, None] * cof

    grad = np.zeros(grid.shape + (3,))
    for axis in range(3):
        grad += derivative_adjoint(E[..., :, axis], grid, axis=axis)
    grad -= W[..., None] * b
    if mask is not None:
        grad[mask] = 0.0
    return value, grad


def reaction_gradient(t, y, grid, mat, program):
    """Unmasked gradient of stored - load (hard wells, no dissipation).

    At constrained nodes this is the discrete reaction force; at interior
    nodes of an equilibrium it vanishes.
    """
    _, g = incremental_energy(t, y, None, grid, mat, program,
                              SmoothingParams(0.0, 0.0), gradient=True,
                              mask=None)
    if g is None:
        raise ValueError("reaction force undefined: det(grad y) <= 0")
    return g


def partial_time_derivative(t, y, grid, mat, program):
    """d/dt of the reduced energy at frozen interior degrees of freedom.

    Assumes the constrained nodes of y already sit on the program at time
    t.  Combines the dead-load rate with reaction power through the moving
    boundary.
    """
    sdot_b = program.body_profile.derivative(t)
    out = 0.0
    if sdot_b != 0.0 and program.body_force.any():
        out -= sdot_b * integrate(
            np.einsum("...i,i->...", y, program.body_force), grid)
    if program.dirichlet_faces and (program.dirichlet_matrix.any()
                                    or program.dirichlet_shift.any()):
        mask = program.dirichlet_mask(grid)
        g = reaction_gradient(t, y, grid, mat, program)
        v = program.dirichlet_velocity(t, grid)
        out += float(np.sum(g[mask] * v[mask]))
    return out
