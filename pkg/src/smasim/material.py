"""Multi-well constitutive model with minor-gradient regularization.

The specimen has M martensite variants plus one austenite phase.  Each
phase i carries a stretch U_i (SPD) and an energy well at SO(3)U_i:

    W_i(F) = V(F U_i^{-1}) - w_i,      V(F) = |F^T F - I|_F^2,

and the condensed density is W(F) = min_i W_i(F).  The full stored density
adds coercivity/regularization terms in F, its minors, and the *spatial
gradients* of the minors:

    what(F, D1, D2) = W(F) + eps * (|F|^p + |cof F|^q + (det F)^r
                      + (det F)^{-s} + |D1|^q + |D2|^r)      if det F > 0,
                      +inf otherwise,

where D1 stands for grad(cof grad y) (a 3x3x3 field) and D2 for
grad(det grad y) (a vector field).  Convexity in (D1, D2) is what buys
weak lower semicontinuity without convexifying W itself.

Internal variables are phase fractions z in R^{M+1}.  The model slaves
them to the strain: z = volume_fractions(grad y), built from Frobenius
distances of C = F^T F to disjoint balls around the well points C_i = U_i^2.
Rate-independent dissipation between internal states is a weighted l1
distance, optionally Huber-smoothed for the solver.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tensors

# exponent thresholds for the regime where orientation preservation and
# local invertibility of minimizers are guaranteed: p > 6, q >= p/(p-1),
# r > 1, s > 2p/(p-6)
COROLLARY_P_MIN = 6.0


def base_density(F):
    """V(F) = |F^T F - I|_F^2, the frame-indifferent squared-distance well."""
    C = tensors.right_cauchy_green(F)
    D = C - np.eye(3)
    return np.sum(D * D, axis=(-2, -1))


_PARTITION_QUANTUM_BITS = 52


def _absorb_rounding_residual(lam):
    """Make the partition of unity exact under any float summation order.

    Nudging the largest entry by the observed residual is not enough: the
    re-rounded sum can oscillate one ulp around 1 forever.  Snapping every
    fraction to a multiple of 2^-52 and fixing the integer counts to total
    exactly 2^52 makes each partial sum a dyadic rational that fits a
    double exactly, so the float sum is exactly 1.0 no matter how an
    accumulator groups the terms.  A positive shortfall goes to the
    smallest entry and a negative one to the largest, keeping every
    fraction inside [0, 1/M].  The snap moves a fraction by about one ulp,
    the same disturbance the plain correction caused; coarser quanta are
    visibly nonsmooth to the line search, which then stalls hunting for
    descent below the staircase."""
    scale = 2.0 ** _PARTITION_QUANTUM_BITS
    counts = np.floor(lam * scale).astype(np.int64)
    short = (np.int64(1) << _PARTITION_QUANTUM_BITS) - counts.sum(axis=-1)
    giver = np.where(short >= 0, np.argmin(lam, axis=-1),
                     np.argmax(lam, axis=-1))[..., None]
    np.put_along_axis(counts, giver,
                      np.take_along_axis(counts, giver, axis=-1)
                      + short[..., None], axis=-1)
    return counts / scale


def _as_spd(matrix, what):
    A = np.asarray(matrix, dtype=float)
    if A.shape != (3, 3):
        raise ValueError(f"{what}: expected shape (3, 3), got {A.shape}")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError(f"{what}: stretch must be symmetric")
    if np.any(np.linalg.eigvalsh(A) <= 0):
        raise ValueError(f"{what}: stretch must be positive definite")
    return A


@dataclass(frozen=True, eq=False)
class WellSpec:
    """One energy well: SPD stretch, well depth (subtracted), label.

    Positive depth lowers the well below the austenite reference, negative
    depth penalizes it; the sign encodes which phase the temperature
    favors.
    """

    stretch: np.ndarray
    depth: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stretch", _as_spd(self.stretch, self.label or "well"))
        object.__setattr__(self, "depth", float(self.depth))


def default_wells(martensite_depth=0.02):
    """Cubic austenite plus a tetragonal triple (stretches 0.96/0.96/1.08).

    martensite_depth > 0 puts the variants below austenite (martensite is
    the low-energy phase); < 0 makes the undeformed state the strict
    ground state, the right regime for quasistatic runs started there.
    """
    a, c = 0.96, 1.08
    wells = [WellSpec(np.eye(3), 0.0, "austenite")]
    for k in range(3):
        d = np.array([a, a, a])
        d[k] = c
        wells.append(WellSpec(np.diag(d), martensite_depth, f"martensite-{k + 1}"))
    return tuple(wells)


@dataclass(frozen=True, eq=False)
class MaterialSpec:
    """Well family plus regularization exponents and dissipation weights.

    rho is the radius of the disjoint strain-space balls used by the
    volume-fraction map; rho=None picks a quarter of the minimum pairwise
    well distance.  dissipation_weights has one entry per phase; the 0.05
    default keeps the dissipated energy of a full transformation (weight
    times the l1 distance between phase indicators, here 0.1) on the same
    scale as the well depths, so friction does not drown out elasticity.
    """

    wells: tuple = field(default_factory=default_wells)
    p: float = 8.0
    q: float = 2.0
    r: float = 2.0
    s: float = 8.5
    eps_reg: float = 1e-3
    rho: float | None = None
    dissipation_weights: np.ndarray | None = None

    def __post_init__(self):
        if len(self.wells) < 2:
            raise ValueError("need at least one martensite well besides austenite")
        for name, lo, val in (("p", 1.0, self.p), ("q", 1.0, self.q),
                              ("r", 1.0, self.r), ("s", 0.0, self.s)):
            if not val > lo:
                raise ValueError(f"exponent {name} must be > {lo}, got {val}")
        if not self.eps_reg > 0:
            raise ValueError("eps_reg must be > 0")
        w = self.dissipation_weights
        if w is None:
            w = np.full(self.phase_count, 0.05)
        else:
            w = np.asarray(w, dtype=float)
        if w.shape != (self.phase_count,) or np.any(w <= 0):
            raise ValueError("dissipation_weights: need one positive weight per phase")
        object.__setattr__(self, "dissipation_weights", w)
        gap = self.min_well_separation
        rho = 0.25 * gap if self.rho is None else float(self.rho)
        if not 0 < rho < 0.5 * gap:
            raise ValueError(
                f"rho = {rho} must lie in (0, {0.5 * gap:.6f}) so the strain "
                "balls stay disjoint")
        object.__setattr__(self, "rho", rho)

    @property
    def phase_count(self):
        return len(self.wells)

    @cached_property
    def well_points(self):
        """C_i = U_i^2, stacked (phases, 3, 3)."""
        return np.stack([w.stretch @ w.stretch for w in self.wells])

    @cached_property
    def inverse_stretches(self):
        return np.stack([np.linalg.inv(w.stretch) for w in self.wells])

    @cached_property
    def depths(self):
        return np.array([w.depth for w in self.wells])

    @cached_property
    def min_well_separation(self):
        Cs = self.well_points
        n = len(Cs)
        gaps = [np.linalg.norm(Cs[i] - Cs[j]) for i in range(n) for j in range(i + 1, n)]
        return min(gaps)

    # ---- well energies -------------------------------------------------

    def well_energies(self, F):
        """W_i(F) for every phase, shape (..., phases)."""
        F = np.asarray(F)
        A = np.einsum("...ij,mjk->...mik", F, self.inverse_stretches)
        return base_density(A) - self.depths

    def multiwell_energy(self, F):
        """min_i W_i(F) and the argmin index, shapes (...,) and (...,) int."""
        W = self.well_energies(F)
        idx = np.argmin(W, axis=-1)
        return np.take_along_axis(W, idx[..., None], axis=-1)[..., 0], idx

    def softmin_energy(self, F, tau):
        """Temperature-tau softmin of the well energies and its well weights.

        Computed in shifted log-sum-exp form; never overflows, and the
        value is always <= the hard minimum.  tau=0 falls back to the hard
        minimum with one-hot weights.
        """
        W = self.well_energies(F)
        if tau == 0.0:
            idx = np.argmin(W, axis=-1)
            sig = np.zeros_like(W)
            np.put_along_axis(sig, idx[..., None], 1.0, axis=-1)
            return np.take_along_axis(W, idx[..., None], axis=-1)[..., 0], sig
        m = W.min(axis=-1, keepdims=True)
        e = np.exp(-(W - m) / tau)
        Z = e.sum(axis=-1)
        return m[..., 0] - tau * np.log(Z), e / Z[..., None]

    def well_energy_gradients(self, F):
        """dW_i/dF for every phase, shape (..., phases, 3, 3)."""
        F = np.asarray(F)
        Ui = self.inverse_stretches
        A = np.einsum("...ij,mjk->...mik", F, Ui)
        G = tensors.right_cauchy_green(A) - np.eye(3)
        return 4.0 * np.einsum("...mij,...mjk,mkl->...mil", A, G, Ui)

    # ---- regularizer ---------------------------------------------------

    def regularizer_density(self, F, D1, D2):
        """eps * (|F|^p + |cof F|^q + det^r + det^{-s} + |D1|^q + |D2|^r).

        Returns +inf wherever det F <= 0.  D1 is (..., 3, 3, 3), D2 (..., 3).
        """
        F = np.asarray(F)
        det = tensors.determinant(F)
        good = det > 0
        det_safe = np.where(good, det, 1.0)
        normF2 = np.sum(F * F, axis=(-2, -1))
        cof = tensors.cofactor(F)
        normC2 = np.sum(cof * cof, axis=(-2, -1))
        n1 = np.sum(np.asarray(D1) ** 2, axis=(-3, -2, -1))
        n2 = np.sum(np.asarray(D2) ** 2, axis=-1)
        val = self.eps_reg * (
            normF2 ** (self.p / 2) + normC2 ** (self.q / 2)
            + det_safe ** self.r + det_safe ** (-self.s)
            + n1 ** (self.q / 2) + n2 ** (self.r / 2))
        return np.where(good, val, np.inf)

    def hat_density(self, F, D1, D2):
        """Full stored density: multi-well part plus regularizer."""
        W, _ = self.multiwell_energy(F)
        return W + self.regularizer_density(F, D1, D2)

    # ---- volume fractions ----------------------------------------------

    def _ball_distances(self, C):
        diff = C[..., None, :, :] - self.well_points
        d = np.sqrt(np.sum(diff * diff, axis=(-2, -1)))
        return np.maximum(0.0, d - self.rho)

    def volume_fractions(self, F):
        """Phase fractions z(F) in [0, 1/M]^{phases}, summing to 1 exactly.

        z_j = (1/M) (1 - d_j / sum_i d_i) with d_j the Frobenius distance
        of C = F^T F to the ball of radius rho around C_j.  The balls are
        disjoint, so at most one d_j vanishes and the sum never does.  The
        largest component absorbs the (eps-size) rounding residual so the
        partition of unity is exact.
        """
        F = np.asarray(F)
        C = tensors.right_cauchy_green(F)
        d = self._ball_distances(C)
        M = self.phase_count - 1
        lam = (1.0 - d / d.sum(axis=-1, keepdims=True)) / M
        return _absorb_rounding_residual(lam)

    def volume_fractions_with_gradient(self, F):
        """(z, dz/dF) with dz/dF shaped (..., phases, 3, 3).

        The distance map is differentiable wherever C is off the ball
        boundaries and away from well centers; on those measure-zero sets
        this returns the one-sided (inside-ball) limit.
        """
        F = np.asarray(F)
        C = tensors.right_cauchy_green(F)
        diff = C[..., None, :, :] - self.well_points
        raw = np.sqrt(np.sum(diff * diff, axis=(-2, -1)))
        d = np.maximum(0.0, raw - self.rho)
        S = d.sum(axis=-1)
        M = self.phase_count - 1
        lam = (1.0 - d / S[..., None]) / M

        # dd_j/dC = (C - C_j)/|C - C_j| outside the ball, 0 inside
        active = (d > 0.0) & (raw > 1e-300)
        raw_safe = np.where(raw > 1e-300, raw, 1.0)
        dd_dC = np.where(active[..., None, None], diff / raw_safe[..., None, None], 0.0)
        # chain through C = F^T F:  dd/dF = 2 F (dd/dC)   (dd/dC symmetric)
        dd_dF = 2.0 * np.einsum("...ij,...mjk->...mik", F, dd_dC)
        # lam_j = (1 - d_j/S)/M  =>  dlam_j = -(dd_j S - d_j dS)/(M S^2)
        dS = dd_dF.sum(axis=-3)
        dlam = -(dd_dF * S[..., None, None, None]
                 - d[..., None, None] * dS[..., None, :, :]) \
            / (M * S[..., None, None, None] ** 2)
        return _absorb_rounding_residual(lam), dlam

    # ---- dissipation ---------------------------------------------------

    def dissipation_density(self, z_new, z_old):
        """Weighted l1 distance between internal states, pointwise."""
        dz = np.abs(np.asarray(z_new) - np.asarray(z_old))
        return np.sum(self.dissipation_weights * dz, axis=-1)

    def huber_dissipation_density(self, z_new, z_old, eta):
        """Huber-smoothed l1 distance; equals the l1 distance for eta=0.

        Quadratic of curvature 1/eta inside |dz| <= eta, affine outside;
        always <= the exact l1 value, with pointwise gap <= eta/2 per phase.
        """
        dz = np.asarray(z_new) - np.asarray(z_old)
        if eta == 0.0:
            return np.sum(self.dissipation_weights * np.abs(dz), axis=-1)
        a = np.abs(dz)
        h = np.where(a <= eta, a * a / (2 * eta), a - eta / 2)
        return np.sum(self.dissipation_weights * h, axis=-1)

    def huber_dissipation_gradient(self, z_new, z_old, eta):
        """d/dz_new of the Huber dissipation, shape like z_new.

        For eta=0 the l1 kink's subgradient is resolved to 0 inside a
        rounding-noise dead zone, so states with z_new == z_old up to
        round-off see no phantom dissipative force.
        """
        dz = np.asarray(z_new) - np.asarray(z_old)
        if eta == 0.0:
            sign = np.where(np.abs(dz) > 1e-12, np.sign(dz), 0.0)
            return self.dissipation_weights * sign
        return self.dissipation_weights * np.clip(dz / eta, -1.0, 1.0)

    def corollary_regime_violations(self):
        """Exponent conditions for guaranteed local invertibility.

        Returns a list of human-readable violations; empty means the
        (p, q, r, s) ranges support the injectivity certificates.
        """
        out = []
        if not self.p > COROLLARY_P_MIN:
            out.append(f"p = {self.p} must be > {COROLLARY_P_MIN}")
            return out
        if not self.q >= self.p / (self.p - 1):
            out.append(f"q = {self.q} must be >= p/(p-1) = {self.p / (self.p - 1):.4f}")
        if not self.r > 1:
            out.append(f"r = {self.r} must be > 1")
        s_min = 2 * self.p / (self.p - COROLLARY_P_MIN)
        if not self.s > s_min:
            out.append(f"s = {self.s} must be > 2p/(p-6) = {s_min:.4f}")
        return out


def default_material(**overrides):
    """The tetragonal triple with the documented default exponents."""
    return MaterialSpec(**overrides)
