"""One quasistatic increment: minimize stored + dissipation - load.

The exact objective is nonsmooth (hard minimum over wells, l1 dissipation),
so each increment anneals through a schedule of smoothed problems (softmin
temperature tau, Huber width eta) solved by limited-memory BFGS with an
Armijo backtracking line search.  Steps that leave the orientation-
preserving set read the objective as +inf and backtrack; iterates therefore
never cross det(grad y) = 0.

Candidate ranking is by the EXACT objective, and the unmodified warm start
always competes.  The accepted state consequently never scores worse than
the previous state transported to the new boundary data; the upper energy
estimate of the evolution driver holds by construction, not by luck.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .energy import SmoothingParams, incremental_energy, internal_state
from .errors import InfeasibleStart
from .fields import minor_fields

# Geometric annealing ladder.  The Huber term contributes curvature of
# order weight/eta, so jumping straight to a tiny eta stalls L-BFGS; each
# rung reuses the previous minimizer and stays cheap.
DEFAULT_SCHEDULE = ((1e-2, 1e-2), (1e-3, 1e-3), (1e-4, 1e-4), (1e-5, 1e-5),
                    (1e-5, 1e-6))


@dataclass(frozen=True)
class SolverParams:
    gradient_tolerance: float = 1e-6       # sup-norm of the free gradient
    max_iterations: int = 800              # per annealing stage
    memory: int = 10
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 60
    smoothing_schedule: tuple = DEFAULT_SCHEDULE
    restarts: int = 2
    restart_amplitude: float = 0.01
    # Intermediate rungs stop at max(gradient_tolerance, stage_factor * tau):
    # their minimizers are biased by O(tau) anyway, so polishing the gradient
    # far below that is wasted work.  The last rung always uses the full
    # tolerance.
    stage_factor: float = 0.05
    # Optional early exit: stop a stage once the value moves less than
    # value_tolerance (relative) over stall_window accepted steps.  Off by
    # default; convergence is then judged by the gradient alone.
    value_tolerance: float = 0.0
    stall_window: int = 12

    def __post_init__(self):
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must be in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient_decrease must be in (0, 1)")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.value_tolerance < 0:
            raise ValueError("value_tolerance must be >= 0")
        if self.stall_window < 2:
            raise ValueError("stall_window must be >= 2")
        if self.stage_factor < 0:
            raise ValueError("stage_factor must be >= 0")
        sched = tuple((float(a), float(b)) for a, b in self.smoothing_schedule)
        if not sched:
            raise ValueError("smoothing schedule must not be empty")
        object.__setattr__(self, "smoothing_schedule", sched)


@dataclass
class IncrementResult:
    """Outcome of one incremental minimization.

    objective is the exact (nonsmooth) incremental value of the accepted
    state; smoothing_gap = exact - final-stage smoothed value >= 0.
    """

    y: np.ndarray
    z: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool
    smoothing_gap: float
    min_det: float
    restarts_used: int
    stability_margin: float = np.nan


def smooth_displacement_noise(grid, rng, amplitude):
    """Random low-frequency displacement vanishing on every box face."""
    X = grid.coordinates()
    U = [(X[..., a] - grid.origin[a]) / grid.extents[a] for a in range(3)]
    envelope = np.ones(grid.shape)
    for u in U:
        envelope *= np.sin(np.pi * u)
    out = np.zeros(grid.shape + (3,))
    for _ in range(3):
        k = rng.uniform(0.5, 1.5, 3)
        phase = rng.uniform(0, 2 * np.pi)
        vec = rng.standard_normal(3)
        wave = np.cos(2 * np.pi * (k[0] * U[0] + k[1] * U[1] + k[2] * U[2]) + phase)
        out += wave[..., None] * vec
    return amplitude * envelope[..., None] * out


def _lbfgs_direction(g, s_list, y_list):
    q = g.copy()
    alphas = []
    for s, yv in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / np.dot(yv, s)
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * yv
    if s_list:
        s, yv = s_list[-1], y_list[-1]
        q *= np.dot(s, yv) / np.dot(yv, yv)
    for (s, yv), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / np.dot(yv, s)
        b = rho * np.dot(yv, q)
        q += (a - b) * s
    return -q


def _minimize_stage(t, y, z_prev, grid, mat, program, mask, smoothing, params,
                    tolerance):
    """L-BFGS on one smoothing stage.  Returns (y, value, gnorm, iters, hit_cap).

    Terminates on the stage gradient tolerance, the iteration cap, a stalled
    line search, or when the value has stopped moving over stall_window
    accepted steps (further polishing of this rung would be wasted; the next
    rung re-tightens the smoothing anyway).
    """
    def fg(values):
        return incremental_energy(t, values, z_prev, grid, mat, program,
                                  smoothing, gradient=True, mask=mask)

    shape = y.shape
    val, grad = fg(y)
    if not np.isfinite(val):
        raise InfeasibleStart("stage started outside det(grad y) > 0")
    x = y.reshape(-1).copy()
    g = grad.reshape(-1)
    s_list, y_list = [], []
    recent = deque(maxlen=params.stall_window)
    iters = 0
    while np.max(np.abs(g)) > tolerance:
        if iters >= params.max_iterations:
            return x.reshape(shape), val, float(np.max(np.abs(g))), iters, True
        d = _lbfgs_direction(g, s_list, y_list)
        slope = np.dot(g, d)
        if slope >= 0:
            s_list, y_list = [], []
            d, slope = -g, -np.dot(g, g)
        alpha, ok = 1.0, False
        for _ in range(params.max_backtracks):
            x_new = x + alpha * d
            val_new, grad_new = fg(x_new.reshape(shape))
            if np.isfinite(val_new) and \
                    val_new <= val + params.sufficient_decrease * alpha * slope:
                ok = True
                break
            alpha *= params.backtrack
        if not ok:
            break  # line search stalled at the backtracking floor
        g_new = grad_new.reshape(-1)
        s, yv = x_new - x, g_new - g
        if np.dot(s, yv) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            s_list.append(s)
            y_list.append(yv)
            if len(s_list) > params.memory:
                s_list.pop(0)
                y_list.pop(0)
        x, g, val = x_new, g_new, val_new
        iters += 1
        recent.append(val)
        if params.value_tolerance > 0 and len(recent) == params.stall_window \
                and recent[0] - val <= params.value_tolerance * max(1.0, abs(recent[0])):
            break
    return x.reshape(shape), val, float(np.max(np.abs(g))), iters, False


def _run_descent(t, y0, z_prev, grid, mat, program, mask, params):
    y = y0
    total_iters = 0
    hit_cap = False
    last = len(params.smoothing_schedule) - 1
    for rung, (tau, eta) in enumerate(params.smoothing_schedule):
        tol = params.gradient_tolerance if rung == last else \
            max(params.gradient_tolerance, params.stage_factor * tau)
        y, val, gnorm, iters, capped = _minimize_stage(
            t, y, z_prev, grid, mat, program, mask, SmoothingParams(tau, eta),
            params, tol)
        total_iters += iters
        hit_cap = hit_cap or capped
    return y, val, gnorm, total_iters, hit_cap


def solve_increment(t, y_start, z_prev, grid, mat, program, params=None,
                    rng=None):
    """Minimize one increment from a warm start.

    y_start's constrained nodes are moved onto the program at time t before
    anything else; the warm start itself (post-transport) is kept as a
    ranking candidate, so the result never scores above it in the exact
    objective.  A warm start that is already stationary for the final
    smoothing rung is returned bitwise unchanged with zero iterations, so
    a hold under constant loading stays put exactly.  Raises
    InfeasibleStart if the transported start has det(grad y) <= 0.
    Hitting the iteration cap is reported through converged=False, never
    an exception.
    """
    params = params or SolverParams()
    rng = rng or np.random.default_rng(0)
    mask = program.dirichlet_mask(grid)
    warm = np.array(y_start, dtype=float)
    warm[mask] = program.dirichlet_values(t, grid)[mask]

    def exact(values):
        return incremental_energy(t, values, z_prev, grid, mat, program,
                                  SmoothingParams(0.0, 0.0))

    warm_exact = exact(warm)
    if not np.isfinite(warm_exact):
        raise InfeasibleStart(
            "warm start violates det(grad y) > 0 after boundary transport")

    tau, eta = params.smoothing_schedule[-1]
    smoothed, grad = incremental_energy(t, warm, z_prev, grid, mat, program,
                                        SmoothingParams(tau, eta),
                                        gradient=True, mask=mask)
    gnorm = float(np.max(np.abs(grad)))
    if gnorm <= params.gradient_tolerance:
        mf = minor_fields(warm, grid)
        return IncrementResult(
            y=warm,
            z=mat.volume_fractions(mf.grad),
            objective=float(warm_exact),
            gradient_norm=gnorm,
            iterations=0,
            converged=True,
            smoothing_gap=float(warm_exact - smoothed),
            min_det=mf.min_det,
            restarts_used=0,
        )

    runs = []
    for attempt in range(1 + params.restarts):
        y0 = warm.copy()
        if attempt:
            bump = smooth_displacement_noise(grid, rng, params.restart_amplitude)
            bump[mask] = 0.0
            y0 += bump
            if not np.isfinite(exact(y0)):
                continue
        y, _, gnorm, iters, capped = _run_descent(
            t, y0, z_prev, grid, mat, program, mask, params)
        runs.append((exact(y), y, gnorm, iters, capped, attempt))

    runs.append((warm_exact, warm, np.inf, 0, False, -1))
    best = min(runs, key=lambda r: r[0])
    obj, y, _, iters, capped, attempt = best
    tau, eta = params.smoothing_schedule[-1]
    smoothed, grad = incremental_energy(t, y, z_prev, grid, mat, program,
                                        SmoothingParams(tau, eta),
                                        gradient=True, mask=mask)
    # measured at the accepted state, whichever candidate won the ranking
    gnorm = float(np.max(np.abs(grad)))
    mf = minor_fields(y, grid)
    return IncrementResult(
        y=y,
        z=mat.volume_fractions(mf.grad),
        objective=float(obj),
        gradient_norm=gnorm,
        iterations=sum(r[3] for r in runs),
        converged=bool(gnorm <= params.gradient_tolerance),
        smoothing_gap=float(obj - smoothed),
        min_det=mf.min_det,
        restarts_used=max(0, len(runs) - 2),
    )


# ---- stability sampling ---------------------------------------------------

def _boundary_fade(grid, program, width=0.25):
    """Smooth cutoff that vanishes on the constrained faces only."""
    X = grid.coordinates()
    chi = np.ones(grid.shape)
    for f in program.dirichlet_faces:
        axis = "xyz".index(f[0])
        u = (X[..., axis] - grid.origin[axis]) / grid.extents[axis]
        dist = u if f[1] == "0" else 1.0 - u
        tt = np.clip(dist / width, 0.0, 1.0)
        chi *= tt * tt * (3.0 - 2.0 * tt)
    return chi


def stability_competitors(t, y, grid, mat, program, rng,
                          amplitudes=(0.005, 0.02, 0.08)):
    """Competitor states for the stability test at time t.

    Well blends push the deformation toward each uniform well (faded to
    zero on constrained faces so competitors stay admissible); smooth
    random perturbations probe the neighborhood at several amplitudes.
    """
    chi = _boundary_fade(grid, program)[..., None]
    X = grid.coordinates()
    out = []
    for i, well in enumerate(mat.wells):
        target = X @ well.stretch.T
        out.append((f"well-{well.label or i}", y + chi * (target - y)))
    scale = min(grid.extents)
    for amp in amplitudes:
        noise = smooth_displacement_noise(grid, rng, amp * scale)
        out.append((f"noise-{amp:g}", y + chi * noise))
    return out


def stability_margin(t, y, z_y, competitors, grid, mat, program):
    """min over competitors of  E(t, c) + D(z(c), z_y) - E(t, y).

    Nonnegative margins certify the sampled stability condition; the
    label of the minimizing competitor is returned for diagnostics.
    Infeasible competitors (det <= 0) are skipped.
    """
    base = incremental_energy(t, y, None, grid, mat, program)
    best, best_label = np.inf, "none"
    for label, c in competitors:
        trial = incremental_energy(t, c, z_y, grid, mat, program)
        if not np.isfinite(trial):
            continue
        margin = trial - base
        if margin < best:
            best, best_label = margin, label
    return float(best), best_label
