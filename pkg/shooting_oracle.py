"""
Reference solutions used to cross-check the relaxation solvers.

`shoot` integrates the regularized m-equation as a first-order system in (m, F),
F being the bracketed flux, with fixed-step RK4 and adjusts F(r0) until m(r1) = J.
`dense_reference_solve` solves a LinearBVP through a full matrix with partial pivoting.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.interpolate import interp1d

from helper_functions import DomainError, ShootingError, SingularSystemError
from linear_bvp import LinearBVP, assemble, with_boundary
from problem_model import DopingProfile, Profile, ProblemConfig, RadialGrid, eval_B, geometric_source

DEFAULT_STEPS = 2 ** 14
SHOOTING_TOL = 1e-10


@dataclass
class ShootingResult:
    profile: Profile
    initial_flux: float
    terminal_mismatch: float
    integrator_steps: int
    brackets_found: int = 1


class _Crash(Exception):
    def __init__(self, direction):
        super().__init__(direction)
        self.direction = direction


class _Integrator:
    """Fixed-step RK4 for (m, F) with the radial coefficients tabulated at half steps."""

    def __init__(self, regime, regparam, config, doping, steps, reduced=False):
        self.regime = regime
        self.p2 = regparam * regparam
        self.tau_flux = config.J if regime == 'subsonic' else regparam
        self.tau = config.tau
        self.J = config.J
        self.r0 = config.r0
        self.steps = steps
        self.h = (config.r1 - config.r0) / steps
        r = config.r0 + 0.5 * self.h * np.arange(2 * steps + 1)
        r[-1] = config.r1
        if reduced:
            weight = np.ones_like(r)
            source = -doping.btilde(r)
        else:
            weight = r ** (config.n - 1)
            source = -eval_B(doping, config, r) + geometric_source(config, r)
        self.weight = weight.tolist()
        self.source = source.tolist()
        self.lower = regparam if regime == 'subsonic' else 0.0
        self.upper = 1e8 * config.J if regime == 'subsonic' else regparam

    def _rhs(self, k, m, F):
        if not self.lower < m < self.upper:
            raise _Crash(m)
        den = 1.0 / m - self.p2 / (m * m * m)
        dm = (F / self.weight[k] - self.tau_flux / (self.tau * m)) / den
        return dm, m + self.source[k]

    def run(self, F0, record=False):
        """Return m(r1), or raise _Crash carrying +1/-1 for leaving above/below J."""
        m, F, h = self.J, F0, self.h
        trace = [m] if record else None
        try:
            for i in range(self.steps):
                k = 2 * i
                a_m, a_F = self._rhs(k, m, F)
                b_m, b_F = self._rhs(k + 1, m + 0.5 * h * a_m, F + 0.5 * h * a_F)
                c_m, c_F = self._rhs(k + 1, m + 0.5 * h * b_m, F + 0.5 * h * b_F)
                d_m, d_F = self._rhs(k + 2, m + h * c_m, F + h * c_F)
                m += h * (a_m + 2.0 * b_m + 2.0 * c_m + d_m) / 6.0
                F += h * (a_F + 2.0 * b_F + 2.0 * c_F + d_F) / 6.0
                if not (math.isfinite(m) and math.isfinite(F)):
                    raise _Crash(m)
                if record:
                    trace.append(m)
        except (_Crash, ZeroDivisionError, OverflowError):
            raise _Crash(1.0 if m > self.J else -1.0)
        return (m, trace) if record else m

    def mismatch(self, F0):
        try:
            return self.run(F0) - self.J
        except _Crash as crash:
            return math.copysign(math.inf, crash.direction)


def _check_regparam(regime, regparam, config):
    J = config.J
    if regime == 'subsonic':
        if not 0 < regparam <= J * (1 - 1e-6):
            raise DomainError(f"subsonic shooting needs 0 < j <= J(1-1e-6), got j={regparam} with J={J}")
    elif regime == 'supersonic':
        if not regparam >= J * (1 + 1e-6):
            raise DomainError(f"supersonic shooting needs k >= J(1+1e-6), got k={regparam} with J={J}")
    else:
        raise DomainError(f"regime must be 'subsonic' or 'supersonic', got {regime!r}")


def initial_flux_for_slope(regime, regparam, config, slope, reduced=False):
    """F(r0) of the trajectory leaving m(r0) = J with m'(r0) = slope."""
    J = config.J
    weight = 1.0 if reduced else config.r0 ** (config.n - 1)
    tau_flux = J if regime == 'subsonic' else regparam
    return weight * ((1.0 / J - regparam ** 2 / J ** 3) * slope + tau_flux / (config.tau * J))


def integrate_shot(regime, regparam, F0, config, doping, steps=DEFAULT_STEPS, reduced=False):
    """m(r1) for a single shot with flux F(r0) = F0; raises ShootingError if the shot leaves its branch."""
    _check_regparam(regime, regparam, config)
    try:
        return _Integrator(regime, regparam, config, doping, steps, reduced).run(F0)
    except _Crash as crash:
        raise ShootingError(f"shot left the {regime} branch ({'above' if crash.direction > 0 else 'below'})")


def _scan_brackets(integrator, fluxes):
    values = [integrator.mismatch(F0) for F0 in fluxes]
    brackets = []
    for i in range(len(fluxes) - 1):
        ga, gb = values[i], values[i + 1]
        if ga == 0:
            brackets.append((fluxes[i], fluxes[i]))
        elif ga * gb < 0 and (math.isfinite(ga) or math.isfinite(gb)):
            brackets.append((fluxes[i], fluxes[i + 1]))
    return brackets


def _refine(integrator, a, b, tol, max_iter=200):
    """Illinois-type secant iteration on a bracket; falls back to bisection next to crashed shots."""
    ga, gb = integrator.mismatch(a), integrator.mismatch(b)
    if ga == 0:
        return a, 0.0
    if gb == 0:
        return b, 0.0
    if ga * gb > 0:
        raise ShootingError(f"bracket [{a}, {b}] lost its sign change at full resolution")
    side = 0
    c, gc = a, ga
    for _ in range(max_iter):
        if math.isfinite(ga) and math.isfinite(gb):
            c = (a * gb - b * ga) / (gb - ga)
        else:
            c = 0.5 * (a + b)
        gc = integrator.mismatch(c)
        if math.isfinite(gc) and abs(gc) < tol:
            return c, gc
        if abs(b - a) <= 4e-16 * max(abs(a), abs(b), 1.0):
            break
        if gc * gb < 0:
            a, ga = b, gb
            b, gb = c, gc
            side = 0
        else:
            b, gb = c, gc
            if side == 1 and math.isfinite(ga):
                ga *= 0.5
            side = 1
    raise ShootingError(f"secant search stalled with mismatch {gc:.3e} at F(r0)={c}")


def shoot(regime: str, regparam: float, config: ProblemConfig, doping: DopingProfile,
          steps: int = DEFAULT_STEPS, grid: RadialGrid = None, tol: float = SHOOTING_TOL,
          reduced: bool = False, scan_points: int = 141) -> ShootingResult:
    """
    Shooting solution of the regularized problem for j (subsonic) or k (supersonic).
    :param grid: nodes at which to sample the profile; defaults to the RK4 mesh
    :param reduced: drop the r^(n-1) weights and geometric source (symmetry checks only)
    """
    _check_regparam(regime, regparam, config)
    sign = 1.0 if regime == 'subsonic' else -1.0
    slopes = sign * np.logspace(-3, 4, scan_points)
    fluxes = sorted(initial_flux_for_slope(regime, regparam, config, s, reduced) for s in slopes)

    scan = _Integrator(regime, regparam, config, doping, max(steps // 16, 256), reduced)
    brackets = _scan_brackets(scan, fluxes)
    if not brackets:
        raise ShootingError(f"no sign change of m(r1) - J found for {regime} shooting at {regparam}")
    if len(brackets) > 1:
        logging.warning(f"{regime} shooting at {regparam}: {len(brackets)} sign changes found; using the first")
    finite = [br for br in brackets if all(math.isfinite(scan.mismatch(x)) for x in br)]
    a, b = (finite or brackets)[0]

    full = _Integrator(regime, regparam, config, doping, steps, reduced)
    F0, gap = _refine(full, a, b, tol) if a != b else (a, full.mismatch(a))
    m_end, trace = full.run(F0, record=True)
    mesh = config.r0 + full.h * np.arange(steps + 1)
    mesh[-1] = config.r1
    if grid is None:
        grid = RadialGrid(mesh, spacing_kind='uniform')
        values = np.array(trace)
    else:
        values = interp1d(mesh, np.array(trace), kind='cubic')(grid.nodes)
    logging.debug(f"{regime} shooting at {regparam}: F(r0)={F0:.12g}, mismatch {abs(m_end - config.J):.2e}")
    return ShootingResult(profile=Profile(grid, values), initial_flux=F0,
                          terminal_mismatch=abs(m_end - config.J), integrator_steps=steps,
                          brackets_found=len(brackets))


def dense_reference_solve(bvp: LinearBVP) -> Profile:
    system = assemble(bvp)
    try:
        interior = scipy.linalg.solve(system.to_dense(), system.rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as e:
        raise SingularSystemError(f"dense reference matrix is singular: {e}") from e
    return Profile(bvp.grid, with_boundary(bvp, interior))
