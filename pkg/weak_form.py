"""
Discrete weak form of the sonic m-equation and a damped Newton driver for it.

For every interior hat function phi_i the residual is

    R_i = int [ r^(n-1) (m+J)/(2 m^3) w_r + r^(n-1) J/(tau m) ] phi_i' dr
        + int ( m - B + (n-1)(n-2) r^(n-3) ) phi_i dr,      w = (m - J)^2,

evaluated with one-point midpoint quadrature per cell and w_r taken as the
cell difference of w. The solvers use `polish` to turn their last continuation
stage into a discrete weak solution; `verification.weak_residual` reports the
same quantity.
"""
import logging

import numpy as np

from helper_functions import DivergenceError, SingularSystemError, sup_norm
from linear_bvp import TridiagonalSystem, thomas_solve
from problem_model import DopingProfile, ProblemConfig, RadialGrid, eval_B, geometric_source


def cell_fluxes(m, grid: RadialGrid, config: ProblemConfig):
    """Total flux r^(n-1)[(m+J) w_r/(2m^3) + J/(tau m)] at cell midpoints."""
    m = np.asarray(m, dtype=float)
    J = config.J
    rc = grid.midpoints ** (config.n - 1)
    m_mid = 0.5 * (m[1:] + m[:-1])
    w = (m - J) ** 2
    w_r = np.diff(w) / grid.h
    return rc * ((m_mid + J) / (2.0 * m_mid ** 3) * w_r + J / (config.tau * m_mid))


def cell_sources(m, grid: RadialGrid, config: ProblemConfig, doping: DopingProfile):
    m = np.asarray(m, dtype=float)
    mid = grid.midpoints
    m_mid = 0.5 * (m[1:] + m[:-1])
    return m_mid - eval_B(doping, config, mid) + geometric_source(config, mid)


def residual_vector(m, grid: RadialGrid, config: ProblemConfig, doping: DopingProfile) -> np.ndarray:
    """R_i / h_i at the interior nodes, with h_i the half-sum of the neighbouring cells."""
    flux = cell_fluxes(m, grid, config)
    src = cell_sources(m, grid, config, doping) * grid.h
    raw = flux[:-1] - flux[1:] + 0.5 * (src[:-1] + src[1:])
    return raw / (0.5 * (grid.h[:-1] + grid.h[1:]))


def tridiagonal_jacobian(residual, u, direction=1.0) -> TridiagonalSystem:
    """
    Jacobian of an interior residual of nearest-neighbour type, by forward
    differences with three colour groups of simultaneous perturbations.
    """
    u = np.asarray(u, dtype=float)
    base = residual(u)
    size = base.size
    steps = direction * 1.49e-8 * np.maximum(np.abs(u[1:-1]), 1.0)
    sub = np.zeros(size)
    diag = np.zeros(size)
    sup = np.zeros(size)
    for colour in range(3):
        idx = np.arange(colour, size, 3)
        if idx.size == 0:
            continue
        shifted = u.copy()
        shifted[idx + 1] += steps[idx]
        delta = residual(shifted) - base
        diag[idx] = delta[idx] / steps[idx]
        below = idx[idx + 1 < size]
        sub[below + 1] = delta[below + 1] / steps[below]
        above = idx[idx >= 1]
        sup[above - 1] = delta[above - 1] / steps[above]
    return TridiagonalSystem(sub=sub, diag=diag, sup=sup, rhs=-base)


def damped_newton(residual, u0, admissible, tol=1e-9, max_iter=50, direction=1.0, label='newton',
                  floor=1e-6):
    """
    Newton iteration on the interior values of u (boundary entries stay fixed).
    Steps are halved until the trial state is admissible and the residual sup norm drops.
    A stalled line search is accepted once the residual is below `floor` (round-off level
    on strongly graded grids).
    Returns (u, iterations, residual_norm).
    """
    u = np.array(u0, dtype=float)
    res = residual(u)
    norm = sup_norm(res)
    history = [norm]
    for it in range(1, max_iter + 1):
        if norm < tol:
            return u, it - 1, norm
        step = thomas_solve(tridiagonal_jacobian(residual, u, direction))
        lam = 1.0
        for _ in range(40):
            trial = u.copy()
            trial[1:-1] += lam * step
            if admissible(trial):
                trial_norm = sup_norm(residual(trial))
                if np.isfinite(trial_norm) and trial_norm < norm:
                    break
            lam *= 0.5
        else:
            if norm < floor:
                logging.info(f"{label}: stalled at residual {norm:.3e} after {it - 1} iterations")
                return u, it - 1, norm
            raise DivergenceError(f"{label}: line search failed at iteration {it} (residual {norm:.3e})", history)
        u, norm = trial, trial_norm
        history.append(norm)
        logging.debug(f"{label}: iteration {it}, step {lam:g}, residual {norm:.3e}")
    if norm < tol:
        return u, max_iter, norm
    raise DivergenceError(f"{label}: no convergence in {max_iter} iterations (residual {norm:.3e})", history)


def polish(m, grid: RadialGrid, config: ProblemConfig, doping: DopingProfile, regime: str,
           tol: float = 1e-9, max_iter: int = 50):
    """
    Solve the discrete weak form at the sonic limit starting from `m`.
    Subsonic iterates must stay above J inside, supersonic ones in (0, J).
    """
    J = config.J

    def residual(u):
        return residual_vector(u, grid, config, doping)

    if regime == 'subsonic':
        def admissible(u):
            return bool(np.all(u[1:-1] > J))
        direction = 1.0
    else:
        def admissible(u):
            return bool(np.all((u[1:-1] > 0) & (u[1:-1] < J)))
        direction = -1.0
    start = np.array(m, dtype=float)
    start[0] = start[-1] = J
    if not admissible(start):
        raise DivergenceError(f"weak-form polish: starting profile is not {regime} inside the annulus")
    return damped_newton(residual, start, admissible, tol=tol, max_iter=max_iter,
                         direction=direction, label=f"{regime} weak-form polish")


def polish_or_keep(m, grid: RadialGrid, config: ProblemConfig, doping: DopingProfile, regime: str,
                   tol: float = 1e-9, max_iter: int = 50):
    """
    Run `polish` and fall back to `m` when it fails.
    Returns (values, polished, iterations, residual_norm).
    """
    try:
        values, iterations, norm = polish(m, grid, config, doping, regime, tol=tol, max_iter=max_iter)
    except (DivergenceError, SingularSystemError) as e:
        logging.warning(f"{regime} weak-form polish failed, keeping the last continuation stage: {e}")
        return np.array(m, dtype=float), False, 0, float('nan')
    logging.info(f"{regime} weak-form polish converged in {iterations} iterations (residual {norm:.3e})")
    return values, True, iterations, norm
