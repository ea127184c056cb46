"""
Interior subsonic solutions (m > J inside, m = J at r0 and r1).

The regularized equation with j < J is solved by frozen-coefficient Picard
iteration on a linear BVP, j is driven towards J along a geometric schedule
in j^2, and the last stage is finished by a Newton solve of the discrete weak
form at j = J.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from helper_functions import (ConfigError, DivergenceError, DomainError, HypothesisError,
                              IterateOutOfBandError, continuation_should_stop, run_with_retries)
from linear_bvp import LinearBVP, solve_bvp
from problem_model import (DopingProfile, Profile, ProblemConfig, RadialGrid, Solution,
                           check_subsonic_hypotheses, eval_B, geometric_source)
from verification import holder_seminorm, regularization_energy, weak_residual
from weak_form import polish_or_keep

BOX_SLACK = 1e-9


def default_sigmas():
    return tuple(0.5 * 4.0 ** (-t) for t in range(15))


@dataclass(frozen=True)
class SubsonicParams:
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    j_schedule: tuple = field(default_factory=default_sigmas)
    continuation_tol: float = 1e-8
    clamp: bool = True
    relaxation: float = 0.5
    retries: int = 2
    polish: bool = True
    polish_tol: float = 1e-9
    polish_max_iter: int = 50
    upwind: bool = False

    def __post_init__(self):
        for name in ('picard_tol', 'continuation_tol', 'polish_tol'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.picard_max_iter < 1 or self.polish_max_iter < 1:
            raise ConfigError("iteration limits must be at least 1")
        if not 0 < self.relaxation <= 1:
            raise ConfigError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if self.retries < 0:
            raise ConfigError(f"retries must be non-negative, got {self.retries}")
        sigmas = self.j_schedule
        if not sigmas or any(not 0 < s < 1 for s in sigmas) or any(b >= a for a, b in zip(sigmas, sigmas[1:])):
            raise ConfigError("j_schedule must be a strictly decreasing sequence in (0, 1)")

    def j_values(self, J: float):
        """j_t with j_t^2 = J^2 (1 - sigma_t)."""
        return [J * math.sqrt(1.0 - s) for s in self.j_schedule]


def _require_hypotheses(config: ProblemConfig, doping: DopingProfile):
    report = check_subsonic_hypotheses(config, doping)
    if not report.satisfied:
        failed = ', '.join(c.name for c in report.conditions if not c.satisfied)
        raise HypothesisError(f"subsonic hypotheses fail: {failed}", report)
    return report


def upper_bound_N(config: ProblemConfig, doping: DopingProfile) -> float:
    """B_sup + 1/tau for n = 2, calB_sup for n = 3."""
    report = _require_hypotheses(config, doping)
    if config.n == 2:
        return report.B_sup + 1.0 / config.tau
    return report.calB_sup


def _coefficient(m, j, config, r):
    return r ** (config.n - 1) * (1.0 / m - j * j / m ** 3)


def linearized_step(m_bar: Profile, j: float, config: ProblemConfig, doping: DopingProfile,
                    grid: Optional[RadialGrid] = None, N: Optional[float] = None, clamp: bool = True,
                    upwind: bool = False, stats: Optional[dict] = None) -> Profile:
    """
    One application of the frozen-coefficient map: solve
    [a m_r]_r + b m_r - m = f with a, b and f built from m_bar, m = J at both ends.
    :param N: upper end of the clamping box; computed from the hypotheses when omitted
    :param stats: optional dict; 'bound_violations' is incremented for every clamped node
    """
    grid = grid or m_bar.grid
    if not grid.same_as(m_bar.grid):
        raise DomainError("m_bar does not live on the requested grid")
    J = config.J
    r = grid.nodes
    mb = m_bar.values
    below = np.flatnonzero(mb <= j)
    if below.size:
        i = int(below[0])
        raise IterateOutOfBandError(f"iterate {mb[i]:.6g} <= j={j:.6g} at node {i} (r={r[i]:.6g})", node=i)
    n = config.n
    weight = r ** (n - 1)
    bvp = LinearBVP(grid=grid,
                    a=_coefficient(mb, j, config, r),
                    b=-weight * J / (config.tau * mb ** 2),
                    c=-1.0,
                    f=-eval_B(doping, config, r) - (n - 1) * r ** (n - 2) * J / (config.tau * mb)
                      + geometric_source(config, r),
                    alpha=J, beta=J, upwind=upwind)
    m_next = solve_bvp(bvp)
    if not clamp:
        return m_next
    N = upper_bound_N(config, doping) if N is None else N
    values = m_next.values
    outside = np.flatnonzero((values < J - BOX_SLACK) | (values > N + BOX_SLACK))
    if outside.size:
        logging.debug(f"Clamping {outside.size} node(s) into [{J:g}, {N:g}] at j={j:.12g}; "
                      f"first at node {int(outside[0])} with value {values[outside[0]]:.6g}")
        if stats is not None:
            stats['bound_violations'] = stats.get('bound_violations', 0) + int(outside.size)
    return m_next.with_values(np.clip(values, J, N))


def solve_regularized(j: float, config: ProblemConfig, doping: DopingProfile, grid: RadialGrid,
                      init: Optional[Profile] = None, params: Optional[SubsonicParams] = None,
                      stats: Optional[dict] = None, relaxation: Optional[float] = None) -> Profile:
    """
    Picard iteration m <- (1 - w) m + w T(m) of `linearized_step` T until sup |T(m) - m| < picard_tol.
    :param init: starting profile in [J, N]; defaults to m = J
    :param relaxation: overrides params.relaxation (used by run_with_retries)
    """
    params = params or SubsonicParams()
    J = config.J
    if not 0 < j < J:
        raise DomainError(f"need 0 < j < J, got j={j} with J={J}")
    N = upper_bound_N(config, doping)
    omega = params.relaxation if relaxation is None else relaxation
    stats = {} if stats is None else stats

    m = init if init is not None else Profile(grid, np.full(grid.nodes.size, J))
    if not grid.same_as(m.grid):
        raise DomainError("initial profile does not live on the solver grid")
    if np.any(m.values < J - BOX_SLACK) or np.any(m.values > N + BOX_SLACK):
        raise DomainError(f"initial profile leaves the box [{J:g}, {N:g}]")

    history = []
    for it in range(1, params.picard_max_iter + 1):
        step = linearized_step(m, j, config, doping, grid, N=N, clamp=params.clamp,
                               upwind=params.upwind, stats=stats)
        change = step.sup_distance(m)
        history.append(change)
        if not math.isfinite(change):
            raise DivergenceError(f"Picard iteration at j={j:.12g} produced non-finite values", history)
        m = step if omega == 1.0 else m.with_values((1.0 - omega) * m.values + omega * step.values)
        logging.debug(f"Picard j={j:.12g} iteration {it}: change {change:.3e}")
        if change < params.picard_tol:
            stats['iterations'] = it
            values = m.values.copy()
            values[0] = values[-1] = J
            return m.with_values(values)
    raise DivergenceError(f"Picard iteration at j={j:.12g} did not converge in {params.picard_max_iter} "
                          f"iterations (last change {history[-1]:.3e})", history)


def fit_lambda(m: Profile, J: float) -> float:
    """Largest lambda with m >= J + lambda sin(pi (r - r0)/(r1 - r0)) at every interior node (never below 0)."""
    x = m.r
    s = np.sin(np.pi * (x[1:-1] - x[0]) / (x[-1] - x[0]))
    return max(0.0, float(np.min((m.values[1:-1] - J) / s)))


def _starting_profile(init, grid, J, N):
    if init is None:
        return Profile(grid, np.full(grid.nodes.size, J))
    values = np.clip(np.array(init.values, dtype=float), J, N)
    values[0] = values[-1] = J
    return Profile(grid, values)


def continuation_solve(config: ProblemConfig, doping: DopingProfile, grid: RadialGrid,
                       params: Optional[SubsonicParams] = None, init: Optional[Profile] = None) -> Solution:
    """
    Solve along params.j_schedule, warm-starting every stage, then polish the last stage
    into a discrete weak solution at j = J.
    """
    params = params or SubsonicParams()
    _require_hypotheses(config, doping)
    J = config.J
    N = upper_bound_N(config, doping)
    logging.info(f"Subsonic continuation: n={config.n}, J={J:g}, N={N:g}, {grid.intervals} intervals "
                 f"({grid.spacing_kind}), {len(params.j_schedule)} stages")

    current = _starting_profile(init, grid, J, N)
    previous = None
    diag = {'iteration_counts': [], 'stage_differences': [], 'flux_defect_energy': [],
            'min_coefficient': [], 'lambda_stages': [], 'bound_violations': 0}
    j = None
    for stage, j in enumerate(params.j_values(J)):
        stats = {}
        current = run_with_retries(solve_regularized, params.retries, params.relaxation, 0.5,
                                   j=j, config=config, doping=doping, grid=grid, init=current,
                                   params=params, stats=stats)
        diag['iteration_counts'].append(stats.get('iterations'))
        diag['bound_violations'] += stats.get('bound_violations', 0)
        diag['flux_defect_energy'].append(regularization_energy(current, j, config))
        coefficient = _coefficient(current.values, j, config, grid.nodes)
        diag['min_coefficient'].append(float(coefficient.min()))
        diag['lambda_stages'].append(fit_lambda(current, J))
        if previous is not None:
            diag['stage_differences'].append(current.sup_distance(previous))
        logging.info(f"Stage {stage}: j={j:.12g}, {stats.get('iterations')} Picard iterations, "
                     f"lambda*={diag['lambda_stages'][-1]:.6g}, min a={coefficient.min():.3e} "
                     f"at r={grid.nodes[int(np.argmin(coefficient))]:.6g}")
        previous = current
        if continuation_should_stop(diag['stage_differences'], params.continuation_tol, 'subsonic continuation'):
            logging.info(f"Subsonic continuation converged at stage {stage} "
                         f"(difference {diag['stage_differences'][-1]:.3e})")
            break
    else:
        logging.info(f"Subsonic schedule exhausted at j={j:.12g}; using the last stage")

    values = np.array(current.values)
    values[0] = values[-1] = J
    stage = Profile(grid, values.copy())
    diag.update(polished=False, polish_iterations=0, polish_residual=None)
    if params.polish:
        polished, ok, iterations, norm = polish_or_keep(values, grid, config, doping, 'subsonic',
                                                        params.polish_tol, params.polish_max_iter)
        if ok and np.max(polished) > N + BOX_SLACK:
            logging.warning(f"Polished profile exceeds N={N:g}; keeping the last continuation stage")
        elif ok:
            values = polished
            diag.update(polished=True, polish_iterations=iterations, polish_residual=norm)
    values[0] = values[-1] = J
    m = Profile(grid, values)

    linf, l2 = weak_residual(m, config, doping)
    stage_linf, stage_l2 = weak_residual(stage, config, doping)
    diag.update(weak_residual_linf=linf, weak_residual_l2=l2, lambda_star=fit_lambda(m, J),
                holder_seminorm=holder_seminorm(m), upper_bound_N=N, j_final=j,
                stage_weak_residual_linf=stage_linf, stage_weak_residual_l2=stage_l2,
                polish_shift=m.sup_distance(stage), reg_param_effective=J if diag['polished'] else j)
    if not np.all(values[1:-1] > J):
        logging.warning("Subsonic solution touches J at an interior node")
    return Solution(regime='subsonic', m=m, reg_param=j, diagnostics=diag)
