"""
Interior supersonic solutions (0 < m < J inside, m = J at r0 and r1).

With k > J and v = k/m the regularized equation becomes a quasilinear problem
for v >= k0 = k/J, solved by two nested Picard loops: the outer loop freezes v
as eta in the source and in (eta + 1)/eta, the inner loop freezes the factor
(xi - 1). k is then driven towards J and the last stage is polished like the
subsonic one.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from helper_functions import (BoundViolationError, ConfigError, DivergenceError, DomainError,
                              HypothesisError, IterateOutOfBandError, continuation_should_stop,
                              run_with_retries)
from linear_bvp import LinearBVP, solve_bvp
from problem_model import (DopingProfile, Profile, ProblemConfig, RadialGrid, Solution,
                           check_supersonic_hypotheses, eval_B, geometric_source)
from verification import holder_seminorm, interior_gap, weak_residual
from weak_form import polish_or_keep

BOUND_SLACK = 1e-9
SONIC_TOUCH = 1e-12


def default_k0_schedule():
    return tuple(1.0 + 0.5 * 4.0 ** (-t) for t in range(15))


@dataclass(frozen=True)
class SupersonicParams:
    inner_tol: float = 1e-10
    inner_max_iter: int = 200
    outer_tol: float = 1e-9
    outer_max_iter: int = 200
    k_schedule: tuple = field(default_factory=default_k0_schedule)
    continuation_tol: float = 1e-8
    clamp: bool = True
    inner_relaxation: float = 0.5
    outer_relaxation: float = 1.0
    retries: int = 2
    polish: bool = True
    polish_tol: float = 1e-9
    polish_max_iter: int = 50
    upwind: bool = False

    def __post_init__(self):
        for name in ('inner_tol', 'outer_tol', 'continuation_tol', 'polish_tol'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if min(self.inner_max_iter, self.outer_max_iter, self.polish_max_iter) < 1:
            raise ConfigError("iteration limits must be at least 1")
        for name in ('inner_relaxation', 'outer_relaxation'):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {getattr(self, name)}")
        if self.retries < 0:
            raise ConfigError(f"retries must be non-negative, got {self.retries}")
        k0s = self.k_schedule
        if not k0s or any(k0 <= 1 for k0 in k0s) or any(b >= a for a, b in zip(k0s, k0s[1:])):
            raise ConfigError("k_schedule must be a strictly decreasing sequence above 1")


def _require_hypotheses(config: ProblemConfig, doping: DopingProfile):
    report = check_supersonic_hypotheses(config, doping)
    if not report.satisfied:
        failed = ', '.join(c.name for c in report.conditions if not c.satisfied)
        raise HypothesisError(f"supersonic hypotheses fail: {failed}", report)
    return report


def to_v(m: Profile, k: float) -> Profile:
    if np.any(m.values <= 0):
        raise DomainError("to_v needs a strictly positive profile")
    return m.with_values(k / m.values)


def from_v(v: Profile, k: float) -> Profile:
    if np.any(v.values <= 0):
        raise DomainError("from_v needs a strictly positive profile")
    return v.with_values(k / v.values)


def inner_step(xi: Profile, eta: Profile, k: float, config: ProblemConfig, doping: DopingProfile,
               grid: Optional[RadialGrid] = None, boundary: Optional[float] = None,
               upwind: bool = False) -> Profile:
    """
    Solve [r^(n-1) (eta+1)(xi-1)/eta zeta_r]_r + (r^(n-1)/tau) zeta_r = G with
    G = B - (n-1)(n-2) r^(n-3) + (n-1) r^(n-2) eta/tau - k/eta and zeta = boundary
    (default k/J) at both ends.
    """
    grid = grid or xi.grid
    if not (grid.same_as(xi.grid) and grid.same_as(eta.grid)):
        raise DomainError("xi and eta must live on the requested grid")
    r = grid.nodes
    bad = np.flatnonzero(xi.values <= 1.0)
    if bad.size:
        i = int(bad[0])
        raise IterateOutOfBandError(f"frozen coefficient xi={xi.values[i]:.6g} <= 1 at node {i} (r={r[i]:.6g})",
                                    node=i)
    if np.any(eta.values <= 0):
        raise DomainError("eta must be strictly positive")
    n = config.n
    weight = r ** (n - 1)
    e = eta.values
    G = (eval_B(doping, config, r) - geometric_source(config, r)
         + (n - 1) * r ** (n - 2) * e / config.tau - k / e)
    value = k / config.J if boundary is None else boundary
    bvp = LinearBVP(grid=grid, a=weight * (e + 1.0) * (xi.values - 1.0) / e, b=weight / config.tau,
                    c=0.0, f=-G, alpha=value, beta=value, upwind=upwind)
    return solve_bvp(bvp)


def _clamp_below(profile: Profile, floor: float, clamp: bool, stats: dict, label: str) -> Profile:
    values = profile.values
    low = np.flatnonzero(values < floor - BOUND_SLACK)
    if not low.size:
        return profile
    i = int(low[0])
    message = (f"{label}: v={values[i]:.6g} below {floor:.12g} at node {i} "
               f"(r={profile.r[i]:.6g}), {low.size} node(s) in all")
    if not clamp:
        raise BoundViolationError(message, node=i)
    logging.debug(message)
    stats['bound_violations'] = stats.get('bound_violations', 0) + int(low.size)
    return profile.with_values(np.maximum(values, floor))


def outer_step(eta: Profile, k: float, config: ProblemConfig, doping: DopingProfile,
               grid: Optional[RadialGrid] = None, params: Optional[SupersonicParams] = None,
               init: Optional[Profile] = None, boundary: Optional[float] = None,
               relaxation: Optional[float] = None, stats: Optional[dict] = None) -> Profile:
    """
    Inner Picard loop on xi with eta frozen; returns the solution v of the quasilinear problem.
    :param init: first xi (defaults to eta)
    """
    params = params or SupersonicParams()
    grid = grid or eta.grid
    stats = {} if stats is None else stats
    floor = k / config.J if boundary is None else boundary
    omega = params.inner_relaxation if relaxation is None else relaxation
    xi = init if init is not None else eta
    history = []
    for it in range(1, params.inner_max_iter + 1):
        zeta = inner_step(xi, eta, k, config, doping, grid, boundary=floor, upwind=params.upwind)
        zeta = _clamp_below(zeta, floor, params.clamp, stats, 'inner step')
        change = zeta.sup_distance(xi)
        history.append(change)
        if not math.isfinite(change):
            raise DivergenceError(f"inner iteration at k={k:.12g} produced non-finite values", history)
        xi = zeta if omega == 1.0 else xi.with_values((1.0 - omega) * xi.values + omega * zeta.values)
        if change < params.inner_tol:
            stats['inner_iterations'] = stats.get('inner_iterations', 0) + it
            return xi
    raise DivergenceError(f"inner iteration at k={k:.12g} did not converge in {params.inner_max_iter} "
                          f"iterations (last change {history[-1]:.3e})", history)


def solve_v_problem(k: float, boundary: float, config: ProblemConfig, doping: DopingProfile,
                    grid: RadialGrid, params: Optional[SupersonicParams] = None,
                    init: Optional[Profile] = None, relaxation: Optional[float] = None,
                    stats: Optional[dict] = None) -> Profile:
    """
    Outer Picard loop for v with Dirichlet value `boundary` at both ends.
    :param relaxation: inner relaxation factor; the outer factor is scaled by the same ratio
    """
    params = params or SupersonicParams()
    stats = {} if stats is None else stats
    if not boundary > 1:
        raise DomainError(f"boundary value must exceed 1, got {boundary}")
    scale = 1.0 if relaxation is None else relaxation / params.inner_relaxation
    inner_omega = params.inner_relaxation * scale
    outer_omega = params.outer_relaxation * scale

    eta = init if init is not None else Profile(grid, np.full(grid.nodes.size, boundary))
    if not grid.same_as(eta.grid):
        raise DomainError("initial profile does not live on the solver grid")
    eta = _clamp_below(eta, boundary, True, stats, 'initial guess')
    v_max = float(eta.values.max())
    history = []
    for it in range(1, params.outer_max_iter + 1):
        v = outer_step(eta, k, config, doping, grid, params, init=eta, boundary=boundary,
                       relaxation=inner_omega, stats=stats)
        change = v.sup_distance(eta)
        history.append(change)
        eta = v if outer_omega == 1.0 else eta.with_values((1.0 - outer_omega) * eta.values + outer_omega * v.values)
        if float(eta.values.min()) < boundary - BOUND_SLACK:
            raise BoundViolationError(f"outer iterate fell below {boundary:.12g} at k={k:.12g}",
                                      node=int(np.argmin(eta.values)))
        v_max = max(v_max, float(eta.values.max()))
        logging.debug(f"Outer k={k:.12g} iteration {it}: change {change:.3e}")
        if change < params.outer_tol:
            stats['outer_iterations'] = it
            stats['v_max'] = v_max
            values = eta.values.copy()
            values[0] = values[-1] = boundary
            return eta.with_values(values)
    raise DivergenceError(f"outer iteration at k={k:.12g} did not converge in {params.outer_max_iter} "
                          f"iterations (last change {history[-1]:.3e})", history)


def solve_regularized_supersonic(k: float, config: ProblemConfig, doping: DopingProfile, grid: RadialGrid,
                                 params: Optional[SupersonicParams] = None, init: Optional[Profile] = None,
                                 stats: Optional[dict] = None, relaxation: Optional[float] = None) -> Profile:
    """m_k = k / v_k for the v-problem with boundary value k0 = k/J; `init` is an m-profile."""
    params = params or SupersonicParams()
    J = config.J
    if not k > J:
        raise DomainError(f"need k > J, got k={k} with J={J}")
    _require_hypotheses(config, doping)
    k0 = k / J
    v_init = None
    if init is not None:
        values = np.maximum(to_v(init, k).values, k0)
        values[0] = values[-1] = k0
        v_init = init.with_values(values)
    v = solve_v_problem(k, k0, config, doping, grid, params, init=v_init, relaxation=relaxation, stats=stats)
    m = from_v(v, k).values.copy()
    m[0] = m[-1] = J
    return Profile(grid, np.minimum(m, J))


def continuation_solve_supersonic(config: ProblemConfig, doping: DopingProfile, grid: RadialGrid,
                                  params: Optional[SupersonicParams] = None,
                                  init: Optional[Profile] = None) -> Solution:
    """Continuation k -> J+ along params.k_schedule, starting from v = k0, then the weak-form polish."""
    params = params or SupersonicParams()
    _require_hypotheses(config, doping)
    J = config.J
    logging.info(f"Supersonic continuation: n={config.n}, J={J:g}, {grid.intervals} intervals "
                 f"({grid.spacing_kind}), {len(params.k_schedule)} stages")
    if init is not None:
        logging.info("Supersonic continuation started from a caller-supplied profile; "
                     "other starting points may reach other solutions")

    current = init
    previous = None
    diag = {'iteration_counts': [], 'inner_iterations': [], 'stage_differences': [], 'v_max': [],
            'ell_stages': [], 'bound_violations': 0}
    k = None
    for stage, k0 in enumerate(params.k_schedule):
        k = k0 * J
        stats = {}
        current = run_with_retries(solve_regularized_supersonic, params.retries, params.inner_relaxation, 0.5,
                                   k=k, config=config, doping=doping, grid=grid, params=params,
                                   init=current, stats=stats)
        diag['iteration_counts'].append(stats.get('outer_iterations'))
        diag['inner_iterations'].append(stats.get('inner_iterations'))
        diag['bound_violations'] += stats.get('bound_violations', 0)
        diag['v_max'].append(stats.get('v_max'))
        diag['ell_stages'].append(float(current.values.min()))
        if previous is not None:
            diag['stage_differences'].append(current.sup_distance(previous))
        logging.info(f"Stage {stage}: k0={k0:.12g}, {stats.get('outer_iterations')} outer / "
                     f"{stats.get('inner_iterations')} inner iterations, ell={diag['ell_stages'][-1]:.6g}, "
                     f"v_max={stats.get('v_max'):.6g}")
        previous = current
        if continuation_should_stop(diag['stage_differences'], params.continuation_tol, 'supersonic continuation'):
            logging.info(f"Supersonic continuation converged at stage {stage} "
                         f"(difference {diag['stage_differences'][-1]:.3e})")
            break
    else:
        logging.info(f"Supersonic schedule exhausted at k={k:.12g}; using the last stage")

    growth = max(diag['v_max']) / diag['v_max'][0]
    diag['v_max_growth'] = growth
    if growth > 2:
        logging.warning(f"v_max grew by a factor {growth:.3g} across the k schedule")

    values = np.array(current.values)
    values[0] = values[-1] = J
    stage = Profile(grid, values.copy())
    diag.update(polished=False, polish_iterations=0, polish_residual=None)
    if params.polish:
        polished, ok, iterations, norm = polish_or_keep(values, grid, config, doping, 'supersonic',
                                                        params.polish_tol, params.polish_max_iter)
        if ok:
            values = polished
            diag.update(polished=True, polish_iterations=iterations, polish_residual=norm)
    values[0] = values[-1] = J
    m = Profile(grid, values)

    interior = values[1:-1]
    if np.any(interior >= J - SONIC_TOUCH):
        node = int(np.argmax(interior)) + 1
        logging.warning(f"Supersonic solution touches J at interior node {node} (r={grid.nodes[node]:.6g})")
    linf, l2 = weak_residual(m, config, doping)
    stage_linf, stage_l2 = weak_residual(stage, config, doping)
    delta = 0.1 * (config.r1 - config.r0)
    diag.update(weak_residual_linf=linf, weak_residual_l2=l2, ell=float(values.min()),
                holder_seminorm=holder_seminorm(m), interior_gap=interior_gap(m, J, delta),
                interior_gap_delta=delta, k_final=k,
                stage_weak_residual_linf=stage_linf, stage_weak_residual_l2=stage_l2,
                polish_shift=m.sup_distance(stage), reg_param_effective=J if diag['polished'] else k)
    return Solution(regime='supersonic', m=m, reg_param=k, diagnostics=diag)
