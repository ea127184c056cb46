#!/usr/bin/env python3

import numpy as np
import pytest

from helper_functions import ConfigError, DomainError, HypothesisError, IterateOutOfBandError
from linear_bvp import LinearBVP
from problem_model import DopingProfile, Profile, ProblemConfig, RadialGrid, eval_B
from shooting_oracle import dense_reference_solve, shoot
from subsonic_solver import (SubsonicParams, continuation_solve, fit_lambda, linearized_step, solve_regularized,
                             upper_bound_N)
from verification import check_pointwise_domination

SLACK = 1e-9


def canonical(n, scale=1.0, tau=1.0, j0=1.0):
    config = ProblemConfig(n=n, r0=1.0, r1=2.0, tau=tau, j0=j0)
    return config, DopingProfile(kind='constant', value=scale * (2.0 if n == 2 else 3.0))


@pytest.fixture(scope='module')
def solved_n2():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 1024)
    return continuation_solve(config, doping, grid)


@pytest.fixture(scope='module')
def refinement_n2(solved_n2):
    config, doping = canonical(2)
    runs = {intervals: continuation_solve(config, doping, RadialGrid.build(1.0, 2.0, intervals))
            for intervals in (256, 512)}
    runs[1024] = solved_n2
    return runs


@pytest.mark.parametrize('n, tau, expected', [
    (2, 1.0, 5.0),
    (3, 1.0, 14.0),
    (2, 1e12, 4.0),
])
def test_upper_bound(n, tau, expected):
    config, doping = canonical(n, tau=tau)
    assert upper_bound_N(config, doping) == pytest.approx(expected, abs=1e-9)


def test_upper_bound_requires_hypotheses():
    config, doping = canonical(2, j0=10.0)
    with pytest.raises(HypothesisError) as info:
        upper_bound_N(config, doping)
    assert not info.value.report.satisfied


def test_params_validation():
    with pytest.raises(ConfigError):
        SubsonicParams(picard_tol=0.0)
    with pytest.raises(ConfigError):
        SubsonicParams(j_schedule=(0.5, 0.5))
    with pytest.raises(ConfigError):
        SubsonicParams(relaxation=1.5)
    assert len(SubsonicParams().j_values(1.0)) == 15


def test_linearized_step_matches_hand_assembled_dense_solve():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 256)
    r = grid.nodes
    J, j, tau = config.J, 0.5, config.tau
    m_bar = np.full(r.size, J + 0.5)
    step = linearized_step(Profile(grid, m_bar), j, config, doping, clamp=False)
    bvp = LinearBVP(grid=grid, a=r * (1.0 / m_bar - j ** 2 / m_bar ** 3), b=-r * J / (tau * m_bar ** 2), c=-1.0,
                    f=-eval_B(doping, config, r) - J / (tau * m_bar), alpha=J, beta=J)
    reference = dense_reference_solve(bvp)
    np.testing.assert_allclose(step.values, reference.values, rtol=0, atol=1e-10)


def test_linearized_step_rejects_iterates_below_j():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 32)
    m_bar = np.full(33, 1.2)
    m_bar[7] = 0.4
    with pytest.raises(IterateOutOfBandError) as info:
        linearized_step(Profile(grid, m_bar), 0.5, config, doping)
    assert info.value.node == 7


def test_clamped_step_stays_in_box():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 64)
    stats = {}
    step = linearized_step(Profile(grid, np.full(65, 4.9)), 0.99, config, doping, stats=stats)
    assert step.values.min() >= config.J and step.values.max() <= 5.0
    assert step.values[0] == config.J and step.values[-1] == config.J


@pytest.mark.parametrize('n', [2, 3])
def test_regularized_solution_matches_shooting_at_second_order(n):
    config, doping = canonical(n)
    errors = []
    for intervals in (256, 512, 1024):
        grid = RadialGrid.build(1.0, 2.0, intervals)
        m_j = solve_regularized(0.9, config, doping, grid)
        reference = shoot('subsonic', 0.9, config, doping, steps=4096, grid=grid).profile
        assert m_j.values[0] == config.J and m_j.values[-1] == config.J
        errors.append(m_j.sup_distance(reference))
        assert errors[-1] <= 10.0 * grid.h[0] ** 2
    assert all(coarse / fine >= 3.5 for coarse, fine in zip(errors, errors[1:]))


def test_regularized_solution_respects_box_and_subsolution():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 256)
    N = upper_bound_N(config, doping)
    for j in (0.5, 0.9, 0.99):
        m_j = solve_regularized(j, config, doping, grid)
        assert m_j.values.min() >= config.J - SLACK and m_j.values.max() <= N + SLACK
        lam = fit_lambda(m_j, config.J)
        assert lam > 0
        subsolution = config.J + lam * np.sin(np.pi * (grid.nodes - 1.0))
        ok, node = check_pointwise_domination(m_j, m_j.with_values(subsolution))
        assert ok, node


def test_regularized_solve_rejects_bad_inputs():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 32)
    with pytest.raises(DomainError):
        solve_regularized(1.0, config, doping, grid)
    with pytest.raises(DomainError):
        solve_regularized(0.9, config, doping, grid, init=Profile(grid, np.full(33, 10.0)))


def test_fit_lambda_examples():
    grid = RadialGrid.build(1.0, 2.0, 64)
    s = np.sin(np.pi * (grid.nodes - 1.0))
    assert fit_lambda(Profile(grid, 1.0 + s), 1.0) == pytest.approx(1.0, abs=1e-12)
    assert fit_lambda(Profile(grid, np.ones(65)), 1.0) == 0.0


def test_continuation_result_is_an_interior_subsonic_solution(solved_n2):
    m = solved_n2.m.values
    d = solved_n2.diagnostics
    assert solved_n2.regime == 'subsonic'
    assert m[0] == 1.0 and m[-1] == 1.0
    assert np.all(m[1:-1] > 1.0)
    assert m.max() <= 5.0 + SLACK
    assert d['lambda_star'] > 0
    assert d['weak_residual_linf'] < 1e-4
    assert d['polished']
    assert np.isfinite(d['holder_seminorm'])
    assert d['flux_defect_energy'][-1] < d['flux_defect_energy'][0]


def test_degenerate_coefficient_shrinks_along_the_schedule(solved_n2):
    mins = solved_n2.diagnostics['min_coefficient']
    assert mins[-1] < mins[0]
    assert all(v > 0 for v in mins)


def test_scaled_doping_stays_below_upper_bound():
    config, doping = canonical(2, scale=10.0)
    grid = RadialGrid.build(1.0, 2.0, 256)
    solution = continuation_solve(config, doping, grid)
    assert solution.m.values.max() <= 41.0 + SLACK
    assert np.all(solution.m.values[1:-1] > config.J)


def test_result_does_not_depend_on_initial_guess():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 256)
    N = upper_bound_N(config, doping)
    low = continuation_solve(config, doping, grid, init=Profile(grid, np.full(257, config.J)))
    high = continuation_solve(config, doping, grid, init=Profile(grid, np.full(257, N)))
    assert low.m.sup_distance(high.m) < 1e-7


def test_n3_continuation_converges():
    config, doping = canonical(3)
    grid = RadialGrid.build(1.0, 2.0, 512)
    solution = continuation_solve(config, doping, grid)
    m = solution.m.values
    assert np.all(m[1:-1] > 1.0) and m.max() <= 14.0 + SLACK
    assert solution.diagnostics['lambda_star'] > 0


def test_continuation_refuses_unsatisfied_hypotheses():
    config, doping = canonical(2, j0=10.0)
    with pytest.raises(HypothesisError):
        continuation_solve(config, doping, RadialGrid.build(1.0, 2.0, 32))


def test_polish_shift_halves_under_grid_doubling(refinement_n2):
    shifts = [refinement_n2[n].diagnostics['polish_shift'] for n in (256, 512, 1024)]
    assert all(s > 0 for s in shifts)
    assert all(coarse / fine >= 1.8 for coarse, fine in zip(shifts, shifts[1:]))


def test_last_stage_residual_shows_the_square_root_boundary_layer(refinement_n2):
    # |R_i| falls like h^(1/2) near the sonic ends, so |R_i|/h_i grows like h^(-1/2)
    stage = {n: refinement_n2[n].diagnostics['stage_weak_residual_linf'] for n in (256, 512, 1024)}
    polished = {n: refinement_n2[n].diagnostics['weak_residual_linf'] for n in (256, 512, 1024)}
    for coarse, fine in ((256, 512), (512, 1024)):
        assert 1.0 < stage[fine] / stage[coarse] < 2.0
        assert (stage[coarse] / coarse) / (stage[fine] / fine) >= 1.25
    assert all(polished[n] < 1e-3 * stage[n] for n in stage)


def test_lambda_star_is_stable_under_refinement(refinement_n2):
    lambdas = [refinement_n2[n].diagnostics['lambda_star'] for n in (256, 512, 1024)]
    assert all(lam > 0 for lam in lambdas)
    assert all(fine >= 0.9 * coarse for coarse, fine in zip(lambdas, lambdas[1:]))


def test_effective_parameter_reports_the_polish(refinement_n2):
    d = refinement_n2[256].diagnostics
    assert d['polished'] and d['reg_param_effective'] == 1.0
    assert refinement_n2[256].reg_param < 1.0


def test_unpolished_run_keeps_the_last_stage():
    config, doping = canonical(2)
    grid = RadialGrid.build(1.0, 2.0, 256)
    solution = continuation_solve(config, doping, grid, params=SubsonicParams(polish=False))
    d = solution.diagnostics
    assert not d['polished']
    assert d['reg_param_effective'] == solution.reg_param == d['j_final']
    assert d['polish_shift'] == 0.0
    assert d['weak_residual_linf'] == d['stage_weak_residual_linf']
