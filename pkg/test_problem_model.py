#!/usr/bin/env python3

import json

import numpy as np
import pytest

from helper_functions import ConfigError, DomainError
from problem_model import (DopingProfile, Profile, ProblemConfig, RadialGrid, band_extrema, check_hypotheses,
                           check_subsonic_hypotheses, check_supersonic_hypotheses, derive_flux_constant, eval_B,
                           geometric_source, load_problem, problem_from_dict, problem_to_dict,
                           sonic_boundary_densities)


def canonical(n):
    config = ProblemConfig(n=n, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    return config, DopingProfile(kind='constant', value=2.0 if n == 2 else 3.0)


def test_flux_constant_and_sonic_densities():
    config = ProblemConfig(n=3, r0=2.0, r1=4.0, tau=1.0, j0=0.5)
    assert derive_flux_constant(config) == pytest.approx(2.0)
    rho0, rho1 = sonic_boundary_densities(config)
    assert rho0 == 0.5
    assert rho1 == pytest.approx(0.125)


@pytest.mark.parametrize('kwargs', [
    dict(n=4, r0=1.0, r1=2.0, tau=1.0, j0=1.0),
    dict(n=2, r0=0.0, r1=2.0, tau=1.0, j0=1.0),
    dict(n=2, r0=2.0, r1=1.0, tau=1.0, j0=1.0),
    dict(n=2, r0=1.0, r1=2.0, tau=0.0, j0=1.0),
    dict(n=2, r0=1.0, r1=2.0, tau=1.0, j0=-1.0),
])
def test_problem_config_rejects_bad_parameters(kwargs):
    with pytest.raises(ConfigError):
        ProblemConfig(**kwargs)


def test_eval_B_and_geometric_source():
    config, doping = canonical(3)
    r = np.array([1.0, 1.5, 2.0])
    np.testing.assert_allclose(eval_B(doping, config, r), 3.0 * r ** 2)
    assert eval_B(doping, config, 1.5) == pytest.approx(6.75)
    np.testing.assert_allclose(geometric_source(config, r), 2.0)
    assert np.all(geometric_source(canonical(2)[0], r) == 0.0)
    with pytest.raises(DomainError):
        eval_B(doping, config, 2.5)


def test_doping_kinds():
    config, _ = canonical(2)
    poly = DopingProfile(kind='poly', coeffs=(1.0, 2.0))
    pwl = DopingProfile(kind='pwl', knots=((1.0, 1.0), (2.0, 3.0)))
    assert eval_B(poly, config, 1.5) == pytest.approx(1.5 * 4.0)
    assert eval_B(pwl, config, 1.5) == pytest.approx(1.5 * 2.0)
    assert pwl.scaled(2.0).btilde(1.5) == pytest.approx(4.0)
    with pytest.raises(ConfigError):
        DopingProfile(kind='pwl', knots=((1.0, 1.0), (1.0, 2.0)))
    with pytest.raises(ConfigError):
        DopingProfile(kind='spline')


def test_doping_validation_catches_short_knots_and_sign():
    config, _ = canonical(2)
    with pytest.raises(ConfigError, match='cover'):
        DopingProfile(kind='pwl', knots=((1.0, 1.0), (1.5, 1.0))).validate(config)
    with pytest.raises(ConfigError, match='positive'):
        DopingProfile(kind='poly', coeffs=(1.0, -1.0)).validate(config)


def test_subsonic_margins_n2():
    config, doping = canonical(2)
    report = check_subsonic_hypotheses(config, doping)
    assert report.satisfied
    assert [c.margin for c in report.conditions] == pytest.approx([4.0, 1.2], abs=1e-12)


def test_subsonic_margins_n3():
    config, doping = canonical(3)
    report = check_subsonic_hypotheses(config, doping)
    assert report.calB_sup == pytest.approx(14.0, abs=1e-12)
    assert [c.margin for c in report.conditions] == pytest.approx([13.0, 1.0 / 7.0], abs=1e-12)


@pytest.mark.parametrize('n, margin', [(2, 2.0), (3, 2.0)])
def test_supersonic_margins(n, margin):
    config, doping = canonical(n)
    report = check_supersonic_hypotheses(config, doping)
    assert report.satisfied
    assert report.conditions[0].margin == pytest.approx(margin, abs=1e-12)


def test_large_flux_fails_both_regimes():
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=10.0)
    doping = DopingProfile(kind='constant', value=2.0)
    assert not check_hypotheses('subsonic', config, doping).satisfied
    assert not check_hypotheses('supersonic', config, doping).satisfied


def test_interior_extremum_of_polynomial_weight_is_found():
    # B = r (3 - r)^2 + 1 on [0.5, 2.5] has a local minimum at r = 3 outside and a maximum at r = 1
    config = ProblemConfig(n=2, r0=0.5, r1=2.5, tau=1.0, j0=1.0)
    doping = DopingProfile(kind='poly', coeffs=(9.0, -6.0, 1.0))
    ext = band_extrema(doping, config)
    assert ext.B_sup == pytest.approx(4.0, abs=1e-12)


def test_band_extrema_needs_enough_samples():
    config, doping = canonical(2)
    with pytest.raises(ConfigError):
        band_extrema(doping, config, samples=100)


def test_subsonic_hypotheses_imply_supersonic_ones():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(200):
        n = int(rng.choice([2, 3]))
        config = ProblemConfig(n=n, r0=1.0, r1=float(rng.uniform(1.2, 3.0)), tau=float(rng.uniform(0.2, 5.0)),
                               j0=float(rng.uniform(0.1, 3.0)))
        doping = DopingProfile(kind='constant', value=float(rng.uniform(0.1, 5.0)))
        if check_subsonic_hypotheses(config, doping).satisfied:
            checked += 1
            assert check_supersonic_hypotheses(config, doping).satisfied
    assert checked > 20


def test_grid_construction():
    grid = RadialGrid.build(1.0, 2.0, 16, 'clustered')
    assert grid.nodes[0] == 1.0 and grid.nodes[-1] == 2.0
    assert grid.h[0] < grid.h[8]
    np.testing.assert_allclose(grid.nodes - 1.0, (2.0 - grid.nodes)[::-1], atol=1e-15)
    with pytest.raises(ConfigError):
        RadialGrid.build(1.0, 2.0, 4)
    with pytest.raises(ConfigError):
        RadialGrid(np.array([1.0, 1.1, 1.05, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7]))
    with pytest.raises(ValueError):
        grid.nodes[3] = 0.0


def test_profile_checks_length_and_finiteness():
    grid = RadialGrid.build(1.0, 2.0, 8)
    with pytest.raises(ConfigError):
        Profile(grid, np.ones(5))
    with pytest.raises(DomainError):
        Profile(grid, np.full(9, np.nan))
    p = Profile(grid, np.ones(9))
    assert p.sup_distance(p.with_values(np.arange(9.0))) == 7.0


def test_problem_file_round_trip(tmp_path):
    config, doping = canonical(3)
    path = tmp_path / 'problem.json'
    path.write_text(json.dumps(problem_to_dict(config, doping)))
    loaded_config, loaded_doping = load_problem(str(path))
    assert loaded_config == config
    assert loaded_doping == doping


@pytest.mark.parametrize('data, message', [
    ({'n': 2, 'r0': 1, 'r1': 2, 'tau': 1}, 'missing'),
    ({'n': 2.5, 'r0': 1, 'r1': 2, 'tau': 1, 'j0': 1, 'doping': {'kind': 'constant', 'value': 2}}, 'integer'),
    ({'n': 2, 'r0': 'one', 'r1': 2, 'tau': 1, 'j0': 1, 'doping': {'kind': 'constant', 'value': 2}}, 'non-numeric'),
    ({'n': 2, 'r0': 1, 'r1': 2, 'tau': 1, 'j0': 1, 'doping': {'kind': 'constant'}}, 'value'),
])
def test_problem_from_dict_errors(data, message):
    with pytest.raises(ConfigError, match=message):
        problem_from_dict(data)
