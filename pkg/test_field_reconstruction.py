#!/usr/bin/env python3

import numpy as np
import pytest

from field_reconstruction import (CSV_COLUMNS, export, load_solution, momentum_defect, momentum_electric_field,
                                  reconstruct)
from helper_functions import ConfigError, DomainError
from problem_model import DopingProfile, Profile, ProblemConfig, RadialGrid, Solution
from subsonic_solver import continuation_solve
from supersonic_solver import continuation_solve_supersonic


@pytest.fixture(scope='module')
def subsonic():
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    doping = DopingProfile(kind='constant', value=2.0)
    solution = continuation_solve(config, doping, RadialGrid.build(1.0, 2.0, 1024))
    return config, solution


@pytest.fixture(scope='module')
def supersonic():
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    doping = DopingProfile(kind='constant', value=2.0)
    solution = continuation_solve_supersonic(config, doping, RadialGrid.build(1.0, 2.0, 512))
    return config, solution


@pytest.mark.parametrize('n, tau', [(2, 1.0), (3, 2.0)])
def test_sonic_state_fields(n, tau):
    config = ProblemConfig(n=n, r0=1.0, r1=2.0, tau=tau, j0=1.0)
    grid = RadialGrid.build(1.0, 2.0, 16)
    fields = reconstruct(Profile(grid, np.full(17, config.J)), config)
    np.testing.assert_allclose(fields.u.values, 1.0)
    np.testing.assert_allclose(fields.mach.values, 1.0)
    np.testing.assert_allclose(fields.E.values, 1.0 / tau - (n - 1) / grid.nodes, atol=1e-14)


def test_pointwise_fields():
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    grid = RadialGrid.build(1.0, 2.0, 8)
    fields = reconstruct(Profile(grid, np.full(9, 2.0)), config)
    assert fields.rho.values[-1] == pytest.approx(1.0)
    assert fields.u.values[-1] == pytest.approx(0.5)
    assert fields.mach.values[-1] == pytest.approx(0.5)
    assert fields.flux.values[-1] == pytest.approx(0.5)


def test_mass_conservation_and_regime_consistency(subsonic):
    config, solution = subsonic
    fields = reconstruct(solution.m, config)
    r = solution.m.r
    np.testing.assert_allclose(r * fields.rho.values * fields.u.values, config.J, rtol=1e-12)
    np.testing.assert_allclose(r * fields.flux.values, config.J, rtol=1e-12)
    assert np.all(fields.mach.values[1:-1] < 1.0)
    assert fields.mach.values[0] == pytest.approx(1.0, abs=1e-12)
    assert fields.mach.values[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(fields.rho.values > 0)


def test_supersonic_fields_are_supersonic_inside(supersonic):
    config, solution = supersonic
    fields = reconstruct(solution.m, config)
    r = solution.m.r
    np.testing.assert_allclose(r * fields.rho.values * fields.u.values, config.J, rtol=1e-12)
    assert np.all(fields.mach.values[1:-1] > 1.0)
    assert fields.mach.values[0] == pytest.approx(1.0, abs=1e-12)
    assert fields.mach.values[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.isfinite(fields.E.values))


def test_electric_field_agrees_with_momentum_balance(subsonic):
    config, solution = subsonic
    fields = reconstruct(solution.m, config)
    assert momentum_defect(fields, config) < 1e-3
    assert momentum_electric_field(fields, config).grid is solution.m.grid


def test_nonpositive_density_is_rejected():
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    values = np.ones(9)
    values[3] = 0.0
    with pytest.raises(DomainError, match='node 3'):
        reconstruct(Profile(RadialGrid.build(1.0, 2.0, 8), values), config)


def test_csv_layout(tmp_path):
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    grid = RadialGrid.build(1.0, 2.0, 8)
    m = Profile(grid, 1.0 + 0.1 * np.sin(np.pi * (grid.nodes - 1.0)))
    solution = Solution(regime='subsonic', m=m, reg_param=0.9)
    path = tmp_path / 'out' / 'solution.dat'
    export(reconstruct(m, config), solution, str(path), 'csv')
    lines = path.read_text().splitlines()
    assert len(lines) == 10
    assert lines[0] == ','.join(CSV_COLUMNS)
    assert len(lines[1].split(',')) == 7


def test_csv_reader_recovers_profile_and_regime(tmp_path):
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    grid = RadialGrid.build(1.0, 2.0, 8)
    m = Profile(grid, 1.0 - 0.2 * np.sin(np.pi * (grid.nodes - 1.0)))
    path = tmp_path / 'solution.csv'
    export(reconstruct(m, config), Solution(regime='supersonic', m=m, reg_param=1.1), str(path), 'csv')
    loaded = load_solution(str(path))
    assert loaded.regime == 'supersonic'
    np.testing.assert_array_equal(loaded.m.values, m.values)


def test_json_round_trip_is_bit_exact(subsonic, tmp_path):
    config, solution = subsonic
    path = tmp_path / 'solution.json'
    export(reconstruct(solution.m, config), solution, str(path), 'json', report={'passed': True}, config=config)
    loaded = load_solution(str(path))
    assert loaded.regime == 'subsonic'
    assert loaded.reg_param == solution.reg_param
    np.testing.assert_array_equal(loaded.m.values, solution.m.values)
    np.testing.assert_array_equal(loaded.m.grid.nodes, solution.m.grid.nodes)
    assert loaded.diagnostics['lambda_star'] == solution.diagnostics['lambda_star']


def test_export_is_deterministic(subsonic, tmp_path):
    config, solution = subsonic
    fields = reconstruct(solution.m, config)
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    export(fields, solution, str(first), 'csv')
    export(fields, solution, str(second), 'csv')
    assert first.read_bytes() == second.read_bytes()


def test_bad_format_and_malformed_solution_file(tmp_path):
    config = ProblemConfig(n=2, r0=1.0, r1=2.0, tau=1.0, j0=1.0)
    grid = RadialGrid.build(1.0, 2.0, 8)
    m = Profile(grid, np.ones(9))
    with pytest.raises(ConfigError):
        export(reconstruct(m, config), Solution(regime='subsonic', m=m, reg_param=0.9), str(tmp_path / 'x'), 'xlsx')
    broken = tmp_path / 'broken.json'
    broken.write_text('{"regime": "subsonic"}')
    with pytest.raises(ConfigError, match='arrays'):
        load_solution(str(broken))
