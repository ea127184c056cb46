"""
Physical fields from a converged m-profile, plus CSV/JSON export and the
JSON reader used by `sonic-annulus verify`.
"""
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from helper_functions import ConfigError, DomainError, load_json, save_json
from problem_model import Profile, ProblemConfig, RadialGrid, Solution

CSV_COLUMNS = ('r', 'm', 'rho', 'u', 'flux', 'E', 'mach')
EXPORT_FORMATS = ('csv', 'json')


@dataclass(frozen=True)
class FieldProfiles:
    rho: Profile
    u: Profile
    flux: Profile
    E: Profile
    mach: Profile

    def columns(self, m: Profile) -> np.ndarray:
        """Node-by-column array in CSV_COLUMNS order."""
        return np.column_stack([m.r, m.values, self.rho.values, self.u.values,
                                self.flux.values, self.E.values, self.mach.values])


def _require_positive(m: Profile):
    bad = np.flatnonzero(m.values <= 0)
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"m must be positive, got {m.values[i]!r} at node {i} (r={m.r[i]:.6g})")


def reconstruct(m: Profile, config: ProblemConfig) -> FieldProfiles:
    """
    rho = m/r^(n-1), u = J/m, flux = J/r^(n-1), mach = u and
    E = (m+J) w_r/(2m^3) + J/(tau m) - (n-1)/r with w = (m-J)^2 differentiated
    by second-order differences (one-sided at the ends).
    """
    _require_positive(m)
    J = config.J
    r = m.r
    values = m.values
    weight = r ** (config.n - 1)
    w_r = np.gradient((values - J) ** 2, r, edge_order=2)
    E = (values + J) * w_r / (2.0 * values ** 3) + J / (config.tau * values) - (config.n - 1) / r
    u = J / values
    return FieldProfiles(rho=m.with_values(values / weight), u=m.with_values(u),
                         flux=m.with_values(J / weight), E=m.with_values(E), mach=m.with_values(u))


def momentum_electric_field(fields: FieldProfiles, config: ProblemConfig) -> Profile:
    """E from the momentum balance u u_r + rho_r/rho + u/tau, with rho and u differenced directly."""
    r = fields.rho.r
    rho = fields.rho.values
    u = fields.u.values
    u_r = np.gradient(u, r, edge_order=2)
    rho_r = np.gradient(rho, r, edge_order=2)
    return fields.E.with_values(u * u_r + rho_r / rho + u / config.tau)


def momentum_defect(fields: FieldProfiles, config: ProblemConfig, window: float = 0.05) -> float:
    """Sup of |E - E_momentum| on [r0 + d, r1 - d], d = window (r1 - r0)."""
    other = momentum_electric_field(fields, config)
    r = fields.E.r
    d = window * (config.r1 - config.r0)
    inside = (r >= config.r0 + d) & (r <= config.r1 - d)
    if not np.any(inside):
        raise DomainError(f"no grid nodes inside the comparison window (window={window})")
    return float(np.max(np.abs(fields.E.values[inside] - other.values[inside])))


def export(fields: FieldProfiles, solution: Solution, path: str, fmt: str = 'csv',
           report: Optional[dict] = None, config: Optional[ProblemConfig] = None):
    """
    Write the fields to `path`.
    :param fmt: 'csv' (columns r,m,rho,u,flux,E,mach at full double precision) or 'json'
                (same arrays plus regime, reg_param, diagnostics and the verification report);
                the file extension never overrides it
    """
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(f"format must be one of {EXPORT_FORMATS}, got {fmt!r}")
    table = fields.columns(solution.m)
    if fmt == 'csv':
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            np.savetxt(path, table, delimiter=',', fmt='%.17g', header=','.join(CSV_COLUMNS), comments='')
        except OSError as e:
            logging.error(f"Failed to write {path}: {e}")
            raise ConfigError(f"cannot write {path}: {e}") from e
    else:
        payload = {
            'regime': solution.regime,
            'reg_param': solution.reg_param,
            'spacing_kind': solution.m.grid.spacing_kind,
            'arrays': {name: table[:, i] for i, name in enumerate(CSV_COLUMNS)},
            'diagnostics': solution.diagnostics,
            'verification': report,
        }
        if config is not None:
            payload['problem'] = config.to_dict()
        save_json(path, payload)
    logging.info(f"Wrote {solution.regime} solution ({solution.m.grid.nodes.size} nodes) to {path}")


def _solution_from_json(data, path) -> Solution:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: solution file must contain a JSON object")
    try:
        arrays = data['arrays']
        regime = data['regime']
        r = np.asarray(arrays['r'], dtype=float)
        m = np.asarray(arrays['m'], dtype=float)
    except KeyError as e:
        raise ConfigError(f"{path}: solution file is missing field {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: non-numeric solution arrays: {e}") from e
    if regime not in ('subsonic', 'supersonic'):
        raise ConfigError(f"{path}: unknown regime {regime!r}")
    if r.shape != m.shape or r.ndim != 1:
        raise ConfigError(f"{path}: arrays 'r' and 'm' must be one-dimensional and of equal length")
    grid = RadialGrid(r, spacing_kind=data.get('spacing_kind', 'uniform'))
    return Solution(regime=regime, m=Profile(grid, m), reg_param=float(data.get('reg_param') or 0.0),
                    diagnostics=dict(data.get('diagnostics') or {}))


def _solution_from_csv(path) -> Solution:
    try:
        with open(path, 'r') as f:
            header = f.readline().strip()
        table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read solution CSV {path}: {e}") from e
    if header != ','.join(CSV_COLUMNS):
        raise ConfigError(f"{path}: expected header {','.join(CSV_COLUMNS)!r}, got {header!r}")
    columns = {name: table[:, i] for i, name in enumerate(CSV_COLUMNS)}
    interior = columns['mach'][1:-1]
    regime = 'subsonic' if np.all(interior < 1) else 'supersonic'
    grid = RadialGrid(columns['r'], spacing_kind='uniform')
    return Solution(regime=regime, m=Profile(grid, columns['m']), reg_param=float('nan'))


def load_solution(path: str) -> Solution:
    """Read a solution written by `export`; CSV files carry no diagnostics and the regime comes from the Mach column."""
    if path.lower().endswith('.csv'):
        return _solution_from_csv(path)
    return _solution_from_json(load_json(path), path)

