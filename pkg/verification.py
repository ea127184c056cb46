"""
Independent checks on computed profiles: weak-form residuals, the energy
identity, the Hölder C^(1/2) seminorm, pointwise domination, the G_w flux
consistency, the supersonic interior gap and a Poisson cross-check of the
reconstructed field.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from helper_functions import DomainError, to_jsonable
from problem_model import DopingProfile, Profile, ProblemConfig, eval_B, geometric_source
from weak_form import residual_vector

# Pass thresholds are c * h with h the mean spacing (r1 - r0)/N; c is calibrated on the
# canonical n = 2 and n = 3 problems at 1024 intervals. Weak-form quantities assume the
# terminal polish ran.
THRESHOLD_SLOPES = {
    'weak_residual_linf': 0.1,
    'gw_defect': 6.0,
    'poisson_residual': 12.0,
}
ABSOLUTE_THRESHOLDS = {
    'boundary_exactness': 1e-12,
}
DEFAULT_WINDOW = 0.05


def default_thresholds(grid) -> dict:
    x = grid.nodes
    h = (x[-1] - x[0]) / (x.size - 1)
    limits = {name: slope * h for name, slope in THRESHOLD_SLOPES.items()}
    limits.update(ABSOLUTE_THRESHOLDS)
    return limits


@dataclass
class CheckResult:
    value: float
    threshold: Optional[float]
    passed: bool

    def to_dict(self):
        return {'value': self.value, 'threshold': self.threshold, 'passed': self.passed}


@dataclass
class VerificationReport:
    regime: str
    weak_residual_linf: float
    weak_residual_l2: float
    holder_seminorm: float
    poisson_residual: float
    certificate_name: str
    certificate: float
    energy_identity_residual: Optional[float] = None
    gw_defect: Optional[float] = None
    interior_gap: List[Tuple[float, float]] = field(default_factory=list)
    checks: Dict[str, CheckResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed_checks(self) -> List[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return to_jsonable({
            'regime': self.regime,
            'passed': self.passed,
            'weak_residual_linf': self.weak_residual_linf,
            'weak_residual_l2': self.weak_residual_l2,
            'holder_seminorm': self.holder_seminorm,
            'poisson_residual': self.poisson_residual,
            self.certificate_name: self.certificate,
            'energy_identity_residual': self.energy_identity_residual,
            'gw_defect': self.gw_defect,
            'interior_gap': [list(p) for p in self.interior_gap],
            'checks': {k: v.to_dict() for k, v in self.checks.items()},
        })


def _require_sonic_ends(m: Profile, J: float):
    tol = 1e-12 * max(1.0, abs(J))
    if abs(m.values[0] - J) > tol or abs(m.values[-1] - J) > tol:
        raise DomainError(f"profile must equal J={J} at both ends, got {m.values[0]!r} and {m.values[-1]!r}")


def weak_residual(m: Profile, config: ProblemConfig, doping: DopingProfile):
    """Sup and root-mean-square of |R_i|/h_i over the interior hat functions."""
    _require_sonic_ends(m, config.J)
    if np.any(m.values <= 0):
        raise DomainError("weak residual needs a positive profile")
    res = residual_vector(m.values, m.grid, config, doping)
    return float(np.max(np.abs(res))), float(np.sqrt(np.mean(res ** 2)))


def energy_identity_terms(m_j: Profile, j: float, config: ProblemConfig, doping: DopingProfile,
                          tau_flux: Optional[float] = None):
    """
    The four terms of the energy identity obtained by testing the regularized
    equation with (m - J). The derivative terms use midpoint quadrature on each
    cell, the source term the trapezoid rule on the nodes:

        (J^2 - j^2) int r^(n-1) m_r^2/m^3
      + (4/9) int r^(n-1) (m+J)/m^3 |[(m-J)^(3/2)]_r|^2      (as (m+J)(m-J) m_r^2/m^3)
      + (J/tau) int r^(n-1) m_r/m
      + int (m - B + (n-1)(n-2) r^(n-3)) (m - J)
    """
    J = config.J
    tau_flux = J if tau_flux is None else tau_flux
    grid = m_j.grid
    m = m_j.values
    h = grid.h
    rc = grid.midpoints ** (config.n - 1)
    mm = 0.5 * (m[1:] + m[:-1])
    m_r = np.diff(m) / h
    degenerate = (J ** 2 - j ** 2) * np.sum(rc * m_r ** 2 / mm ** 3 * h)
    sonic = np.sum(rc * (mm + J) * (mm - J) / mm ** 3 * m_r ** 2 * h)
    relaxation = tau_flux / config.tau * np.sum(rc * m_r / mm * h)
    r = grid.nodes
    source = trapezoid((m - eval_B(doping, config, r) + geometric_source(config, r)) * (m - J), r)
    return float(degenerate), float(sonic), float(relaxation), float(source)


def energy_identity_residual(m_j: Profile, j: float, config: ProblemConfig, doping: DopingProfile) -> float:
    terms = energy_identity_terms(m_j, j, config, doping)
    scale = max(abs(t) for t in terms)
    return abs(sum(terms)) / scale if scale > 0 else 0.0


def regularization_energy(m_j: Profile, j: float, config: ProblemConfig) -> float:
    """(J^2 - j^2) int r^(n-1) m_r^2 / m^3, the term that must vanish along the continuation."""
    grid = m_j.grid
    m = m_j.values
    mm = 0.5 * (m[1:] + m[:-1])
    m_r = np.diff(m) / grid.h
    rc = grid.midpoints ** (config.n - 1)
    return float((config.J ** 2 - j ** 2) * np.sum(rc * m_r ** 2 / mm ** 3 * grid.h))


def holder_seminorm(m: Profile) -> float:
    """max |m_a - m_c| / |a - c|^(1/2) over node pairs (i, i + 2^s)."""
    x, v = m.grid.nodes, m.values
    best = 0.0
    step = 1
    while step < x.size:
        ratio = np.abs(v[step:] - v[:-step]) / np.sqrt(x[step:] - x[:-step])
        best = max(best, float(ratio.max()))
        step *= 2
    return best


def check_pointwise_domination(p: Profile, q: Profile, tol: float = 1e-12):
    """(True, None) when p >= q - tol at every node, else (False, first offending node)."""
    if not p.grid.same_as(q.grid):
        raise DomainError("profiles live on different grids")
    bad = np.flatnonzero(p.values < q.values - tol)
    if bad.size:
        return False, int(bad[0])
    return True, None


def gw_consistency(m: Profile, config: ProblemConfig, doping: DopingProfile) -> float:
    """
    Sup defect between G_w evaluated from its definition and G_w(first cell) plus
    the cumulative trapezoid of sqrt(w) + J - B + (n-1)(n-2) r^(n-3), both taken at
    cell midpoints, normalized by sup |G_w|.
    """
    J = config.J
    grid = m.grid
    w = (m.values - J) ** 2
    sqrt_w = np.abs(0.5 * (m.values[1:] + m.values[:-1]) - J)
    w_r = np.diff(w) / grid.h
    rc = grid.midpoints ** (config.n - 1)
    g_w = rc * ((sqrt_w + 2 * J) * w_r / (2 * (sqrt_w + J) ** 3) + J / (config.tau * (sqrt_w + J)))
    mid = grid.midpoints
    integrand = sqrt_w + J - eval_B(doping, config, mid) + geometric_source(config, mid)
    rhs = g_w[0] + cumulative_trapezoid(integrand, mid, initial=0.0)
    scale = float(np.max(np.abs(g_w)))
    return float(np.max(np.abs(g_w - rhs))) / scale if scale > 0 else 0.0


def interior_gap(m: Profile, J: float, delta: float) -> float:
    x = m.grid.nodes
    r0, r1 = x[0], x[-1]
    if not 0 < delta < 0.5 * (r1 - r0):
        raise DomainError(f"delta must lie in (0, (r1-r0)/2), got {delta}")
    window = (x >= r0 + delta) & (x <= r1 - delta)
    if not np.any(window):
        raise DomainError(f"no grid nodes in [{r0 + delta}, {r1 - delta}]")
    return float(J - np.max(m.values[window]))


def poisson_crosscheck(fields, config: ProblemConfig, doping: DopingProfile, window: float = DEFAULT_WINDOW) -> float:
    """
    Sup of (r^(n-1) E)_r - r^(n-1)(rho - b~) over [r0 + d, r1 - d], d = window (r1 - r0),
    with centred differences; normalized by max(1, sup |r^(n-1)(rho - b~)|) on the window.
    """
    r = fields.E.grid.nodes
    weight = r ** (config.n - 1)
    lhs = np.gradient(weight * fields.E.values, r, edge_order=2)
    rhs = weight * (fields.rho.values - doping.btilde(r))
    d = window * (config.r1 - config.r0)
    inside = (r >= config.r0 + d) & (r <= config.r1 - d)
    if not np.any(inside):
        raise DomainError(f"no grid nodes inside the Poisson window (window={window})")
    scale = max(1.0, float(np.max(np.abs(rhs[inside]))))
    return float(np.max(np.abs(lhs[inside] - rhs[inside]))) / scale


def build_report(solution, fields, config: ProblemConfig, doping: DopingProfile, certificate: float,
                 thresholds: Optional[dict] = None) -> VerificationReport:
    """
    Run every check appropriate to the solution's regime.
    `certificate` is lambda* for subsonic and the floor ell = min m for supersonic runs.
    """
    m = solution.m
    limits = default_thresholds(m.grid)
    limits.update(thresholds or {})
    J = config.J
    x = m.grid.nodes
    linf, l2 = weak_residual(m, config, doping)
    holder = holder_seminorm(m)
    poisson = poisson_crosscheck(fields, config, doping)
    ends = max(abs(m.values[0] - J), abs(m.values[-1] - J))
    inner = m.values[1:-1]

    checks = {
        'weak_residual_linf': CheckResult(linf, limits['weak_residual_linf'], linf < limits['weak_residual_linf']),
        'boundary_exactness': CheckResult(ends, limits['boundary_exactness'], ends <= limits['boundary_exactness']),
        'poisson_residual': CheckResult(poisson, limits['poisson_residual'], poisson < limits['poisson_residual']),
        'holder_finite': CheckResult(holder, None, bool(np.isfinite(holder))),
    }
    report = VerificationReport(regime=solution.regime, weak_residual_linf=linf, weak_residual_l2=l2,
                                holder_seminorm=holder, poisson_residual=poisson,
                                certificate_name='lambda_star' if solution.regime == 'subsonic' else 'ell',
                                certificate=certificate)
    if solution.regime == 'subsonic':
        sign = float(np.min(inner - J))
        checks['regime_sign'] = CheckResult(sign, 0.0, sign > 0)
        checks['lambda_star'] = CheckResult(certificate, 0.0, certificate > 0)
        report.gw_defect = gw_consistency(m, config, doping)
        checks['gw_defect'] = CheckResult(report.gw_defect, limits['gw_defect'], report.gw_defect < limits['gw_defect'])
        report.energy_identity_residual = energy_identity_residual(m, J, config, doping)
    else:
        sign = float(np.min(J - inner))
        checks['regime_sign'] = CheckResult(sign, 0.0, sign > 0 and float(np.min(inner)) > 0)
        checks['ell'] = CheckResult(certificate, 0.0, certificate > 0)
        for frac in (0.05, 0.1, 0.2):
            delta = frac * (x[-1] - x[0])
            report.interior_gap.append((delta, interior_gap(m, J, delta)))
        eps = report.interior_gap[1][1]
        checks['interior_gap'] = CheckResult(eps, 0.0, eps > 0)
    report.checks = checks
    level = logging.INFO if report.passed else logging.WARNING
    logging.log(level, f"Verification of {solution.regime} solution: "
                       f"{'passed' if report.passed else 'failed ' + ', '.join(report.failed_checks())}")
    return report
