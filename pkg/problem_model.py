"""
Problem definition for radial sonic-boundary steady states on an annulus r0 < r < r1.

Holds the physical parameters, the doping profile b~(r) and its weight
B(r) = r^(n-1) b~(r), the radial grid and profile containers, and the
existence-hypothesis checks for the subsonic and supersonic regimes.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from numpy.polynomial import Polynomial

from helper_functions import ConfigError, DomainError, load_json

DOPING_KINDS = ('constant', 'poly', 'pwl')
DEFAULT_SAMPLES = 10_000
MIN_INTERVALS = 8


@dataclass(frozen=True)
class ProblemConfig:
    n: int
    r0: float
    r1: float
    tau: float
    j0: float

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ConfigError(f"n must be 2 or 3, got {self.n}")
        for name in ('r0', 'r1', 'tau', 'j0'):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(f"{name} must be a finite number, got {value!r}")
        if not 0 < self.r0 < self.r1:
            raise ConfigError(f"need 0 < r0 < r1, got r0={self.r0}, r1={self.r1}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.j0 <= 0:
            raise ConfigError(f"j0 must be positive, got {self.j0}")

    @property
    def J(self) -> float:
        return self.j0 * self.r0 ** (self.n - 1)

    def to_dict(self) -> Dict[str, float]:
        return {'n': self.n, 'r0': self.r0, 'r1': self.r1, 'tau': self.tau, 'j0': self.j0}


@dataclass(frozen=True)
class DopingProfile:
    """b~(r) as a constant, a polynomial in r (ascending coefficients) or piecewise-linear knots."""
    kind: str
    value: float = 0.0
    coeffs: tuple = ()
    knots: tuple = ()

    def __post_init__(self):
        if self.kind not in DOPING_KINDS:
            raise ConfigError(f"doping kind must be one of {DOPING_KINDS}, got {self.kind!r}")
        if self.kind == 'poly' and not self.coeffs:
            raise ConfigError("poly doping needs a non-empty 'coeffs' list")
        if self.kind == 'pwl':
            if len(self.knots) < 2:
                raise ConfigError("pwl doping needs at least two knots")
            rs = [k[0] for k in self.knots]
            if any(b <= a for a, b in zip(rs, rs[1:])):
                raise ConfigError("pwl knots must be strictly increasing in r")

    @classmethod
    def from_dict(cls, data: dict) -> 'DopingProfile':
        if not isinstance(data, dict) or 'kind' not in data:
            raise ConfigError("doping: expected an object with a 'kind' field")
        kind = data['kind']
        try:
            if kind == 'constant':
                return cls(kind='constant', value=float(data['value']))
            if kind == 'poly':
                return cls(kind='poly', coeffs=tuple(float(c) for c in data['coeffs']))
            if kind == 'pwl':
                return cls(kind='pwl', knots=tuple((float(r), float(v)) for r, v in data['knots']))
        except KeyError as e:
            raise ConfigError(f"doping: missing field {e.args[0]!r} for kind {kind!r}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"doping: malformed parameters for kind {kind!r}: {e}") from e
        raise ConfigError(f"doping kind must be one of {DOPING_KINDS}, got {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == 'constant':
            return {'kind': 'constant', 'value': self.value}
        if self.kind == 'poly':
            return {'kind': 'poly', 'coeffs': list(self.coeffs)}
        return {'kind': 'pwl', 'knots': [list(k) for k in self.knots]}

    def scaled(self, factor: float) -> 'DopingProfile':
        return replace(self, value=self.value * factor,
                       coeffs=tuple(c * factor for c in self.coeffs),
                       knots=tuple((r, v * factor) for r, v in self.knots))

    def btilde(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == 'constant':
            return np.full_like(r, self.value)
        if self.kind == 'poly':
            return Polynomial(self.coeffs)(r)
        rs, vs = zip(*self.knots)
        return np.interp(r, rs, vs)

    def knot_positions(self) -> List[float]:
        return [k[0] for k in self.knots] if self.kind == 'pwl' else []

    def validate(self, config: ProblemConfig, samples: int = DEFAULT_SAMPLES):
        if self.kind == 'pwl':
            rs = self.knot_positions()
            if rs[0] > config.r0 or rs[-1] < config.r1:
                raise ConfigError(f"pwl knots span [{rs[0]}, {rs[-1]}] but must cover [{config.r0}, {config.r1}]")
        r = _sample_points(self, config, samples)
        low = float(np.min(self.btilde(r)))
        if not low > 0:
            raise ConfigError(f"doping must be positive on [{config.r0}, {config.r1}], minimum is {low}")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    spacing_kind: str = 'uniform'

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < MIN_INTERVALS + 1:
            raise ConfigError(f"grid needs at least {MIN_INTERVALS} intervals, got {max(nodes.size - 1, 0)}")
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise ConfigError("grid nodes must be finite and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, 'nodes', nodes)

    @classmethod
    def build(cls, r0: float, r1: float, intervals: int, kind: str = 'uniform') -> 'RadialGrid':
        if intervals < MIN_INTERVALS:
            raise ConfigError(f"grid needs at least {MIN_INTERVALS} intervals, got {intervals}")
        i = np.arange(intervals + 1)
        if kind == 'uniform':
            nodes = r0 + (r1 - r0) * i / intervals
        elif kind == 'clustered':
            nodes = r0 + (r1 - r0) * 0.5 * (1.0 - np.cos(np.pi * i / intervals))
        else:
            raise ConfigError(f"grid kind must be 'uniform' or 'clustered', got {kind!r}")
        nodes[0], nodes[-1] = r0, r1
        return cls(nodes=nodes, spacing_kind=kind)

    @classmethod
    def for_config(cls, config: ProblemConfig, intervals: int, kind: str = 'uniform') -> 'RadialGrid':
        return cls.build(config.r0, config.r1, intervals, kind)

    @property
    def intervals(self) -> int:
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def same_as(self, other: 'RadialGrid') -> bool:
        return self.nodes.shape == other.nodes.shape and bool(np.array_equal(self.nodes, other.nodes))


@dataclass(frozen=True, eq=False)
class Profile:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.nodes.shape:
            raise ConfigError(f"profile has {values.size} values for {self.grid.nodes.size} nodes")
        if not np.all(np.isfinite(values)):
            raise DomainError("profile values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values) -> 'Profile':
        return Profile(self.grid, values)

    def sup_distance(self, other: 'Profile') -> float:
        return float(np.max(np.abs(self.values - other.values)))


@dataclass
class Solution:
    """
    reg_param is the j (subsonic) or k (supersonic) of the last continuation stage, before
    any weak-form polish; diagnostics['reg_param_effective'] is J once the polish succeeded.
    """
    regime: str
    m: Profile
    reg_param: float
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {'regime': self.regime, 'reg_param': self.reg_param, 'diagnostics': self.diagnostics}


@dataclass(frozen=True)
class BandExtrema:
    B_inf: float
    B_sup: float
    calB_inf: Optional[float] = None
    calB_sup: Optional[float] = None


@dataclass(frozen=True)
class HypothesisCondition:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def satisfied(self) -> bool:
        return self.margin > 0

    def to_dict(self) -> dict:
        return {'name': self.name, 'lhs': self.lhs, 'rhs': self.rhs,
                'margin': self.margin, 'satisfied': self.satisfied}


@dataclass(frozen=True)
class HypothesisReport:
    regime: str
    n: int
    conditions: List[HypothesisCondition]
    B_inf: float
    B_sup: float
    calB_inf: Optional[float] = None
    calB_sup: Optional[float] = None

    @property
    def satisfied(self) -> bool:
        return all(c.satisfied for c in self.conditions)

    def to_dict(self) -> dict:
        out = {'regime': self.regime, 'n': self.n, 'satisfied': self.satisfied,
               'conditions': [c.to_dict() for c in self.conditions],
               'B_inf': self.B_inf, 'B_sup': self.B_sup}
        if self.n == 3:
            out['calB_inf'] = self.calB_inf
            out['calB_sup'] = self.calB_sup
        return out


def problem_from_dict(data: dict):
    """Build (ProblemConfig, DopingProfile) from the JSON problem layout and validate the doping on it."""
    if not isinstance(data, dict):
        raise ConfigError("problem file must contain a JSON object")
    missing = [k for k in ('n', 'r0', 'r1', 'tau', 'j0', 'doping') if k not in data]
    if missing:
        raise ConfigError(f"problem file is missing field(s): {', '.join(missing)}")
    try:
        n = data['n']
        if isinstance(n, bool) or not isinstance(n, int):
            raise ConfigError(f"n must be an integer, got {n!r}")
        config = ProblemConfig(n=n, r0=float(data['r0']), r1=float(data['r1']),
                               tau=float(data['tau']), j0=float(data['j0']))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"problem file: non-numeric parameter: {e}") from e
    doping = DopingProfile.from_dict(data['doping'])
    doping.validate(config)
    return config, doping


def load_problem(path: str):
    logging.debug(f"Loading problem file {path}")
    return problem_from_dict(load_json(path))


def problem_to_dict(config: ProblemConfig, doping: DopingProfile) -> dict:
    out = config.to_dict()
    out['doping'] = doping.to_dict()
    return out


def derive_flux_constant(config: ProblemConfig) -> float:
    return config.J


def geometric_source(config: ProblemConfig, r):
    """(n-1)(n-2) r^(n-3); zero for n = 2."""
    r = np.asarray(r, dtype=float)
    n = config.n
    return (n - 1) * (n - 2) * r ** (n - 3)


def eval_B(doping: DopingProfile, config: ProblemConfig, r):
    """B(r) = r^(n-1) b~(r), scalar or array; r must lie in [r0, r1]."""
    r_arr = np.asarray(r, dtype=float)
    slack = 1e-12 * max(1.0, abs(config.r1))
    if np.any(r_arr < config.r0 - slack) or np.any(r_arr > config.r1 + slack):
        raise DomainError(f"r outside [{config.r0}, {config.r1}]")
    out = r_arr ** (config.n - 1) * doping.btilde(r_arr)
    return float(out) if out.ndim == 0 else out


def sonic_boundary_densities(config: ProblemConfig):
    rho0 = config.j0
    rho1 = config.j0 * config.r0 ** (config.n - 1) / config.r1 ** (config.n - 1)
    return rho0, rho1


def _weight_pieces(doping: DopingProfile, config: ProblemConfig):
    """B as a list of (Polynomial, lo, hi) pieces covering [r0, r1]."""
    radial = Polynomial([0.0] * (config.n - 1) + [1.0])
    if doping.kind == 'constant':
        return [(radial * doping.value, config.r0, config.r1)]
    if doping.kind == 'poly':
        return [(radial * Polynomial(doping.coeffs), config.r0, config.r1)]
    pieces = []
    for (ra, va), (rb, vb) in zip(doping.knots, doping.knots[1:]):
        lo, hi = max(ra, config.r0), min(rb, config.r1)
        if lo >= hi:
            continue
        slope = (vb - va) / (rb - ra)
        pieces.append((radial * Polynomial([va - slope * ra, slope]), lo, hi))
    return pieces


def _sample_points(doping: DopingProfile, config: ProblemConfig, samples: int, slope: float = 0.0):
    """Dense samples plus endpoints, knots and the exact critical points of B(r) + slope*r."""
    points = [np.linspace(config.r0, config.r1, samples)]
    extra = [config.r0, config.r1]
    extra.extend(r for r in doping.knot_positions() if config.r0 <= r <= config.r1)
    for poly, lo, hi in _weight_pieces(doping, config):
        crit = poly.deriv() + slope
        if crit.degree() < 1:
            continue
        for root in crit.roots():
            if abs(root.imag) < 1e-12 and lo <= root.real <= hi:
                extra.append(float(root.real))
    points.append(np.array(extra))
    return np.unique(np.concatenate(points))


def band_extrema(doping: DopingProfile, config: ProblemConfig, samples: int = DEFAULT_SAMPLES) -> BandExtrema:
    if samples < 1000:
        raise ConfigError(f"band_extrema needs at least 1000 samples, got {samples}")
    r = _sample_points(doping, config, samples)
    B = eval_B(doping, config, r)
    if config.n != 3:
        return BandExtrema(B_inf=float(B.min()), B_sup=float(B.max()))
    r_cal = _sample_points(doping, config, samples, slope=2.0 / config.tau)
    cal = eval_B(doping, config, r_cal) + 2.0 * r_cal / config.tau - 2.0
    return BandExtrema(B_inf=float(B.min()), B_sup=float(B.max()),
                       calB_inf=float(cal.min()), calB_sup=float(cal.max()))


def check_subsonic_hypotheses(config: ProblemConfig, doping: DopingProfile,
                              samples: int = DEFAULT_SAMPLES) -> HypothesisReport:
    ext = band_extrema(doping, config, samples)
    J, tau = config.J, config.tau
    if config.n == 2:
        top = ext.B_sup + 1.0 / tau
        conditions = [
            HypothesisCondition('B_sup + 1/tau > J', top, J),
            HypothesisCondition('B_inf + J/(tau(B_sup + 1/tau)) > J', ext.B_inf + J / (tau * top), J),
        ]
    else:
        top = ext.calB_sup
        if top > 0:
            c = 2.0 * J / (tau * top)
            r = _sample_points(doping, config, samples, slope=c)
            low = float(np.min(eval_B(doping, config, r) + c * r - 2.0))
        else:
            low = -math.inf
        conditions = [
            HypothesisCondition('calB_sup > J', top, J),
            HypothesisCondition('min(B + 2rJ/(tau calB_sup) - 2) > J', low, J),
        ]
    return HypothesisReport('subsonic', config.n, conditions, ext.B_inf, ext.B_sup, ext.calB_inf, ext.calB_sup)


def check_supersonic_hypotheses(config: ProblemConfig, doping: DopingProfile,
                                samples: int = DEFAULT_SAMPLES) -> HypothesisReport:
    ext = band_extrema(doping, config, samples)
    J = config.J
    if config.n == 2:
        conditions = [HypothesisCondition('B_inf + 1/tau > J', ext.B_inf + 1.0 / config.tau, J)]
    else:
        conditions = [HypothesisCondition('calB_inf > J', ext.calB_inf, J)]
    return HypothesisReport('supersonic', config.n, conditions, ext.B_inf, ext.B_sup, ext.calB_inf, ext.calB_sup)


def check_hypotheses(regime: str, config: ProblemConfig, doping: DopingProfile) -> HypothesisReport:
    if regime == 'subsonic':
        return check_subsonic_hypotheses(config, doping)
    if regime == 'supersonic':
        return check_supersonic_hypotheses(config, doping)
    raise ConfigError(f"regime must be 'subsonic' or 'supersonic', got {regime!r}")
