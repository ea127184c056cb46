#!/usr/bin/env python3
"""
sonic-annulus: subsonic and supersonic steady states of the radial isothermal
Euler-Poisson model on an annulus with sonic boundaries.

    sonic-annulus check  problem.json --regime subsonic
    sonic-annulus solve  problem.json --regime supersonic --nodes 1024 --out out/sol.csv
    sonic-annulus verify out/sol.json problem.json
    sonic-annulus sweep  problem.json --param tau --values 0.5 1 2 4 --out sweep/

Exit codes: 0 success, 1 input error, 2 hypotheses unsatisfied,
3 verification failure, 4 solver divergence.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from field_reconstruction import EXPORT_FORMATS, export, load_solution, reconstruct
from helper_functions import (ConfigError, HypothesisError, SonicAnnulusError, VerificationFailure,
                              configure_logging, get_setting, print_table, save_json)
from problem_model import (ProblemConfig, RadialGrid, check_hypotheses, load_problem, problem_from_dict,
                           problem_to_dict)
from subsonic_solver import SubsonicParams, continuation_solve, fit_lambda
from supersonic_solver import SupersonicParams, continuation_solve_supersonic
from verification import VerificationReport, build_report

__version__ = '0.1.0'

REGIMES = ('subsonic', 'supersonic')
SWEEP_PARAMS = ('tau', 'doping_scale')
GRID_KINDS = ('uniform', 'clustered')
EXIT_OK = 0


@dataclass
class RunManifest:
    config_path: str
    command: str
    parameters: dict = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))

    def to_dict(self) -> dict:
        return {'config_path': self.config_path, 'command': self.command, 'parameters': self.parameters,
                'tool_version': self.tool_version, 'timestamp': self.timestamp}

    def save(self, out_path: str) -> str:
        path = manifest_path(out_path)
        save_json(path, self.to_dict())
        return path


def manifest_path(out_path: str) -> str:
    return os.path.splitext(out_path)[0] + '.manifest.json'


def verification_path(out_path: str) -> str:
    return os.path.splitext(out_path)[0] + '.verification.json'


def build_params(regime: str, overrides: dict):
    """SubsonicParams/SupersonicParams from CLI overrides (tol, max_iter, relaxation, polish, upwind)."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if regime == 'subsonic':
        params = SubsonicParams()
        mapping = {'tol': ('picard_tol',), 'max_iter': ('picard_max_iter',), 'relaxation': ('relaxation',)}
    else:
        params = SupersonicParams()
        mapping = {'tol': ('inner_tol',), 'max_iter': ('inner_max_iter', 'outer_max_iter'),
                   'relaxation': ('inner_relaxation',)}
    changes = {}
    for key, value in overrides.items():
        for name in mapping.get(key, (key,)):
            changes[name] = value
    if regime == 'supersonic' and 'tol' in overrides:
        changes['outer_tol'] = 10.0 * overrides['tol']
    return replace(params, **changes)


def solve_problem(regime, config, doping, grid, params):
    if regime == 'subsonic':
        return continuation_solve(config, doping, grid, params)
    return continuation_solve_supersonic(config, doping, grid, params)


def _build_verification_report(solution, config, doping) -> VerificationReport:
    fields = reconstruct(solution.m, config)
    if solution.regime == 'subsonic':
        certificate = fit_lambda(solution.m, config.J)
    else:
        certificate = float(np.min(solution.m.values))
    return build_report(solution, fields, config, doping, certificate)


def run_solve(config, doping, regime, nodes, grid_kind, overrides, out, fmt, config_path, command):
    """Solve, verify and write the solution, its verification report and manifest."""
    report = check_hypotheses(regime, config, doping)
    if not report.satisfied:
        failed = ', '.join(c.name for c in report.conditions if not c.satisfied)
        raise HypothesisError(f"{regime} hypotheses fail: {failed}", report)
    grid = RadialGrid.for_config(config, nodes, grid_kind)
    params = build_params(regime, overrides)
    solution = solve_problem(regime, config, doping, grid, params)
    verification = _build_verification_report(solution, config, doping)
    fields = reconstruct(solution.m, config)
    export(fields, solution, out, fmt, report=verification.to_dict(), config=config)
    if fmt == 'csv':
        save_json(verification_path(out), verification.to_dict())
    RunManifest(config_path=config_path, command=command,
                parameters={'regime': regime, 'nodes': nodes, 'grid': grid_kind, 'format': fmt, 'out': out,
                            'problem': problem_to_dict(config, doping), 'overrides': overrides}).save(out)
    return solution, verification


def _overrides(args) -> dict:
    return {'tol': args.tol, 'max_iter': args.max_iter, 'relaxation': args.relaxation,
            'polish': False if args.no_polish else None, 'upwind': True if args.upwind else None}


def cmd_check(args) -> int:
    config, doping = load_problem(args.config)
    reports = {regime: check_hypotheses(regime, config, doping) for regime in REGIMES}
    if args.json:
        print(json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=2))
    else:
        rows = [[regime, c.name, c.lhs, c.rhs, c.margin, c.satisfied]
                for regime, rep in reports.items() for c in rep.conditions]
        print(f"J = {config.J:.12g}, B_inf = {reports['subsonic'].B_inf:.12g}, B_sup = {reports['subsonic'].B_sup:.12g}")
        print_table(['regime', 'condition', 'lhs', 'rhs', 'margin', 'satisfied'], rows)
    if reports['subsonic'].satisfied and not reports['supersonic'].satisfied:
        logging.warning("Subsonic hypotheses hold but supersonic ones do not; check the doping samples")
    satisfied = reports[args.regime].satisfied
    logging.info(f"{args.regime} hypotheses {'hold' if satisfied else 'fail'} for {args.config}")
    return EXIT_OK if satisfied else HypothesisError.exit_code


def _print_solution_summary(solution, verification: VerificationReport):
    d = solution.diagnostics
    rows = [
        ['regime', solution.regime],
        ['reg_param (last stage)', solution.reg_param],
        ['stages', len(d.get('iteration_counts', []))],
        ['effective parameter', d.get('reg_param_effective')],
        ['polished', d.get('polished')],
        ['last-stage weak residual (sup)', d.get('stage_weak_residual_linf')],
        ['polish shift (sup)', d.get('polish_shift')],
        [verification.certificate_name, verification.certificate],
        ['weak residual (sup)', verification.weak_residual_linf],
        ['weak residual (rms)', verification.weak_residual_l2],
        ['holder seminorm', verification.holder_seminorm],
        ['poisson residual', verification.poisson_residual],
        ['verification', 'passed' if verification.passed else 'failed: ' + ', '.join(verification.failed_checks())],
    ]
    print_table(['quantity', 'value'], rows)


def _require_passed(verification: VerificationReport, path: str):
    if not verification.passed:
        raise VerificationFailure(f"{path}: failed checks {', '.join(verification.failed_checks())}", verification)


def cmd_solve(args) -> int:
    config, doping = load_problem(args.config)
    out = args.out or f"{args.regime}_solution.{args.format}"
    solution, verification = run_solve(config, doping, args.regime, args.nodes, args.grid, _overrides(args),
                                       out, args.format, args.config, 'solve')
    _print_solution_summary(solution, verification)
    _require_passed(verification, out)
    return EXIT_OK


def _check_grid_matches(solution, config: ProblemConfig, path):
    nodes = solution.m.grid.nodes
    slack = 1e-12 * max(1.0, abs(config.r1))
    if abs(nodes[0] - config.r0) > slack or abs(nodes[-1] - config.r1) > slack:
        raise ConfigError(f"{path}: grid spans [{nodes[0]}, {nodes[-1]}] but the problem is on "
                          f"[{config.r0}, {config.r1}]")


def cmd_verify(args) -> int:
    config, doping = load_problem(args.config)
    solution = load_solution(args.solution)
    _check_grid_matches(solution, config, args.solution)
    verification = _build_verification_report(solution, config, doping)
    if args.report:
        save_json(args.report, verification.to_dict())
    rows = [[name, check.value, check.threshold, check.passed] for name, check in verification.checks.items()]
    print_table(['check', 'value', 'threshold', 'passed'], rows)
    _require_passed(verification, args.solution)
    return EXIT_OK


def _variant(problem: dict, param: str, value: float):
    config, doping = problem_from_dict(problem)
    if param == 'tau':
        return replace(config, tau=value), doping
    doping = doping.scaled(value)
    doping.validate(config)
    return config, doping


def _sweep_one(task: dict) -> dict:
    """Solve one sweep point; never raises, failures are reported in the row."""
    param, value, regime = task['param'], task['value'], task['regime']
    row = {'value': value, 'hypotheses': None, 'converged': False, 'certificate': None,
           'weak_residual_linf': None, 'weak_residual_l2': None, 'verified': None, 'error': None}
    try:
        config, doping = _variant(task['problem'], param, value)
        row['hypotheses'] = check_hypotheses(regime, config, doping).satisfied
        if not row['hypotheses']:
            row['error'] = 'hypotheses unsatisfied'
            return row
        out = os.path.join(task['out_dir'], f"{param}_{value:g}.{task['format']}")
        solution, verification = run_solve(config, doping, regime, task['nodes'], task['grid'],
                                           task['overrides'], out, task['format'], task['config_path'], 'sweep')
        row.update(converged=True, certificate=verification.certificate,
                   weak_residual_linf=verification.weak_residual_linf,
                   weak_residual_l2=verification.weak_residual_l2, verified=verification.passed)
    except SonicAnnulusError as e:
        logging.warning(f"Sweep point {param}={value:g} failed: {e}")
        row['error'] = f"{type(e).__name__}: {e}"
    except Exception as e:
        logging.exception(f"Unexpected error at sweep point {param}={value:g}")
        row['error'] = f"{type(e).__name__}: {e}"
    return row


def cmd_sweep(args) -> int:
    if not args.values:
        raise ConfigError("--values needs at least one value")
    problem = problem_to_dict(*load_problem(args.config))
    out_dir = args.out or 'sweep'
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out_dir}: {e}") from e
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory {out_dir} is not writable")

    tasks = [{'param': args.param, 'value': v, 'regime': args.regime, 'problem': problem, 'nodes': args.nodes,
              'grid': args.grid, 'format': args.format, 'out_dir': out_dir, 'overrides': _overrides(args),
              'config_path': args.config} for v in args.values]
    jobs = args.jobs or get_setting('SONIC_ANNULUS_JOBS', os.cpu_count() or 1, int)
    logging.info(f"Sweeping {args.param} over {len(tasks)} value(s) with {jobs} worker(s)")
    if jobs <= 1 or len(tasks) == 1:
        rows = [_sweep_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            rows = list(pool.map(_sweep_one, tasks))

    save_json(os.path.join(out_dir, 'sweep_summary.json'), {'param': args.param, 'regime': args.regime, 'rows': rows})
    headers = ['value', 'hypotheses', 'converged', 'lambda*' if args.regime == 'subsonic' else 'ell',
               'weak res (sup)', 'weak res (rms)', 'verified', 'error']
    print_table(headers, [[r['value'], r['hypotheses'], r['converged'], r['certificate'], r['weak_residual_linf'],
                           r['weak_residual_l2'], r['verified'], r['error']] for r in rows])
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_solver_flags(p):
    p.add_argument('--regime', choices=REGIMES, default='subsonic', help='Which steady state to compute')
    p.add_argument('--nodes', type=int, default=get_setting('SONIC_ANNULUS_NODES', 1024, int),
                   help='Number of grid intervals (default 1024 or SONIC_ANNULUS_NODES)')
    p.add_argument('--grid', choices=GRID_KINDS, default='clustered', help='Grid spacing')
    p.add_argument('--format', choices=EXPORT_FORMATS, default='csv', help='Output format')
    p.add_argument('--tol', type=float, help='Fixed-point tolerance of the Picard loops')
    p.add_argument('--max-iter', type=int, help='Iteration cap of the Picard loops')
    p.add_argument('--relaxation', type=float, help='Under-relaxation factor in (0, 1]')
    p.add_argument('--no-polish', action='store_true', help='Skip the weak-form Newton polish of the last stage')
    p.add_argument('--upwind', action='store_true', help='Upwind the first-order term of the linear solves')


def build_parser():
    parser = _Parser(prog='sonic-annulus', description='Sonic-boundary steady states on an annulus')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('check', help='Report the existence hypotheses for both regimes')
    p.add_argument('config', help='Problem JSON file')
    p.add_argument('--regime', choices=REGIMES, default='subsonic', help='Regime that decides the exit code')
    p.add_argument('--json', action='store_true', help='Print the reports as JSON')
    p.set_defaults(func=cmd_check)

    p = sub.add_parser('solve', help='Compute a steady state and write its fields')
    p.add_argument('config', help='Problem JSON file')
    _add_solver_flags(p)
    p.add_argument('--out', help='Output file (default <regime>_solution.<format>)')
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser('verify', help='Re-run the verification checks on a stored solution')
    p.add_argument('solution', help='Solution file written by solve (JSON or CSV)')
    p.add_argument('config', help='Problem JSON file')
    p.add_argument('--report', help='Write the verification report to this JSON file')
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('sweep', help='Solve over a list of tau or doping scale values')
    p.add_argument('config', help='Problem JSON file')
    p.add_argument('--param', choices=SWEEP_PARAMS, required=True, help='Parameter to vary')
    p.add_argument('--values', type=float, nargs='+', required=True, help='Values of the parameter')
    _add_solver_flags(p)
    p.add_argument('--out', help='Output directory (default sweep)')
    p.add_argument('--jobs', type=int, help='Worker processes (default SONIC_ANNULUS_JOBS or CPU count)')
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    try:
        configure_logging()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    try:
        return args.func(args)
    except SonicAnnulusError as e:
        logging.error(f"{args.command} failed ({type(e).__name__}): {e}")
        history = getattr(e, 'history', None)
        if history:
            logging.error(f"Last iterate changes: {', '.join(f'{h:.3e}' for h in history[-5:])}")
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
