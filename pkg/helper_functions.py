import json
import logging
import os
import sys

import numpy as np
from dotenv import dotenv_values

# Load environment variables
# Optional .env variables (the process environment wins over .env):
# - SONIC_ANNULUS_LOG: error | info | debug (default info)
# - SONIC_ANNULUS_LOG_DIR: directory for sonic_annulus.log (default logs)
# - SONIC_ANNULUS_NODES: default number of grid intervals (default 1024)
# - SONIC_ANNULUS_JOBS: default sweep parallelism (default: CPU count)
env = dotenv_values('.env')

LOG_LEVELS = {'error': logging.ERROR, 'info': logging.INFO, 'debug': logging.DEBUG}
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class SonicAnnulusError(Exception):
    """Base error; `exit_code` is what the CLI returns when this escapes a command."""
    exit_code = 1


class ConfigError(SonicAnnulusError):
    exit_code = 1


class DomainError(SonicAnnulusError):
    exit_code = 1


class HypothesisError(SonicAnnulusError):
    exit_code = 2

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class VerificationFailure(SonicAnnulusError):
    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DivergenceError(SonicAnnulusError):
    exit_code = 4

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ContinuationError(DivergenceError):
    pass


class EllipticityError(SonicAnnulusError):
    """Raised when a diffusion coefficient is not strictly positive on the grid."""
    exit_code = 4

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class IterateOutOfBandError(EllipticityError):
    pass


class BoundViolationError(SonicAnnulusError):
    exit_code = 4

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularSystemError(SonicAnnulusError):
    exit_code = 4


class ShootingError(SonicAnnulusError):
    exit_code = 4


def get_setting(name, default=None, cast=str):
    """
    Read a setting from the environment, falling back to .env, then to `default`.
    :param name: variable name, e.g. SONIC_ANNULUS_NODES
    :param default: value used when the variable is unset or empty
    :param cast: converter applied to the raw string
    :return: the converted value
    """
    raw = os.getenv(name, env.get(name))
    if raw is None or str(raw).strip() == '':
        return default
    try:
        return cast(raw)
    except (TypeError, ValueError):
        logging.warning(f"Ignoring malformed setting {name}={raw!r}; using {default!r}")
        return default


def configure_logging(level=None, log_dir=None, stderr=True):
    """Set up root logging to <log_dir>/sonic_annulus.log (plus stderr for the CLI)."""
    level_name = (level or get_setting('SONIC_ANNULUS_LOG', 'info')).strip().lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"SONIC_ANNULUS_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    log_dir = log_dir or get_setting('SONIC_ANNULUS_LOG_DIR', 'logs')

    handlers = []
    try:
        os.makedirs(log_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(log_dir, 'sonic_annulus.log')))
    except OSError as e:
        print(f"Could not open log directory {log_dir}: {e}", file=sys.stderr)
    if stderr:
        handlers.append(logging.StreamHandler(sys.stderr))

    logging.basicConfig(level=LOG_LEVELS[level_name], format=LOG_FORMAT, handlers=handlers, force=True)
    return LOG_LEVELS[level_name]


def run_with_retries(func, max_retries=2, relaxation=1.0, backoff=0.5, *args, **kwargs):
    """
    Call func(*args, relaxation=..., **kwargs), retrying after a DivergenceError
    with the relaxation factor multiplied by `backoff`.
    """
    last_exception = None
    for attempt in range(max_retries + 1):
        try:
            return func(*args, relaxation=relaxation, **kwargs)
        except DivergenceError as e:
            last_exception = e
            logging.warning(f"Error in {func.__name__} (attempt {attempt+1}/{max_retries+1}, relaxation={relaxation:g}): {e}")
            if attempt < max_retries:
                relaxation *= backoff
                logging.info(f"Retrying {func.__name__} with relaxation {relaxation:g}...")
    logging.error(f"All {max_retries+1} attempts failed for {func.__name__}")
    raise last_exception


def sup_norm(values):
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if values.size else 0.0


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else None
    return obj


def load_json(path):
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        logging.error(f"Failed to parse {path}: {e}")
        raise ConfigError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    except OSError as e:
        logging.error(f"Failed to read {path}: {e}")
        raise ConfigError(f"cannot read {path}: {e}") from e


def save_json(path, payload):
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(to_jsonable(payload), f, indent=2)
    except OSError as e:
        logging.error(f"Failed to save {path}: {e}")
        raise ConfigError(f"cannot write {path}: {e}") from e


def format_table(headers, rows):
    """Render rows as a left-aligned plain-text table."""
    if not rows:
        return '(no results)'
    cells = [[str(h) for h in headers]] + [[_cell(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]

    def fmt_row(r):
        return '  '.join(cell.ljust(w) for cell, w in zip(r, widths))
    lines = [fmt_row(cells[0]), '  '.join('-' * w for w in widths)]
    lines.extend(fmt_row(r) for r in cells[1:])
    return '\n'.join(lines)


def print_table(headers, rows):
    print(format_table(headers, rows))


def _cell(value):
    if isinstance(value, bool):
        return 'yes' if value else 'no'
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return '-'
    return str(value)


def continuation_should_stop(differences, tol, label, stall_window=3):
    """
    Decide whether a continuation can stop after its latest stage.
    :param differences: sup-norm differences between consecutive stage solutions so far
    :param tol: stop once the latest difference is below this
    :param stall_window: number of consecutive increases treated as a stall
    :return: True when converged; raises ContinuationError on a stall
    """
    if not differences:
        return False
    if differences[-1] < tol:
        return True
    recent = differences[-(stall_window + 1):]
    if len(recent) == stall_window + 1 and all(b > a for a, b in zip(recent, recent[1:])):
        raise ContinuationError(f"{label}: stage differences increased {stall_window} times in a row "
                                f"({', '.join(f'{d:.2e}' for d in recent)})", differences)
    return False
