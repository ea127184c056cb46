"""
Linear two-point boundary value problems

    [a(r) y']' + b(r) y' + c(r) y = f(r),   y(r0) = alpha,  y(r1) = beta

discretized by a conservative finite-difference scheme on a RadialGrid and
solved as a tridiagonal system. Every Picard step of the solvers goes through here.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from helper_functions import EllipticityError, SingularSystemError
from problem_model import Profile, RadialGrid


@dataclass(frozen=True, eq=False)
class LinearBVP:
    grid: RadialGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    f: np.ndarray
    alpha: float
    beta: float
    upwind: bool = False

    def __post_init__(self):
        size = self.grid.nodes.size
        for name in ('a', 'b', 'c', 'f'):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (size,)).copy()
            object.__setattr__(self, name, arr)


@dataclass(frozen=True, eq=False)
class TridiagonalSystem:
    """Rows are the interior nodes; sub[0] and sup[-1] are unused and held at zero."""
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        size = len(self.diag)
        if not (len(self.sub) == len(self.sup) == len(self.rhs) == size):
            raise ValueError("tridiagonal arrays must share one length")

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        out = self.diag * x
        out[1:] += self.sub[1:] * x[:-1]
        out[:-1] += self.sup[:-1] * x[1:]
        return out

    def to_dense(self):
        size = len(self.diag)
        dense = np.diag(self.diag)
        if size > 1:
            dense += np.diag(self.sub[1:], -1) + np.diag(self.sup[:-1], 1)
        return dense

    def relative_residual(self, x) -> float:
        scale = np.max(np.abs(self.rhs))
        res = np.max(np.abs(self.matvec(x) - self.rhs))
        return float(res / scale) if scale > 0 else float(res)


def central_weights(grid: RadialGrid):
    """Second-order weights (w_minus, w_zero, w_plus) of y' at interior nodes of a nonuniform grid."""
    hm = grid.h[:-1]
    hp = grid.h[1:]
    w_minus = -hp / (hm * (hm + hp))
    w_zero = (hp - hm) / (hm * hp)
    w_plus = hm / (hp * (hm + hp))
    return w_minus, w_zero, w_plus


def assemble(bvp: LinearBVP) -> TridiagonalSystem:
    x = bvp.grid.nodes
    bad = np.flatnonzero(~(bvp.a > 0))
    if bad.size:
        i = int(bad[0])
        raise EllipticityError(f"diffusion coefficient a={bvp.a[i]:.3e} is not positive at node {i} (r={x[i]:.6g})", node=i)
    if np.any(bvp.c[1:-1] > 0):
        i = int(np.flatnonzero(bvp.c[1:-1] > 0)[0]) + 1
        raise EllipticityError(f"reaction coefficient c={bvp.c[i]:.3e} is positive at node {i} (r={x[i]:.6g})", node=i)

    hm = bvp.grid.h[:-1]
    hp = bvp.grid.h[1:]
    hi = 0.5 * (hm + hp)
    a_mid = 0.5 * (bvp.a[1:] + bvp.a[:-1])
    am, ap = a_mid[:-1], a_mid[1:]
    b = bvp.b[1:-1]

    sub = am / (hm * hi)
    sup = ap / (hp * hi)
    diag = -(am / hm + ap / hp) / hi + bvp.c[1:-1]
    if bvp.upwind:
        fwd = b > 0
        sub = sub - np.where(fwd, 0.0, b / hm)
        sup = sup + np.where(fwd, b / hp, 0.0)
        diag = diag + np.where(fwd, -b / hp, b / hm)
    else:
        w_minus, w_zero, w_plus = central_weights(bvp.grid)
        sub = sub + b * w_minus
        sup = sup + b * w_plus
        diag = diag + b * w_zero

    rhs = bvp.f[1:-1].copy()
    rhs[0] -= sub[0] * bvp.alpha
    rhs[-1] -= sup[-1] * bvp.beta
    sub = sub.copy()
    sup = sup.copy()
    sub[0] = 0.0
    sup[-1] = 0.0
    return TridiagonalSystem(sub=sub, diag=diag, sup=sup, rhs=rhs)


def _thomas_python(sys: TridiagonalSystem) -> np.ndarray:
    size = len(sys.diag)
    cp = np.zeros(size)
    dp = np.zeros(size)
    pivot = sys.diag[0]
    if pivot == 0:
        raise SingularSystemError("zero pivot at row 0")
    cp[0] = sys.sup[0] / pivot
    dp[0] = sys.rhs[0] / pivot
    for i in range(1, size):
        pivot = sys.diag[i] - sys.sub[i] * cp[i - 1]
        if pivot == 0:
            raise SingularSystemError(f"zero pivot at row {i}")
        cp[i] = sys.sup[i] / pivot
        dp[i] = (sys.rhs[i] - sys.sub[i] * dp[i - 1]) / pivot
    x = np.zeros(size)
    x[-1] = dp[-1]
    for i in range(size - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def _thomas_banded(sys: TridiagonalSystem) -> np.ndarray:
    size = len(sys.diag)
    ab = np.zeros((3, size))
    ab[0, 1:] = sys.sup[:-1]
    ab[1] = sys.diag
    ab[2, :-1] = sys.sub[1:]
    try:
        return scipy.linalg.solve_banded((1, 1), ab, sys.rhs)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularSystemError(f"tridiagonal system is singular: {e}") from e


def thomas_solve(sys: TridiagonalSystem, method: str = 'banded') -> np.ndarray:
    """
    Solve the tridiagonal system.
    :param method: 'banded' (LAPACK through scipy.linalg.solve_banded) or 'python' (plain Thomas sweep)
    :return: solution at the interior nodes
    """
    if method == 'python':
        x = _thomas_python(sys)
    elif method == 'banded':
        x = _thomas_banded(sys)
    else:
        raise ValueError(f"unknown tridiagonal method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("tridiagonal solve produced non-finite values")
    residual = sys.relative_residual(x)
    if residual > 1e-10:
        logging.warning(f"Tridiagonal solve residual {residual:.3e} exceeds 1e-10")
    else:
        logging.debug(f"Tridiagonal solve residual {residual:.3e}")
    return x


def with_boundary(bvp: LinearBVP, interior) -> np.ndarray:
    return np.concatenate(([bvp.alpha], interior, [bvp.beta]))


def solve_bvp(bvp: LinearBVP, method: str = 'banded') -> Profile:
    return Profile(bvp.grid, with_boundary(bvp, thomas_solve(assemble(bvp), method)))
