"""Non-colliding Brownian motions on the line.

For N (even) standard Brownian motions started at x_1 < ... < x_N, the
probability that no two meet by time t is a Pfaffian of error functions;
integrating the Karlin-McGregor determinant over the ordered region gives
the same number, which is what the quadrature routines check.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import mpmath
import numba
import numpy as np
from scipy.special import erf

from . import _rng
from ._parallel import ordered_map
from .series import EstimateSeries, chunked, merge_all, welford_rows

CHUNK = 4096
PFAFFIAN_RECURSION_MAX = 8


def phi(x):
    """``2/sqrt(pi) * int_0^x exp(-s^2) ds``, i.e. the error function."""
    if isinstance(x, mpmath.mpf):
        return mpmath.erf(x)
    return erf(x)


@dataclass(frozen=True)
class SkewMatrix:
    entries: object

    def __post_init__(self):
        M = self.entries
        n = len(M)
        for i in range(n):
            if len(M[i]) != n:
                raise ValueError("matrix must be square")
            if M[i][i] != 0:
                raise ValueError("diagonal must vanish")
            for j in range(i):
                if M[i][j] != -M[j][i]:
                    raise ValueError("matrix is not antisymmetric")

    @property
    def n(self) -> int:
        return len(self.entries)

    @classmethod
    def from_upper(cls, n: int, upper) -> "SkewMatrix":
        """Build from a function or mapping giving entry (i, j) for i < j."""
        get = upper if callable(upper) else (lambda i, j: upper[i, j])
        M = [[0] * n for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                v = get(i, j)
                M[i][j] = v
                M[j][i] = -v
        return cls(M)


@dataclass(frozen=True)
class OrderedStarts1D:
    xs: tuple

    def __post_init__(self):
        xs = tuple(self.xs)
        if not xs:
            raise ValueError("need at least one point")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("points must be strictly increasing")
        object.__setattr__(self, "xs", xs)

    @property
    def N(self) -> int:
        return len(self.xs)


def _as_starts(s) -> OrderedStarts1D:
    return s if isinstance(s, OrderedStarts1D) else OrderedStarts1D(tuple(s))


def _pf_recursive(M, idx):
    if not idx:
        return 1
    first, rest = idx[0], idx[1:]
    total = 0
    for k, j in enumerate(rest):
        a = M[first][j]
        if a == 0:
            continue
        sub = _pf_recursive(M, rest[:k] + rest[k + 1 :])
        total = total + a * sub if k % 2 == 0 else total - a * sub
    return total


def _pf_parlett_reid(A: np.ndarray) -> float:
    # Skew-symmetric LTL^T elimination with partial pivoting.
    A = np.array(A, dtype=float)
    n = A.shape[0]
    pf = 1.0
    for k in range(0, n - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(A[k + 1 :, k])))
        if kp != k + 1:
            A[[k + 1, kp], :] = A[[kp, k + 1], :]
            A[:, [k + 1, kp]] = A[:, [kp, k + 1]]
            pf = -pf
        if A[k + 1, k] == 0.0:
            return 0.0
        pf *= A[k, k + 1]
        if k + 2 < n:
            tau = A[k, k + 2 :] / A[k, k + 1]
            col = A[k + 2 :, k + 1].copy()
            A[k + 2 :, k + 2 :] += np.outer(tau, col) - np.outer(col, tau)
    return pf


def pfaffian(M):
    """Pfaffian of an even-order antisymmetric matrix.

    Orders up to 8 use the cofactor expansion along the first row, which
    works for any number type (floats, mpmath); larger orders fall back to
    Parlett-Reid elimination in double precision.
    """
    if not isinstance(M, SkewMatrix):
        M = SkewMatrix([list(r) for r in (M.tolist() if isinstance(M, np.ndarray) else M)])
    n = M.n
    if n % 2:
        raise ValueError("Pfaffian needs an even order")
    if n <= PFAFFIAN_RECURSION_MAX:
        return _pf_recursive(M.entries, tuple(range(n)))
    return _pf_parlett_reid(np.array(M.entries, dtype=float))


def _pnc_matrix(xs, t, precision):
    N = len(xs)
    if precision is None:
        s = math.sqrt(4.0 * t)
        return SkewMatrix.from_upper(N, lambda i, j: float(erf((xs[j] - xs[i]) / s)))
    s = mpmath.sqrt(4 * mpmath.mpf(t))
    return SkewMatrix.from_upper(N, lambda i, j: mpmath.erf((mpmath.mpf(xs[j]) - mpmath.mpf(xs[i])) / s))


def pnc_pfaffian_1d(starts, t: float, precision: int | None = None) -> float:
    """Probability that N standard Brownian motions from ``starts`` do not meet by ``t``.

    Entry (i, j), i < j, is ``phi((x_j - x_i) / sqrt(4 t))``. For large
    ``t`` the Pfaffian cancels catastrophically in double precision; pass
    ``precision`` (decimal digits) to evaluate it with mpmath.
    """
    s = _as_starts(starts)
    if s.N % 2:
        raise ValueError("N must be even")
    if not t > 0:
        raise ValueError("t must be positive")
    if precision is None:
        return float(pfaffian(_pnc_matrix(s.xs, t, None)))
    with mpmath.workdps(precision):
        return float(pfaffian(_pnc_matrix(s.xs, t, precision)))


def gaussian_kernel(t: float, x, y):
    """Transition density of standard Brownian motion (variance ``t``)."""
    return np.exp(-((np.asarray(y) - x) ** 2) / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def km_density(starts, ends, t: float) -> float:
    """Karlin-McGregor density ``det[g_t(x_i, y_j)]`` of non-crossing paths."""
    s, e = tuple(starts), tuple(ends)
    if len(s) != len(e):
        raise ValueError("starts and ends must have equal length")
    if any(b <= a for a, b in zip(s, s[1:])):
        raise ValueError("starts must be strictly increasing")
    if any(b < a for a, b in zip(e, e[1:])):
        raise ValueError("ends must be non-decreasing")
    if not t > 0:
        raise ValueError("t must be positive")
    G = np.array([[gaussian_kernel(t, x, y) for y in e] for x in s])
    return float(np.linalg.det(G))


def _perm_sign(p) -> int:
    sign, seen = 1, list(p)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def km_ordered_integral(starts, t: float, points_per_sd: int = 400, span: float = 10.0) -> float:
    """Integrate :func:`km_density` over ``y_1 < ... < y_N`` by quadrature.

    The determinant is expanded over permutations; each term is a product
    of one-variable Gaussians, whose ordered integral is a chain of nested
    cumulative integrals on a uniform grid (trapezoid rule).
    """
    s = _as_starts(starts)
    if not t > 0:
        raise ValueError("t must be positive")
    sd = math.sqrt(t)
    lo, hi = s.xs[0] - span * sd, s.xs[-1] + span * sd
    m = int(math.ceil((hi - lo) / sd * points_per_sd)) + 1
    y = np.linspace(lo, hi, m)
    h = y[1] - y[0]
    g = [gaussian_kernel(t, x, y) for x in s.xs]
    total = 0.0
    for p in itertools.permutations(range(s.N)):
        F = np.ones(m)
        for k in range(s.N):
            f = g[p[k]] * F
            F = np.concatenate(([0.0], np.cumsum(0.5 * h * (f[1:] + f[:-1]))))
        total += _perm_sign(p) * F[-1]
    return float(total)


def vandermonde(xs) -> float:
    """``prod_{i<j} (x_j - x_i)``, positive for increasing points."""
    out = 1.0
    for i in range(len(xs)):
        for j in range(i + 1, len(xs)):
            out *= xs[j] - xs[i]
    return out


def vandermonde_asymptotic(starts, t: float, cN: float) -> float:
    """``cN * Delta(x / sqrt(t))``, the large-time form of the non-collision probability."""
    xs = tuple(starts)
    if len(xs) % 2:
        raise ValueError("N must be even")
    if not t > 0:
        raise ValueError("t must be positive")
    r = math.sqrt(t)
    return cN * vandermonde([x / r for x in xs])


def fit_cN(starts, t: float = 1e6, precision: int = 50) -> float:
    """Fitted constant: ``pnc / Delta(x/sqrt(t))`` at a large time, in high precision."""
    s = _as_starts(starts)
    p = pnc_pfaffian_1d(s, t, precision=precision)
    return p / vandermonde_asymptotic(s.xs, t, 1.0)


@numba.njit(cache=True, nogil=True)
def _bm_chunk(xs, times, eps, dt_min, master, r0, r1):
    # Exact Gaussian increments on a state-dependent grid: steps of eps times
    # the squared smallest gap, but never below dt_min. A meeting inside a
    # step is caught through the bridge crossing probability exp(-a b / dt)
    # of each adjacent gap (a gap is a Brownian motion of variance rate 2).
    N = len(xs)
    T = len(times)
    out = np.zeros((r1 - r0, T))
    pos = np.empty(N)
    gap0 = np.empty(N)
    st = np.empty(1, dtype=np.uint64)
    for r in range(r0, r1):
        st[0] = _rng._replica_seed(master, np.uint64(r))
        for i in range(N):
            pos[i] = xs[i]
        clock = 0.0
        m = 0
        alive = True
        while m < T:
            if clock >= times[m]:
                out[r - r0, m] = 1.0
                m += 1
                continue
            small = np.inf
            for i in range(1, N):
                gap0[i] = pos[i] - pos[i - 1]
                small = min(small, gap0[i])
            dt = max(dt_min, eps * small * small)
            land = dt >= times[m] - clock
            if land:
                dt = times[m] - clock
            sd = math.sqrt(dt)
            for i in range(N):
                pos[i] += sd * _rng.standard_normal(st)
            surv = 1.0
            for i in range(1, N):
                b = pos[i] - pos[i - 1]
                if b <= 0.0:
                    alive = False
                    break
                surv *= 1.0 - math.exp(-gap0[i] * b / dt)
            if not alive or _rng.uniform(st) >= surv:
                break
            clock = times[m] if land else clock + dt
    return out


def _bm_part(xs, times, eps, dt_min, master, lo, hi):
    mean, m2, n = welford_rows(_bm_chunk(xs, times, eps, dt_min, master, lo, hi))
    return EstimateSeries(times, mean, m2, n)


def brownian_pnc_mc(
    starts, times, samples: int, seed: int, eps: float = 0.05, floor: float = 1e-3, threads: int | None = None
) -> EstimateSeries:
    """Monte Carlo non-collision probability for standard Brownian motions.

    Steps are ``eps * gap^2`` for the smallest current gap, floored at
    ``floor`` times the smallest initial gap squared. Adjacent gaps share a
    walker, so multiplying their bridge factors is an approximation; its
    error shrinks with the step size.
    """
    s = _as_starts(starts)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    xs = np.array(s.xs, dtype=float)
    master = np.uint64(seed & _rng.MASK64)
    dt_min = float(floor) * float(np.min(np.diff(xs))) ** 2 if len(xs) > 1 else 1.0
    tasks = [(xs, times, float(eps), dt_min, master, lo, hi) for lo, hi in chunked(samples, CHUNK)]
    out = merge_all(ordered_map(_bm_part, tasks, threads))
    out.meta.update(statistic="p_nc_1d", starts=list(s.xs), seed=int(seed))
    return out


def to_json(values: dict, path=None) -> str:
    """JSON with every float written to 15 significant digits."""

    def fmt(v):
        if isinstance(v, float):
            return float(f"{v:.15g}")
        if isinstance(v, dict):
            return {k: fmt(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [fmt(x) for x in v]
        return v

    text = json.dumps(fmt(values), indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
