"""Finitely many independent walkers: non-collision probabilities.

Walkers never interact; a collision is only *detected*. Between jumps all
walkers are static, so a pair can only meet at a jump instant, and only
pairs involving the walker that just jumped need checking.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from . import _rng
from ._parallel import ordered_map
from .lattice_walks import as_site, build_killed_table, jump_truncation, survival_renewal, survival_renewal_curve
from .rate_equations import OdeSpec, solve_ode
from .series import EstimateSeries, chunked, merge_all, welford_rows

CHUNK = 4096

_DX = np.array([1, -1, 0, 0], dtype=np.int64)
_DY = np.array([0, 0, 1, -1], dtype=np.int64)


@dataclass
class WalkerEnsemble:
    starts: list
    positions: list
    clock: float
    pair_collisions: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.starts)

    @property
    def first_collision(self) -> float:
        return min(self.pair_collisions.values(), default=math.inf)


@dataclass
class PowerLawFit:
    """Least-squares fit of ``log p = constant + exponent * log log t``."""

    exponent: float
    constant: float
    residual_rms: float
    window: tuple
    expected_exponent: float | None = None

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError("fit window must have t_min < t_max")

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _check_starts(starts) -> np.ndarray:
    pts = [as_site(s) for s in starts]
    if len(set(pts)) != len(pts):
        raise ValueError("walker starts must be pairwise distinct")
    if not pts:
        raise ValueError("need at least one walker")
    return np.array(pts, dtype=np.int64).reshape(len(pts), 2)


@numba.njit(cache=True, nogil=True)
def _ensemble_kernel(starts, t_max, seed):
    N = starts.shape[0]
    pos = starts.copy()
    hit = np.full((N, N), np.inf)
    st = np.empty(1, dtype=np.uint64)
    st[0] = seed
    if N == 0:
        return pos, hit
    clock = _rng.exponential(st, float(N))
    while clock <= t_max:
        b = _rng.next_u64(st)
        d = np.int64(b & np.uint64(3))
        i = _rng.bounded(st, b >> np.uint64(32), N)
        pos[i, 0] += _DX[d]
        pos[i, 1] += _DY[d]
        for j in range(N):
            if j != i and pos[j, 0] == pos[i, 0] and pos[j, 1] == pos[i, 1]:
                a, c = min(i, j), max(i, j)
                if hit[a, c] == np.inf:
                    hit[a, c] = clock
        clock += _rng.exponential(st, float(N))
    return pos, hit


def simulate_ensemble(starts, t_max: float, seed: int) -> WalkerEnsemble:
    """Evolve independent rate-one walkers to ``t_max``, recording first meetings.

    One global exponential clock of rate N picks a uniform walker per jump,
    which is equal in law to independent per-walker clocks.
    """
    arr = _check_starts(starts)
    if not t_max >= 0:
        raise ValueError("t_max must be nonnegative")
    pos, hit = _ensemble_kernel(arr, float(t_max), np.uint64(seed & _rng.MASK64))
    N = len(arr)
    pairs = {(i, j): float(hit[i, j]) for i in range(N) for j in range(i + 1, N) if np.isfinite(hit[i, j])}
    return WalkerEnsemble(
        starts=[tuple(map(int, p)) for p in arr],
        positions=[tuple(map(int, p)) for p in pos],
        clock=float(t_max),
        pair_collisions=pairs,
    )


@numba.njit(cache=True, nogil=True)
def _pnc_chunk(starts, times, kmax, master, r0, r1):
    # Run the jump chain to the first collision at jump K, then draw the
    # collision time as the K-th arrival of a rate-N Poisson clock.
    N = starts.shape[0]
    T = len(times)
    out = np.ones((r1 - r0, T))
    pos = np.empty_like(starts)
    st = np.empty(1, dtype=np.uint64)
    for r in range(r0, r1):
        if N < 2:
            continue
        st[0] = _rng._replica_seed(master, np.uint64(r))
        for a in range(N):
            pos[a, 0] = starts[a, 0]
            pos[a, 1] = starts[a, 1]
        K = 0
        for k in range(1, kmax + 1):
            b = _rng.next_u64(st)
            d = np.int64(b & np.uint64(3))
            i = _rng.bounded(st, b >> np.uint64(32), N)
            x = pos[i, 0] + _DX[d]
            y = pos[i, 1] + _DY[d]
            pos[i, 0] = x
            pos[i, 1] = y
            for j in range(N):
                if j != i and pos[j, 0] == x and pos[j, 1] == y:
                    K = k
                    break
            if K:
                break
        if K:
            tc = _rng.gamma_int(st, float(K), float(N))
            for m in range(T):
                if tc <= times[m]:
                    out[r - r0, m] = 0.0
    return out


def _pnc_part(arr, times, kmax, master, lo, hi):
    samples = _pnc_chunk(arr, times, kmax, master, lo, hi)
    mean, m2, n = welford_rows(samples)
    return EstimateSeries(times, mean, m2, n)


def estimate_pnc_mc(starts, times, replicas: int, seed: int, threads: int | None = None) -> EstimateSeries:
    """Monte Carlo non-collision probability ``P[tau_c > t]`` on a time grid.

    Replica ``r`` draws from the stream ``replica_seed(seed, r)``; replicas
    are pooled in index order, so results do not depend on ``threads``.
    """
    arr = _check_starts(starts)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    N = len(arr)
    kmax = jump_truncation(N * float(times.max())) if N > 1 else 0
    master = np.uint64(seed & _rng.MASK64)
    tasks = [(arr, times, kmax, master, lo, hi) for lo, hi in chunked(replicas, CHUNK)]
    parts = ordered_map(_pnc_part, tasks, threads)
    out = merge_all(parts)
    out.meta.update(statistic="p_nc", starts=[list(map(int, p)) for p in arr], seed=int(seed))
    return out


def exact_pnc_pair(start_offset, t: float, method: str = "table") -> float:
    """``P[tau_12 > t]`` for two walkers whose starts differ by ``start_offset``.

    The difference of two rate-one walks is a rate-two walk, so this is the
    survival of a single killed walk at time ``2t``. ``method="renewal"``
    evaluates the same quantity without spatial truncation and is much
    cheaper for large ``t``.
    """
    off = as_site(start_offset)
    if off == (0, 0):
        raise ValueError("offset must be nonzero")
    if not t >= 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 1.0
    if method == "table":
        return build_killed_table(2.0 * t, off).survival_mass
    if method == "renewal":
        return survival_renewal(2.0 * t, off)
    raise ValueError(f"unknown method {method!r}")


def exact_pnc_pair_curve(start_offset, times) -> np.ndarray:
    """:func:`exact_pnc_pair` on a whole grid by the renewal route, in one pass."""
    off = as_site(start_offset)
    if off == (0, 0):
        raise ValueError("offset must be nonzero")
    return survival_renewal_curve(2.0 * np.asarray(times, dtype=float), off)


def pnc_ere_solve(N: int, t0: float, p0: float, t_max: float, times=None, points: int = 64) -> EstimateSeries:
    """Integrate dp/dt = -C(N,2) p / (t log t) from ``p(t0) = p0``."""
    if not t0 > 1:
        raise ValueError("t0 must exceed 1 so that log t0 > 0")
    if not 0 < p0 <= 1:
        raise ValueError("p0 must lie in (0, 1]")
    spec = OdeSpec(t0=t0, y0=p0, rhs_kind="pnc_ere", t_max=t_max, N=N, times=times, points=points)
    out = solve_ode(spec)
    out.meta.update(N=N)
    return out


def fit_log_power(series: EstimateSeries, N: int, window: tuple | None = None) -> PowerLawFit:
    """Fit ``mean(t) ≈ exp(constant) (log t)^exponent`` over ``window``.

    The default window is ``[t_max / 100, t_max]``. The exponent should
    approach ``-C(N, 2)`` and ``exp(constant)`` estimates c0.
    """
    t = series.times
    if window is None:
        window = (t[-1] / 100.0, t[-1])
    sel = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12)) & (t > 1)
    if sel.sum() < 2:
        raise ValueError("fewer than two grid times inside the fit window")
    y = series.mean[sel]
    if np.any(y <= 0):
        raise ValueError("series must be strictly positive on the fit window")
    x = np.log(np.log(t[sel]))
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - (slope * x + icpt)
    return PowerLawFit(
        exponent=float(slope),
        constant=float(icpt),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        window=(float(window[0]), float(window[1])),
        expected_exponent=-float(math.comb(N, 2)),
    )
