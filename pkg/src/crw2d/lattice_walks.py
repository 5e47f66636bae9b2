"""Single-walker kernels for the rate-one simple random walk on Z^2.

The walk jumps at total rate 1, to each of the four neighbours at rate 1/4,
so each coordinate is a rate-1/2 walk on Z. Continuous-time quantities are
obtained by Poissonizing the number of jumps of the embedded discrete walk:

    p_t(z) = sum_k Poisson(k; t) * P[S_k = z]

Discrete distributions are propagated by the four-neighbour stencil on a
box ``max(|x|, |y|) <= radius`` centred on the origin. Killing at the origin
zeroes the origin cell after every jump.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import stats

from . import _rng

CACHE_MAGIC = b"CRW2"
CACHE_VERSION = 1
TAIL_FLAG = 1e-6
POISSON_SPREAD = 12.0
POISSON_PAD = 50


@dataclass(frozen=True)
class Site:
    x: int
    y: int

    def __iter__(self):
        yield self.x
        yield self.y

    def __add__(self, other):
        ox, oy = other
        return Site(self.x + ox, self.y + oy)

    def __sub__(self, other):
        ox, oy = other
        return Site(self.x - ox, self.y - oy)


def as_site(z) -> tuple[int, int]:
    x, y = z
    if int(x) != x or int(y) != y:
        raise ValueError(f"lattice site needs integer coordinates, got {z!r}")
    return int(x), int(y)


# The eight symmetries of Z^2 fixing the origin
DIHEDRAL = (
    lambda z: (z[0], z[1]),
    lambda z: (-z[1], z[0]),
    lambda z: (-z[0], -z[1]),
    lambda z: (z[1], -z[0]),
    lambda z: (-z[0], z[1]),
    lambda z: (z[0], -z[1]),
    lambda z: (z[1], z[0]),
    lambda z: (-z[1], -z[0]),
)


def _max_norm(z) -> int:
    return max(abs(z[0]), abs(z[1]))


@dataclass(frozen=True)
class TailBoundParams:
    c5: float
    c6: float

    def __post_init__(self):
        if not (self.c5 > 0 and self.c6 > 0):
            raise ValueError("tail bound constants must be strictly positive")


@dataclass
class TransitionTable:
    """``probs[x + radius, y + radius] = P_0[X_t = (x, y)]`` on the box."""

    time: float
    radius: int
    probs: np.ndarray
    tail_mass: float
    jump_truncation: int

    @property
    def flagged(self) -> bool:
        """True when the box misses more than ``TAIL_FLAG`` of the mass."""
        return self.tail_mass > TAIL_FLAG

    def prob(self, z) -> float:
        x, y = z
        r = self.radius
        if abs(x) > r or abs(y) > r:
            return 0.0
        return float(self.probs[x + r, y + r])

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        ax = np.arange(-self.radius, self.radius + 1)
        return np.meshgrid(ax, ax, indexing="ij")

    def to_csv(self, path) -> None:
        _write_table_csv(path, self)


@dataclass
class KilledTable:
    """Walk from ``source`` killed on hitting the origin.

    ``probs[x + radius, y + radius] = P_source[X_t = (x, y), tau_0 > t]``.
    ``survival_mass`` counts mass that left the box as surviving.
    """

    time: float
    radius: int
    source: tuple
    probs: np.ndarray
    survival_mass: float
    tail_mass: float
    jump_truncation: int

    @property
    def flagged(self) -> bool:
        return self.tail_mass > TAIL_FLAG

    def prob(self, z) -> float:
        x, y = z
        r = self.radius
        if abs(x) > r or abs(y) > r:
            return 0.0
        return float(self.probs[x + r, y + r])

    def coords(self):
        ax = np.arange(-self.radius, self.radius + 1)
        return np.meshgrid(ax, ax, indexing="ij")

    def to_csv(self, path) -> None:
        _write_table_csv(path, self)


def jump_truncation(t: float) -> int:
    """Largest Poisson jump count kept; the omitted tail is below 1e-12."""
    return int(math.floor(t + POISSON_SPREAD * math.sqrt(t) + POISSON_PAD))


def default_radius(t: float, source=(0, 0)) -> int:
    return max(1, int(math.ceil(4.0 * math.sqrt(t)))) + _max_norm(source)


def _poisson_weights(t: float, kmax: int) -> tuple[np.ndarray, int]:
    if t == 0:
        w = np.zeros(kmax + 1)
        w[0] = 1.0
        return w, 0
    w = stats.poisson.pmf(np.arange(kmax + 1), t)
    kmin = max(0, int(math.floor(t - POISSON_SPREAD * math.sqrt(t) - POISSON_PAD)))
    return w, kmin


@numba.njit(cache=True, nogil=True)
def _poissonized_stencil(sx, sy, R, weights, kmin, kill):
    # Arrays carry a one-cell zero border so the stencil needs no branches.
    W = 2 * R + 1
    cur = np.zeros((W + 2, W + 2))
    nxt = np.zeros((W + 2, W + 2))
    acc = np.zeros((W + 2, W + 2))
    o = R + 1
    cur[sx + o, sy + o] = 1.0
    kmax = len(weights) - 1
    lo_i = hi_i = sx + o
    lo_j = hi_j = sy + o
    parity0 = (sx + sy) & 1
    killed = 0.0
    surv = 0.0
    for k in range(kmax + 1):
        w = weights[k]
        par = (parity0 + k) & 1
        if k >= kmin:
            for i in range(lo_i, hi_i + 1):
                j0 = lo_j + ((i - o + lo_j - o - par) & 1)
                for j in range(j0, hi_j + 1, 2):
                    acc[i, j] += w * cur[i, j]
            surv += w * (1.0 - killed)
        if k == kmax:
            break
        lo_i = max(lo_i - 1, 1)
        hi_i = min(hi_i + 1, W)
        lo_j = max(lo_j - 1, 1)
        hi_j = min(hi_j + 1, W)
        npar = 1 - par
        for i in range(lo_i, hi_i + 1):
            j0 = lo_j + ((i - o + lo_j - o - npar) & 1)
            for j in range(j0, hi_j + 1, 2):
                nxt[i, j] = 0.25 * ((cur[i - 1, j] + cur[i + 1, j]) + (cur[i, j - 1] + cur[i, j + 1]))
        if kill:
            killed += nxt[o, o]
            nxt[o, o] = 0.0
        cur, nxt = nxt, cur
    return acc[1:W + 1, 1:W + 1].copy(), surv, killed


def _check_time(t: float) -> float:
    t = float(t)
    if not (t >= 0) or math.isinf(t):
        raise ValueError(f"time must be finite and nonnegative, got {t}")
    return t


def build_transition_table(t: float, radius: int | None = None) -> TransitionTable:
    """Free transition probabilities ``p_t(z)`` on a box of half-width ``radius``."""
    t = _check_time(t)
    if radius is None:
        radius = default_radius(t)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    kmax = jump_truncation(t)
    w, kmin = _poisson_weights(t, kmax)
    probs, _, _ = _poissonized_stencil(0, 0, int(radius), w, kmin, False)
    # rounding over many jumps can leave the sum a few ulps above one
    tail = max(0.0, 1.0 - math.fsum(probs.ravel()))
    return TransitionTable(t, int(radius), probs, tail, kmax)


def build_killed_table(t: float, source, radius: int | None = None) -> KilledTable:
    """Transition probabilities of the walk from ``source`` killed at the origin."""
    t = _check_time(t)
    sx, sy = as_site(source)
    if (sx, sy) == (0, 0):
        raise ValueError("killed walk must start away from the origin")
    if radius is None:
        radius = default_radius(t, (sx, sy))
    if radius < _max_norm((sx, sy)):
        raise ValueError("box does not contain the source")
    kmax = jump_truncation(t)
    w, kmin = _poisson_weights(t, kmax)
    probs, surv, killed = _poissonized_stencil(sx, sy, int(radius), w, kmin, True)
    # jump counts past the truncation (mass < 1e-12) keep the last survival level
    surv = min(1.0, surv + float(stats.poisson.sf(kmax, t)) * (1.0 - killed))
    tail = max(0.0, surv - math.fsum(probs.ravel()))
    return KilledTable(t, int(radius), (sx, sy), probs, surv, tail, kmax)


# --- exact renewal route ---------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _one_dim_law(m, nmax):
    """``a[n] = P[S_n = m]`` for the discrete simple walk on Z, n <= nmax."""
    a = np.zeros(nmax + 1)
    m = abs(m)
    if m > nmax:
        return a
    a[m] = 0.5**m
    n = m
    while n + 2 <= nmax:
        k = (n + m) // 2
        a[n + 2] = a[n] * ((n + 1.0) * (n + 2.0) / ((k + 1.0) * (n - k + 1.0)) / 4.0)
        n += 2
    return a


def discrete_law(z, nmax: int) -> np.ndarray:
    """``P_0[S_n = z]`` for the discrete 2D walk, n = 0..nmax.

    Uses the rotation (x + y, x - y), under which the 2D walk splits into
    two independent walks on Z.
    """
    x, y = as_site(z)
    return _one_dim_law(x + y, nmax) * _one_dim_law(x - y, nmax)


@numba.njit(cache=True, nogil=True, fastmath=True)
def _renewal_first_passage(u, v, parity):
    # v = f * u (power series), u[0] = 1; solve for f. Only steps of the
    # source's parity can reach the origin, and u vanishes at odd lags.
    n = len(u)
    f = np.zeros(n)
    for k in range(1, n):
        if k % 2 != parity:
            continue
        s = v[k]
        for j in range(parity if parity else 2, k, 2):
            s -= f[j] * u[k - j]
        f[k] = s
    return f


def survival_renewal_curve(times, source) -> np.ndarray:
    """``P_source[tau_0 > t]`` for every t in ``times``, with no spatial truncation.

    First-passage probabilities of the discrete walk solve the renewal
    equation ``P[S_n = 0 | source] = sum_k f_k P_0[S_{n-k} = 0]``; the
    survival curve is then Poissonized at each time. Cost is quadratic in
    the jump count of the largest time and paid once.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    for t in times:
        _check_time(t)
    sx, sy = as_site(source)
    if (sx, sy) == (0, 0):
        return np.zeros(len(times))
    kmax = jump_truncation(float(times.max()))
    u = discrete_law((0, 0), kmax)
    v = discrete_law((sx, sy), kmax)
    f = _renewal_first_passage(u, v, (sx + sy) & 1)
    surv = 1.0 - np.cumsum(f)
    out = np.empty(len(times))
    for i, t in enumerate(times):
        if t == 0:
            out[i] = 1.0
            continue
        k = jump_truncation(t)
        w, _ = _poisson_weights(t, k)
        val = np.dot(w, surv[: k + 1]) + stats.poisson.sf(k, t) * surv[k]
        out[i] = min(1.0, max(0.0, val))
    return out


def survival_renewal(t: float, source) -> float:
    """``P_source[tau_0 > t]`` by the renewal route (see :func:`survival_renewal_curve`)."""
    return float(survival_renewal_curve([t], source)[0])


# --- derived quantities ----------------------------------------------------


def transition_lclt(t: float, z) -> float:
    """Gaussian approximation ``exp(-|z|^2 / t) / (pi t)`` to ``p_t(z)``."""
    if not t > 0:
        raise ValueError("local CLT needs t > 0")
    x, y = z
    return math.exp(-(x * x + y * y) / t) / (math.pi * t)


def lclt_sup_error(table: TransitionTable) -> float:
    X, Y = table.coords()
    g = np.exp(-(X * X + Y * Y) / table.time) / (math.pi * table.time)
    return float(np.max(np.abs(table.probs - g)))


def hitting_prob(t: float, y, radius: int | None = None, method: str = "table") -> float:
    """``G_t(y) = P_y[tau_0 <= t]``; equal to 1 from the origin by convention."""
    t = _check_time(t)
    y = as_site(y)
    if y == (0, 0):
        return 1.0
    if t == 0:
        return 0.0
    if method == "table":
        return 1.0 - build_killed_table(t, y, radius).survival_mass
    if method == "renewal":
        return 1.0 - survival_renewal(t, y)
    raise ValueError(f"unknown method {method!r}")


def boundary_flux_F(t: float, y, radius: int | None = None) -> float:
    """``F_t(y) = P_y[|X_t| = 1, tau_0 > t]``.

    For the rate-one walk ``d/dt G_t(y) = F_t(y) / 4``: each neighbour of the
    origin jumps there at rate 1/4.
    """
    y = as_site(y)
    if y == (0, 0):
        raise ValueError("flux is defined for y != origin")
    tab = build_killed_table(t, y, radius)
    return sum(tab.prob(e) for e in ((1, 0), (-1, 0), (0, 1), (0, -1)))


def hitting_asymptotic(t: float) -> float:
    """Leading-order survival from a neighbour of the origin, ``pi / log t``."""
    if not t > 1:
        raise ValueError("asymptotic needs t > 1")
    return math.pi / math.log(t)


def ld_tail_bound(t: float, r: float, params: TailBoundParams) -> float:
    """``c5 exp(-c6 (log t)^(2r))`` bounding ``P[sup_{s<=t} |Z_s| >= sqrt(t) log^r t]``."""
    return params.c5 * math.exp(-params.c6 * math.log(t) ** (2.0 * r))


def sup_threshold(t: float, r: float) -> float:
    return math.sqrt(t) * math.log(t) ** r


@numba.njit(cache=True, nogil=True)
def _strip_exit(A, nmax):
    # discrete walk on Z from 0, absorbed at +-A; exit[n] = P[absorbed by n]
    W = 2 * A - 1
    cur = np.zeros(W + 2)
    nxt = np.zeros(W + 2)
    cur[A] = 1.0
    exit_ = np.zeros(nmax + 1)
    e = 0.0
    for n in range(1, nmax + 1):
        e += 0.5 * (cur[1] + cur[W])
        for i in range(1, W + 1):
            nxt[i] = 0.5 * (cur[i - 1] + cur[i + 1])
        cur, nxt = nxt, cur
        exit_[n] = e
    return exit_


def sup_exceed_prob(t: float, a: float) -> float:
    """Exact ``P[sup_{s<=t} |Z_s| >= a]`` for a rate-1/2 walk on Z.

    The supremum over continuous time equals the maximum along the embedded
    jump chain, so this is the Poisson(t/2) mixture of discrete exit laws.
    """
    A = int(math.ceil(a))
    if A <= 0:
        return 1.0
    lam = t / 2.0
    nmax = jump_truncation(lam)
    exit_ = _strip_exit(A, nmax)
    w, _ = _poisson_weights(lam, nmax)
    return float(np.dot(w, exit_))


CALIBRATION_TIMES = (1e2, 1e3, 1e4)
CALIBRATION_EXPONENTS = (0.6, 1.0)


def calibrate_tail_params(times=CALIBRATION_TIMES, exponents=CALIBRATION_EXPONENTS) -> TailBoundParams:
    """Fit ``(c5, c6)`` so the bound dominates the exact probabilities.

    ``c6`` is the least-squares decay rate of ``log P`` against
    ``(log t)^(2r)``; ``c5`` is then the smallest prefactor that dominates
    every calibration point.
    """
    xs, ys = [], []
    for t in times:
        for r in exponents:
            p = sup_exceed_prob(t, sup_threshold(t, r))
            xs.append(math.log(t) ** (2 * r))
            ys.append(math.log(p))
    xs, ys = np.array(xs), np.array(ys)
    slope = np.polyfit(xs, ys, 1)[0]
    c6 = -slope
    if c6 <= 0:
        raise RuntimeError("calibration produced a non-decaying bound")
    c5 = float(np.max(np.exp(ys + c6 * xs)))
    return TailBoundParams(c5=c5, c6=float(c6))


@numba.njit(cache=True, nogil=True)
def _mc_sup_exceed(t, A, paths, seed):
    hits = 0
    for p in range(paths):
        st = np.empty(1, dtype=np.uint64)
        st[0] = _rng._replica_seed(np.uint64(seed), np.uint64(p))
        clock = _rng.exponential(st, 0.5)
        pos = 0
        while clock <= t:
            if _rng.next_u64(st) & np.uint64(1):
                pos += 1
            else:
                pos -= 1
            if pos >= A or pos <= -A:
                hits += 1
                break
            clock += _rng.exponential(st, 0.5)
    return hits


def mc_sup_exceed(t: float, r: float, paths: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate (and stderr) of the supremum tail probability."""
    A = int(math.ceil(sup_threshold(t, r)))
    hits = _mc_sup_exceed(float(t), A, int(paths), seed & _rng.MASK64)
    p = hits / paths
    return p, math.sqrt(max(p * (1 - p), 0.0) / paths)


# --- export / cache ----------------------------------------------------------


def _write_table_csv(path, table) -> None:
    X, Y = table.coords()
    with open(path, "w") as fh:
        fh.write("x,y,prob\n")
        for x, y, p in zip(X.ravel(), Y.ravel(), table.probs.ravel()):
            fh.write(f"{x},{y},{float(p)!r}\n")


_HEADER = struct.Struct("<4sIB")
_FREE = struct.Struct("<dI")
_KILLED = struct.Struct("<dIii")


def dump_table(table, path) -> None:
    """Binary cache: magic ``CRW2``, u32 version, u8 kind, then fields in order."""
    killed = isinstance(table, KilledTable)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, int(killed)))
        if killed:
            fh.write(_KILLED.pack(table.time, table.radius, table.source[0], table.source[1]))
        else:
            fh.write(_FREE.pack(table.time, table.radius))
        fh.write(np.ascontiguousarray(table.probs, dtype="<f8").tobytes())
        if killed:
            fh.write(struct.pack("<ddI", table.survival_mass, table.tail_mass, table.jump_truncation))
        else:
            fh.write(struct.pack("<dI", table.tail_mass, table.jump_truncation))


def load_table(path):
    data = Path(path).read_bytes()
    magic, version, kind = _HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise ValueError(f"{path}: not a version-{CACHE_VERSION} table cache")
    off = _HEADER.size
    if kind:
        t, R, sx, sy = _KILLED.unpack_from(data, off)
        off += _KILLED.size
    else:
        t, R = _FREE.unpack_from(data, off)
        off += _FREE.size
    W = 2 * R + 1
    probs = np.frombuffer(data, dtype="<f8", count=W * W, offset=off).reshape(W, W).astype(float)
    off += 8 * W * W
    if kind:
        surv, tail, kmax = struct.unpack_from("<ddI", data, off)
        return KilledTable(t, R, (sx, sy), probs, surv, tail, kmax)
    tail, kmax = struct.unpack_from("<dI", data, off)
    return TransitionTable(t, R, probs, tail, kmax)


@dataclass
class TableCache:
    """Directory of binary tables keyed by (t, radius, killed, source)."""

    directory: Path
    hits: int = field(default=0, init=False)

    def __post_init__(self):
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, t, radius, source):
        tag = "free" if source is None else f"killed_{source[0]}_{source[1]}"
        return self.directory / f"{tag}_t{float(t).hex()}_r{radius}.crw2"

    def transition(self, t: float, radius: int | None = None) -> TransitionTable:
        radius = default_radius(t) if radius is None else radius
        p = self._path(t, radius, None)
        if p.exists():
            self.hits += 1
            return load_table(p)
        tab = build_transition_table(t, radius)
        dump_table(tab, p)
        return tab

    def killed(self, t: float, source, radius: int | None = None) -> KilledTable:
        source = as_site(source)
        radius = default_radius(t, source) if radius is None else radius
        p = self._path(t, radius, source)
        if p.exists():
            self.hits += 1
            return load_table(p)
        tab = build_killed_table(t, source, radius)
        dump_table(tab, p)
        return tab
