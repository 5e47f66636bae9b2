"""Coalescing and annihilating walks on a periodic L x L grid.

The torus stands in for the full plane; it is faithful as long as the
diffusive scale stays well below L (``L >= 8 sqrt(t)``).

State is a dense grid of particle indices (-1 for empty) plus a compact
array of particle cells, so jumps, deletions and lookups are all O(1).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from . import _rng
from ._parallel import ordered_map
from .lattice_walks import DIHEDRAL, as_site
from .series import EstimateSeries

MODES = ("coalesce", "annihilate")
INITS = ("full", "bernoulli_half")
CSV_EXTRA = ("L", "mode", "init")

_COALESCE = 0
_ANNIHILATE = 1


@dataclass
class OccupancyField:
    L: int
    mode: str
    grid: np.ndarray
    cells: np.ndarray
    count: int
    clock: float = 0.0

    def __post_init__(self):
        _check_L(self.L)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def occupied(self) -> set:
        c = self.cells[: self.count]
        return set(zip((c % self.L).tolist(), (c // self.L).tolist()))

    def is_occupied(self, site) -> bool:
        x, y = as_site(site)
        return bool(self.grid[(y % self.L) * self.L + (x % self.L)] >= 0)

    def copy(self) -> "OccupancyField":
        return OccupancyField(self.L, self.mode, self.grid.copy(), self.cells.copy(), self.count, self.clock)


@dataclass(frozen=True)
class CorrelationSpec:
    offsets: tuple

    def __post_init__(self):
        offs = tuple(as_site(o) for o in self.offsets)
        if not offs:
            raise ValueError("need at least one offset")
        if len(set(offs)) != len(offs):
            raise ValueError("offsets must be pairwise distinct")
        object.__setattr__(self, "offsets", offs)

    @property
    def N(self) -> int:
        return len(self.offsets)

    def array(self) -> np.ndarray:
        return np.array(self.offsets, dtype=np.int64).reshape(self.N, 2)

    def images(self) -> list:
        """Distinct images of the pattern under the 8 lattice symmetries."""
        seen = []
        for g in DIHEDRAL:
            img = tuple(sorted(g(o) for o in self.offsets))
            if img not in seen:
                seen.append(img)
        return [CorrelationSpec(img) for img in seen]


def _check_L(L):
    if not (isinstance(L, (int, np.integer)) and L >= 4 and (L & (L - 1)) == 0):
        raise ValueError("L must be a power of two, at least 4")


@numba.njit(cache=True, nogil=True)
def _fill(L, full, st):
    n = L * L
    grid = np.full(n, -1, dtype=np.int32)
    cells = np.empty(n, dtype=np.int32)
    count = 0
    bits = np.uint64(0)
    for c in range(n):
        if full:
            take = True
        else:
            if c % 64 == 0:
                bits = _rng.next_u64(st)
            take = (bits >> np.uint64(c % 64)) & np.uint64(1) == np.uint64(1)
        if take:
            grid[c] = count
            cells[count] = c
            count += 1
    return grid, cells, count


@numba.njit(cache=True, nogil=True, inline="always")
def _remove(grid, cells, count, i):
    grid[cells[i]] = -1
    last = count - 1
    if i != last:
        cells[i] = cells[last]
        grid[cells[i]] = i
    return last


@numba.njit(cache=True, nogil=True)
def _advance(grid, cells, count, clock, t_target, L, mode, st):
    # Global clock of rate `count`; on overshooting the target the clock is
    # parked at t_target (memoryless), so later calls continue in law.
    mask = L - 1
    shift = np.int64(0)
    while (1 << shift) < L:
        shift += 1
    while count > 0:
        clock += _rng.exponential(st, float(count))
        if clock > t_target:
            return count, t_target
        b = _rng.next_u64(st)
        i = _rng.bounded(st, b >> np.uint64(32), count)
        d = np.int64(b & np.uint64(3))
        c = np.int64(cells[i])
        x = c & mask
        y = c >> shift
        if d == 0:
            x = (x + 1) & mask
        elif d == 1:
            x = (x - 1) & mask
        elif d == 2:
            y = (y + 1) & mask
        else:
            y = (y - 1) & mask
        nc = (y << shift) | x
        j = grid[nc]
        if j < 0:
            grid[c] = -1
            grid[nc] = i
            cells[i] = nc
        elif mode == _COALESCE:
            count = _remove(grid, cells, count, i)
        else:
            count = _remove(grid, cells, count, i)
            count = _remove(grid, cells, count, grid[nc])
    return count, max(clock, t_target)


@numba.njit(cache=True, nogil=True)
def _pattern_fraction(grid, cells, count, L, offs, probe):
    # Fraction of probe origins whose offset sites are all occupied. With
    # probe < 0 every origin counts; each origin is found once, through the
    # particle sitting on its first offset.
    mask = L - 1
    shift = np.int64(0)
    while (1 << shift) < L:
        shift += 1
    N = offs.shape[0]
    if probe >= 0:
        px = probe & mask
        py = probe >> shift
        for k in range(N):
            c = (((py + offs[k, 1]) & mask) << shift) | ((px + offs[k, 0]) & mask)
            if grid[c] < 0:
                return 0.0
        return 1.0
    hits = 0
    for p in range(count):
        c = np.int64(cells[p])
        ox = (c & mask) - offs[0, 0]
        oy = (c >> shift) - offs[0, 1]
        ok = True
        for k in range(1, N):
            cc = (((oy + offs[k, 1]) & mask) << shift) | ((ox + offs[k, 0]) & mask)
            if grid[cc] < 0:
                ok = False
                break
        if ok:
            hits += 1
    return hits / float(L * L)


def init_field(L: int, mode: str, init: str, seed: int) -> OccupancyField:
    """Fresh field: every site occupied (``full``) or each independently w.p. 1/2."""
    _check_L(L)
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    grid, cells, count = _fill(L, init == "full", _rng.new_state(seed))
    return OccupancyField(L, mode, grid, cells, int(count))


def evolve_field(field: OccupancyField, t_target: float, seed: int) -> OccupancyField:
    """Return a copy of ``field`` advanced in law to ``t_target``."""
    if t_target < field.clock:
        raise ValueError("t_target is earlier than the field clock")
    out = field.copy()
    count, clock = _advance(
        out.grid, out.cells, out.count, float(out.clock), float(t_target), out.L,
        _COALESCE if out.mode == "coalesce" else _ANNIHILATE, _rng.new_state(seed),
    )
    out.count, out.clock = int(count), float(clock)
    return out


def _pattern_table(patterns, probe, L):
    # Stack patterns (each a list of offset arrays averaged together) into
    # one padded table for the replica kernel.
    flat = [(k, o) for k, group in enumerate(patterns) for o in group]
    width = max(len(o) for _, o in flat)
    offs = np.zeros((len(flat), width, 2), dtype=np.int64)
    sizes = np.empty(len(flat), dtype=np.int64)
    owner = np.empty(len(flat), dtype=np.int64)
    for r, (k, o) in enumerate(flat):
        offs[r, : len(o)] = o
        sizes[r] = len(o)
        owner[r] = k
    weights = np.array([1.0 / len(patterns[k]) for k, _ in flat])
    if probe is None:
        cell = -1
    else:
        px, py = as_site(probe)
        cell = (py % L) * L + (px % L)
    return offs, sizes, owner, weights, cell


@numba.njit(cache=True, nogil=True)
def _replica_kernel(L, full, mode, times, offs, sizes, owner, weights, n_patterns, probe, seed):
    st = np.empty(1, dtype=np.uint64)
    st[0] = seed
    grid, cells, count = _fill(L, full, st)
    out = np.zeros((n_patterns, len(times)))
    clock = 0.0
    for m in range(len(times)):
        count, clock = _advance(grid, cells, count, clock, times[m], L, mode, st)
        for r in range(offs.shape[0]):
            f = _pattern_fraction(grid, cells, count, L, offs[r, : sizes[r]], probe)
            out[owner[r], m] += weights[r] * f
    return out


def _replica_task(L, full, mode, times, table, n_patterns, seed):
    offs, sizes, owner, weights, probe = table
    return _replica_kernel(L, full, mode, times, offs, sizes, owner, weights, n_patterns, probe, np.uint64(seed))


def _horizon_warning(L, times) -> list:
    t_max = float(np.max(times)) if len(times) else 0.0
    if L < 8.0 * math.sqrt(t_max):
        msg = f"L={L} is below 8*sqrt(t_max)={8 * math.sqrt(t_max):.1f}; wraparound may bias estimates"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return [msg]
    return []


def run_patterns(L, times, replicas, mode, init, seed, patterns, probe=None, threads=None) -> list:
    """Estimate several occupancy patterns along the same trajectories.

    ``patterns`` is a list of groups; each group is a list of offset arrays
    whose indicators are averaged (a single pattern or its symmetry images).
    Returns one :class:`EstimateSeries` per group.
    """
    _check_L(L)
    if mode not in MODES or init not in INITS:
        raise ValueError("bad mode or init")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    for group in patterns:
        for o in group:
            if np.abs(o).max() * 4 >= L:
                raise ValueError(f"offsets too large for L={L}")
    warn = _horizon_warning(L, times)
    table = _pattern_table(patterns, probe, L)
    mcode = _COALESCE if mode == "coalesce" else _ANNIHILATE
    master = seed & _rng.MASK64
    tasks = [
        (L, init == "full", mcode, times, table, len(patterns), _rng.replica_seed(master, r))
        for r in range(replicas)
    ]
    per_rep = np.stack(ordered_map(_replica_task, tasks, threads))
    out = []
    for k in range(len(patterns)):
        s = EstimateSeries.from_samples(times, per_rep[:, k, :], L=L, mode=mode, init=init, seed=int(seed))
        s.warnings.extend(warn)
        out.append(s)
    return out


def estimate_rho1(L, times, replicas, mode="coalesce", init="full", seed=0, probe=None, threads=None) -> EstimateSeries:
    """Density ``E[count / L^2]`` on a time grid, one trajectory per replica.

    With ``probe`` set, the statistic is the occupation of that single site
    instead of the spatial average.
    """
    (s,) = run_patterns(L, times, replicas, mode, init, seed, [[np.zeros((1, 2), dtype=np.int64)]], probe, threads)
    s.meta.update(statistic="rho1")
    return s


def estimate_rhoN(
    L, spec: CorrelationSpec, times, replicas, mode="coalesce", init="full", seed=0,
    symmetrize=False, probe=None, threads=None,
) -> EstimateSeries:
    """Probability that all sites of ``spec`` (shifted by a probe origin) are occupied.

    By default the indicator is averaged over all L^2 origins of each field.
    ``symmetrize`` also averages over the distinct lattice-symmetry images of
    the pattern, which leaves the mean unchanged and reduces variance.
    """
    group = spec.images() if symmetrize else [spec]
    (s,) = run_patterns(L, times, replicas, mode, init, seed, [[g.array() for g in group]], probe, threads)
    s.meta.update(statistic="rhoN", offsets=[list(o) for o in spec.offsets], symmetrize=bool(symmetrize))
    return s


@dataclass
class CheckReport:
    """Per-time pass/fail of a statistical inequality or identity."""

    name: str
    times: list
    lhs: list
    rhs: list
    slack: list
    passed: list
    flags: list = field(default_factory=list)

    @property
    def n_pass(self) -> int:
        return sum(self.passed)

    @property
    def n_fail(self) -> int:
        return len(self.passed) - self.n_pass

    @property
    def ok(self) -> bool:
        return self.n_fail == 0 and not self.flags

    def to_json(self, path=None) -> str:
        d = asdict(self)
        d.update(n_pass=self.n_pass, n_fail=self.n_fail, ok=self.ok)
        text = json.dumps(d, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _aligned(a: EstimateSeries, b: EstimateSeries):
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=1e-12, atol=0):
        raise ValueError("series are on different time grids")


def neg_corr_report(rho1: EstimateSeries, rhoN: EstimateSeries, N: int, sigmas: float = 3.0) -> CheckReport:
    """One-sided check ``rhoN <= rho1^N`` with delta-method error bars."""
    _aligned(rho1, rhoN)
    bound = rho1.mean**N
    se = np.sqrt(rhoN.stderr**2 + (N * rho1.mean ** (N - 1) * rho1.stderr) ** 2)
    passed = rhoN.mean <= bound + sigmas * se
    return CheckReport(
        "negative_correlation", rho1.times.tolist(), rhoN.mean.tolist(), bound.tolist(),
        (sigmas * se).tolist(), [bool(p) for p in passed],
    )


def thinning_report(coalescing: EstimateSeries, annihilating: EstimateSeries, N: int, sigmas: float = 3.0) -> CheckReport:
    """Two-sided check ``2^N rho_ann == rho_coal`` within pooled error bars."""
    _aligned(coalescing, annihilating)
    flags = []
    for s, mode, init in ((coalescing, "coalesce", "full"), (annihilating, "annihilate", "bernoulli_half")):
        if "mode" in s.meta and (s.meta["mode"] != mode or s.meta["init"] != init):
            flags.append(f"expected {mode}/{init}, got {s.meta['mode']}/{s.meta['init']}")
    scaled = 2.0**N * annihilating.mean
    se = np.sqrt(coalescing.stderr**2 + (2.0**N * annihilating.stderr) ** 2)
    passed = np.abs(scaled - coalescing.mean) <= sigmas * se
    return CheckReport(
        "thinning", coalescing.times.tolist(), scaled.tolist(), coalescing.mean.tolist(),
        (sigmas * se).tolist(), [bool(p) for p in passed], flags,
    )


def series_csv(series: EstimateSeries, path=None) -> str:
    """CSV with columns t,mean,stderr,n,L,mode,init."""
    return series.to_csv(path, extra={k: series.meta.get(k, "") for k in CSV_EXTRA})


def manifest(config: dict, seed: int, outputs=(), path=None) -> str:
    text = json.dumps({"config": config, "master_seed": int(seed), "outputs": list(outputs)}, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
