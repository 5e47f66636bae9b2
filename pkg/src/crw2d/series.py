"""Time series of Monte Carlo estimates and their pooled merging."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np

BASE_COLUMNS = ("t", "mean", "stderr", "n")


@dataclass
class EstimateSeries:
    """Per-time running moments of an estimated statistic.

    ``var_accum`` is the sum of squared deviations from the mean (the ``M2``
    of Welford's algorithm); ``n`` counts replicas per time.
    """

    times: np.ndarray
    mean: np.ndarray
    var_accum: np.ndarray
    n: np.ndarray
    meta: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.var_accum = np.asarray(self.var_accum, dtype=float)
        self.n = np.asarray(self.n, dtype=np.int64)
        k = len(self.times)
        if not (len(self.mean) == len(self.var_accum) == len(self.n) == k):
            raise ValueError("series field lengths disagree")
        if k > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def empty(cls, times, **meta) -> "EstimateSeries":
        k = len(times)
        return cls(times, np.zeros(k), np.zeros(k), np.zeros(k, dtype=np.int64), meta=dict(meta))

    @classmethod
    def exact(cls, times, values, **meta) -> "EstimateSeries":
        """A deterministic series: one 'replica', zero spread."""
        k = len(times)
        return cls(times, values, np.zeros(k), np.ones(k, dtype=np.int64), meta=dict(meta))

    @classmethod
    def from_samples(cls, times, samples: np.ndarray, **meta) -> "EstimateSeries":
        """Fold a (replicas, times) array in row order."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        mean, m2, n = welford_rows(samples)
        return cls(times, mean, m2, n, meta=dict(meta))

    def __len__(self):
        return len(self.times)

    @property
    def variance(self) -> np.ndarray:
        out = np.zeros(len(self))
        ok = self.n > 1
        out[ok] = self.var_accum[ok] / (self.n[ok] - 1)
        return out

    @property
    def stderr(self) -> np.ndarray:
        out = np.zeros(len(self))
        ok = self.n > 1
        out[ok] = np.sqrt(self.var_accum[ok] / (self.n[ok] - 1) / self.n[ok])
        return out

    def at(self, t: float) -> int:
        """Index of grid time ``t`` (exact match within 1e-9 relative)."""
        idx = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[idx], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"time {t} not on grid")
        return idx

    def to_csv(self, path=None, extra: dict | None = None) -> str:
        """CSV with header ``t,mean,stderr,n`` (+ constant ``extra`` columns).

        Floats are written as shortest round-trip decimals, so equal series
        give byte-identical files.
        """
        extra = extra or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + list(extra))
        se = self.stderr
        for i in range(len(self)):
            w.writerow(
                [repr(float(self.times[i])), repr(float(self.mean[i])), repr(float(se[i])), int(self.n[i])]
                + [str(v) for v in extra.values()]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_csv(path) -> EstimateSeries:
    """Read back a series written by :meth:`EstimateSeries.to_csv`.

    Variance accumulators are reconstructed from the stderr column.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    mean = np.array([float(r["mean"]) for r in rows])
    se = np.array([float(r["stderr"]) for r in rows])
    n = np.array([int(r["n"]) for r in rows], dtype=np.int64)
    m2 = se**2 * n * np.maximum(n - 1, 0)
    return EstimateSeries(t, mean, m2, n)


@numba.njit(cache=True, inline="always")
def _merge_moments(na, ma, m2a, nb, mb, m2b):
    n = na + nb
    if nb == 0:
        return na, ma, m2a
    if na == 0:
        return nb, mb, m2b
    delta = mb - ma
    mean = ma + delta * nb / n
    m2 = m2a + m2b + delta * delta * na * nb / n
    return n, mean, m2


@numba.njit(cache=True, nogil=True)
def welford_rows(samples):
    """Sequential pooled moments of the rows of a (replicas, times) array."""
    r, k = samples.shape
    mean = np.zeros(k)
    m2 = np.zeros(k)
    n = np.zeros(k, dtype=np.int64)
    for i in range(r):
        for j in range(k):
            nn, mm, qq = _merge_moments(n[j], mean[j], m2[j], 1, samples[i, j], 0.0)
            n[j] = nn
            mean[j] = mm
            m2[j] = qq
    return mean, m2, n


@numba.njit(cache=True)
def _merge_arrays(na, ma, m2a, nb, mb, m2b):
    k = len(na)
    n = np.zeros(k, dtype=np.int64)
    mean = np.zeros(k)
    m2 = np.zeros(k)
    for j in range(k):
        nn, mm, qq = _merge_moments(na[j], ma[j], m2a[j], nb[j], mb[j], m2b[j])
        n[j] = nn
        mean[j] = mm
        m2[j] = qq
    return n, mean, m2


def merge_estimates(a: EstimateSeries, b: EstimateSeries) -> EstimateSeries:
    """Pool two series on the same grid (Chan et al. parallel moments)."""
    if len(a) != len(b) or not np.array_equal(a.times, b.times):
        raise ValueError("cannot merge series on different time grids")
    n, mean, m2 = _merge_arrays(a.n, a.mean, a.var_accum, b.n, b.mean, b.var_accum)
    meta = dict(a.meta)
    meta.update({k: v for k, v in b.meta.items() if k not in meta})
    return EstimateSeries(a.times.copy(), mean, m2, n, meta=meta, warnings=list(a.warnings) + [
        w for w in b.warnings if w not in a.warnings])


def merge_all(parts: Sequence[EstimateSeries]) -> EstimateSeries:
    """Left fold in the given order; callers pass parts in replica-index order."""
    if not parts:
        raise ValueError("nothing to merge")
    out = parts[0]
    for p in parts[1:]:
        out = merge_estimates(out, p)
    return out


def geometric_grid(t_min: float, t_max: float, points: int) -> np.ndarray:
    if not (0 < t_min < t_max) or points < 2:
        raise ValueError("need 0 < t_min < t_max and points >= 2")
    return np.geomspace(t_min, t_max, points)


def parse_grid(spec: str) -> np.ndarray:
    """Parse ``"t_min:t_max:points"`` into a geometric grid."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"bad grid spec {spec!r}; expected t_min:t_max:points")
    return geometric_grid(float(parts[0]), float(parts[1]), int(parts[2]))


def chunked(total: int, size: int) -> Iterable[tuple[int, int]]:
    for lo in range(0, total, size):
        yield lo, min(total, lo + size)
