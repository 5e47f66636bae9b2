"""The acceptance suite: ten numbered checks with measured values and tolerances.

Both ``crw2d verify`` and the test-suite call :func:`run_criterion`; the
expensive simulations are cached so checks sharing a run pay for it once.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import finite_system as fs
from . import infinite_system as inf
from . import oned_exact as od
from . import rate_equations as re_
from .lattice_walks import build_transition_table, lclt_sup_error
from .series import geometric_grid

LEVELS = ("fast", "full")
SEED = 0


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.cid:>2} {self.name}: {self.measured} (tolerance: {self.tolerance}) [{self.seconds:.1f}s]"


def _check_level(level):
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")


# -- shared simulations -----------------------------------------------------

ADJ = np.array([[0, 0], [1, 0]], dtype=np.int64)
SITE = np.zeros((1, 2), dtype=np.int64)


@lru_cache(maxsize=None)
def thinning_runs(level: str, threads: int | None = None):
    L = 1024 if level == "full" else 512
    times = [10.0, 100.0, 1000.0]
    pats = [[SITE], [ADJ]]
    coal = inf.run_patterns(L, times, 32, "coalesce", "full", SEED, pats, threads=threads)
    ann = inf.run_patterns(L, times, 32, "annihilate", "bernoulli_half", SEED + 1, pats, threads=threads)
    return coal, ann


@lru_cache(maxsize=None)
def density_run(level: str, threads: int | None = None):
    L = 1024 if level == "full" else 512
    return inf.run_patterns(L, [10.0, 100.0, 250.0, 1000.0], 16, "coalesce", "full", SEED + 2, [[SITE], [ADJ]], threads=threads)


SUPPRESSION_TIMES = (100.0, 400.0, 1600.0)


def shifted_time(t: float) -> float:
    """``t (1 - log^{-1/2} t)``, where the pair correlation is compared with rho1^2."""
    return t * (1 - 1 / math.sqrt(math.log(t)))


@lru_cache(maxsize=None)
def pair_suppression_run(level: str, threads: int | None = None):
    L = 2048 if level == "full" else 1024
    group = [s.array() for s in inf.CorrelationSpec(((0, 0), (1, 0))).images()]
    times = sorted(SUPPRESSION_TIMES + tuple(shifted_time(t) for t in SUPPRESSION_TIMES))
    return inf.run_patterns(L, times, 16, "coalesce", "full", SEED + 3, [[SITE], group], threads=threads)


PNC_GRID = geometric_grid(1e2, 1e4, 8)


@lru_cache(maxsize=None)
def pnc_run(level: str, threads: int | None = None):
    replicas = 1_000_000 if level == "full" else 100_000
    return fs.estimate_pnc_mc([(0, 0), (1, 0)], PNC_GRID, replicas, SEED + 4, threads)


@lru_cache(maxsize=None)
def pnc_exact_grid():
    return fs.exact_pnc_pair_curve((1, 0), PNC_GRID)


# -- criteria ----------------------------------------------------------------


def c1_pair_survival(level, threads=None):
    value = fs.exact_pnc_pair((1, 0), 4096.0, method="table")
    ratio = value * math.log(8192.0) / math.pi
    return abs(ratio - 1) <= 0.25, f"p={value:.6f}, p*log(8192)/pi={ratio:.4f}", "|ratio-1| <= 0.25"


def c2_mc_vs_exact(level, threads=None):
    s = pnc_run(level, threads)
    z = np.abs(s.mean - pnc_exact_grid()) / s.stderr
    return bool(np.all(z <= 3)), f"max |z|={z.max():.2f} over {len(z)} times, n={int(s.n[0])}", "|z| <= 3 at every time"


def c3_thinning(level, threads=None):
    coal, ann = thinning_runs(level, threads)
    rep = inf.thinning_report(coal[0], ann[0], 1)
    rep2 = inf.thinning_report(coal[1], ann[1], 2)
    dev = [abs(a - b) / s if s else 0.0 for a, b, s in zip(rep.lhs, rep.rhs, rep.slack)]
    info = f"2*rho1_ann vs rho1_coal: max dev {3 * max(dev):.2f} sigma; N=2 pattern {rep2.n_pass}/{len(rep2.passed)} pass"
    return rep.ok, info, "within 3 pooled stderr at t=10,100,1000"


def _sawyer_ratio(s, t):
    return s.mean[s.at(t)] * math.pi * t / math.log(t)


def c4_density_band(level, threads=None):
    rho1 = density_run(level, threads)[0]
    r250, r1000 = _sawyer_ratio(rho1, 250.0), _sawyer_ratio(rho1, 1000.0)
    rel = abs(r250 / r1000 - 1)
    ok = 0.6 <= r1000 <= 1.6 and rel < 0.4
    direction = "above" if r250 > r1000 else "below"
    return ok, f"ratio(1000)={r1000:.4f}, ratio(250)={r250:.4f} ({direction}), rel diff {rel:.3f}", "ratio(1000) in [0.6,1.6], rel diff < 0.4"


def c5_negative_correlation(level, threads=None):
    rho1, rho2 = density_run(level, threads)
    keep = [rho1.at(t) for t in (10.0, 100.0, 1000.0)]
    rep = inf.neg_corr_report(rho1, rho2, 2)
    ok = all(rep.passed[i] for i in keep)
    vals = ", ".join(f"{rep.lhs[i] / rep.rhs[i]:.3f}" for i in keep)
    return ok, f"rho2/rho1^2 = {vals}", "rho2 <= rho1^2 + 3 sigma at t=10,100,1000"


def c6_pair_suppression(level, threads=None):
    rho1, rho2 = pair_suppression_run(level, threads)
    q = rho2.mean / rho1.mean**2
    a, b = q[rho1.at(100.0)], q[rho1.at(1600.0)]
    drop = 1 - b / a
    return drop >= 0.25, f"rho2/rho1^2: {a:.4f} -> {b:.4f}, drop {drop:.3f}", "drop >= 0.25 from t=100 to 1600"


def _skew(rng, n):
    A = rng.normal(size=(n, n))
    return A - A.T


def c7_pfaffian(level, threads=None):
    notes, ok = [], True
    err_a = max(
        abs(od.pnc_pfaffian_1d((x0, x1), t) - od.phi((x1 - x0) / math.sqrt(4 * t)))
        for (x0, x1) in ((0.0, 2.0), (-1.0, 0.3), (5.0, 9.5))
        for t in (0.1, 1.0, 30.0)
    )
    ok &= err_a <= 1e-12
    notes.append(f"(a) {err_a:.1e}")
    err_b = max(
        abs(od.km_ordered_integral(xs, t) - od.pnc_pfaffian_1d(xs, t))
        for xs, t in (((0.0, 2.0), 1.0), ((0.0, 1.0, 2.0, 3.0), 1.0), ((-1.0, 0.5, 2.0, 4.0), 2.0))
    )
    ok &= err_b <= 1e-4
    notes.append(f"(b) {err_b:.1e}")
    rng = np.random.default_rng(2024)
    err_c = 0.0
    for n in (2, 4, 6, 8):
        for _ in range(5):
            A = _skew(rng, n)
            d = np.linalg.det(A)
            err_c = max(err_c, abs(od.pfaffian(A) ** 2 - d) / abs(d))
    ok &= err_c <= 1e-9
    notes.append(f"(c) {err_c:.1e}")
    samples = 1_000_000 if level == "full" else 200_000
    xs = (0.0, 1.0, 2.0, 3.0)
    mc = od.brownian_pnc_mc(xs, [1.0], samples, SEED + 5, threads=threads)
    z = abs(mc.mean[0] - od.pnc_pfaffian_1d(xs, 1.0)) / mc.stderr[0]
    ok &= z <= 3
    notes.append(f"(d) |z|={z:.2f}")
    return bool(ok), "; ".join(notes), "1e-12; 1e-4; 1e-9 rel; 3 stderr"


def c8_ere(level, threads=None):
    err_p = 0.0
    for N in (2, 3, 4):
        t0 = math.e
        s = fs.pnc_ere_solve(N, t0, 1.0, 1e6 * t0)
        err_p = max(err_p, float(np.max(np.abs(s.mean / re_.pnc_closed_form(N, t0, 1.0, s.times) - 1))))
    ts = np.geomspace(1.0, 1e4, 9)
    exact = 1.0 / (1.0 + math.pi * (ts - 1.0))
    errs = []
    for h in (0.2, 0.1, 0.05):
        spec = re_.OdeSpec(1.0, 1.0, "meanfield", 1e4, times=ts, fixed_step=h)
        errs.append(float(np.max(np.abs(re_.rho1_ere_solve(spec).mean / exact - 1))))
    # the same test on the logarithmic equation itself, against a tight adaptive reference
    t0 = 100.0
    y0 = math.log(t0) / (math.pi * t0)
    grid = np.geomspace(t0, 1e6, 5)
    ref = re_.rho1_ere_solve(re_.OdeSpec(t0, y0, "rho1_ere", 1e6, times=grid, rtol=1e-13)).mean
    errs_log = []
    for h in (0.4, 0.2, 0.1):
        spec = re_.OdeSpec(t0, y0, "rho1_ere", 1e6, times=grid, fixed_step=h)
        errs_log.append(float(np.max(np.abs(re_.rho1_ere_solve(spec).mean / ref - 1))))
    ratios = [e[i] / e[i + 1] for e in (errs, errs_log) for i in range(len(e) - 1)]
    adaptive = re_.rho1_ere_solve(re_.OdeSpec(1.0, 1.0, "meanfield", 1e4, times=ts))
    err_cf = float(np.max(np.abs(adaptive.mean / exact - 1)))
    ok = err_p <= 1e-8 and min(ratios) >= 8 and err_cf <= 1e-8
    return ok, f"pnc rel err {err_p:.1e}; halving ratios {', '.join(f'{r:.0f}' for r in ratios)}; closed form {err_cf:.1e}", "1e-8; >= 8; 1e-8"


def c9_lclt(level, threads=None):
    e = {t: lclt_sup_error(build_transition_table(float(t))) for t in (64, 256, 1024)}
    r1, r2 = e[256] / e[64], e[1024] / e[64]
    return r1 <= 2 / 4 and r2 <= 2 / 16, f"e(256)/e(64)={r1:.4f}, e(1024)/e(64)={r2:.5f}", "<= 1/4 and <= 1/16, factor-2 slack"


def c10_determinism(level, threads=None):
    from .cli import determinism_configs, run_experiment

    import tempfile
    from pathlib import Path

    bad = []
    with tempfile.TemporaryDirectory() as tmp:
        for cfg in determinism_configs():
            blobs = []
            for k, th in enumerate((1, 1, 4)):
                out = Path(tmp) / f"{cfg.command}_{k}.csv"
                cfg2 = cfg.replace(output_path=str(out))
                man = run_experiment(cfg2, threads=th)
                blobs.append(b"".join(Path(p).read_bytes() for p in man.outputs if p.endswith(".csv")))
            if not (blobs[0] == blobs[1] == blobs[2]):
                bad.append(cfg.command)
        n = len(determinism_configs())
    return not bad, f"{n - len(bad)}/{n} subcommands byte-identical (1,1,4 threads)" + (f"; differ: {bad}" if bad else ""), "byte-identical"


CRITERIA = {
    1: ("two-walker non-collision band", c1_pair_survival),
    2: ("MC vs exact pair oracle", c2_mc_vs_exact),
    3: ("thinning relation", c3_thinning),
    4: ("density ratio band", c4_density_band),
    5: ("negative correlation", c5_negative_correlation),
    6: ("pair-correlation suppression", c6_pair_suppression),
    7: ("1D Pfaffian", c7_pfaffian),
    8: ("rate equation closed forms", c8_ere),
    9: ("local CLT decay", c9_lclt),
    10: ("determinism", c10_determinism),
}


def run_criterion(cid: int, level: str = "full", threads: int | None = None) -> CriterionResult:
    _check_level(level)
    name, fn = CRITERIA[cid]
    t0 = time.perf_counter()
    passed, measured, tol = fn(level, threads)
    return CriterionResult(cid, name, bool(passed), measured, tol, time.perf_counter() - t0)


def verify_suite(level: str = "fast", threads: int | None = None, echo=print) -> list[CriterionResult]:
    """Run every criterion once, printing one line each."""
    out = []
    for cid in CRITERIA:
        r = run_criterion(cid, level, threads)
        if echo is not None:
            echo(r.line())
        out.append(r)
    return out
