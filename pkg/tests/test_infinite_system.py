import math
import warnings

import numpy as np
import pytest

from crw2d import verify
from crw2d.infinite_system import (
    CorrelationSpec,
    estimate_rho1,
    estimate_rhoN,
    evolve_field,
    init_field,
    manifest,
    neg_corr_report,
    series_csv,
    thinning_report,
)
from crw2d.series import EstimateSeries


def _consistent(f):
    occ = np.flatnonzero(f.grid >= 0)
    assert len(occ) == f.count
    assert np.all(f.grid[f.cells[: f.count]] == np.arange(f.count))


def test_init_full_and_validation():
    f = init_field(4, "coalesce", "full", 0)
    assert f.count == 16 and len(f.occupied) == 16
    _consistent(f)
    for L in (2, 3, 6, 100):
        with pytest.raises(ValueError):
            init_field(L, "coalesce", "full", 0)
    with pytest.raises(ValueError):
        init_field(8, "coalesce", "half", 0)
    with pytest.raises(ValueError):
        init_field(8, "merge", "full", 0)


def test_bernoulli_half_density():
    L, seeds = 256, 40
    d = np.array([init_field(L, "annihilate", "bernoulli_half", s).count / L**2 for s in range(seeds)])
    assert abs(d.mean() - 0.5) <= 3 * math.sqrt(0.25 / L**2 / seeds)
    a = init_field(L, "annihilate", "bernoulli_half", 5)
    b = init_field(L, "annihilate", "bernoulli_half", 5)
    assert np.array_equal(a.grid, b.grid) and a.count == b.count


def test_empty_field_unchanged():
    f = init_field(8, "coalesce", "full", 0)
    f.grid[:] = -1
    f.count = 0
    g = evolve_field(f, 100.0, 1)
    assert g.count == 0 and g.clock == 100.0


def test_coalescence_never_empties():
    g = evolve_field(init_field(4, "coalesce", "full", 0), 1e4, 2)
    assert g.count >= 1
    _consistent(g)


def test_time_cannot_go_back():
    g = evolve_field(init_field(8, "coalesce", "full", 0), 5.0, 1)
    with pytest.raises(ValueError):
        evolve_field(g, 4.0, 1)


def test_pathwise_invariants():
    f = init_field(64, "coalesce", "full", 3)
    counts = [f.count]
    for k, t in enumerate(np.linspace(0.5, 40, 30)):
        f = evolve_field(f, t, 100 + k)
        _consistent(f)
        counts.append(f.count)
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    f = init_field(64, "annihilate", "bernoulli_half", 4)
    parity = f.count % 2
    for k, t in enumerate(np.linspace(0.5, 40, 30)):
        f = evolve_field(f, t, 200 + k)
        _consistent(f)
        assert f.count % 2 == parity


def test_evolution_deterministic():
    f = init_field(32, "annihilate", "bernoulli_half", 9)
    a, b = evolve_field(f, 20.0, 4), evolve_field(f, 20.0, 4)
    assert np.array_equal(a.grid, b.grid) and a.count == b.count


def test_rho1_basic_properties():
    s = estimate_rho1(128, [0.0, 1.0, 5.0, 25.0, 100.0], 4, "coalesce", "full", 1)
    assert s.mean[0] == 1.0 and s.stderr[0] == 0.0
    assert np.all(s.mean > 0) and np.all(np.diff(s.mean) <= 0)
    assert not s.warnings
    assert series_csv(s).splitlines()[0] == "t,mean,stderr,n,L,mode,init"


def test_horizon_warning():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        s = estimate_rho1(16, [0.0, 100.0], 2, seed=0)
    assert s.warnings and any("wraparound" in str(x.message) for x in w)


def test_finite_size_agreement():
    a = estimate_rho1(1024, [100.0], 4, seed=1)
    b = estimate_rho1(2048, [100.0], 2, seed=2)
    se = math.hypot(a.stderr[0], b.stderr[0])
    assert abs(a.mean[0] - b.mean[0]) <= 3 * se


def test_translation_invariance_single_probe():
    times = [20.0]
    a = estimate_rho1(64, times, 600, seed=3, probe=(0, 0))
    b = estimate_rho1(64, times, 600, seed=4, probe=(32, 32))
    full = estimate_rho1(64, times, 50, seed=5)
    se = math.hypot(a.stderr[0], b.stderr[0])
    assert abs(a.mean[0] - b.mean[0]) <= 3 * se
    assert abs(a.mean[0] - full.mean[0]) <= 3 * math.hypot(a.stderr[0], full.stderr[0])


def test_rhoN_basics():
    spec = CorrelationSpec(((0, 0), (1, 0)))
    s = estimate_rhoN(64, spec, [0.0, 10.0], 3, seed=1)
    assert s.mean[0] == 1.0
    with pytest.raises(ValueError):
        estimate_rhoN(16, CorrelationSpec(((0, 0), (5, 0))), [1.0], 1)
    with pytest.raises(ValueError):
        CorrelationSpec(((0, 0), (0, 0)))
    assert len(spec.images()) == 4


def test_rhoN_symmetrize_unbiased():
    spec = CorrelationSpec(((0, 0), (1, 1)))
    a = estimate_rhoN(128, spec, [10.0], 12, seed=7)
    b = estimate_rhoN(128, spec, [10.0], 12, seed=8, symmetrize=True)
    assert abs(a.mean[0] - b.mean[0]) <= 3 * math.hypot(a.stderr[0], b.stderr[0])
    assert b.stderr[0] < a.stderr[0] * 1.5


def test_neg_corr_report_cases():
    t = np.array([1.0, 2.0])
    r1 = EstimateSeries(t, [0.5, 0.3], [0.01, 0.01], [10, 10])
    assert neg_corr_report(r1, r1, 1).ok
    rN = EstimateSeries.exact(t, r1.mean**3)
    assert neg_corr_report(r1, rN, 3).ok
    too_big = EstimateSeries.exact(t, r1.mean**2 * 1.5)
    exact1 = EstimateSeries.exact(t, r1.mean)
    rep = neg_corr_report(exact1, too_big, 2)
    assert rep.n_fail == 2 and not rep.ok
    with pytest.raises(ValueError):
        neg_corr_report(r1, EstimateSeries.exact([1.0, 3.0], [0.1, 0.1]), 2)


def test_neg_corr_simulated():
    times = [10.0, 100.0]
    rho1 = estimate_rho1(256, times, 8, seed=2)
    rho2 = estimate_rhoN(256, CorrelationSpec(((0, 0), (1, 0))), times, 8, seed=2)
    assert neg_corr_report(rho1, rho2, 2).ok


def test_thinning_report_cases(tmp_path):
    c = estimate_rho1(64, [0.0, 5.0], 20, "coalesce", "full", 1)
    a = estimate_rho1(64, [0.0, 5.0], 20, "annihilate", "bernoulli_half", 2)
    rep = thinning_report(c, a, 1)
    assert rep.passed[0] and rep.lhs[0] == pytest.approx(2 * a.mean[0])
    assert rep.ok
    wrong = estimate_rho1(64, [0.0, 5.0], 4, "annihilate", "full", 3)
    assert thinning_report(c, wrong, 1).flags
    text = rep.to_json(tmp_path / "rep.json")
    assert '"ok": true' in text
    exact_c = EstimateSeries.exact([0.0], [1.0])
    exact_a = EstimateSeries.exact([0.0], [0.5])
    assert thinning_report(exact_c, exact_a, 1).ok


def test_thinning_pair_pattern():
    coal, ann = verify.thinning_runs("full")
    assert coal[0].meta["L"] == 1024 and int(coal[0].n[0]) == 32
    assert thinning_report(coal[1], ann[1], 2).ok


def test_adjacent_pair_law_stabilizes():
    rho1, rho2 = verify.density_run("full")
    f = lambda t: rho2.mean[rho2.at(t)] * t**2 / math.log(t)  # noqa: E731
    assert 0.5 <= f(1000.0) / f(250.0) <= 2


def test_crude_bracket():
    rho1, _ = verify.density_run("full")
    r = rho1.mean * rho1.times / np.log(rho1.times)
    assert r.max() / r.min() <= 10


def test_pair_correlation_bounded():
    rho1, rho2 = verify.pair_suppression_run("full")
    vals = []
    for t in verify.SUPPRESSION_TIMES:
        ts = verify.shifted_time(t)
        vals.append(rho2.mean[rho2.at(t)] * math.log(t) / rho1.mean[rho1.at(ts)] ** 2)
    assert max(vals) / min(vals) <= 3


def test_manifest_json(tmp_path):
    text = manifest({"L": 64}, 7, ["a.csv"], tmp_path / "m.json")
    assert '"master_seed": 7' in text and (tmp_path / "m.json").exists()
