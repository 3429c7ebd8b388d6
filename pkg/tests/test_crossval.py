import numpy as np
import pytest

from jntsel.crossval import (
    CvConfig,
    SelectionFractions,
    _Engine,
    cv_statistic,
    cv_statistics,
    five_way_split,
    selection_fractions,
    split_labels,
)
from jntsel.errors import ConfigError, InputError
from jntsel.polyfit import CANDIDATE_ORDERS, PolyModel
from jntsel.simulate import SimConfig, standard_grid, simulate_dataset

from helpers import make_dataset, poly_values


def test_split_sizes():
    rng = np.random.default_rng(0)
    assert [len(p) for p in five_way_split(45, rng)] == [9] * 5
    assert [len(p) for p in five_way_split(5, rng)] == [1] * 5
    parts = five_way_split(7, rng)
    assert [len(p) for p in parts] == [2, 2, 1, 1, 1]
    assert sorted(np.concatenate(parts).tolist()) == list(range(7))
    with pytest.raises(InputError):
        five_way_split(4, rng)


def test_split_follows_permutation_order():
    perm = np.random.default_rng(9).permutation(7)
    parts = five_way_split(7, np.random.default_rng(9))
    np.testing.assert_array_equal(np.concatenate(parts), perm)


def test_split_labels_deterministic_and_keyed():
    a = split_labels(45, 3, 600e3, 0, 10)
    np.testing.assert_array_equal(a, split_labels(45, 3, 600e3, 0, 10))
    np.testing.assert_array_equal(a[4:], split_labels(45, 3, 600e3, 4, 10))
    assert not np.array_equal(a, split_labels(45, 3, 625e3, 0, 10))
    assert not np.array_equal(a, split_labels(45, 4, 600e3, 0, 10))


def test_noiseless_cv_is_zero():
    f = np.linspace(1e5, 1e6, 30)
    row = poly_values([1.0, 2e-3, -1e-3], f)
    ds = make_dataset(np.tile(row, (10, 1)), freqs=f)
    split = five_way_split(10, np.random.default_rng(1))
    for d in (4, 6, 8):
        assert cv_statistic(ds, split, PolyModel(d), 1e6) < 1e-18


def test_two_block_hand_evaluation():
    # two blocks, d=2 interpolates: prediction is the pooled training ratio
    f = np.array([3e5, 7e5])
    sr = np.array([[1.0, 2.0], [1.5, 2.5], [0.5, 1.0], [2.0, 3.0], [1.2, 1.8]])
    sq = np.array([[1.0, 1.0], [2.0, 1.0], [1.0, 2.0], [1.0, 1.0], [3.0, 2.0]])
    ds = make_dataset(sr, s_q=sq, freqs=f)
    split = [np.array([k]) for k in (3, 0, 4, 1, 2)]
    total = 0.0
    for k in range(5):
        msd = 0.0
        for b in range(2):
            tr = [i for i in range(5) if i != k]
            pred = sum(sr[i][b] for i in tr) / sum(sq[i][b] for i in tr)
            msd += (sr[k][b] / sq[k][b] - pred) ** 2
        total += msd / 2
    assert cv_statistic(ds, split, PolyModel(2), 1e6) == pytest.approx(total / 5, rel=1e-12)


@pytest.mark.parametrize("validation", ["corrected", "raw"])
def test_engine_matches_fit_by_fit(validation):
    sim = simulate_dataset(SimConfig(n_runs=12, per_run_noise_sd=2e-4, seed=4))
    cals = [c.__class__(c.run_id, 1.0 + 3e-6 * np.sin(c.run_id)) for c in sim.calibrations]
    ds = sim.with_calibrations(cals)
    cfg = CvConfig(n_splits=3, seed=2, validation=validation)
    splits = [five_way_split(12, np.random.default_rng(s)) for s in range(3)]
    fast = cv_statistics(ds, cfg, 800e3, splits)
    for d in CANDIDATE_ORDERS:
        slow = [cv_statistic(ds, s, PolyModel(d), 800e3, validation) for s in splits]
        np.testing.assert_allclose(fast[d], slow, rtol=1e-7)


def test_validation_noise_raises_cv_by_its_variance():
    f = np.linspace(1e4, 1e6, 400)
    rng = np.random.default_rng(8)
    base = 1e-4 * rng.standard_normal((20, f.size)) + 1.0
    v = (3e-4) ** 2
    clean = make_dataset(base, freqs=f)
    split = five_way_split(20, np.random.default_rng(0))
    c0 = cv_statistic(clean, split, PolyModel(4), 1e6)
    # per-run variance 4v pooled over four validation runs adds v per block
    extra = []
    for rep in range(20):
        noisy = base + np.sqrt(4 * v) * np.random.default_rng(100 + rep).standard_normal(base.shape)
        labels = np.empty(20, int)
        for k, p in enumerate(split):
            labels[p] = k
        stats = []
        for k in range(5):
            sr = np.where((labels == k)[:, None], noisy, base)
            stats.append(_fold_msd(make_dataset(sr, freqs=f), labels, k))
        extra.append(np.mean(stats))
    assert np.mean(extra) - c0 == pytest.approx(v, rel=0.1)


def _fold_msd(ds, labels, k):
    from jntsel import polyfit
    from jntsel.data_model import pool_ratio

    train = ds.run_ids[labels != k]
    fitted = polyfit.fit(PolyModel(4), pool_ratio(ds, train))
    val = pool_ratio(ds, ds.run_ids[labels == k]).ratios
    return np.mean((val - polyfit.predict(fitted, ds.frequencies)) ** 2)


def test_noiseless_order_two_selects_two():
    f = standard_grid()
    ds = make_dataset(np.tile(poly_values([1.0, 5e-3], f), (10, 1)), freqs=f)
    sf = selection_fractions(ds, CvConfig(n_splits=50), 1.0e6)
    assert sf.p[2] == 1.0 and sf.mode() == 2


def test_fractions_independent_of_workers():
    ds = simulate_dataset(SimConfig(n_runs=15, per_run_noise_sd=2e-4, seed=1))
    cfg = CvConfig(n_splits=600, seed=5)
    a = selection_fractions(ds, cfg, 900e3, workers=1)
    b = selection_fractions(ds, cfg, 900e3, workers=3)
    assert a.counts == b.counts
    assert sum(a.counts.values()) == 600


def test_unfittable_orders_dropped():
    f = np.arange(1, 7) * 1e5
    ds = make_dataset(1 + 1e-4 * np.random.default_rng(0).standard_normal((6, 6)), freqs=f)
    sf = selection_fractions(ds, CvConfig(n_splits=20), 1e6)
    assert set(sf.dropped_orders) == {12, 14}
    assert abs(sum(sf.p.values()) - 1) < 1e-12


def test_config_validation():
    with pytest.raises(ConfigError):
        CvConfig(n_splits=0)
    with pytest.raises(ConfigError):
        CvConfig(candidate_orders=(4, 2))
    with pytest.raises(ConfigError):
        CvConfig(candidate_orders=(3,))
    with pytest.raises(ConfigError):
        CvConfig(folds=10)
    with pytest.raises(InputError):
        SelectionFractions(1e6, {2: 0.5, 4: 0.4}, 10)


def test_tie_rule_prefers_smaller_order():
    f = np.linspace(1e5, 1e6, 40)
    ds = make_dataset(np.ones((5, 40)), freqs=f)
    eng = _Engine(ds, CvConfig(n_splits=1), 1e6)
    cv = np.array([[1e-30, 0.0, 1e-31, 0.0, 0.0, 0.0, 0.0]])
    assert eng.select(cv)[0] == 0
    cv = np.array([[1e-6, 1e-8, 1e-8, 1e-9, 1e-9, 1e-9, 1e-9]])
    assert eng.select(cv)[0] == 3
