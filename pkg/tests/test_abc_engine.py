import numpy as np
import pytest

from hgpabc.abc_engine import (AbcConfig, AbcError, SimulationRecord, accept_and_weight, accepted_order,
                               observed_summary, run_abc, run_simulations, select_threshold, simulate_record)
from hgpabc.base_grid import BaseDensity, build_grid
from hgpabc.gp_prior import HierarchySpec, HyperPrior


def small_config(n_sims=40, m_accept=10, seed=5, threads=1, g=3):
    base = BaseDensity.uniform()
    return AbcConfig(base=base, grid=build_grid(base, 0.0, 30), hierarchy=HierarchySpec.two_level(g),
                     hyperprior=HyperPrior.gamma(2), n_sims=n_sims, m_accept=m_accept, seed=seed,
                     n_basis=12, threads=threads)


@pytest.fixture(scope="module")
def observed():
    rng = np.random.default_rng(0)
    return [rng.beta(2, 5, size=n) for n in (5, 15, 25)]


def _divs(cfg, observed):
    return np.array([r.divergence for r in run_simulations(cfg, observed)])


def test_single_simulation(observed):
    recs = list(run_simulations(small_config(n_sims=1, m_accept=1), observed))
    assert len(recs) == 1 and np.isfinite(recs[0].divergence) and recs[0].divergence >= 0


def test_same_seed_same_divergences(observed):
    a = _divs(small_config(), observed)
    np.testing.assert_array_equal(a, _divs(small_config(), observed))
    assert not np.array_equal(a, _divs(small_config(seed=6), observed))


def test_threads_do_not_change_results(observed):
    np.testing.assert_array_equal(_divs(small_config(), observed), _divs(small_config(threads=3), observed))


def test_record_regenerates(observed):
    cfg = small_config()
    obs = observed_summary(cfg, observed)
    sizes = [x.size for x in observed]
    a = simulate_record(cfg, sizes, obs, 17)
    b = simulate_record(cfg, sizes, obs, 17)
    assert a.divergence == b.divergence
    np.testing.assert_array_equal(a.draw.leaf_latent, b.draw.leaf_latent)


def test_divergence_spread(observed):
    d = _divs(small_config(n_sims=60), observed)
    assert d.max() > d.min()


def test_threshold_order_statistic():
    assert select_threshold([3.0, 1.0, 2.0], 2) == 2.0
    assert sorted(accepted_order([3.0, 1.0, 2.0], 2) + 1) == [2, 3]
    assert select_threshold([3.0, 1.0, 2.0], 3) == 3.0


def test_threshold_ties_keep_lowest_index():
    np.testing.assert_array_equal(accepted_order([4.0] * 6, 3), [0, 1, 2])
    assert select_threshold([4.0] * 6, 3) == 4.0


def _rec(i, d):
    return SimulationRecord(index=i, draw=None, data=(), summary=None, divergence=d)


def test_weights():
    acc = accept_and_weight([_rec(0, 0.0)], 0.0)
    np.testing.assert_array_equal(acc.weights, [1.0])
    acc = accept_and_weight([_rec(0, 0.0), _rec(1, 1.0), _rec(2, 2.0)], 2.0)
    np.testing.assert_allclose(acc.weights, [1.0, 0.75, 0.0])


def test_weights_permutation_invariant():
    recs = [_rec(i, d) for i, d in enumerate([0.5, 2.0, 0.1, 1.5, 2.0, 0.9])]
    a = accept_and_weight(recs, 1.5, m_accept=4)
    b = accept_and_weight(recs[::-1], 1.5, m_accept=4)
    assert sorted(zip(a.divergences, a.weights)) == sorted(zip(b.divergences, b.weights))
    np.testing.assert_array_equal(a.indices, [0, 2, 3, 5])


def test_all_zero_weights_rejected():
    with pytest.raises(AbcError):
        accept_and_weight([_rec(0, 1.0), _rec(1, 1.0)], 1.0)


def test_run_abc(observed):
    cfg = small_config(n_sims=50, m_accept=12)
    acc = run_abc(cfg, observed)
    assert len(acc.records) == 12
    assert np.all(np.diff(acc.indices) > 0)
    assert np.all(acc.divergences <= acc.delta)
    assert acc.diagnostics["delta"] == acc.delta
    assert acc.leaf_latents().shape == (12, 3, 30)


def test_bad_inputs(observed):
    with pytest.raises(ValueError):
        small_config(n_sims=5, m_accept=6)
    with pytest.raises(ValueError):
        run_abc(small_config(g=1), observed[:1])
    with pytest.raises(ValueError):
        run_abc(small_config(), [observed[0], np.array([np.nan]), observed[2]])
