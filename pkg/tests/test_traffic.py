import numpy as np
import pytest

from qcsma.traffic import (
    BernoulliTraffic,
    PoissonTraffic,
    RingAdversarialTraffic,
    TrafficError,
    bernoulli_arrivals,
    grid_rates,
    grid_traffic,
    ring_arrivals,
    ring_pair,
)


def test_grid_rates_at_full_load():
    lam = grid_rates(1.0)
    assert lam[0] == pytest.approx(0.4)  # link 1 is in L1 and L3
    assert lam[3] == pytest.approx(0.6)  # link 4 is in L2 and L4
    assert lam[7] == pytest.approx(0.2)  # link 8 only in L1
    assert lam.sum() == pytest.approx(8.0)


def test_grid_rates_scale():
    assert grid_rates(0.5) == pytest.approx(0.5 * grid_rates(1.0))
    with pytest.raises(TrafficError):
        grid_rates(1.2)


def test_bernoulli_mean():
    rng = np.random.default_rng(0)
    lam = grid_rates(0.9)
    a = grid_traffic(0.9).block(1, 200_000, rng)
    assert a.shape == (200_000, 24)
    assert set(np.unique(a)) <= {0, 1}
    se = np.sqrt(lam * (1 - lam) / 200_000)
    assert np.all(np.abs(a.mean(axis=0) - lam) < 5 * se + 1e-12)


def test_bernoulli_single_slot():
    a = bernoulli_arrivals([0.0, 1.0], np.random.default_rng(1))
    assert a.tolist() == [0, 1]


def test_zero_rates_never_arrive():
    a = BernoulliTraffic(np.zeros(3)).block(1, 1000, np.random.default_rng(2))
    assert a.sum() == 0


def test_rate_validation():
    with pytest.raises(TrafficError):
        BernoulliTraffic([1.5])
    with pytest.raises(TrafficError):
        PoissonTraffic([-0.1])
    with pytest.raises(TrafficError):
        RingAdversarialTraffic(1.5)


def test_poisson_mean():
    a = PoissonTraffic([0.3, 2.0]).block(1, 100_000, np.random.default_rng(3))
    assert a.mean(axis=0) == pytest.approx([0.3, 2.0], rel=0.02)


def test_ring_pairs():
    assert ring_pair(1) == (1, 5)
    assert ring_pair(5) == (5, 9)
    assert ring_pair(6) == (6, 1)
    assert ring_pair(9) == (9, 4)


def test_ring_zero_eps_pattern():
    a = RingAdversarialTraffic(0.0).block(1, 18, np.random.default_rng(0))
    assert np.nonzero(a[0])[0].tolist() == [0, 4]  # slot 1 -> L1 = {1, 5}
    assert np.nonzero(a[5])[0].tolist() == [0, 5]  # slot 6 -> L6 = {6, 1}
    assert np.array_equal(a[:9], a[9:])
    assert np.all(a[:9].sum(axis=0) == 2)


def test_ring_extra_packet_is_shared():
    a = RingAdversarialTraffic(0.5).block(1, 50_000, np.random.default_rng(9))
    base = RingAdversarialTraffic(0.0).block(1, 50_000, np.random.default_rng(9))
    extra = a - base
    assert np.all((extra == 0).all(axis=1) | (extra == 1).all(axis=1))
    assert a.mean(axis=0) == pytest.approx(np.full(9, 2 / 9 + 0.5), abs=0.01)


def test_ring_block_matches_single_slot_generator():
    rng_a = np.random.default_rng(4)
    rng_b = np.random.default_rng(4)
    blk = RingAdversarialTraffic(0.3).block(7, 20, rng_a)
    rows = np.array([ring_arrivals(t, 0.3, rng_b) for t in range(7, 27)])
    assert np.array_equal(blk, rows)


def test_ring_mean_rates():
    assert RingAdversarialTraffic(0.09).mean_rates == pytest.approx(np.full(9, 2 / 9 + 0.09))
