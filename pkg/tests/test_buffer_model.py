import collections
import math

import numpy as np
import pytest

from ncplace import buffer_model as B
from ncplace import topology as T


def _event_copies(h, R, N, gens, seed):
    """Opportunity-by-opportunity replay of one SF node; independent of simulate_copies."""
    rng = np.random.default_rng(seed)
    tot = np.zeros(N)
    for _ in range(gens):
        phase = rng.random()
        mb, cb = collections.deque(), collections.deque(maxlen=h)
        m = nxt = 0
        while (t := (phase + m) / R) < N:
            while nxt < N and nxt <= t:
                mb.append(nxt)
                nxt += 1
            if mb:
                p = mb.popleft()
                cb.append(p)
                tot[p] += 1
            elif cb:
                tot[cb[rng.integers(len(cb))]] += 1
            m += 1
    return tot / gens


@pytest.mark.parametrize("h,R,N", [(4, 2.0, 8), (4, 1.5, 16), (3, 3.0, 5), (4, 2.5, 6)])
def test_closed_form_matches_event_replay(h, R, N):
    oracle = _event_copies(h, R, N, 20_000, seed=1)
    model = B.replication_sequence(h, R, N)
    assert np.max(np.abs(model / oracle - 1)) < 0.03


@pytest.mark.parametrize("h,R,N", [(4, 2.0, 8), (3, 3.0, 5)])
def test_vectorized_simulation_matches_event_replay(h, R, N):
    a = _event_copies(h, R, N, 20_000, seed=3)
    b = B.simulate_copies(h, R, N, 20_000, seed=4)
    assert np.max(np.abs(a / b - 1)) < 0.03


def test_copies_sum_to_opportunities():
    # all N*R opportunities are used once the CB is non-empty
    h, R, N = 8, 2.0, 32
    assert B.replication_sequence(h, R, N).sum() == pytest.approx(N * R, rel=0.02)


def test_regimes():
    h, R, N = 4, 3.0, 20
    K = B.last_stationary_index(h, N)
    assert K == 16
    seq = B.replication_sequence(h, R, N)
    assert np.all(seq[h:K] == R)
    assert np.all(np.diff(seq[K:]) < 0)
    assert seq[-1] == pytest.approx(1 + (R - 1) / h)
    # first packet: 1 + (R-1) * (H_h - H_0)
    assert seq[0] == pytest.approx(1 + (R - 1) * sum(1 / x for x in range(1, h + 1)))


def test_no_replication_when_output_is_slower():
    assert B.per_packet_replication(3, 4, 0.5, N_total=10) == 1.0
    assert B.drop_probability(4.0, 8.0) == 0.5
    assert B.drop_probability(8.0, 4.0) == 0.0
    with pytest.raises(ValueError):
        B.drop_probability(1.0, 0.0)


def test_unbounded_generation_is_stationary():
    assert B.per_packet_replication(100, 4, 2.0) == 2.0


def test_out_of_range_position():
    with pytest.raises(ValueError):
        B.per_packet_replication(11, 4, 2.0, N_total=10)


@pytest.mark.parametrize("h,R,N", [(4, 2.0, 8), (4, 2.0, 9), (16, 1.5, 200), (8, 3.0, 5)])
def test_levels_reproduce_sequence(h, R, N):
    seq = B.replication_sequence(h, R, N)
    values, counts = B.replication_levels(h, R, N)
    assert counts.sum() == N
    assert np.sort(np.repeat(values, counts.astype(int))) == pytest.approx(np.sort(seq))
    for eps in (0.05, 0.3):
        assert B.equivalent_replication(values, eps, counts) == pytest.approx(
            B.equivalent_replication(seq, eps), rel=1e-12)


@pytest.mark.parametrize("eps", [0.01, 0.1, 0.5, 0.9])
def test_equivalent_replication_identity(eps):
    seq = B.replication_sequence(8, 2.5, 40)
    r_hat = B.equivalent_replication(seq, eps)
    assert eps**r_hat == pytest.approx(np.mean(eps**seq), rel=1e-12)
    # Jensen: the surrogate never exceeds the mean copy count
    assert r_hat <= seq.mean() + 1e-12


def test_equivalent_replication_edge_cases():
    assert B.equivalent_replication([2.0, 2.0], 0.3) == 2.0
    assert B.equivalent_replication([1.0, 3.0], 0.0) == 1.0
    assert B.equivalent_replication([1.0, 3.0], 1.0) == 2.0
    assert B.equivalent_replication([1.0, 3.0, 9.0], 0.2, [1, 1, 0]) == B.equivalent_replication([1.0, 3.0], 0.2)
    with pytest.raises(ValueError):
        B.equivalent_replication([], 0.1)


def test_build_profile():
    g = T.chain([10.0, 25.0], 0.1)
    prof = B.build_profile(1, g, N_total=40, eps=0.1)
    assert prof.R == 2.5
    assert prof.K == 40 - g.nodes[1].h
    assert prof.stationary
    assert 0.1**prof.R_hat == pytest.approx(np.mean(0.1**prof.per_packet))
    flat = B.build_profile(1, T.chain([10.0, 5.0]), N_total=20, eps=0.1)
    assert flat.R_hat == 1.0 and math.isclose(flat.per_packet.sum(), 20)
