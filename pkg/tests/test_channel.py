import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubeharq.channel import (
    ChannelError,
    GEParams,
    burst_lengths,
    erasure_checksum,
    make_channel,
    markov_states,
    match_ge_params,
    stationary_per,
    transmit_units,
    write_erasure_csv,
)


def loop_states(first, u, p01, p10):
    """Reference Markov chain, one step at a time."""
    s, out = first, [first]
    for x in u:
        if s == 0:
            s = 1 if x < p01 else 0
        else:
            s = 0 if x < p10 else 1
        out.append(s)
    return np.array(out)


def test_match_basic():
    g = match_ge_params(0.2, 4)
    assert g.p10 == 0.25 and g.p01 == pytest.approx(0.0625, abs=1e-15)
    assert not g.clamped


def test_match_zero_per():
    g = match_ge_params(0.0, 4)
    assert g.p01 == 0.0
    ch = make_channel(g, 1)
    assert not transmit_units(ch, 5000).any()


def test_match_clamped_branch():
    g = match_ge_params(0.9, 2)
    assert g.clamped and g.p01 == 1.0
    assert g.p10 == pytest.approx(0.1 / 0.9, rel=1e-14)
    assert stationary_per(g) == pytest.approx(0.9, abs=1e-12)


@pytest.mark.parametrize("per", [1.0, 1.5, -0.1])
def test_match_rejects(per):
    with pytest.raises(ChannelError):
        match_ge_params(per, 4)


def test_match_rejects_short_burst():
    with pytest.raises(ChannelError):
        match_ge_params(0.2, 0.5)


def test_stationary_examples():
    assert stationary_per(GEParams(0.0625, 0.25)) == pytest.approx(0.2, abs=1e-15)
    assert stationary_per(GEParams(0.0, 0.3)) == 0.0
    assert stationary_per(GEParams(0.4, 0.4)) == 0.5


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(1.0, 50.0))
def test_match_property(per, L):
    g = match_ge_params(per, L)
    assert 0 <= g.p01 <= 1 and 0 < g.p10 <= 1
    assert abs(stationary_per(g) - per) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1), st.lists(st.floats(0, 1, exclude_max=True), max_size=200),
       st.floats(0, 1), st.floats(0.01, 1))
def test_vectorised_chain_matches_loop(first, u, p01, p10):
    u = np.array(u, dtype=float)
    assert np.array_equal(markov_states(first, u, p01, p10), loop_states(first, u, p01, p10))


def test_determinism():
    g = match_ge_params(0.2)
    a = transmit_units(make_channel(g, 42, 3), 1000)
    b = transmit_units(make_channel(g, 42, 3), 1000)
    assert np.array_equal(a, b)
    c = transmit_units(make_channel(g, 43, 3), 1000)
    assert not np.array_equal(a, c)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 300), st.integers(0, 300), st.integers(0, 1000))
def test_chronological_coupling(n1, n2, seed):
    g = match_ge_params(0.3, 3)
    one = transmit_units(make_channel(g, seed), n1 + n2)
    ch = make_channel(g, seed)
    two = np.concatenate([transmit_units(ch, n1), transmit_units(ch, n2)])
    assert np.array_equal(one, two)


def test_empirical_per_and_bursts():
    g = match_ge_params(0.2, 4)
    e = transmit_units(make_channel(g, 7), 10**6)
    assert abs(e.mean() - 0.2) < 0.005
    assert abs(burst_lengths(e).mean() - 4) / 4 < 0.05


def test_burst_lengths():
    assert burst_lengths(np.array([1, 1, 0, 1, 0, 0, 1, 1, 1])).tolist() == [2, 1, 3]
    assert burst_lengths(np.array([0, 0])).size == 0


def test_checksum_tracks_realization():
    g = match_ge_params(0.2)
    assert erasure_checksum(g, 1, 0, n=64) == erasure_checksum(g, 1, 0, n=64)
    assert erasure_checksum(g, 1, 0, n=256) != erasure_checksum(g, 1, 1, n=256)


def test_erasure_csv(tmp_path):
    ch = make_channel(match_ge_params(0.3), 5, record=True)
    e1 = ch.transmit(3, 1)
    e2 = ch.transmit(2, 2)
    path = tmp_path / "e.csv"
    write_erasure_csv(ch, path)
    rows = list(csv.DictReader(path.open()))
    assert [r["round"] for r in rows] == ["1"] * 3 + ["2"] * 2
    assert [int(r["erased"]) for r in rows] == np.concatenate([e1, e2]).tolist()
    assert [int(r["unit_index"]) for r in rows] == list(range(5))
    # the bad state always erases
    assert all(r["state"] == r["erased"] for r in rows)
