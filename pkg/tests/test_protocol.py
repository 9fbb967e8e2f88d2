import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubeharq.catalog import build_catalog, generate_synthetic_clip
from tubeharq.channel import make_channel, match_ge_params
from tubeharq.distortion import make_distortion_model
from tubeharq.policies import PolicyKind
from tubeharq.protocol import (
    BLOCK,
    PACKAGE,
    ProtocolViolation,
    SessionConfig,
    SessionTrace,
    apply_round,
    check_trace,
    decide_trigger,
    init_session,
    initial_packages,
    missing_set,
)
from tubeharq.simulate import availability_after, run_session


@pytest.fixture(scope="module")
def cat():
    return build_catalog(generate_synthetic_clip(1, 8, 6, 6, 3, "low"))


@pytest.fixture(scope="module")
def model(cat):
    return make_distortion_model(cat, 1)


def lossless():
    return make_channel(match_ge_params(0.0), 0)


def test_full_initial_payload(cat, model):
    s = init_session(cat, SessionConfig(f_init=1.0), model)
    assert not s.missing_mask().any()
    assert s.trace.proxy_init == 0.0 and s.trace.d_init == 0.0


def test_initial_time():
    cat = build_catalog(generate_synthetic_clip(1, 4, 4, 4, 1, "low"))
    m = make_distortion_model(cat, 0)
    s = init_session(cat, SessionConfig(f_init=0.0, u_init=1, c_init=0.5, c_inp=3.0), m)
    assert s.trace.t_init == 3.5
    assert s.missing_mask().all()


def test_initial_payload_rule(cat):
    ids = initial_packages(cat, 0.5)
    assert ids == list(range(len(ids)))
    total = sum(cat.packages[i].size for i in ids)
    nxt = cat.packages[len(ids)].size
    assert total <= 0.5 * cat.universe.size < total + nxt


def test_initial_payload_deterministic(cat, model):
    a = init_session(cat, SessionConfig(), model)
    b = init_session(cat, SessionConfig(), model)
    assert np.array_equal(a.available, b.available)


def test_bad_f_init():
    with pytest.raises(ValueError):
        SessionConfig(f_init=1.5)


def test_empty_round_costs_rtt(cat, model):
    s = init_session(cat, SessionConfig(), model)
    before = s.available.copy()
    rec = apply_round(s, [], lossless(), 0)
    assert rec.delta == 0.01
    assert np.array_equal(s.available, before)


def test_round_time_increment(cat, model):
    cfg = SessionConfig(transport=BLOCK, request_budget=16)
    s = init_session(cat, cfg, model)
    _, mask = missing_set(s)
    blocks = [cat.universe.block(k) for k in np.flatnonzero(mask)[:16]]
    rec = apply_round(s, blocks, lossless(), 1)
    assert rec.delta == 0.01 + 16 * 1.024e-4 + 3.0
    assert rec.delta == pytest.approx(3.0116384, abs=1e-15)


class ScriptedChannel:
    """Replays a fixed erasure vector."""

    def __init__(self, erasures):
        self.e = list(erasures)

    def transmit(self, n, round_index=0):
        out, self.e = self.e[:n], self.e[n:]
        return np.array(out, dtype=np.int8)


def test_atomic_loss_commits_nothing(cat, model):
    cfg = SessionConfig(channel_draw="unit", f_init=0.0, u_init=0)
    s = init_session(cat, cfg, model)
    p = max(cat.packages, key=lambda p: (p.size <= 16, p.size))
    e = [0] * p.size
    e[p.size // 2] = 1
    rec = apply_round(s, [p.package_id], ScriptedChannel(e), 0)
    assert rec.delivered == [0] and rec.committed == []
    assert rec.units_sent == p.size


def test_package_draw_one_unit_per_package(cat, model):
    s = init_session(cat, SessionConfig(f_init=0.0, u_init=0, request_budget=64), model)
    small = sorted(cat.packages, key=lambda p: p.size)[:3]
    ids = [p.package_id for p in small]
    rec = apply_round(s, ids, ScriptedChannel([0, 1, 0]), 0)
    assert rec.erasures == [0, 1, 0] and rec.delivered == [1, 0, 1]
    assert rec.units_sent == sum(p.size for p in small)
    want = sorted(cat.universe.flat(*m) for p in (small[0], small[2]) for m in p.members)
    assert rec.committed == want


def test_trigger_rule():
    assert decide_trigger(0.34, 2, 0.35) == 0
    assert decide_trigger(0.9, 0, 0.35) == 0
    assert decide_trigger(0.35, 1, 0.35) == 1


def test_missing_set_algebra(cat, model):
    s = init_session(cat, SessionConfig(f_init=0.0, u_init=0, request_budget=24), model)
    m, _ = missing_set(s)
    assert m == set(cat.universe.blocks())
    p = cat.packages[0]
    apply_round(s, [p.package_id], lossless(), 0)
    m, mask = missing_set(s)
    assert m == set(cat.universe.blocks()) - set(p.members)
    assert mask.sum() == len(m)
    full = init_session(cat, SessionConfig(f_init=1.0), model)
    assert missing_set(full)[0] == set()


def test_over_budget_and_unknown(cat, model):
    s = init_session(cat, SessionConfig(request_budget=4, f_init=0.0, u_init=0), model)
    big = next(p for p in cat.packages if p.size > 4)
    with pytest.raises(ProtocolViolation):
        apply_round(s, [big.package_id], lossless(), 0)
    with pytest.raises(ValueError):
        apply_round(s, [10**6], lossless(), 0)
    b = init_session(cat, SessionConfig(transport=BLOCK, f_init=0.0, u_init=0), model)
    with pytest.raises(ValueError):
        apply_round(b, [(99, 1)], lossless(), 0)
    with pytest.raises(ValueError):
        apply_round(b, [(1, 1), (1, 1)], lossless(), 0)


def test_compute_budget_enforced(cat, model):
    s = init_session(cat, SessionConfig(compute_budget=1, u_init=1), model)
    with pytest.raises(ProtocolViolation):
        apply_round(s, [], lossless(), 1)


def test_horizon_enforced(cat, model):
    s = init_session(cat, SessionConfig(horizon=1), model)
    apply_round(s, [], lossless(), 0)
    with pytest.raises(ProtocolViolation):
        apply_round(s, [], lossless(), 0)


def test_carry_forward_and_calibration(cat, model):
    s = init_session(cat, SessionConfig(transport=BLOCK, f_init=0.2, u_init=1, compute_budget=3), model)
    _, mask = missing_set(s)
    blocks = [cat.universe.block(k) for k in np.flatnonzero(mask)[:16]]
    r0 = apply_round(s, blocks, lossless(), 0)
    assert r0.distortion == s.trace.d_init and r0.proxy == s.trace.proxy_init
    assert r0.distortion_now < s.trace.d_init
    _, mask = missing_set(s)
    blocks = [cat.universe.block(k) for k in np.flatnonzero(mask)[:16]]
    r1 = apply_round(s, blocks, lossless(), 1)
    assert r1.distortion == r1.distortion_now
    # calibration makes the proxy exact where it was fitted last
    assert r1.proxy == pytest.approx(r1.distortion, abs=1e-12)


def test_lossless_mode_equivalence(cat, model):
    """At PER 0 every requested unit arrives, in either transport."""
    for kind in (PolicyKind.TUBE_PACKAGE, PolicyKind.GREEDY_BLOCK, PolicyKind.TUBE_WEIGHTED_BLOCK):
        tr = run_session(cat, SessionConfig(), model, kind, 0.0, 3)
        for r in tr.rounds:
            assert all(r.delivered) and not any(r.erasures)
        if kind is PolicyKind.TUBE_PACKAGE:
            avail = availability_after(tr, cat, 0)
            for r in tr.rounds:
                for pid in r.request:
                    avail[cat.member_index[cat.package_index[pid]]] = True
                assert np.array_equal(avail, availability_after(tr, cat, r.round))


def test_trace_roundtrip_and_check(cat, model):
    tr = run_session(cat, SessionConfig(), model, PolicyKind.TUBE_PACKAGE, 0.3, 5)
    back = SessionTrace.from_jsonl(tr.to_jsonl())
    assert back.to_jsonl() == tr.to_jsonl()
    assert back.rounds == tr.rounds
    assert check_trace(back, cat) == []
    assert tr.to_csv().splitlines()[0].startswith("round,units_sent")


def test_check_trace_flags_tampering(cat, model):
    tr = run_session(cat, SessionConfig(), model, PolicyKind.TUBE_PACKAGE, 0.3, 5)
    tr.rounds[2].t += 1e-12
    assert any("cumulative time" in p for p in check_trace(tr))
    tr = run_session(cat, SessionConfig(), model, PolicyKind.TUBE_PACKAGE, 0.0, 5)
    r = next(r for r in tr.rounds if r.committed)
    r.committed = r.committed[:-1]
    assert any("partially" in p for p in check_trace(tr, cat))


@settings(max_examples=80, deadline=None)
@given(
    st.integers(0, 10**6),
    st.sampled_from(list(PolicyKind)),
    st.floats(0, 0.6),
    st.integers(1, 24),
    st.integers(0, 4),
    st.integers(0, 1),
    st.sampled_from(["unit", "package"]),
)
def test_fuzzed_sessions_are_safe(seed, kind, per, K, b_c, u_init, draw):
    u_init = min(u_init, b_c)
    clip = generate_synthetic_clip(seed, 5, 4, 5, 2, "high", object_size=(1, 3))
    cat = build_catalog(clip)
    cfg = SessionConfig(request_budget=K, compute_budget=b_c, u_init=u_init, channel_draw=draw, horizon=4)
    tr = run_session(cat, cfg, make_distortion_model(cat, seed), kind, per, seed)
    assert check_trace(tr, cat) == []
    t = tr.t_init
    for r in tr.rounds:
        t = t + r.delta
        assert r.t == t
    prev = availability_after(tr, cat, 0)
    for k in range(1, len(tr.rounds) + 1):
        cur = availability_after(tr, cat, k)
        assert (prev <= cur).all()
        prev = cur
