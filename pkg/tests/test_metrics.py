import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vlcnoma import config, metrics as M
from vlcnoma.env import VlcNomaEnv
from vlcnoma.handover import HandoverEvent, pingpong_flags

HP = np.array([True, True, False, False])


def test_jfi_closed_forms():
    assert abs(M.jfi([3.0] * 7) - 1.0) <= 1e-12
    assert abs(M.jfi([5.0] + [0.0] * 19) - 0.05) <= 1e-12
    assert abs(M.jfi([1, 1, 2, 0]) - 16 / 24) <= 1e-12


@pytest.mark.parametrize("bad", [[], [0, 0, 0], [1, -1]])
def test_jfi_rejects_undefined_inputs(bad):
    with pytest.raises(ValueError):
        M.jfi(bad)


@given(hnp.arrays(float, st.integers(1, 30), elements=st.floats(0, 1e3)))
def test_jfi_bounds(x):
    if not np.any(x > 0):
        return
    v = M.jfi(x)
    n = len(x)
    assert 1 / n - 1e-12 <= v <= 1 + 1e-12
    if np.count_nonzero(x) == 1:
        assert v == pytest.approx(1 / n, rel=1e-12)


def test_qossr_examples():
    r = np.full((10, 4), 12e6)
    assert M.qossr_hp(r, HP, 12e6) == (1.0, False)  # >= counts as met
    assert M.qossr_hp(np.zeros((10, 4)), HP, 12e6)[0] == 0.0
    half = np.where(np.arange(10)[:, None] % 2 == 0, 13e6, 1e6) * np.ones((1, 4))
    assert M.qossr_hp(half, HP, 12e6)[0] == 0.5
    assert M.qossr_hp(r, np.zeros(4, bool), 12e6) == (1.0, True)


def test_outage_examples():
    r = np.full((5, 4), 1e6)
    assert M.outage_probability_sp(r, HP, 0.5e6)[0] == 0.0
    r[:, 3] = 0.1e6
    assert M.outage_probability_sp(r, HP, 0.5e6)[0] == 0.5
    at = np.full((5, 4), 0.5e6)
    assert M.outage_probability_sp(at, HP, 0.5e6)[0] == 0.0  # strict <
    assert M.outage_probability_sp(r, np.ones(4, bool), 0.5e6) == (0.0, True)


def test_hor_ppr_examples():
    assert M.hor_and_ppr([], 100.0, 4, 2.0) == (0.0, 0.0)
    log = [HandoverEvent(5.0, 0, 0, 1), HandoverEvent(6.0, 0, 1, 0)]
    hor, ppr = M.hor_and_ppr(log, 10.0, 4, 2.0)
    assert hor == pytest.approx(2 / 40) and ppr == 0.5
    late = [HandoverEvent(5.0, 0, 0, 1), HandoverEvent(8.0, 0, 1, 0)]
    assert M.hor_and_ppr(late, 10.0, 4, 2.0)[1] == 0.0


def random_log(rng, n_users=4, n_aps=3, n=30):
    t = np.sort(rng.uniform(0, 30, n))
    serving = rng.integers(0, n_aps, n_users)
    out = []
    for ti in t:
        u = int(rng.integers(n_users))
        dst = int((serving[u] + rng.integers(1, n_aps)) % n_aps)
        out.append(HandoverEvent(float(np.round(ti, 1)), u, int(serving[u]), dst))
        serving[u] = dst
    return out


def test_streaming_pingpong_matches_bruteforce():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(1000):
        log = random_log(rng, n=int(rng.integers(0, 40)))
        fast = pingpong_flags(log, 2.0)
        assert fast == M.pingpong_bruteforce(log, 2.0)
        hits += sum(fast)
    assert hits > 0


def test_rate_sinr_power_scalars():
    assert M.sum_rate(np.full((7, 1), 5e6)) == 5e6
    assert M.inr_samples_db(np.array([[2e-15, 0.0]]), 2e-15).tolist() == [0.0]
    assert M.avg_ap_power(np.full((10, 3), 15.0)) == 15.0
    mean, excluded = M.avg_sinr_db(np.array([[10.0, 0.0], [1000.0, 100.0]]))
    assert mean == pytest.approx(20.0) and excluded == 1


def test_empirical_cdf():
    xs, ps = M.empirical_cdf([3.0, 1.0, 2.0])
    assert xs.tolist() == [1.0, 2.0, 3.0] and ps.tolist() == pytest.approx([1 / 3, 2 / 3, 1.0])


def test_confidence_interval():
    assert M.confidence_interval([2.0]) == (2.0, 0.0)
    m, h = M.confidence_interval([1.0, 2.0, 3.0, float("nan")])
    assert m == 2.0 and h == pytest.approx(4.302652729911275 * 1.0 / np.sqrt(3), rel=1e-9)


@pytest.fixture(scope="module")
def episode():
    cfg = config.reduced()
    env = VlcNomaEnv(cfg)
    env.reset(0)
    trace = M.EpisodeTrace(env.is_hp, cfg.env.dt_s)
    rng = np.random.default_rng(0)
    done = False
    while not done:
        res = env.step(rng.uniform(0, 1, (env.n_ap, env.act_dim)))
        trace.record(res)
        done = res.done
    return cfg, trace


def test_episode_metrics_invariants_and_idempotence(episode):
    cfg, trace = episode
    a = M.episode_metrics(trace, 12e6, 0.5e6, 2.0)
    b = M.episode_metrics(trace, 12e6, 0.5e6, 2.0)
    assert a.scalars() == b.scalars()
    assert 0 <= a.qossr_hp <= 1 and 0 <= a.p_out_sp <= 1 and 0 <= a.ppr <= 1
    assert 1 / cfg.users.n_users <= a.jfi <= 1 and a.hor >= 0
    assert a.avg_rate_bps == pytest.approx(a.sum_rate_bps / cfg.users.n_users)
    assert a.hor == pytest.approx(a.n_handovers / (cfg.users.n_users * 100.0))


def test_exports(tmp_path, episode):
    _, trace = episode
    eps = [M.episode_metrics(trace, 12e6, 0.5e6, 2.0)] * 2
    M.write_episode_csv(eps, tmp_path / "e.csv")
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert len(rows) == 2 and list(rows[0])[1:] == list(M.SCALARS)
    M.write_samples_csv(eps, tmp_path / "s.csv")
    kinds = {r["kind"] for r in csv.DictReader(open(tmp_path / "s.csv"))}
    assert kinds <= {"inr", "sinr"} and "sinr" in kinds
    summary = M.summarise(eps)
    M.write_summary_json(summary, tmp_path / "j.json")
    back = json.loads((tmp_path / "j.json").read_text())
    assert back["n_episodes"] == 2 and back["jfi"]["ci95"] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_fractions_on_random_rates(seed):
    rng = np.random.default_rng(seed)
    rates = rng.uniform(0, 20e6, (20, 6)) * (rng.random((20, 6)) < 0.7)
    hp = rng.random(6) < 0.5
    q, _ = M.qossr_hp(rates, hp, 12e6)
    p, _ = M.outage_probability_sp(rates, hp, 0.5e6)
    assert 0 <= q <= 1 and 0 <= p <= 1
