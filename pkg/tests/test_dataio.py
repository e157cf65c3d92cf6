import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netxfer.dataio import (
    FLOW_FEATURES, Normalizer, ZScore, apply_normalizer, build_dataset, fit_normalizer, read_dataset,
    read_windowed, split, window_index, windowize, write_dataset, write_windowed,
)
from netxfer.netsim import (
    Flow, Link, PacketSize, PacketTrace, Perturbed, Poisson, Queue, Scenario, ScenarioTemplate, Topology,
    gen_scenarios, simulate,
)


def hand_trace(flow_id, send, delay, size, dropped=None):
    send = np.asarray(send, dtype=float)
    dropped = np.zeros(len(send), bool) if dropped is None else np.asarray(dropped)
    arrival = np.where(dropped, np.nan, send + np.asarray(delay, dtype=float))
    return PacketTrace(np.asarray(flow_id, np.int64), send, arrival, np.asarray(size, np.int64), dropped)


def two_flow_scenario(duration=0.3):
    topo = Topology([0, 1, 2], [Link(0, 0, 1, 1e7, 0.0), Link(1, 1, 2, 1e7, 0.0)],
                    [Queue(10, 0, 50), Queue(11, 1, 50)])
    return Scenario(3, topo, [Flow(0, (0, 1), Poisson(10.0)), Flow(1, (1,), Poisson(10.0))], duration, 0)


@pytest.fixture(scope="module")
def corpus():
    t = ScenarioTemplate(duration=(0.55, 1.25), traffic="mixed", max_utilization=(0.5, 0.9))
    sc = gen_scenarios(t, 6, seed=4) + gen_scenarios(ScenarioTemplate(duration=(0.5, 0.5), fidelity=Perturbed(),
                                                                       buffer_size=8), 3, seed=5)
    return sc, [simulate(s) for s in sc]


def test_floor_rule():
    assert window_index(np.array([0.15]), 0.1)[0] == 1
    assert list(window_index(np.array([0.0, 0.0999, 0.1, 0.2999]), 0.1)) == [0, 0, 1, 2]


def test_ten_packets_in_one_window():
    sc = two_flow_scenario()
    send = 0.1 + np.arange(10) * 0.009
    tr = hand_trace([0] * 10, send, np.full(10, 0.002), [1250] * 10)
    ws = windowize(tr, sc, 0.1)
    f = ws.flow_features[1, 0]
    assert f[0] == pytest.approx(1e6)
    assert f[1] == pytest.approx(100.0)
    assert f[2] == 1250.0 and f[3] == 2.0
    assert ws.packet_count[1, 0] == 10
    assert ws.target[1, 0] == pytest.approx(0.002)
    assert not ws.active[0].any() and not ws.active[2].any()
    assert np.all(ws.flow_features[0] == 0)


def test_partial_last_window_uses_elapsed_time():
    sc = two_flow_scenario(duration=0.25)
    tr = hand_trace([1] * 5, [0.21, 0.22, 0.23, 0.24, 0.245], [1e-3] * 5, [1000] * 5)
    ws = windowize(tr, sc, 0.1)
    assert ws.n_windows == 3
    assert ws.window_elapsed[-1] == pytest.approx(0.05)
    assert ws.flow_features[2, 1, 1] == pytest.approx(5 / 0.05)
    assert ws.flow_features[2, 1, 0] == pytest.approx(5 * 8000 / 0.05)


def test_dropped_packets_excluded_from_target():
    sc = two_flow_scenario()
    tr = hand_trace([0, 0, 0], [0.01, 0.02, 0.03], [0.001, 0.5, 0.003], [500] * 3, dropped=[False, True, False])
    ws = windowize(tr, sc, 0.1)
    assert ws.packet_count[0, 0] == 2
    assert ws.target[0, 0] == pytest.approx(0.002)
    # offered traffic still counts the dropped packet
    assert ws.flow_features[0, 0, 1] == pytest.approx(30.0)


def test_conservation_and_brute_force_targets(corpus):
    for sc, tr in zip(*corpus):
        ws = windowize(tr, sc, 0.1)
        assert ws.packet_count.sum() == tr.delivered.sum()
        fpos = {int(f): i for i, f in enumerate(ws.flow_ids)}
        sums, counts = {}, {}
        for k in range(len(tr)):
            if tr.dropped[k]:
                continue
            w = min(int(tr.send_time[k] // 0.1), ws.n_windows - 1)
            key = (w, fpos[int(tr.flow_id[k])])
            sums[key] = sums.get(key, 0.0) + (tr.arrival_time[k] - tr.send_time[k])
            counts[key] = counts.get(key, 0) + 1
        for (w, f), n in counts.items():
            assert ws.packet_count[w, f] == n
            assert ws.target[w, f] == pytest.approx(sums[(w, f)] / n, rel=1e-12)
        assert len(counts) == int(ws.active.sum())
        assert np.all(ws.target[ws.active] > 0)
        assert np.all(np.isfinite(ws.flow_features))


def test_every_flow_in_every_window(corpus):
    for sc, tr in zip(*corpus):
        ws = windowize(tr, sc, 0.1)
        assert ws.flow_features.shape == (ws.n_windows, len(sc.flows), len(FLOW_FEATURES))
        assert sum(1 for _ in ws.samples()) == ws.n_windows * len(sc.flows)


def test_constant_column_maps_to_zero():
    X = np.column_stack([np.full(7, 3.5), np.arange(7.0)])
    z = fit_normalizer(X)
    assert z.sd[0] == 1.0
    assert np.all(apply_normalizer(z, X)[:, 0] == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 10_000))
def test_zscore_properties(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(rng.uniform(-1e3, 1e3, d), rng.uniform(0.1, 1e2, d), size=(n, d))
    z = fit_normalizer(X)
    Z = apply_normalizer(z, X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    assert np.allclose(Z.std(axis=0), 1.0, atol=1e-9)
    assert np.allclose(z.invert(Z), X, rtol=0, atol=1e-12 * max(1.0, np.abs(X).max()))
    assert ZScore.from_dict(z.to_dict()).apply(X).tolist() == Z.tolist()


def test_normalizer_rejects_empty():
    with pytest.raises(ValueError):
        fit_normalizer(np.empty((0, 3)))
    with pytest.raises(ValueError):
        Normalizer.fit([])


def test_normalizer_uses_active_windows_only(corpus):
    ws = build_dataset(corpus[0][:3])
    norm = Normalizer.fit(ws)
    act = np.concatenate([w.flow_features[w.active] for w in ws])
    assert np.allclose(norm.flow.mean, act.mean(axis=0))
    assert norm.target_scale == pytest.approx(np.concatenate([w.target[w.active] for w in ws]).mean())
    again = Normalizer.from_dict(norm.to_dict())
    assert np.array_equal(again.flow.mean, norm.flow.mean) and again.target_scale == norm.target_scale


def test_split_counts_and_determinism():
    p = split(range(10), (0.8, 0.2, 0.0), seed=3)
    assert (len(p.training), len(p.validation), len(p.evaluation)) == (8, 2, 0)
    assert p == split(range(10), (0.8, 0.2, 0.0), seed=3)
    q = split(range(10), (0.8, 0.2, 0.0), seed=4)
    assert p.training + p.validation != q.training + q.validation
    assert sorted(p.training + p.validation) == list(range(10))


def test_split_explicit_counts():
    p = split(range(220), counts=[165, 33, 22], seed=0)
    assert (len(p.training), len(p.validation), len(p.evaluation)) == (165, 33, 22)
    assert not set(p.training) & set(p.evaluation)


def test_split_rejects_empty_nonzero_fraction():
    with pytest.raises(ValueError, match="zero scenarios"):
        split(range(3), (0.9, 0.05, 0.05), seed=0)
    with pytest.raises(ValueError):
        split(range(3), (0.5, 0.2, 0.2), seed=0)


def test_ndjson_round_trip(tmp_path, corpus):
    for sc, tr in zip(*corpus):
        ws = windowize(tr, sc, 0.1)
        write_windowed(ws, tmp_path / "w.ndjson")
        assert read_windowed(tmp_path / "w.ndjson").equals(ws)
    wss = build_dataset(corpus[0][:3])
    write_dataset(tmp_path / "ds", wss)
    back = read_dataset(tmp_path / "ds")
    assert all(a.equals(b) for a, b in zip(wss, back))


def test_window_length_must_be_positive(corpus):
    with pytest.raises(ValueError):
        windowize(corpus[1][0], corpus[0][0], 0.0)
