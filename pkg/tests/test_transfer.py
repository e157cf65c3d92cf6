import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from netxfer.dataio import Normalizer, build_dataset
from netxfer.ndiff import BLOCK_ORDER, Block, ParamStore, Tensor, finite_difference_check
from netxfer.netsim import Perturbed, ScenarioTemplate, gen_scenarios
from netxfer.rnmodel import ModelConfig, RouteNetModel, TrainConfig, collate, train
from netxfer.transfer import (
    GTOT, L2SP, TTT, Action, AutoFreeze, BlockPolicy, DonorSnapshot, InvalidPolicy, Manual, MethodError,
    apply_policy, autofreeze_update, batch_mask, enumerate_valid_policies, finetune, gtot_distance, l2sp_penalty,
    masked_sinkhorn, method_from_spec, prepare_receiver,
)
from netxfer.transfer.methods import _stack_states

CFG = ModelConfig(embedding_dim=6, mpa_iterations=2, encoder_hidden=(6,), readout_hidden=(6, 6))
FT = TrainConfig(lr=1e-3, max_epochs=4, patience=4, batch_size=2, seed=5)


def brute_force_policies():
    # written out from the rules directly: a block after a re-trained one must be
    # re-trained, a block after a fine-tuned one cannot be frozen, and neither
    # all-Freeze nor all-Retrain is allowed
    rank = {"F": 0, "T": 1, "R": 2}
    out = []
    for e, m, r in itertools.product("FTR", repeat=3):
        code = e + m + r
        if rank[e] > rank[m] or rank[m] > rank[r]:
            continue
        if code in ("FFF", "RRR"):
            continue
        out.append(code)
    return out


def test_policy_enumeration_matches_brute_force():
    got = [p.code for p in enumerate_valid_policies()]
    assert sorted(got) == sorted(brute_force_policies())
    assert sorted(got) == sorted(["FFT", "FFR", "FTT", "FTR", "FRR", "TTT", "TTR", "TRR"])
    assert len(set(got)) == 8


@pytest.mark.parametrize("code, reason", [
    ("FFF", "never freeze all"), ("RRR", "never re-train all"), ("RTT", "after a re-trained"),
    ("TFT", "frozen after a fine-tuned"), ("FRT", "after a re-trained"),
])
def test_invalid_policies_name_the_rule(code, reason):
    with pytest.raises(InvalidPolicy, match=reason):
        BlockPolicy.from_code(code).validate()


def test_malformed_code_lists_valid_ones():
    with pytest.raises(InvalidPolicy, match="FFT, FFR"):
        BlockPolicy.from_code("XYZ")


@pytest.fixture(scope="module")
def data():
    ideal = build_dataset(gen_scenarios(ScenarioTemplate(nodes=(4, 5), flows=(2, 4), duration=(0.3, 0.4)), 6,
                                        seed=2))
    real = build_dataset(gen_scenarios(ScenarioTemplate(nodes=(4, 5), flows=(2, 4), duration=(0.3, 0.4),
                                                        fidelity=Perturbed()), 6, seed=3))
    return ideal, real


@pytest.fixture(scope="module")
def donor(data):
    ideal, _ = data
    m = RouteNetModel(CFG, Normalizer.fit(ideal[:4]))
    train(m, ideal[:4], ideal[4:], TrainConfig(lr=3e-3, max_epochs=5, patience=5, batch_size=2))
    return DonorSnapshot.from_model(m, train_lr=3e-3)


def test_donor_snapshot_is_read_only(donor):
    v = next(iter(donor.values.values()))
    with pytest.raises(ValueError):
        v[...] = 0.0


@pytest.mark.parametrize("code", [p.code for p in enumerate_valid_policies()])
def test_apply_policy(donor, code):
    policy = BlockPolicy.from_code(code)
    r = apply_policy(donor, policy, seed=9)
    for p in r.store:
        act = policy.action(p.block)
        assert p.trainable == (act != Action.FREEZE)
        if act == Action.RETRAIN:
            assert not np.array_equal(p.value, donor.values[p.name]) or not p.value.any()
        else:
            assert p.value.tobytes() == donor.values[p.name].tobytes()
            assert p.value is not donor.values[p.name]


@pytest.mark.parametrize("code", [p.code for p in enumerate_valid_policies() if "F" in p.code])
def test_frozen_blocks_stay_bitwise_equal(donor, data, code):
    _, real = data
    policy = BlockPolicy.from_code(code)
    r = apply_policy(donor, policy)
    finetune(r, real[:3], real[3:5], Manual(policy), FT)
    for p in r.store:
        if policy.action(p.block) == Action.FREEZE:
            assert p.value.tobytes() == donor.values[p.name].tobytes(), p.name
        else:
            assert p.value.tobytes() != donor.values[p.name].tobytes() or policy.action(p.block) == Action.RETRAIN


# ---------------------------------------------------------------- AutoFreeze


E, M, R = BLOCK_ORDER


def test_autofreeze_k_consecutive_rule():
    h = {E: [1.0, 0.2, 0.2], M: [1.0, 0.2, 0.3], R: [1.0, 1.0, 1.0]}
    assert autofreeze_update(h, 0.25, 2) == {E}
    assert autofreeze_update(h, 0.25, 3) == set()  # epoch 1 itself is ratio 1
    h = {E: [2.0, 1.0, 0.4, 0.4, 0.49], M: [1.0, 0.2, 0.1, 0.3, 0.1], R: [1.0] * 5}
    assert autofreeze_update(h, 0.25, 3) == {E}
    # a ratio exactly at the threshold does not count
    assert autofreeze_update({E: [4.0, 1.0], M: [1.0, 1.0], R: [1.0, 1.0]}, 0.25, 1) == set()


def test_autofreeze_zero_threshold_freezes_nothing():
    h = {b: [1.0, 0.0, 0.0, 0.0] for b in BLOCK_ORDER}
    assert autofreeze_update(h, 0.0, 1) == set()


def test_autofreeze_keeps_one_block_and_is_monotone():
    h = {b: [1.0, 0.01, 0.01] for b in BLOCK_ORDER}
    assert autofreeze_update(h, 0.25, 2) == {E, M}
    # already-frozen blocks stay frozen even when their norm recovers
    h2 = {E: [1.0, 0.01, 5.0], M: [1.0, 1.0, 1.0], R: [1.0, 1.0, 1.0]}
    assert autofreeze_update(h2, 0.25, 2, frozen={E}) == {E}


def test_autofreeze_during_finetuning(donor, data):
    _, real = data
    r = prepare_receiver(donor, AutoFreeze(threshold=10.0, patience=1))
    res = finetune(r, real[:3], real[3:5], AutoFreeze(threshold=10.0, patience=1),
                   TrainConfig(lr=1e-3, max_epochs=4, patience=4, batch_size=2))
    # every ratio is below 10, so blocks go in order and the last stays trainable
    assert [b for _, b in res.freeze_events] == ["encoding", "mpa"]
    assert any(p.trainable for p in r.store.in_block(Block.READOUT))

    r0 = prepare_receiver(donor, AutoFreeze(threshold=0.0))
    res0 = finetune(r0, real[:3], real[3:5], AutoFreeze(threshold=0.0), FT)
    assert res0.freeze_events == []


# ---------------------------------------------------------------- L2-SP


def test_l2sp_closed_form():
    s = ParamStore()
    s.add("a", np.array([1.0, 2.0]), Block.ENCODING)
    s.add("b", np.array([3.0]), Block.READOUT)
    donor = {"a": np.array([0.0, 0.0]), "b": np.array([0.0])}
    # a is transferred, b is fresh: 1/2 * (1 + 4) + 1/3 / 2 * 9
    p = l2sp_penalty(s, donor, alpha=1.0, beta=1.0 / 3.0, transferred=[Block.ENCODING])
    assert p.item() == pytest.approx(4.0, abs=1e-15)


def test_l2sp_zero_at_donor(donor):
    r = apply_policy(donor, TTT)
    assert l2sp_penalty(r.store, donor.values, alpha=0.7, beta=0.0).item() == 0.0


def test_l2sp_gradient_and_renaming_invariance():
    rng = np.random.default_rng(0)
    s = ParamStore()
    s.add("x.W", rng.normal(size=(2, 3)), Block.MPA)
    s.add("y.b", rng.normal(size=3), Block.READOUT)
    d = {"x.W": rng.normal(size=(2, 3)), "y.b": rng.normal(size=3)}
    rep = finite_difference_check(lambda: l2sp_penalty(s, d, 0.3, 0.2, [Block.MPA]), s)
    assert rep.passed
    t = ParamStore()
    t.add("renamed.W", s["x.W"].value.copy(), Block.MPA)
    t.add("other.b", s["y.b"].value.copy(), Block.READOUT)
    d2 = {"renamed.W": d["x.W"], "other.b": d["y.b"]}
    assert l2sp_penalty(t, d2, 0.3, 0.2, [Block.MPA]).item() == l2sp_penalty(s, d, 0.3, 0.2, [Block.MPA]).item()


def test_l2sp_errors():
    s = ParamStore()
    s.add("a", np.zeros(2), Block.MPA)
    with pytest.raises(MethodError, match="donor has no parameter"):
        l2sp_penalty(s, {}, 1.0, 1.0)
    with pytest.raises(MethodError, match="shape"):
        l2sp_penalty(s, {"a": np.zeros(3)}, 1.0, 1.0)


# ---------------------------------------------------------------- optimal transport


def test_sinkhorn_diagonal_mask():
    rows = cols = np.array([0, 1])
    res = masked_sinkhorn(rows, cols, np.array([3.0, 5.0]), 2, 2, 1e-2, 50)
    assert res.distance == pytest.approx(4.0, rel=1e-12)
    assert np.allclose(res.dense_plan(2, 2), np.eye(2) / 2)


def test_sinkhorn_marginals_and_full_mask():
    rng = np.random.default_rng(1)
    n, m = 5, 4
    r, c = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    C = rng.uniform(size=(n, m))
    res = masked_sinkhorn(r.ravel(), c.ravel(), C.ravel(), n, m, 0.1, 500)
    P = res.dense_plan(n, m)
    assert np.allclose(P.sum(axis=1), 1 / n, atol=1e-10)
    assert np.allclose(P.sum(axis=0), 1 / m, atol=1e-10)
    # dense reference Sinkhorn in the plain domain
    K = np.exp(-C / 0.1)
    u, v = np.ones(n), np.ones(m)
    for _ in range(500):
        u = (1 / n) / (K @ v)
        v = (1 / m) / (K.T @ u)
    assert np.allclose(P, u[:, None] * K * v[None, :], atol=1e-12)


def test_sinkhorn_rejects_empty_rows():
    with pytest.raises(ValueError, match="row or column"):
        masked_sinkhorn(np.array([0]), np.array([0]), np.array([1.0]), 2, 1, 0.1, 5)


def test_gtot_identical_embeddings(donor, data):
    _, real = data
    m = donor.model()
    b = collate(real[:2], donor.normalizer)
    emb = _stack_states(m.forward(b, keep_states=True).states).value
    d = gtot_distance(Tensor(emb), emb, batch_mask(b), 1e-2, 50)
    assert 0.0 <= d.item() <= 1e-3


def test_gtot_nonnegative_and_gradient():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 3))
    mask = sp.csr_matrix(np.array([[1, 1, 1, 0], [1, 1, 1, 1], [1, 1, 1, 1], [0, 1, 1, 1]], float))
    eps = 1.0
    rows, cols = mask.nonzero()

    def entropic(xv):
        c = np.sum((xv[rows] - y[cols]) ** 2, axis=1)
        r = masked_sinkhorn(rows, cols, c, 4, 4, eps, 1000)
        return r.distance + eps * np.sum(r.plan * (np.log(r.plan) - 1.0))

    t = Tensor(x, requires_grad=True)
    d = gtot_distance(t, y, mask, eps, 1000)
    assert d.item() >= 0
    d.backward()
    # the fixed-plan gradient is the exact gradient of the entropic objective
    h = 1e-6
    for i, j in itertools.product(range(4), range(3)):
        e = np.zeros_like(x)
        e[i, j] = h
        num = (entropic(x + e) - entropic(x - e)) / (2 * h)
        assert t.grad[i, j] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_block_mask_is_per_window(data, donor):
    b = collate(data[1][:2], donor.normalizer)
    M = batch_mask(b)
    n = b.n_flows + 2 * b.n_links
    assert M.shape == (b.n_windows * n, b.n_windows * n)
    assert (M - M.T).nnz == 0
    assert M[0:n, n:2 * n].nnz == 0


# ---------------------------------------------------------------- reductions


def _losses(res):
    return np.array([[h["train_loss"], h["val_loss"]] for h in res.history])


@pytest.fixture(scope="module")
def plain_ttt(donor, data):
    _, real = data
    return _losses(finetune(apply_policy(donor, TTT), real[:3], real[3:5], Manual(TTT), FT))


def test_l2sp_zero_weights_is_plain_finetuning(donor, data, plain_ttt):
    _, real = data
    m = L2SP(alpha=0.0, beta=0.0)
    got = _losses(finetune(prepare_receiver(donor, m), real[:3], real[3:5], m, FT, donor=donor))
    assert np.max(np.abs(got - plain_ttt)) <= 1e-12


def test_gtot_zero_weight_is_plain_finetuning(donor, data, plain_ttt):
    _, real = data
    m = GTOT(weight=0.0)
    got = _losses(finetune(prepare_receiver(donor, m), real[:3], real[3:5], m, FT, donor=donor))
    assert np.max(np.abs(got - plain_ttt)) <= 1e-12


def test_regularisers_change_training(donor, data, plain_ttt):
    _, real = data
    for m in (L2SP(alpha=10.0, beta=10.0, policy=BlockPolicy.from_code("TTR")), GTOT(weight=10.0)):
        got = _losses(finetune(prepare_receiver(donor, m), real[:3], real[3:5], m, FT, donor=donor))
        assert np.max(np.abs(got - plain_ttt)) > 0


def test_methods_need_a_donor(donor, data):
    _, real = data
    with pytest.raises(MethodError, match="donor"):
        finetune(apply_policy(donor, TTT), real[:2], real[2:3], L2SP(), FT)


# ---------------------------------------------------------------- parsing


def test_method_from_spec():
    assert method_from_spec("manual:ftr") == Manual(BlockPolicy.from_code("FTR"))
    assert method_from_spec("gtot", weight=0.5).weight == 0.5
    assert method_from_spec("l2sp", policy="TTR").policy.code == "TTR"
    assert method_from_spec("autofreeze", threshold=0.1, patience=2) == AutoFreeze(0.1, 2)
    with pytest.raises(MethodError, match="unknown"):
        method_from_spec("dropout")
    with pytest.raises(MethodError):
        method_from_spec("manual")
    with pytest.raises(InvalidPolicy):
        method_from_spec("manual:RRR")
    with pytest.raises(MethodError):
        method_from_spec("gtot", epsilon=0.0)
    with pytest.raises(MethodError):
        method_from_spec("l2sp", gamma=1.0)
