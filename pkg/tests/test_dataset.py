from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from brandrank.dataset import (ActionTuple, Step, TrainingInstance, Vocabulary, add_negatives,
                               build_datasets, encode_batch, encode_instance, filter_sparse,
                               label_balance, negative_sample, parse_action_log, read_jsonl,
                               temporal_split, window_sequences, write_action_log, write_jsonl)
from brandrank.errors import (ContractError, DataError, EmptyDatasetError, ParseError,
                              SamplingError, VocabularyError)


def seq(user, brands, start=0.0, gap=10.0, actions=None):
    actions = actions or ["click"] * len(brands)
    return [ActionTuple(user, b, a, start + gap * i) for i, (b, a) in enumerate(zip(brands, actions))]


def make_instance(query="Q", label=1, brands=None, dt=1.0):
    brands = brands or [f"b{i}" for i in range(10)]
    return TrainingInstance(tuple(Step(b, "click", dt) for b in brands), query, 1000.0, label, "u")


# -- parsing ------------------------------------------------------------------------

def write_csv(tmp_path, body):
    p = tmp_path / "actions.csv"
    p.write_text("user_id,brand_id,action_type,timestamp\n" + body)
    return p


def test_parse_single_row(tmp_path):
    out = parse_action_log(write_csv(tmp_path, "u1,b1,click,100\n"))
    assert out == {"u1": [ActionTuple("u1", "b1", "click", 100.0)]}


def test_parse_sorts_and_keeps_tie_order(tmp_path):
    out = parse_action_log(write_csv(tmp_path, "u1,b3,click,300\nu1,b1,purchase,100\n"
                                               "u1,bx,click,200\nu1,by,click,200\n"))
    assert [a.brand_id for a in out["u1"]] == ["b1", "bx", "by", "b3"]


def test_parse_unknown_action_names_line(tmp_path):
    with pytest.raises(DataError) as exc:
        parse_action_log(write_csv(tmp_path, "u1,b1,click,1\nu1,b1,view,100\n"))
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


@pytest.mark.parametrize("body", ["u1,b1,click\n", "u1,b1,click,soon\n"])
def test_parse_malformed_rows(tmp_path, body):
    with pytest.raises(ParseError):
        parse_action_log(write_csv(tmp_path, body))


def test_parse_bad_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("user,brand,type,ts\n")
    with pytest.raises(ParseError):
        parse_action_log(p)


def test_action_log_round_trip(tmp_path):
    actions = {"u1": seq("u1", list("ABC"), actions=["click", "purchase", "click"]),
               "u2": seq("u2", list("AB"), start=5.5)}
    write_action_log(tmp_path / "a.csv", actions)
    assert parse_action_log(tmp_path / "a.csv") == actions


# -- sparsity filter ---------------------------------------------------------------

def test_filter_identity_at_one():
    actions = {"u1": seq("u1", list("AB")), "u2": seq("u2", list("C"))}
    assert filter_sparse(actions, 1, 1) == actions


def test_filter_everything_removed():
    with pytest.raises(EmptyDatasetError):
        filter_sparse({"u1": seq("u1", list("ABCDE"))}, 11, 1)


def test_filter_chain_reaches_fixed_point():
    # B is rare, so u1 drops below three actions; that leaves A rare, which
    # in turn drops u3. Only u2 survives.
    actions = {"u1": seq("u1", list("AAB")), "u2": seq("u2", list("CCC")),
               "u3": seq("u3", list("ACC"))}
    out = filter_sparse(actions, min_user_actions=3, min_brand_actions=2)
    assert out == {"u2": actions["u2"]}


def test_filter_rejects_bad_thresholds():
    with pytest.raises(ContractError):
        filter_sparse({"u": seq("u", "A")}, 0, 1)


# -- windows -------------------------------------------------------------------------

@pytest.mark.parametrize("n,expected", [(10, 0), (11, 1), (21, 1), (22, 2), (33, 3)])
def test_window_counts(n, expected):
    actions = {"u": seq("u", [f"b{i}" for i in range(n)])}
    assert len(window_sequences(actions)) == expected


def test_window_intervals_and_query():
    times = [0, 5, 7, 20, 21, 30, 60, 61, 62, 90, 100]
    actions = {"u": [ActionTuple("u", f"b{i}", "click", float(t)) for i, t in enumerate(times)]}
    (inst,) = window_sequences(actions)
    assert [s.delta_t for s in inst.history] == [5, 2, 13, 1, 9, 30, 1, 1, 28, 10]
    assert inst.query_brand == "b10" and inst.query_time == 100.0 and inst.label == 1
    assert inst.timestamps() == times[:10]


def test_timestamps_100_then_160():
    actions = {"u": [ActionTuple("u", "A", "click", 100.0), ActionTuple("u", "B", "click", 160.0)]
               + seq("u", list("CDEFGHIJK"), start=200.0)}
    (inst,) = window_sequences(actions)
    assert inst.history[0].delta_t == 60.0


def test_window_with_query_at_last_history_time_is_skipped():
    actions = {"u": seq("u", [f"b{i}" for i in range(10)]) + [ActionTuple("u", "q", "click", 90.0)]}
    assert window_sequences(actions) == []


def test_sliding_windows():
    actions = {"u": seq("u", [f"b{i}" for i in range(13)])}
    assert len(window_sequences(actions, sliding=True)) == 3


@given(st.integers(0, 60))
def test_windows_reproduce_a_prefix(n):
    original = seq("u", [f"b{i % 7}" for i in range(n)],
                   actions=["purchase" if i % 3 == 0 else "click" for i in range(n)])
    rebuilt = []
    for inst in window_sequences({"u": original}):
        assert len(inst.history) == 10
        assert all(s.delta_t >= 0 for s in inst.history)
        for step, t in zip(inst.history, inst.timestamps()):
            rebuilt.append(ActionTuple("u", step.brand_id, step.action_type, t))
        rebuilt.append(original[len(rebuilt)])  # the query action
        assert rebuilt[-1].brand_id == inst.query_brand
    assert rebuilt == original[:len(rebuilt)]
    assert len(rebuilt) == 11 * (n // 11)


def test_instance_contract():
    with pytest.raises(ContractError):
        TrainingInstance((Step("A", "click", 1.0),) * 9, "Q", 1.0, 1)
    with pytest.raises(ContractError):
        make_instance(label=2)
    with pytest.raises(ContractError):
        make_instance(dt=-1.0)


# -- negatives -------------------------------------------------------------------------

def test_negative_forced_choice():
    neg = negative_sample(make_instance("B"), ["A", "B"], 0)
    assert neg.query_brand == "A" and neg.label == 0
    assert neg.history == make_instance("B").history and neg.query_time == 1000.0


def test_negative_deterministic():
    pos = make_instance("B")
    universe = list("ABCDEFG")
    assert negative_sample(pos, universe, 42) == negative_sample(pos, universe, 42)


def test_negative_needs_two_brands():
    with pytest.raises(SamplingError):
        negative_sample(make_instance("A"), ["A"], 0)


def test_negative_uniform_over_the_others():
    pos = make_instance("C")
    rng = np.random.default_rng(11)
    draws = Counter(negative_sample(pos, list("ABCDE"), rng).query_brand for _ in range(10_000))
    assert "C" not in draws
    for b in "ABDE":
        assert abs(draws[b] / 10_000 - 0.25) <= 0.02
    assert stats.chisquare([draws[b] for b in "ABDE"]).pvalue > 1e-4


def test_negative_may_reuse_history_brand():
    pos = make_instance("Q", brands=["A"] * 10)
    assert negative_sample(pos, ["A", "Q"], 0).query_brand == "A"


def test_add_negatives_balance():
    positives = [make_instance(q) for q in "ABCD"]
    out = add_negatives(positives, list("ABCDE"), seed=1)
    assert label_balance(out) == (4, 4)
    assert out[::2] == positives


# -- split and end-to-end -------------------------------------------------------------

def test_temporal_split_last_window_to_test():
    actions = {"u1": seq("u1", [f"b{i}" for i in range(33)]),
               "u2": seq("u2", [f"b{i}" for i in range(11)])}
    train, test = temporal_split(window_sequences(actions))
    assert [i.user_id for i in train] == ["u1", "u1"]
    assert [i.user_id for i in test] == ["u1", "u2"]
    assert test[0].query_time > max(i.query_time for i in train)


def test_build_datasets_deterministic_and_disjoint(tiny_synth):
    a = build_datasets(tiny_synth.actions, seed=5)
    b = build_datasets(tiny_synth.actions, seed=5)
    assert a == b
    train, test, brands = a
    assert label_balance(train)[0] == label_balance(train)[1]
    assert not {id(x) for x in train} & {id(x) for x in test}
    train_keys = {(i.user_id, i.query_time) for i in train}
    assert not train_keys & {(i.user_id, i.query_time) for i in test}
    assert brands == sorted(brands)


# -- vocabulary and files -----------------------------------------------------------------

def test_vocabulary(tmp_path):
    v = Vocabulary(["x", "a", "m"])
    assert v.lookup("a") == 1 and len(v) == 3
    with pytest.raises(VocabularyError):
        v.lookup("zz")
    with pytest.raises(DataError):
        Vocabulary(["a", "a"])
    v.save(tmp_path / "vocab.csv")
    back = Vocabulary.load(tmp_path / "vocab.csv")
    assert back.brands == v.brands and back.hash == v.hash
    assert Vocabulary(["a", "x", "m"]).hash != v.hash


def test_jsonl_round_trip(tmp_path):
    insts = [make_instance("Q", 1), make_instance("R", 0, dt=2.5)]
    write_jsonl(tmp_path / "t.jsonl", insts)
    assert read_jsonl(tmp_path / "t.jsonl") == insts
    first = (tmp_path / "t.jsonl").read_text().splitlines()[0]
    assert first.startswith('{"history":[["b0","click",1.0]')


def test_jsonl_bad_line(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"history": [], "query_brand": "Q", "query_time": 1, "label": 1}\n')
    with pytest.raises(ParseError) as exc:
        read_jsonl(p)
    assert exc.value.line == 1


# -- encoding -------------------------------------------------------------------------------

def encoded_for(action):
    inst = TrainingInstance(tuple(Step("A", action, 3.0) for _ in range(10)), "B", 1.0, 1)
    feats = {"A": np.full(4, 0.25), "B": np.full(4, 0.75)}
    return encode_instance(inst, feats, "combined", Vocabulary(["A", "B"]), feature_dim=4)


def test_encode_click_and_purchase():
    np.testing.assert_array_equal(encoded_for("click").action_onehot[0], [0.0, 1.0])
    np.testing.assert_array_equal(encoded_for("purchase").action_onehot[0], [1.0, 0.0])


def test_encode_fields():
    e = encoded_for("click")
    np.testing.assert_array_equal(e.brand_index, [0] * 10)
    np.testing.assert_array_equal(e.delta_t, [3.0] * 10)
    assert e.query_index == 1
    np.testing.assert_array_equal(e.query_features, [0.75] * 4)


def test_encode_unknown_brand():
    inst = make_instance("Q")
    with pytest.raises(VocabularyError):
        encode_instance(inst, None, "one_hot", Vocabulary(["b0"]))
    with pytest.raises(DataError):
        encode_instance(inst, {}, "features")


def test_encode_batch_shapes(tiny_synth):
    train, _, brands = build_datasets(tiny_synth.actions, seed=0)
    feats = {b: np.zeros(56) for b in brands}
    batch = encode_batch(train, feats, "combined", Vocabulary(brands))
    n = len(train)
    assert batch.brand_features.shape == (n, 10, 56)
    assert batch.action_onehot.shape == (n, 10, 2)
    assert batch.delta_t.shape == (n, 10) and batch.query_index.shape == (n,)
    np.testing.assert_array_equal(batch.action_onehot.sum(axis=-1), 1.0)
    sub = batch.take([0, 2])
    assert len(sub) == 2 and sub.label[1] == batch.label[2]
