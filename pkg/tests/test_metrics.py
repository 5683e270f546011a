import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import apply_script, ctc_collapse, edit_distance_search

from ccfactor.autodiff import ValidationError
from ccfactor.config import RunConfig
from ccfactor.metrics import (
    EditBreakdown,
    MetricsReport,
    ProbeResult,
    edit_ops,
    greedy_ctc_decode,
    linear_probe,
    probe_disentanglement,
    relative_improvement,
    word_error_rate,
)
from ccfactor.model import FactorModel, FeatureStats, stacked_features
from ccfactor.noise import SyntheticCorpusSpec, generate_synthetic_corpus


def test_edit_examples():
    assert edit_ops("abc", "abc") == EditBreakdown(0, 0, 0, 3)
    assert word_error_rate("abc", "abc") == 0.0
    assert edit_ops("abc", "axc") == EditBreakdown(1, 0, 0, 3)
    assert word_error_rate("abc", "axc") == pytest.approx(1 / 3)
    assert edit_ops("ab", "b") == EditBreakdown(0, 0, 1, 2)
    assert edit_distance_search("ab", "b") == 1


def test_edit_pure_insertions_and_deletions():
    assert edit_ops("ab", "abcd") == EditBreakdown(0, 2, 0, 2)
    assert edit_ops("abcd", "") == EditBreakdown(0, 0, 4, 4)
    assert edit_ops("a", "xyz").errors == 3
    with pytest.raises(ValidationError):
        edit_ops("", "a")


def _all_sequences(vocab, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(vocab, repeat=n)


@pytest.mark.parametrize("vocab,max_len", [("ab", 6), ("abc", 4)])
def test_edit_cost_matches_exhaustive_search(vocab, max_len):
    seqs = list(_all_sequences(vocab, max_len))
    for ref in seqs:
        if not ref:
            continue
        for hyp in seqs:
            out, script = edit_ops(ref, hyp, return_script=True)
            assert out.errors == edit_distance_search(ref, hyp), (ref, hyp)
            assert apply_script(ref, hyp, script) == list(hyp)


tokens = st.lists(st.integers(0, 4), min_size=1, max_size=8)


@given(tokens, st.lists(st.integers(0, 4), max_size=8), st.permutations(range(5)))
def test_wer_invariant_under_relabeling(ref, hyp, perm):
    assert edit_ops(ref, hyp) == edit_ops([perm[t] for t in ref], [perm[t] for t in hyp])


@given(tokens, st.lists(st.integers(0, 4), max_size=8))
def test_script_counts_are_consistent(ref, hyp):
    out, script = edit_ops(ref, hyp, return_script=True)
    assert len(ref) == script.count("=") + script.count("S") + script.count("D")
    assert len(hyp) == script.count("=") + script.count("S") + script.count("I")
    assert out.wer == out.errors / len(ref)


def test_breakdowns_add():
    total = edit_ops("ab", "b") + edit_ops("abc", "axcd")
    assert total == EditBreakdown(1, 1, 1, 5)
    assert total.wer == pytest.approx(3 / 5)


def test_relative_improvement_examples():
    assert round(relative_improvement(6.05, 5.80), 2) == -4.13
    assert round(relative_improvement(15.43, 14.61), 2) == -5.31
    assert relative_improvement(3.2, 3.2) == 0.0
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValidationError):
            relative_improvement(bad, 1.0)


@given(st.floats(0.01, 100), st.floats(-0.99, 5))
def test_relative_improvement_scaling(b, x):
    assert relative_improvement(b, b * (1 + x)) == pytest.approx(100 * x, abs=1e-10)


def test_greedy_decode_examples():
    blank_only = np.array([[5.0, 0.0, 0.0]] * 4)
    assert greedy_ctc_decode(blank_only) == []
    a, blank = np.eye(3)[1], np.eye(3)[0]
    assert greedy_ctc_decode(np.stack([a, a, blank, a])) == [1, 1]
    assert greedy_ctc_decode(np.zeros((0, 3))) == []


def test_greedy_decode_matches_collapse_rule(rng):
    for _ in range(200):
        logits = rng.standard_normal((int(rng.integers(1, 12)), 4))
        path = [int(np.argmax(row)) for row in logits]
        assert greedy_ctc_decode(logits) == list(ctc_collapse(path))


# -- probes ---------------------------------------------------------------------


def test_shuffled_labels_probe_near_chance():
    rng = np.random.default_rng(3)
    n, k = 300, 3
    labels = np.repeat(np.arange(k), n // k)
    features = rng.standard_normal((n, 8)) + labels[:, None]
    result = linear_probe(features, rng.permutation(labels), seed=0)
    sigma = np.sqrt(result.chance * (1 - result.chance) / result.n_test)
    assert result.chance == pytest.approx(1 / 3)
    assert abs(result.accuracy - result.chance) <= 3 * sigma


def test_one_hot_label_features_probe_perfectly():
    labels = np.tile(np.arange(4), 25)
    result = linear_probe(np.eye(4)[labels], labels, seed=1)
    assert result.accuracy == 1.0
    assert result.n_train + result.n_test == 100


def test_probe_errors():
    with pytest.raises(ValidationError, match="single class"):
        linear_probe(np.ones((10, 2)), [0] * 10)
    with pytest.raises(ValidationError):
        linear_probe(np.ones((10, 2)), [0, 1] * 4)


def test_untrained_factorizer_shows_no_separation():
    spec = SyntheticCorpusSpec(n_tokens=5, n_contexts=3, n_utterances=150, seed=4)
    cfg = RunConfig(corpus=spec.to_dict())
    utts = generate_synthetic_corpus(spec)
    feats = [stacked_features(u.waveform, cfg) for u in utts]
    stats = FeatureStats.fit(feats)
    model = FactorModel(cfg, len(spec.vocab))
    outputs = model.forward_eval(model.init_params(), [stats.apply(f) for f in feats])
    ids = [u.context_id for u in utts]

    def pooled(k):
        return np.stack([o[k].mean(axis=0) for o in outputs])

    direct = linear_probe(pooled(0), ids, seed=0)
    from_context, from_content = probe_disentanglement(pooled(2), pooled(1), ids, seed=0)
    assert (from_context.source, from_content.source) == ("z_context", "z_content")
    # before training the two projections are interchangeable random maps of e_i
    assert abs(from_context.accuracy - from_content.accuracy) <= 0.2
    assert abs(from_context.accuracy - direct.accuracy) <= 0.25
    assert abs(from_content.accuracy - direct.accuracy) <= 0.25


def test_report_json_round_trip(tmp_path):
    report = MetricsReport(
        rows=[{"alpha": 0.0, "wer": 0.25, "substitutions": 1, "insertions": 0, "deletions": 0, "reference_length": 4}],
        probes=[ProbeResult("context_id", "z_context", 0.9, 1 / 3, 70, 30)],
        losses={"L_total": 1.5},
        relative={"wer@0.3": -5.09},
    )
    text = report.to_json(tmp_path / "r.json")
    assert (tmp_path / "r.json").read_text() == text

    assert MetricsReport.from_dict(json.loads(text)) == report


def test_probe_needs_two_examples_per_class():
    with pytest.raises(ValidationError, match="single example"):
        linear_probe(np.arange(10.0)[:, None], [0] * 9 + [1])
