import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edrl import _kernels_py
from edrl import numerics as nx
from edrl.reward import EdrlConfig, ScatterMap, action_values, prefix_error_increments, scatter_and_gather, token_rewards
from oracles import closed_form_values, edit_distance, prefix_min_curve

try:
    from edrl import _ckernels
except ImportError:
    _ckernels = None

needs_cython = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")

chars = st.lists(st.integers(0, 3), max_size=9)
gammas = st.floats(0.0, 0.99)
finite = st.floats(-50, 50, allow_nan=False)
VOCAB = ["a", "b", "ab", "ba", "abc", "c", " "]
SMAP = ScatterMap.from_vocab(VOCAB)
BLANK = len(VOCAB)


@st.composite
def action_paths(draw, max_emits=6):
    """Random blank/emission interleavings ending in a blank, with matching rewards."""
    tokens = draw(st.lists(st.integers(0, len(VOCAB) - 1), max_size=max_emits))
    actions = []
    for t in tokens:
        actions += [BLANK] * draw(st.integers(0, 2)) + [t]
    actions.append(BLANK)
    return tokens, actions


@given(chars, chars)
def test_increments_are_binary_and_track_prefix_minimum(hyp, ref):
    inc = prefix_error_increments(hyp, ref)
    assert set(inc.tolist()) <= {0, 1}
    curve = prefix_min_curve(hyp, ref)
    assert np.concatenate([[0], np.cumsum(inc)]).tolist() == curve


@given(action_paths(), st.text(alphabet="abc ", max_size=8))
def test_token_errors_bounded_by_span(path, ref):
    tokens, _ = path
    hyp = SMAP.scatter(tokens)
    inc = prefix_error_increments(hyp, SMAP.char_ids(ref))
    errors = scatter_and_gather(tokens, SMAP, inc)
    assert np.all(errors >= 0) and np.all(errors <= SMAP.lengths(tokens))
    assert errors.sum() == inc.sum()


@given(action_paths(), gammas, st.lists(finite, min_size=6, max_size=6))
def test_values_match_closed_form_and_bound(path, gamma, pool):
    tokens, actions = path
    rewards = np.array(pool[: len(tokens)])
    values = action_values(actions, rewards, gamma, BLANK)
    np.testing.assert_allclose(values, closed_form_values(actions, rewards, gamma, BLANK), rtol=1e-10, atol=1e-10)
    bound = (np.max(np.abs(rewards)) if len(rewards) else 0.0) / (1.0 - gamma)
    assert np.all(np.abs(values) <= bound + 1e-9)
    assert values[-1] == 0.0


@given(action_paths(), st.one_of(st.just(0.0), st.floats(0.01, 0.99)), st.floats(0.01, 1.0))
def test_all_correct_tokens_give_positive_credit(path, gamma, rp):
    tokens, actions = path
    rewards = token_rewards(np.zeros(len(tokens), dtype=int), EdrlConfig(gamma, rp))
    values = action_values(actions, rewards, gamma, BLANK)
    last_emit = max((k for k, a in enumerate(actions) if a != BLANK), default=-1)
    emits = [k for k, a in enumerate(actions) if a != BLANK]
    assert np.all(values[emits] > 0)
    if gamma > 0:
        assert np.all(values[: last_emit + 1] > 0)
    assert np.all(values[last_emit + 1 :] == 0)


@given(action_paths(), gammas, st.sampled_from(["raw_edit_distance", "constant_minus_one"]))
def test_all_wrong_tokens_give_negative_credit(path, gamma, mode):
    tokens, actions = path
    rewards = token_rewards(np.ones(len(tokens), dtype=int) * 2, EdrlConfig(gamma, 0.1, mode))
    values = action_values(actions, rewards, gamma, BLANK)
    assert np.all(values <= 0)
    emits = [k for k, a in enumerate(actions) if a != BLANK]
    assert np.all(values[emits] < 0)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)), elements=st.floats(-700, 700)))
def test_log_softmax_rows_normalised(x):
    out = nx.log_softmax(x).data
    assert np.all(out <= 0)
    assert np.max(np.abs(np.exp(out).sum(axis=-1) - 1.0)) <= 1e-12


@given(chars, chars, chars)
def test_levenshtein_metric_axioms(a, b, c):
    lev = _kernels_py.levenshtein
    ia, ib, ic = (np.asarray(s, dtype=np.int64) for s in (a, b, c))
    d = lev(ia, ib)
    assert d == edit_distance(a, b) == lev(ib, ia)
    assert (d == 0) == (a == b)
    assert lev(ia, ic) <= d + lev(ib, ic)


@needs_cython
@settings(max_examples=200)
@given(chars, chars)
def test_backends_agree_on_edit_scans(a, b):
    ia, ib = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    assert _ckernels.levenshtein(ia, ib) == _kernels_py.levenshtein(ia, ib)
    assert np.array_equal(
        np.asarray(_ckernels.prefix_error_increments(ia, ib)), _kernels_py.prefix_error_increments(ia, ib)
    )


@needs_cython
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 7)), elements=st.floats(-30, 30)),
       st.integers(0, 2**31))
def test_backends_agree_on_logcumsumexp_gradient(x, seed):
    g = np.random.default_rng(seed).normal(size=x.shape)
    out = np.logaddexp.accumulate(x, axis=-1)
    py = _kernels_py.logcumsumexp_backward(x, out, g)
    cy = np.asarray(_ckernels.logcumsumexp_backward(x, out, g))
    np.testing.assert_allclose(cy, py, rtol=1e-9, atol=1e-12)
