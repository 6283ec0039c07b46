"""Magnitude-dropout planner: rate updates, masking, and the retrain loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeslim.archspec import LayerKind, LayerSpec, NetworkSpec, check_valid
from edgeslim.datasets import make_synthetic
from edgeslim.engine.model import connection_count, init_model, model_bytes
from edgeslim.engine.training import evaluate_loss, train_classifier
from edgeslim import pruning
from edgeslim.pruning import DropoutState, apply_dropout, update_rate


def state(d=0.5, q_a=1000, q_b=1000, iteration=0, max_iteration=20, c=1.0):
    return DropoutState(
        d=d, q_a=q_a, q_b=q_b, iteration=iteration, max_iteration=max_iteration,
        c=c, target_layers=2, reference_loss=1.0,
    )


def test_update_rate_fixtures():
    # no survivors lost, first iteration: rate unchanged
    assert update_rate(state(0.5, 1000, 1000, 0)) == pytest.approx(0.5)
    # deep prune with exhausted iteration budget: sqrt factor wins
    assert update_rate(state(0.5, 1000, 250, iteration=20)) == pytest.approx(0.25)
    # decay floor dominates a mild survivor drop
    assert update_rate(state(0.8, 1000, 640, iteration=2, c=1.0)) == pytest.approx(
        0.8 * 0.9
    )


@settings(max_examples=200, deadline=None)
@given(
    d=st.floats(min_value=1e-6, max_value=1.0),
    q_a=st.integers(min_value=1, max_value=10_000),
    q_b=st.integers(min_value=0, max_value=10_000),
    iteration=st.integers(min_value=0, max_value=30),
)
def test_update_rate_closed_form(d, q_a, q_b, iteration):
    q_b = min(q_b, q_a)
    s = state(d, q_a, q_b, iteration, max_iteration=30, c=1.5)
    expected = d * max(np.sqrt(q_b / q_a), 1.0 - iteration / (1.5 * 30))
    expected = min(max(expected, pruning.MIN_RATE), 1.0)
    assert update_rate(s) == pytest.approx(expected, rel=1e-12)
    assert 0.0 < update_rate(s) <= 1.0


def test_state_validation():
    with pytest.raises(ValueError):
        state(d=0.0)
    with pytest.raises(ValueError):
        state(d=1.5)
    with pytest.raises(ValueError):
        state(c=0.0)
    with pytest.raises(ValueError):
        update_rate(state(q_a=0, q_b=0))


def build_model():
    spec = check_valid(
        NetworkSpec(
            "p",
            [
                LayerSpec(LayerKind.FC, I=8, O=16),
                LayerSpec(LayerKind.FC, I=16, O=10),
                LayerSpec(LayerKind.FC, I=10, O=3),
            ],
            class_count=3,
            shared_prefix=1,
        )
    )
    return init_model(spec, seed=1)


def test_apply_dropout_counts_and_magnitudes():
    model = build_model()
    before = connection_count(model)
    pruned = apply_dropout(model, 0.25, target_layers=[1, 2])
    # untouched input model
    assert connection_count(model) == before
    assert model_bytes(model) != model_bytes(pruned)
    # per-layer floor(rate * alive) entries dropped
    alive1 = 16 * 10
    alive2 = 10 * 3
    expect_drop = int(0.25 * alive1) + int(0.25 * alive2)
    assert connection_count(pruned) == before - expect_drop
    # layer 0 untouched
    np.testing.assert_array_equal(pruned.layers[0].masks["W"], 1.0)
    # survivors dominate the dropped magnitudes within each layer
    for idx in (1, 2):
        w = np.abs(model.layers[idx].params["W"])
        mask = pruned.layers[idx].masks["W"]
        assert w[mask == 0].max() <= w[mask == 1].min() + 1e-12
        # no splicing: dropped weights are zeroed too
        assert (pruned.layers[idx].params["W"][mask == 0] == 0).all()


def test_apply_dropout_masked_stay_masked():
    model = build_model()
    once = apply_dropout(model, 0.5, [1])
    twice = apply_dropout(once, 0.5, [1])
    m1 = once.layers[1].masks["W"]
    m2 = twice.layers[1].masks["W"]
    assert ((m1 == 0) <= (m2 == 0)).all()  # masked set only grows
    alive = int(m1.sum())
    assert int(m2.sum()) == alive - int(0.5 * alive)


def test_apply_dropout_tie_break_is_stable():
    model = build_model()
    model.layers[1].params["W"][...] = 1.0  # all magnitudes equal
    model.layers[1].params["b"][...] = 0.0
    pruned = apply_dropout(model, 0.5, [1])
    mask = pruned.layers[1].masks["W"]
    flat = mask.reshape(-1)
    dropped = int((flat == 0).sum())
    # ties resolve in flat order: the first `dropped` entries go
    np.testing.assert_array_equal(flat[:dropped], 0.0)
    np.testing.assert_array_equal(flat[dropped:], 1.0)


def make_trained(seed=3):
    model = build_model()
    data = make_synthetic(k=3, p=8, n=200, seed=seed, separation=3.0)
    train_classifier(model, data, epochs=10, eta=0.1, seed=seed)
    return model, data, evaluate_loss(model, data)


def test_run_prunes_and_respects_reference():
    model, data, reference = make_trained()
    result = pruning.run(
        model, data, eta=0.05, reference_loss=reference * 1.05, seed=0,
        max_iteration=6,
    )
    assert len(result.rounds) >= 1  # do-while executes at least once
    counts = [r.q_b for r in result.rounds]
    assert counts == sorted(counts, reverse=True)
    assert result.surviving == connection_count(result.model)
    assert result.surviving < connection_count(model)
    # every accepted round stayed within the reference loss
    for row in result.rounds:
        if row.accepted:
            assert row.loss <= reference * 1.05 + 1e-12
    # shared layer is never touched
    np.testing.assert_array_equal(result.model.layers[0].masks["W"], 1.0)


def test_run_first_round_kept_on_immediate_reject():
    model, data, reference = make_trained()
    # an impossible target: every round rejects, but round 1's model is kept
    result = pruning.run(
        model, data, eta=0.05, reference_loss=1e-9, seed=0, max_iteration=6
    )
    assert len(result.rounds) == 1
    assert not result.rounds[0].accepted
    assert result.surviving < connection_count(model)  # still pruned once


def test_run_input_rate_hits_first_target_harder():
    model, data, reference = make_trained()
    result = pruning.run(
        model, data, eta=0.05, reference_loss=reference * 10, seed=0,
        max_iteration=1, initial_rate=0.5, input_rate=0.8,
    )
    drop1 = 1.0 - result.model.layers[1].masks["W"].mean()
    drop2 = 1.0 - result.model.layers[2].masks["W"].mean()
    # first targeted layer prunes at 0.8 scale, later ones at 0.5
    assert drop1 > drop2
    assert drop1 == pytest.approx(0.8, abs=0.02)
    assert drop2 == pytest.approx(0.5, abs=0.02)


def test_run_is_deterministic():
    model, data, reference = make_trained()
    a = pruning.run(model, data, eta=0.05, reference_loss=reference * 1.1, seed=5, max_iteration=4)
    b = pruning.run(model, data, eta=0.05, reference_loss=reference * 1.1, seed=5, max_iteration=4)
    assert model_bytes(a.model) == model_bytes(b.model)
    assert [r.to_dict() for r in a.rounds] == [r.to_dict() for r in b.rounds]


def test_run_requires_targets():
    model, data, reference = make_trained()
    with pytest.raises(ValueError):
        pruning.run(model, data, eta=0.05, reference_loss=reference, target_layers=[])
