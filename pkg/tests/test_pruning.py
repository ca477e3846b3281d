import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_keep
from prunemap.cost_model import count_flops
from prunemap.errors import InvalidArgument, NotPrunableLayer
from prunemap.nn import (
    Conv2d,
    ReLU,
    SoftmaxPerPixel,
    TrainConfig,
    TransposedConv2d,
    forward,
    reference_fcn,
    train,
)
from prunemap.nn.model import ModelGraph
from prunemap.pruning import (
    PruneConfig,
    channel_graph,
    filter_counts,
    iterative_prune,
    keep_count,
    keep_schedule,
    plan_prune,
    prune_step,
    score_filters,
)
from prunemap.segmentation import make_dataset

SMALL = dict(widths=(4, 6, 8, 10), input_size=16)


def _single_conv(norms):
    layer = Conv2d(1, len(norms), (1, 1))
    layer.weight = np.array(norms, np.float32).reshape(-1, 1, 1, 1)
    layer.bias = np.zeros(len(norms), np.float32)
    head = Conv2d(len(norms), 2, (1, 1))
    head.weight = np.ones(head.weight_shape, np.float32)
    head.bias = np.zeros(2, np.float32)
    return ModelGraph([layer, ReLU(), head, SoftmaxPerPixel()], 2, (1, 4, 4))


def test_score_examples():
    model = _single_conv([0.1, 5.0, -2.0, 0.3])
    scores = score_filters(model, 0)
    assert [s.filter_index for s in scores] == [0, 3, 2, 1]
    assert [s.l1_norm for s in scores] == pytest.approx([0.1, 0.3, 2.0, 5.0])

    zero = _single_conv([0.0] * 5)
    assert [s.filter_index for s in score_filters(zero, 0)] == [0, 1, 2, 3, 4]

    one = Conv2d(1, 1, (2, 2))
    one.weight = np.array([[[[1.0, -2.0], [3.0, -4.0]]]])
    one.bias = np.array([100.0])
    up = TransposedConv2d(1, 2, (2, 2))
    up.init_params(np.random.default_rng(0))
    m = ModelGraph([one, up, SoftmaxPerPixel()], 2, (1, 3, 3))
    assert score_filters(m, 0)[0].l1_norm == 10.0


def test_score_rejects_non_conv():
    model = _single_conv([1.0, 2.0])
    with pytest.raises(NotPrunableLayer):
        score_filters(model, 1)
    with pytest.raises(NotPrunableLayer):
        score_filters(model, 99)


def test_zero_ratio_is_a_no_op():
    model = reference_fcn(seed=1)
    pruned = prune_step(model, 0.0)
    assert [type(a) for a in pruned.layers] == [type(b) for b in model.layers]
    for (ka, a), (kb, b) in zip(pruned.parameters(), model.parameters()):
        assert ka == kb and a.tobytes() == b.tobytes()


def test_keeps_highest_filters():
    model = _single_conv([0.1, 5.0, 2.0, 0.3])
    pruned = prune_step(model, 0.5)
    assert pruned.layers[0].weight.ravel().tolist() == pytest.approx([5.0, 2.0])
    assert pruned.layers[2].in_channels == 2
    assert filter_counts(prune_step(_single_conv([1.0, 2.0, 3.0]), 0.9))[0] == 1


def test_classifier_and_bad_ratios():
    model = reference_fcn(seed=0, **SMALL)
    last = model.conv_indices[-1]
    with pytest.raises(NotPrunableLayer):
        prune_step(model, 0.5, prunable_layers=[last])
    for p in (-0.1, 1.0, 1.5):
        with pytest.raises(InvalidArgument):
            prune_step(model, p)
    assert filter_counts(prune_step(model, 0.9))[last] == 2


def test_skip_partners_share_one_group():
    model = reference_fcn(seed=0)
    cg = channel_graph(model)
    skip = model.layers[[type(l).__name__ for l in model.layers].index("SkipAdd")]
    src = max(i for i in model.conv_indices if i <= skip.source)
    tconv = model.conv_indices[-2]
    assert any(src in g and tconv in g for g in cg.groups)


@pytest.mark.parametrize("p", [0.25, 0.5, 0.75])
def test_zeroed_filters_prune_without_changing_output(p):
    rng = np.random.default_rng(3)
    model = reference_fcn(seed=2, **SMALL).astype(np.float64)
    cg = channel_graph(model)
    for g, members in enumerate(cg.groups):
        if g == cg.classifier_group:
            continue
        n = model.layers[members[0]].out_channels
        drop = rng.choice(n, size=math.floor(p * n), replace=False)
        for i in members:
            model.layers[i].weight[drop] = 0.0
        for i in cg.consumers[g]:
            model.layers[i].weight[:, drop] = 0.0
    pruned = prune_step(model, p)
    assert pruned.param_count() < model.param_count()
    x = rng.normal(size=(3, 1, 16, 16))
    np.testing.assert_allclose(forward(pruned, x), forward(model, x), rtol=1e-12, atol=1e-14)


def test_spec_counts_on_a_wide_layer():
    assert keep_schedule(64, 0.2, 3) == [64, 52, 42, 34]
    assert keep_schedule(64, 0.9, 3) == [64, 7, 1, 1]
    assert keep_count(10, 0.7) == 3


@settings(max_examples=300)
@given(n=st.integers(1, 4096), p=st.sampled_from([i / 100 for i in range(100)]), itr=st.integers(1, 6))
def test_keep_schedule_matches_exact_recurrence(n, p, itr):
    assert keep_schedule(n, p, itr) == brute_keep(n, p, itr)


def test_iterative_counts_follow_the_recurrence():
    model = reference_fcn(seed=0)
    cfg = PruneConfig(ratio=0.3, iterations=3, fine_tune_epochs_per_iter=0)
    results = iterative_prune(model, cfg)
    base = filter_counts(model)
    last = model.conv_indices[-1]
    for res in results:
        for i, n in base.items():
            want = n if i == last else brute_keep(n, 0.3, res.iteration)[-1]
            assert filter_counts(res.model)[i] == want
        assert res.record.post_counts == filter_counts(res.model)
        for i, dropped in res.record.removed.items():
            assert len(dropped) == res.record.pre_counts[i] - res.record.post_counts[i]


def test_single_iteration_equals_prune_step_then_fine_tune():
    model = reference_fcn(seed=0, **SMALL)
    data = make_dataset(2, 16, seed=0)
    cfg = PruneConfig(ratio=0.5, iterations=1, fine_tune_epochs_per_iter=1, seed=4)
    [res] = iterative_prune(model, cfg, data)
    manual = train(prune_step(model, 0.5), data, TrainConfig(learning_rate=1e-2, epochs=1, batch_size=1,
                                                            seed=4 * 1000 + 1)).model
    for (_, a), (_, b) in zip(res.model.parameters(), manual.parameters()):
        assert a.tobytes() == b.tobytes()


def test_fine_tune_needs_data():
    with pytest.raises(InvalidArgument):
        iterative_prune(reference_fcn(seed=0), PruneConfig(ratio=0.5, fine_tune_epochs_per_iter=1))
    with pytest.raises(InvalidArgument):
        iterative_prune(reference_fcn(seed=0), PruneConfig(ratio=0.5, iterations=0))


@settings(max_examples=20)
@given(p=st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]), seed=st.integers(0, 100))
def test_cost_strictly_decreases_while_prunable(p, seed):
    model = reference_fcn(seed=seed, **SMALL)
    results = iterative_prune(model, PruneConfig(ratio=p, iterations=4, fine_tune_epochs_per_iter=0))
    prev = model
    rng = np.random.default_rng(seed)
    for res in results:
        cur = res.model
        can_shrink = any(keep_count(n, p) < n for i, n in filter_counts(prev).items()
                         if i != prev.conv_indices[-1])
        if can_shrink:
            assert count_flops(cur) < count_flops(prev)
            assert cur.param_count() < prev.param_count()
        else:
            assert count_flops(cur) == count_flops(prev)
        out = forward(cur, rng.normal(size=(2, 1, 16, 16)))
        assert out.shape == (2, 2, 16, 16) and np.isfinite(out).all()
        prev = cur


@settings(max_examples=30)
@given(seed=st.integers(0, 1000), scale=st.floats(1e-3, 1e3), p=st.sampled_from([0.2, 0.5, 0.8]))
def test_pruned_set_is_scale_invariant(seed, scale, p):
    model = reference_fcn(seed=seed, **SMALL).astype(np.float64)
    scaled = model.copy()
    for i in scaled.conv_indices:
        scaled.layers[i].weight = scaled.layers[i].weight * scale
    a, b = plan_prune(model, p), plan_prune(scaled, p)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].tolist() == b[k].tolist()
