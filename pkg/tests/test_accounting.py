import json

import numpy as np
import pytest

from filterprune.accounting import CostReport, cost_report, count_flops, count_params, report_compression
from filterprune.exceptions import DimensionError
from filterprune.models import INPUT, GraphBuilder, build_resnet
from filterprune.pruning import PruneMask, compact, hard_prune_round


def single_conv(size=32, filters=16, channels=3):
    g = GraphBuilder(np.random.default_rng(0))
    g.conv("conv", INPUT, channels, filters, 3, 1, pad=1)
    return g.build({"name": "one", "input_shape": [channels, size, size], "num_classes": 0})


def test_single_conv_params():
    assert count_params(single_conv()) == 432


def test_single_conv_flops():
    assert count_flops(single_conv()) == 432 * 32 * 32 == 442_368


def test_bn_and_linear_rules():
    g = GraphBuilder(np.random.default_rng(0))
    x = g.conv("c", INPUT, 2, 4, 3, 1, pad=1)
    x = g.bn("b", x, 4)
    x = g.simple("r", "relu", x)
    x = g.simple("gap", "gap", x)
    g.linear("fc", x, 4, 3)
    m = g.build({"name": "t", "input_shape": [2, 8, 8], "num_classes": 3})
    assert count_params(m) == 4 * 2 * 9 + 2 * 4 + 3 * 4 + 3
    assert count_flops(m) == 4 * 2 * 9 * 64 + 3 * 4


def test_counts_are_structural():
    a = build_resnet(18, 0.25, (1, 64, 64), 2, seed=0)
    b = build_resnet(18, 0.25, (1, 64, 64), 2, seed=1)
    assert count_params(a) == count_params(b)
    assert count_flops(a) == count_flops(b)


def test_totals_equal_row_sums():
    r = cost_report(build_resnet(50, 0.125, (1, 64, 64), 2))
    assert r.total_params == sum(x.params for x in r.rows)
    assert r.total_flops == sum(x.flops for x in r.rows)


@pytest.mark.parametrize("depth", [18, 50])
def test_conv_flops_scale_with_area(depth):
    def conv_flops(size):
        r = cost_report(build_resnet(depth, 0.25, (1, size, size), 2))
        return sum(x.flops for x in r.rows if x.kind == "conv")

    assert conv_flops(128) == 4 * conv_flops(64)


def test_resnet18_imagenet_scale():
    m = build_resnet(18, 1.0, (3, 224, 224), 1000)
    assert count_params(m) == pytest.approx(1.17e7, rel=0.01)
    assert count_flops(m) == pytest.approx(1.8e9, rel=0.02)


def test_resnet152_flops():
    assert count_flops(build_resnet(152, 1.0, (3, 224, 224), 1000)) == pytest.approx(1.2e10, rel=0.05)


def test_two_class_head_differs_by_about_half_a_million():
    a = count_params(build_resnet(18, 1.0, (3, 224, 224), 1000))
    b = count_params(build_resnet(18, 1.0, (3, 224, 224), 2))
    assert a - b == 998 * 512 + 998


def test_compact_with_empty_mask_keeps_counts():
    m = build_resnet(18, 0.25, (1, 64, 64), 2)
    c = compact(m, PruneMask.empty(m))
    assert count_params(c) == count_params(m)
    assert count_flops(c) == count_flops(m)


def test_identical_models_ratio_one():
    r = cost_report(build_resnet(18, 0.25, (1, 64, 64), 2))
    cmp = report_compression(r, r)
    assert cmp.params_ratio == 1.0 and cmp.flops_ratio == 1.0
    assert all(d["params_delta"] == 0 for d in cmp.deltas)


def test_round_one_ratio_band():
    m = build_resnet(18, 1.0, (3, 224, 224), 1000)
    base = cost_report(m)
    mask = hard_prune_round(m, None, 0.3)
    cmp = report_compression(base, cost_report(compact(m, mask)))
    assert 0.35 <= cmp.params_ratio <= 0.55
    assert 0 < cmp.flops_ratio < 1


def test_shape_inference_failure():
    m = single_conv()
    with pytest.raises(DimensionError):
        count_flops(m, (2, 32, 32))


def test_report_json_and_table():
    r = report_compression(cost_report(single_conv(), name="Baseline"), cost_report(single_conv(filters=8), name="Pruned"))
    back = CostReport.from_dict(json.loads(r.to_json()))
    assert back == r
    table = r.to_table(per_layer=True)
    assert "Parameters" in table and "FLOPs" in table and "conv" in table
    assert r.params_ratio == 0.5
