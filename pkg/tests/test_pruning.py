import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filterprune.exceptions import ConfigurationError, DimensionError, InvariantViolation
from filterprune.models import INPUT, GraphBuilder, build_resnet
from filterprune.pruning import (
    AsfpSchedule,
    PruneMask,
    PruningPlan,
    asfp_epoch_end,
    asfp_rate,
    compact,
    compute_alignment_groups,
    enforce_mask,
    filter_norm,
    bn_after,
    hard_prune_round,
    select_filters,
)
from filterprune.tensor import SGD

from nets import calibrate_bn, chain_net, logits, toy_net, train_steps


class TestFilterNorm:
    def test_three_four_five(self):
        assert filter_norm(np.array([[3.0, 4.0]]), 2)[0] == pytest.approx(5.0)

    def test_l1(self):
        assert filter_norm(np.array([[1.0, -2.0, 3.0]]), 1)[0] == pytest.approx(6.0)

    def test_matches_flatten_oracle(self):
        w = np.random.default_rng(0).normal(size=(8, 4, 3, 3))
        expected = [math.sqrt(sum(v * v for v in w[f].ravel())) for f in range(8)]
        np.testing.assert_allclose(filter_norm(w, 2), expected, atol=1e-6)

    def test_bad_p(self):
        with pytest.raises(ConfigurationError):
            filter_norm(np.ones((2, 2)), 0)


class TestSelectFilters:
    def test_two_smallest(self):
        assert select_filters([0.9, 0.1, 0.5, 0.7], 0.5).tolist() == [1, 2]

    def test_floor(self):
        assert select_filters([0.9, 0.1, 0.5, 0.7], 0.25).tolist() == [1]

    def test_ties_go_to_lowest_index(self):
        assert select_filters([1, 1, 1, 1], 0.5).tolist() == [0, 1]

    def test_skips_already_pruned(self):
        chosen = select_filters([0.0, 0.1, 0.5, 0.7, 0.8], 0.5, [True, False, False, False, False])
        assert chosen.tolist() == [1, 2]

    def test_rate_out_of_range(self):
        with pytest.raises(ConfigurationError):
            select_filters([1.0], 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40), st.floats(0, 0.99),
           st.integers(0, 2**32 - 1))
    def test_selection_optimality(self, norms, rate, seed):
        norms = np.array(norms)
        pruned = np.random.default_rng(seed).random(norms.size) < 0.3
        chosen = select_filters(norms, rate, pruned)
        active = np.flatnonzero(~pruned)
        assert chosen.size == math.floor(rate * active.size + 1e-9)
        assert not pruned[chosen].any()
        rest = np.setdiff1d(active, chosen)
        if chosen.size and rest.size:
            assert norms[chosen].max() <= norms[rest].min()


class TestAlignmentGroups:
    def test_resnet18_stage_groups(self):
        m = build_resnet(18, 0.25, (1, 64, 64), 2)
        groups = {frozenset(g.members): g for g in compute_alignment_groups(m)}
        stage1 = frozenset({"stem.conv", "layer1.0.conv2", "layer1.1.conv2"})
        stage2 = frozenset({"layer2.0.downsample.conv", "layer2.0.conv2", "layer2.1.conv2"})
        assert stage1 in groups and not groups[stage1].prunable
        assert stage2 in groups and groups[stage2].prunable
        assert groups[frozenset({"layer2.0.conv1"})].prunable

    def test_chain_gives_singletons(self):
        groups = compute_alignment_groups(chain_net())
        assert sorted(len(g.members) for g in groups) == [1, 1]

    @pytest.mark.parametrize("depth", [18, 50])
    def test_partition_and_equal_widths(self, depth):
        m = build_resnet(depth, 0.125, (1, 32, 32), 2)
        groups = compute_alignment_groups(m)
        members = [c for g in groups for c in g.members]
        assert sorted(members) == sorted(s.id for s in m.layers_of_kind("conv"))
        for g in groups:
            assert len({m.layer(c).params["filters"] for c in g.members}) == 1
        # both contributors of every add share a group
        owner = {c: g.id for g in groups for c in g.members}
        for add in m.layers_of_kind("add"):
            ids = set()
            for src in add.inputs:
                node = src
                while m.layer(node).kind != "conv":
                    node = m.layer(node).inputs[0]
                ids.add(owner[node])
            assert len(ids) == 1

    def test_stem_never_prunable(self):
        for depth in (18, 50):
            m = build_resnet(depth, 0.125, (1, 32, 32), 2)
            stem = next(g for g in compute_alignment_groups(m) if "stem.conv" in g.members)
            assert not stem.prunable


class TestHardPruning:
    def test_floor_chain_on_64_filter_group(self):
        m = build_resnet(18, 1.0, (3, 64, 64), 10)
        groups = compute_alignment_groups(m)
        mask = None
        counts = []
        for _ in range(3):
            mask = hard_prune_round(m, mask, 0.3, groups=groups)
            counts.append(mask.active_count("layer1.0.conv1"))
        assert counts == [45, 32, 23]
        assert mask.freeze

    def test_round_compounding_every_group(self):
        m = build_resnet(18, 0.25, (1, 32, 32), 2)
        groups = compute_alignment_groups(m)
        mask = None
        for r in range(1, 4):
            mask = hard_prune_round(m, mask, 0.3, groups=groups)
            for g in groups:
                expected = g.filters
                if g.prunable:
                    for _ in range(r):
                        expected -= math.floor(0.3 * expected + 1e-9)
                assert mask.active_count(g.members[0]) == expected

    def test_rate_zero_touches_nothing(self):
        m = build_resnet(18, 0.125, (1, 32, 32), 2)
        before = {k: v.data.copy() for k, v in m.params.items()}
        mask = hard_prune_round(m, None, 0.0)
        assert mask.is_empty
        for k, v in m.params.items():
            assert v.data.tobytes() == before[k].tobytes()

    def test_masked_equals_manual_zeroing(self):
        m = build_resnet(18, 0.125, (1, 32, 32), 2)
        ref = m.copy()
        mask = hard_prune_round(m, None, 0.3)
        for conv_id, rows in mask.masks.items():
            ref.params[f"{conv_id}.weight"].data[rows] = 0
        for conv_id, bn in bn_after(ref).items():
            rows = mask.masks[conv_id]
            ref.params[f"{bn}.gamma"].data[rows] = 0
            ref.params[f"{bn}.beta"].data[rows] = 0
            ref.buffers[f"{bn}.running_mean"][rows] = 0
            ref.buffers[f"{bn}.running_var"][rows] = 0
        x = np.random.default_rng(1).normal(size=(2, 1, 32, 32)).astype(np.float32)
        assert logits(m, x).tobytes() == logits(ref, x).tobytes()

    def test_invalid_rate(self):
        with pytest.raises(ConfigurationError):
            hard_prune_round(toy_net(), None, 1.0)

    def test_freeze_holds_through_fine_tuning(self):
        m = toy_net(stem=True)
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(16, 2, 6, 6)), rng.integers(0, 2, 16)
        mask = hard_prune_round(m, None, 0.5)
        train_steps(m, x, y, 100, mask=mask)
        rows = mask.masks["conv"]
        assert rows.sum() == 4
        assert np.all(m.params["conv.weight"].data[rows] == 0)
        assert np.all(m.params["bn.gamma"].data[rows] == 0)
        assert np.all(m.params["bn.beta"].data[rows] == 0)


class TestEnforceMask:
    def test_empty_mask_is_noop(self):
        m = toy_net()
        before = {k: v.data.copy() for k, v in m.params.items()}
        enforce_mask(m, PruneMask.empty(m))
        assert all(m.params[k].data.tobytes() == v.tobytes() for k, v in before.items())

    def test_shape_mismatch(self):
        m = toy_net()
        mask = PruneMask({"conv": np.zeros(5, dtype=bool)})
        with pytest.raises(DimensionError):
            enforce_mask(m, mask)

    def test_soft_mask_allows_recovery(self):
        """Training continues with the same optimizer across the epoch boundary."""
        m = toy_net(stem=True)
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(16, 2, 6, 6)), rng.integers(0, 2, 16)
        opt = SGD(m.parameters(), lr=0.05, momentum=0.9)
        train_steps(m, x, y, 4, opt=opt)
        mask = asfp_epoch_end(m, AsfpSchedule(0.5, 2), 0)
        zeroed = mask.masks["conv"]
        assert zeroed.any() and np.all(m.params["conv.weight"].data[zeroed] == 0)
        train_steps(m, x, y, 4, opt=opt)
        assert np.abs(m.params["conv.weight"].data[zeroed]).sum(axis=(1, 2, 3)).max() > 0


class TestAsfp:
    def test_boundary_is_exact(self):
        for p in (0.1, 0.2, 0.3):
            assert asfp_rate(AsfpSchedule(p, 60), 59) == p

    def test_first_epoch(self):
        assert asfp_rate(AsfpSchedule(0.3, 60), 0) == pytest.approx(0.3 * (1 - (59 / 60) ** 3))
        assert asfp_rate(AsfpSchedule(0.3, 60), 0) == pytest.approx(0.0148, abs=2e-4)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.99), st.integers(2, 200), st.floats(1.0, 5.0))
    def test_strictly_increasing(self, p, e, exponent):
        s = AsfpSchedule(p, e, exponent)
        rates = [asfp_rate(s, i) for i in range(e)]
        assert all(a < b for a, b in zip(rates, rates[1:]))
        assert rates[-1] == p

    def test_epoch_out_of_range(self):
        with pytest.raises(ConfigurationError):
            asfp_rate(AsfpSchedule(0.3, 10), 10)

    def test_last_epoch_prunes_floor_of_target(self):
        m = build_resnet(18, 0.25, (1, 32, 32), 2)
        groups = compute_alignment_groups(m)
        mask = asfp_epoch_end(m, AsfpSchedule(0.3, 5), 4, groups=groups)
        assert not mask.freeze
        for g in groups:
            expected = math.floor(0.3 * g.filters + 1e-9) if g.prunable else 0
            assert mask.pruned_count(g.members[0]) == expected

    def test_regrown_filter_escapes(self):
        m = toy_net(filters=2, stem=True)
        s = AsfpSchedule(0.5, 2)
        first = asfp_epoch_end(m, s, 1)
        victim = int(np.flatnonzero(first.masks["conv"])[0])
        # training pushes the zeroed filter to a large norm
        m.params["conv.weight"].data[victim] = 10.0
        second = asfp_epoch_end(m, s, 1)
        assert not second.masks["conv"][victim]
        assert second.masks["conv"][1 - victim]

    def test_zero_target_is_baseline(self):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=(8, 2, 6, 6)), rng.integers(0, 2, 8)
        a, b = toy_net(seed=5, stem=True), toy_net(seed=5, stem=True)
        for epoch in range(3):
            train_steps(a, x, y, 2)
            train_steps(b, x, y, 2)
            mask = asfp_epoch_end(b, AsfpSchedule(0.0, 3), epoch)
            assert mask.is_empty
        for k in a.params:
            assert a.params[k].data.tobytes() == b.params[k].data.tobytes()


class TestCompact:
    def test_empty_mask_identical(self):
        m = build_resnet(18, 0.125, (1, 32, 32), 2)
        c = compact(m, PruneMask.empty(m))
        assert [(l.id, l.params) for l in c.layers] == [(l.id, l.params) for l in m.layers]
        x = np.random.default_rng(0).normal(size=(2, 1, 32, 32)).astype(np.float32)
        np.testing.assert_array_equal(logits(c, x), logits(m, x))

    def test_single_conv_head_shrinks(self):
        m = toy_net(filters=8)
        mask = PruneMask.empty(m)
        mask.masks["conv"][[1, 3]] = True
        enforce_mask(m, mask)
        c = compact(m, mask)
        assert c.params["conv.weight"].shape[0] == 6
        assert c.params["fc.weight"].shape == (2, 6)
        x = np.random.default_rng(1).normal(size=(100, 2, 6, 6))
        np.testing.assert_allclose(logits(c, x), logits(m, x), atol=1e-6)

    def test_inconsistent_group_mask(self):
        m = build_resnet(18, 0.125, (1, 32, 32), 2)
        mask = PruneMask.empty(m)
        mask.masks["layer2.0.conv2"][0] = True
        with pytest.raises(InvariantViolation):
            compact(m, mask)

    def test_group_added_to_raw_input_rejected(self):
        g = GraphBuilder(np.random.default_rng(0), dtype=np.float64)
        x = g.conv("c", INPUT, 2, 2, 3, pad=1)
        x = g.bn("b", x, 2)
        x = g.add("a", x, INPUT)
        x = g.simple("gap", "gap", x)
        g.linear("fc", x, 2, 2)
        m = g.build({"name": "skip", "input_shape": [2, 4, 4], "num_classes": 2})
        assert not compute_alignment_groups(m)[0].prunable
        mask = PruneMask.empty(m)
        mask.masks["c"][0] = True
        with pytest.raises(InvariantViolation):
            compact(m, mask)

    def test_stem_group_is_compactable(self):
        m = build_resnet(18, 0.125, (1, 32, 32), 2)
        mask = PruneMask.empty(m)
        for c in ("stem.conv", "layer1.0.conv2", "layer1.1.conv2"):
            mask.masks[c][0] = True
        enforce_mask(m, mask)
        x = np.random.default_rng(5).normal(size=(2, 1, 32, 32)).astype(np.float32)
        np.testing.assert_allclose(logits(compact(m, mask), x), logits(m, x), atol=1e-5)

    @settings(max_examples=8, deadline=None)
    @given(st.sampled_from([18, 50]), st.floats(0.05, 0.6), st.integers(0, 2**32 - 1))
    def test_compacted_matches_masked(self, depth, rate, seed):
        m = build_resnet(depth, 0.125, (1, 32, 32), 2, seed=seed % 1000)
        rng = np.random.default_rng(seed)
        calibrate_bn(m, rng)
        mask = hard_prune_round(m, None, rate)
        c = compact(m, mask)
        x = rng.normal(size=(4, 1, 32, 32)).astype(np.float32)
        np.testing.assert_allclose(logits(c, x), logits(m, x), atol=1e-5)

    def test_resnet18_three_rounds_trajectory(self):
        from filterprune.accounting import count_params
        m = build_resnet(18, 1.0, (3, 224, 224), 1000)
        base = count_params(m)
        groups = compute_alignment_groups(m)
        mask, counts = None, []
        for _ in range(3):
            mask = hard_prune_round(m, mask, 0.3, groups=groups)
            counts.append(count_params(compact(m, mask)))
        assert base > counts[0] > counts[1] > counts[2]
        assert counts[1] <= 0.5 * base


class TestPruneMask:
    def test_round_trip(self):
        m = toy_net(stem=True)
        mask = hard_prune_round(m, None, 0.5)
        again = PruneMask.from_dict(mask.to_dict())
        assert again.freeze == mask.freeze
        assert all(np.array_equal(again.masks[k], v) for k, v in mask.masks.items())

    def test_fraction_bound(self):
        m = build_resnet(18, 0.25, (1, 32, 32), 2)
        mask = hard_prune_round(m, None, 0.3)
        for conv_id, rows in mask.masks.items():
            assert rows.mean() <= 0.3 + 1 / rows.size

    def test_plan_rates(self):
        assert PruningPlan("hard", rounds=3, rate=0.3).round_rates() == [0.3, 0.3, 0.3]
        assert PruningPlan("hard", rates=[0.1, 0.2]).round_rates() == [0.1, 0.2]
        with pytest.raises(ConfigurationError):
            PruningPlan("magnitude")
