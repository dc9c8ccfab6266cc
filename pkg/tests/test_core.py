"""Dataset validation, estimand algebra, and the decomposition identity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_anova import (
    BuildingBlock,
    ConfigError,
    Continuous,
    Dataset,
    Discrete,
    EmptyData,
    EstimandSpec,
    LengthMismatch,
    MissingSubset,
    NonFiniteOutcome,
    NonFiniteValue,
    TooFewObservations,
    UnknownLevel,
    anchored_decomposition_check,
    expand_estimand,
    interaction,
    total,
    validate_dataset,
)
from causal_anova.core import MAX_INFERRED_LEVELS


def small_columns():
    return {
        "y": [1.0, 2.0, 3.0, 4.0],
        "a": [0.0, 1.0, 0.0, 1.0],
        "b": ["x", "x", "z", "z"],
    }


class TestValidateDataset:
    def test_happy_path_infers_kinds(self):
        ds = validate_dataset(small_columns(), outcome="y")
        assert ds.n == 4
        assert ds.num_factors == 2
        assert ds.factor_names == ("a", "b")
        assert ds.kinds[0] == Discrete((0.0, 1.0))
        assert ds.kinds[1] == Discrete(("x", "z"))

    def test_many_distinct_values_infer_continuous(self):
        n = MAX_INFERRED_LEVELS + 1
        cols = {"y": list(range(n)), "a": [i + 0.5 for i in range(n)]}
        ds = validate_dataset(cols, outcome="y")
        assert ds.kinds[0] == Continuous()

    def test_few_distinct_values_infer_discrete_sorted(self):
        cols = {"y": [0.0, 1.0, 2.0], "a": [3.0, 1.0, 3.0]}
        ds = validate_dataset(cols, outcome="y")
        assert ds.kinds[0] == Discrete((1.0, 3.0))

    def test_explicit_kind_overrides_inference(self):
        cols = {"y": [0.0, 1.0, 2.0], "a": [0.0, 1.0, 1.0]}
        ds = validate_dataset(cols, outcome="y", kinds={"a": Continuous()})
        assert ds.kinds[0] == Continuous()

    def test_idempotent_on_dataset(self):
        ds = validate_dataset(small_columns(), outcome="y")
        again = validate_dataset(ds)
        assert again == ds

    def test_missing_outcome_column(self):
        with pytest.raises(ConfigError):
            validate_dataset({"a": [1, 2]}, outcome="y")

    def test_no_factor_columns(self):
        with pytest.raises(EmptyData):
            validate_dataset({"y": [1.0, 2.0]}, outcome="y")

    def test_no_rows(self):
        with pytest.raises(EmptyData):
            validate_dataset({"y": [], "a": []}, outcome="y")

    def test_single_row_rejected(self):
        with pytest.raises(TooFewObservations):
            validate_dataset({"y": [1.0], "a": [0.0]}, outcome="y")

    def test_length_mismatch(self):
        cols = {"y": [1.0, 2.0, 3.0], "a": [0.0, 1.0]}
        with pytest.raises(LengthMismatch):
            validate_dataset(cols, outcome="y")

    def test_two_dimensional_column_rejected(self):
        cols = {"y": [1.0, 2.0], "a": np.zeros((2, 2))}
        with pytest.raises(LengthMismatch):
            validate_dataset(cols, outcome="y")

    def test_nan_outcome(self):
        cols = {"y": [1.0, float("nan")], "a": [0.0, 1.0]}
        with pytest.raises(NonFiniteOutcome):
            validate_dataset(cols, outcome="y")

    def test_text_outcome(self):
        cols = {"y": ["lo", "hi"], "a": [0.0, 1.0]}
        with pytest.raises(NonFiniteOutcome):
            validate_dataset(cols, outcome="y")

    def test_nan_continuous_factor(self):
        cols = {"y": [1.0, 2.0], "a": [0.0, float("nan")]}
        with pytest.raises(NonFiniteValue):
            validate_dataset(cols, outcome="y", kinds={"a": Continuous()})

    def test_value_outside_declared_levels(self):
        cols = {"y": [1.0, 2.0], "a": [0.0, 2.0]}
        with pytest.raises(UnknownLevel) as exc:
            validate_dataset(cols, outcome="y", kinds={"a": Discrete((0.0, 1.0))})
        assert "'a'" in str(exc.value)

    def test_declared_levels_keep_their_order(self):
        cols = {"y": [1.0, 2.0], "a": ["hi", "lo"]}
        ds = validate_dataset(cols, outcome="y", kinds={"a": Discrete(("lo", "hi"))})
        assert ds.codes(0).tolist() == [1, 0]

    def test_duplicate_levels_rejected(self):
        with pytest.raises(ConfigError):
            Discrete((1.0, 1.0))

    def test_empty_levels_rejected(self):
        with pytest.raises(ConfigError):
            Discrete(())


class TestDatasetAccessors:
    def test_matrix_uses_codes_for_discrete(self):
        ds = validate_dataset(small_columns(), outcome="y")
        m = ds.matrix()
        assert m.shape == (4, 2)
        assert m[:, 1].tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_codes_requires_discrete(self):
        cols = {"y": [1.0, 2.0], "a": [0.25, 0.75]}
        ds = validate_dataset(cols, outcome="y", kinds={"a": Continuous()})
        with pytest.raises(ConfigError):
            ds.codes(0)

    def test_index_of(self):
        ds = validate_dataset(small_columns(), outcome="y")
        assert ds.index_of("b") == 1
        with pytest.raises(ConfigError):
            ds.index_of("missing")

    def test_to_columns_round_trip(self):
        ds = validate_dataset(small_columns(), outcome="y")
        again = validate_dataset(ds.to_columns())
        assert again.factor_names == ds.factor_names
        assert np.array_equal(again.outcome, ds.outcome)


class TestEstimandSpecs:
    def test_total_expansion_is_frozen(self):
        combo = expand_estimand(total(0, 2), 3)
        assert combo.terms == (
            (1, BuildingBlock(frozenset())),
            (-1, BuildingBlock(frozenset({0, 2}))),
        )

    def test_interaction_expansion_is_frozen(self):
        combo = expand_estimand(interaction(2, 0), 3)
        assert combo.terms == (
            (1, BuildingBlock(frozenset())),
            (-1, BuildingBlock(frozenset({0}))),
            (-1, BuildingBlock(frozenset({2}))),
            (1, BuildingBlock(frozenset({0, 2}))),
        )

    def test_out_of_range_factor(self):
        with pytest.raises(ConfigError):
            expand_estimand(total(3), 3)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            EstimandSpec("ratio", frozenset({0}))

    def test_empty_factor_set(self):
        with pytest.raises(ConfigError):
            total()

    def test_interaction_needs_two_distinct(self):
        with pytest.raises(ConfigError):
            interaction(1, 1)

    def test_negative_index(self):
        with pytest.raises(ConfigError):
            total(-1)

    def test_labels(self):
        names = ("W1", "W2", "W3")
        assert total(0, 2).label(names) == "total:W1,W3"
        assert total(0, 2).label() == "total:1,3"
        assert interaction(2, 0).label(names) == "interaction:W1,W3"

    @given(
        st.integers(min_value=1, max_value=6).flatmap(
            lambda k: st.tuples(
                st.just(k),
                st.sets(st.integers(0, k - 1), min_size=1, max_size=k),
            )
        )
    )
    def test_total_signs_cancel(self, k_and_subset):
        num_factors, subset = k_and_subset
        combo = expand_estimand(total(*subset), num_factors)
        assert sum(s for s, _ in combo.terms) == 0
        assert combo.terms[0] == (1, BuildingBlock(frozenset()))


class TestAnchoredDecomposition:
    def blocks_to_maps(self, block, target):
        # totals are block({}) - block(S); higher-order terms alternate over
        # all subsets; both families are exact functionals of one block map
        subsets = []
        items = sorted(target)
        for mask in range(1, 1 << len(items)):
            subsets.append(frozenset(items[i] for i in range(len(items)) if mask >> i & 1))
        totals = {s: block[frozenset()] - block[s] for s in subsets}
        interactions = {}
        for s in subsets:
            if len(s) < 2:
                continue
            inner = sorted(s)
            value = block[frozenset()]
            for mask in range(1, 1 << len(inner)):
                sub = frozenset(inner[i] for i in range(len(inner)) if mask >> i & 1)
                value += (-1.0) ** len(sub) * block[sub]
            interactions[s] = value
        return totals, interactions

    @given(
        st.integers(min_value=2, max_value=4).flatmap(
            lambda k: st.lists(
                st.floats(min_value=0.0, max_value=10.0, allow_nan=False),
                min_size=2**k,
                max_size=2**k,
            ).map(lambda vals: (k, vals))
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_consistent_maps_have_zero_residual(self, k_and_vals):
        k, vals = k_and_vals
        target = frozenset(range(k))
        items = sorted(target)
        block = {frozenset(): vals[0]}
        for mask in range(1, 1 << k):
            block[frozenset(items[i] for i in range(k) if mask >> i & 1)] = vals[mask]
        totals, interactions = self.blocks_to_maps(block, target)
        assert anchored_decomposition_check(totals, interactions, target) < 1e-9

    def test_perturbation_is_detected(self):
        block = {
            frozenset(): 4.0,
            frozenset({0}): 1.0,
            frozenset({1}): 2.0,
            frozenset({0, 1}): 0.5,
        }
        totals, interactions = self.blocks_to_maps(block, frozenset({0, 1}))
        assert anchored_decomposition_check(totals, interactions, (0, 1)) == 0.0
        totals[frozenset({0, 1})] += 0.1
        residual = anchored_decomposition_check(totals, interactions, (0, 1))
        assert residual == pytest.approx(0.1)

    def test_singleton_may_live_in_interactions_map(self):
        block = {
            frozenset(): 4.0,
            frozenset({0}): 1.0,
            frozenset({1}): 2.0,
            frozenset({0, 1}): 0.5,
        }
        totals, interactions = self.blocks_to_maps(block, frozenset({0, 1}))
        interactions[frozenset({0})] = totals.pop(frozenset({0}))
        assert anchored_decomposition_check(totals, interactions, (0, 1)) == 0.0

    def test_missing_target(self):
        with pytest.raises(MissingSubset):
            anchored_decomposition_check({}, {}, (0, 1))

    def test_missing_pair_term(self):
        totals = {frozenset({0, 1}): 1.0, frozenset({0}): 0.5, frozenset({1}): 0.5}
        with pytest.raises(MissingSubset):
            anchored_decomposition_check(totals, {}, (0, 1))

    def test_missing_singleton_term(self):
        totals = {frozenset({0, 1}): 1.0, frozenset({0}): 0.5}
        with pytest.raises(MissingSubset):
            anchored_decomposition_check(totals, {frozenset({0, 1}): 0.0}, (0, 1))
