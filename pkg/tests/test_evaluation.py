"""Tests for synthetic generation and the offline evaluation studies."""

import math
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.evaluation import (  # noqa: E402
    CURVE_COLUMNS,
    POLICY_COLUMNS,
    WEIGHT_COLUMNS,
    PolicySet,
    aa_pvalues,
    check_curve,
    check_policy_table,
    context_curve,
    policy_choices,
    policy_compare,
    run_policy_study,
    sample_sends,
    select_k,
    two_proportion_ztest,
    uniformity_pvalue,
    weight_analysis,
    weight_correlation,
)
from core.features import read_examples  # noqa: E402
from core.graph_scoring import select_candidates  # noqa: E402
from core.mixture import em_fit  # noqa: E402
from core.synthetic import (  # noqa: E402
    SyntheticSpec,
    default_planted_params,
    generate_synthetic,
    planted_examples,
    random_params,
    split_examples,
    write_synthetic,
)
from models.params import FitConfig, MixtureParams  # noqa: E402
from models.schema import default_schema  # noqa: E402

SLOW = os.environ.get("PUSHMIX_SLOW_TESTS") == "1"

SMALL_SPEC = dict(users=60, items=40, categories=8, impressions=800, seed=3)


class SyntheticFixture(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.dataset = generate_synthetic(SyntheticSpec(**SMALL_SPEC))
        cls.truth = cls.dataset.truth


class TestSynthetic(SyntheticFixture):

    def test_same_spec_same_dataset(self):
        again = generate_synthetic(SyntheticSpec(**SMALL_SPEC))
        self.assertEqual(again.impressions, self.dataset.impressions)
        self.assertEqual(again.events, self.dataset.events)
        np.testing.assert_array_equal(again.batch.x, self.dataset.batch.x)

    def test_examples_match_schema(self):
        batch = self.dataset.batch
        self.assertEqual(batch.m, self.dataset.schema.assignment_dims)
        self.assertEqual(batch.n, self.dataset.schema.prediction_dims)
        self.assertEqual(batch.schema_hash, self.dataset.schema.schema_hash)
        self.assertTrue(all(imp.timestamp > self.dataset.ref_time for imp in self.dataset.impressions))
        self.assertTrue(all(e.timestamp < self.dataset.ref_time for e in self.dataset.events))

    def test_flat_single_context_opens_half(self):
        schema = default_schema()
        spec = SyntheticSpec(**{**SMALL_SPEC, "impressions": 4000, "contexts": 1, "seed": 5},
                             planted_theta=[], planted_psi=[[0.0] * schema.prediction_dims])
        dataset = generate_synthetic(spec, schema)
        record = dataset.ground_truth_record()
        self.assertAlmostEqual(record["open_rate"], 0.5, delta=0.03)
        self.assertEqual(record["context_counts"], [len(dataset.impressions)])
        impression = dataset.impressions[0]
        self.assertAlmostEqual(
            dataset.truth.open_probability(impression.user_id, impression.anchor_item_id, impression.pushed_item_id),
            0.5)

    def test_write_synthetic(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_synthetic(self.dataset, Path(tmp) / "synth")
            self.assertEqual(set(paths), {"events", "impressions", "catalog", "demographics", "schema",
                                          "examples", "ground_truth"})
            for path in paths.values():
                self.assertTrue(Path(path).exists())
            self.assertEqual(len(read_examples(paths["examples"])), len(self.dataset.examples))

    def test_spec_validation(self):
        with self.assertRaises(ValueError):
            SyntheticSpec(items=3, categories=5)
        with self.assertRaises(ValueError):
            SyntheticSpec(noise=1.5)
        with self.assertRaises(ValueError):
            SyntheticSpec.from_dict({"users": 10, "shops": 2})


class TestSplit(unittest.TestCase):

    def test_disjoint_and_deterministic(self):
        batch = planted_examples(200, random_params(2, 3, 3, seed=1), seed=1).batch
        train, valid = split_examples(batch, 0.25, seed=4)
        self.assertEqual((len(train), len(valid)), (150, 50))
        train_keys = {tuple(row) for row in train.x_hat}
        valid_keys = {tuple(row) for row in valid.x_hat}
        self.assertEqual(train_keys & valid_keys, set())
        self.assertEqual(len(train_keys | valid_keys), 200)
        again, _ = split_examples(batch, 0.25, seed=4)
        np.testing.assert_array_equal(again.x, train.x)

    def test_empty_side(self):
        batch = planted_examples(3, random_params(1, 2, 2), seed=0).batch
        with self.assertRaises(ValueError):
            split_examples(batch, 0.0)
        with self.assertRaises(ValueError):
            split_examples(batch, 1.0)


class TestContextCurve(SyntheticFixture):

    def test_curve_cells(self):
        config = FitConfig(restarts=1, max_iter=25, seed=1)
        curve = context_curve(self.dataset.batch, self.dataset.schema, k_max=2, config=config, seed=1)
        self.assertEqual(list(curve.columns), CURVE_COLUMNS)
        self.assertEqual(len(curve), 6)
        single = curve.loc[curve["k"] == 1, "valid_loglik"]
        self.assertLess(single.max() - single.min(), 1e-6)
        self.assertEqual(check_curve(curve), [])

        threaded = context_curve(self.dataset.batch, self.dataset.schema, k_max=2, config=config, seed=1, n_jobs=3)
        pd.testing.assert_frame_equal(curve, threaded)

    def test_select_k(self):
        curve = pd.DataFrame({
            "feature_set": ["full"] * 4 + ["user-only"] * 2,
            "k": [1, 2, 3, 4, 1, 2],
            "valid_loglik": [-0.60, -0.55, -0.549, -0.40, -0.60, -0.50],
        })
        self.assertEqual(select_k(curve), 2)
        self.assertEqual(select_k(curve, "user-only"), 2)
        self.assertEqual(select_k(curve, "full", threshold=0.0001), 4)
        self.assertEqual(select_k(curve, "product-only"), 1)

    def test_check_curve_flags(self):
        curve = pd.DataFrame({
            "feature_set": ["full", "user-only"],
            "k": [1, 1],
            "valid_loglik": [-0.6, -0.5],
            "monotonic": [True, False],
        })
        self.assertEqual(len(check_curve(curve)), 2)


class TestWeightAnalysis(unittest.TestCase):

    def setUp(self):
        self.schema = default_schema()

    def test_single_context_is_empty(self):
        table = weight_analysis(MixtureParams.zeros(1, self.schema.assignment_dims, self.schema.prediction_dims),
                                self.schema)
        self.assertTrue(table.empty)
        self.assertEqual(list(table.columns), WEIGHT_COLUMNS)
        self.assertTrue(math.isnan(weight_correlation(table)))

    def test_planted_ordering(self):
        table = weight_analysis(default_planted_params(self.schema, 3), self.schema)
        self.assertEqual(table["context"].tolist(), [0, 1, 2])
        np.testing.assert_allclose(table["active_score_weight"], [16.0, 8.0, 0.0])
        np.testing.assert_allclose(table["user_product_effect"], [3.0, 1.5, 0.0])
        np.testing.assert_allclose(table["product_product_effect"], [0.5, 4.5, 8.5])
        self.assertAlmostEqual(weight_correlation(table), 1.0)
        self.assertAlmostEqual(weight_correlation(table, "product_product_effect"), -1.0)

    def test_planted_sales_effect_flips(self):
        params = default_planted_params(self.schema, 3)
        sales = [i for i, name in enumerate(self.schema.prediction_names) if name.startswith("sales_")]
        self.assertEqual(len(sales), 4)
        np.testing.assert_allclose(-params.psi[:, sales].sum(axis=1), [4.0, 0.0, -4.0])


class TestFittedWeightAnalysis(SyntheticFixture):

    def test_fitted_two_context_model(self):
        result = em_fit(self.dataset.batch, FitConfig(contexts=2, restarts=1, max_iter=30, seed=0))
        table = weight_analysis(result.params, self.dataset.schema)
        self.assertEqual(list(table.columns), WEIGHT_COLUMNS)
        self.assertEqual(table["context"].tolist(), [0, 1])
        self.assertEqual(table.loc[1, "active_score_weight"], 0.0)
        self.assertTrue(np.isfinite(table[WEIGHT_COLUMNS[1:]].to_numpy()).all())
        self.assertNotEqual(table.loc[0, "active_score_weight"], 0.0)
        self.assertAlmostEqual(abs(weight_correlation(table)), 1.0)


class TestSignificance(unittest.TestCase):

    def test_ztest_values(self):
        z, p = two_proportion_ztest(50, 100, 60, 100)
        self.assertAlmostEqual(z, 1.42134, delta=1e-4)
        self.assertAlmostEqual(p, 0.1552, delta=1e-3)
        z_swapped, p_swapped = two_proportion_ztest(60, 100, 50, 100)
        self.assertAlmostEqual(z_swapped, -z)
        self.assertAlmostEqual(p_swapped, p)

    def test_ztest_degenerate(self):
        self.assertEqual(two_proportion_ztest(30, 100, 30, 100), (0.0, 1.0))
        self.assertEqual(two_proportion_ztest(0, 100, 0, 100), (0.0, 1.0))
        self.assertEqual(two_proportion_ztest(0, 0, 5, 10), (0.0, 1.0))

    def test_aa_pvalues_are_uniform(self):
        pvalues = aa_pvalues(np.full(500, 0.3), replicates=200, seed=8)
        self.assertTrue(((pvalues >= 0) & (pvalues <= 1)).all())
        self.assertGreater(uniformity_pvalue(pvalues), 0.001)
        np.testing.assert_array_equal(pvalues, aa_pvalues(np.full(500, 0.3), replicates=200, seed=8))

    def test_uniformity_pvalue(self):
        self.assertGreater(uniformity_pvalue(np.linspace(0.005, 0.995, 100)), 0.5)
        self.assertLess(uniformity_pvalue(np.full(100, 0.01)), 1e-6)


class TestPolicyCompare(SyntheticFixture):

    def setUp(self):
        self.bought = self.dataset.purchases_by_user()
        self.sends = sample_sends(self.bought, 300, seed=2)
        self.policies = PolicySet(self.truth)

    def test_sample_sends(self):
        self.assertEqual(len(self.sends), 300)
        for user, anchor in self.sends:
            self.assertIn(anchor, self.bought[user])
        self.assertEqual(sample_sends(self.bought, 300, seed=2), self.sends)
        self.assertEqual(sample_sends({}, 5), [])

    def test_aa_rows_agree(self):
        policies = {"popularity": self.policies.popularity, "popularity_aa": self.policies.popularity}
        table = policy_compare(self.truth, self.sends, policies, seed=1, include_oracle=False)
        self.assertEqual(list(table.columns), POLICY_COLUMNS)
        self.assertEqual(table["policy"].tolist(), ["popularity", "popularity_aa"])
        self.assertEqual(table["opens"].iloc[0], table["opens"].iloc[1])
        np.testing.assert_allclose(table["relative_open_rate"], [1.0, 1.0])
        np.testing.assert_allclose(table["p_value"], [1.0, 1.0])

    def test_independent_aa_arm(self):
        policies = {"popularity": self.policies.popularity, "popularity_aa": self.policies.popularity}
        table = policy_compare(self.truth, self.sends, policies, seed=1, include_oracle=False,
                               independent=("popularity_aa",))
        rng = np.random.default_rng(1)
        shared, own = rng.random(len(self.sends)), rng.random(len(self.sends))
        probs = np.array([self.truth.open_probability(user, anchor, self.policies.popularity(user, anchor))
                          for user, anchor in self.sends])
        self.assertEqual(table["opens"].tolist(), [int((shared < probs).sum()), int((own < probs).sum())])
        self.assertEqual(table["expected_open_rate"].iloc[0], table["expected_open_rate"].iloc[1])
        self.assertTrue(table["p_value"].between(0.0, 1.0).all())

    def test_oracle_best_on_every_send(self):
        policies = {
            "popularity": self.policies.popularity,
            "ppr_proxy": self.policies.ppr_proxy,
            "cpr_rule": self.policies.cpr_rule,
        }
        choices = policy_choices(self.truth, self.sends, policies)
        self.assertEqual(list(choices), ["popularity", "ppr_proxy", "cpr_rule", "oracle"])
        sources = self.truth.sources
        beyond_picks = 0
        for idx, (user, anchor) in enumerate(self.sends):
            oracle = choices["oracle"][idx]
            self.assertIsNotNone(oracle)
            best = self.truth.open_probability(user, anchor, oracle)
            for name in policies:
                item = choices[name][idx]
                if item is not None:
                    self.assertGreaterEqual(best, self.truth.open_probability(user, anchor, item))
            candidates = [pair.candidate for pair in select_candidates(sources.product_scores, anchor)
                          if pair.candidate != anchor and sources.is_known_item(pair.candidate)]
            for item in candidates:
                self.assertGreaterEqual(best, self.truth.open_probability(user, anchor, item))
            beyond_picks += oracle not in {choices[name][idx] for name in policies}
        self.assertGreater(beyond_picks, 0)

    def test_oracle_dominates(self):
        policies = {
            "popularity": self.policies.popularity,
            "ppr_proxy": self.policies.ppr_proxy,
            "cpr_rule": self.policies.cpr_rule,
        }
        table = policy_compare(self.truth, self.sends, policies, seed=1)
        self.assertEqual(table["policy"].iloc[-1], "oracle")
        oracle = table.iloc[-1]
        self.assertTrue((table["expected_open_rate"] <= oracle["expected_open_rate"] + 1e-12).all())
        self.assertTrue((table["opens"] <= oracle["opens"]).all())
        self.assertEqual(check_policy_table(table), [])

    def test_choices_avoid_anchor(self):
        for user, anchor in self.sends[:50]:
            for chooser in (self.policies.popularity, self.policies.ppr_proxy, self.policies.cpr_rule):
                self.assertNotEqual(chooser(user, anchor), anchor)

    def test_policy_study(self):
        config = FitConfig(restarts=1, max_iter=20, seed=0)
        table = run_policy_study(self.truth, self.dataset.batch, self.sends, k_hat=2, config=config, seed=1)
        self.assertEqual(table["policy"].tolist(),
                         ["popularity", "popularity_aa", "ppr_proxy", "cpr_rule", "cpr_mm_1", "cpr_mm_k", "oracle"])
        self.assertEqual(table.loc[0, "expected_open_rate"], table.loc[1, "expected_open_rate"])
        self.assertEqual(check_policy_table(table), [])


@unittest.skipUnless(SLOW, "set PUSHMIX_SLOW_TESTS=1 for the full-size studies")
class TestFullSizeStudy(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.dataset = generate_synthetic(SyntheticSpec())

    def test_context_curve_thresholds(self):
        curve = context_curve(self.dataset.batch, self.dataset.schema, k_max=3,
                              feature_sets=("full", "product-only"), config=FitConfig(restarts=3, seed=0))
        self.assertEqual(check_curve(curve), [])
        product_rows = curve[curve["feature_set"] == "product-only"]
        self.assertEqual(product_rows["k"].tolist(), [1, 2, 3])
        self.assertTrue((product_rows["iterations"] >= 1).all())
        self.assertTrue(product_rows["monotonic"].all())

        full = curve[curve["feature_set"] == "full"].set_index("k")["valid_loglik"]
        product_only = product_rows.set_index("k")["valid_loglik"]
        self.assertGreater(full[2] - full[1], 0.02)
        self.assertLess(full[3] - full[2], 0.002)
        self.assertGreater(full[2] - product_only[2], 0.01)
        self.assertEqual(select_k(curve), 2)

    def test_policy_ordering(self):
        sends = sample_sends(self.dataset.purchases_by_user(), 100_000, seed=0)
        table = run_policy_study(self.dataset.truth, self.dataset.batch, sends, k_hat=2,
                                 config=FitConfig(restarts=2, seed=0), seed=0, aa_row=False)
        self.assertEqual(table["policy"].tolist(),
                         ["popularity", "ppr_proxy", "cpr_rule", "cpr_mm_1", "cpr_mm_k", "oracle"])
        expected = table["expected_open_rate"].tolist()
        self.assertEqual(expected, sorted(expected))
        mixture = table.set_index("policy").loc["cpr_mm_k"]
        self.assertGreater(mixture["expected_open_rate"],
                           table.set_index("policy").loc["cpr_mm_1", "expected_open_rate"])
        self.assertLess(mixture["p_value"], 0.05)


if __name__ == "__main__":
    unittest.main()
