"""Tests for purchase/view graphs, pair scores and candidate selection."""

import math
import random
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.graph_scoring import (  # noqa: E402
    NodeKind,
    ScoreKind,
    ScoreTable,
    build_graph,
    build_score_tables,
    co_purchase_scores,
    complementarity_scores,
    cosine_scores,
    read_score_table_csv,
    select_candidates,
    substitutivity_scores,
    write_score_table_csv,
)
from models.events import EventKind, InteractionEvent  # noqa: E402

BUY = EventKind.PURCHASE
VIEW = EventKind.VIEW


def ev(user, item, kind, t, category=None):
    return InteractionEvent(user, item, category or f"c_{item}", kind, t)


def random_log(rng, users=6, items=5, events=30):
    return [
        ev(f"u{rng.randrange(users)}", f"i{rng.randrange(items)}", rng.choice([BUY, VIEW]), rng.randint(1, 12))
        for _ in range(events)
    ]


def brute_force_p(events):
    """Direct evaluation of the co-purchase formula from raw events."""
    first = {}
    for e in events:
        if e.kind is BUY:
            key = (e.user_id, e.item_id)
            first[key] = min(first.get(key, e.timestamp), e.timestamp)
    users = {u for u, _ in first}
    items = {i for _, i in first}
    scores = {}
    for i in items:
        for j in items:
            count = sum(1 for u in users if (u, i) in first and (u, j) in first and first[(u, j)] > first[(u, i)])
            if count:
                deg_i = sum(1 for u in users if (u, i) in first)
                deg_j = sum(1 for u in users if (u, j) in first)
                scores[(i, j)] = count / math.sqrt(deg_i * deg_j)
    return scores


def brute_force_q(events):
    bought, viewed = {}, {}
    for e in events:
        target = bought if e.kind is BUY else viewed
        key = (e.user_id, e.item_id)
        target[key] = min(target.get(key, e.timestamp), e.timestamp)
    scores = {}
    view_items = {i for _, i in viewed}
    buy_items = {j for _, j in bought}
    users = {u for u, _ in viewed} | {u for u, _ in bought}
    for i in view_items:
        for j in buy_items:
            count = sum(1 for u in users if (u, i) in viewed and (u, j) in bought and bought[(u, j)] > viewed[(u, i)])
            if count:
                deg_i = sum(1 for u in users if (u, i) in viewed)
                deg_j = sum(1 for u in users if (u, j) in bought)
                scores[(i, j)] = count / math.sqrt(deg_i * deg_j)
    return scores


class TestBuildGraph(unittest.TestCase):

    def test_earliest_timestamp_kept(self):
        graph = build_graph([ev("u", "i", BUY, 9), ev("u", "i", BUY, 5)], BUY, NodeKind.PRODUCT)
        self.assertEqual(graph.entries, {("u", "i"): 5})

    def test_no_purchases(self):
        graph = build_graph([ev("u", "i", VIEW, 1)], BUY, NodeKind.PRODUCT)
        self.assertEqual(len(graph), 0)

    def test_disjoint_users(self):
        graph = build_graph([ev("a", "i", BUY, 1), ev("b", "j", BUY, 2)], BUY, NodeKind.PRODUCT)
        self.assertEqual(len(graph), 2)
        self.assertEqual(graph.degrees(), {"i": 1, "j": 1})

    def test_category_nodes(self):
        events = [ev("u", "i1", BUY, 1, "shoes"), ev("u", "i2", BUY, 3, "shoes")]
        graph = build_graph(events, BUY, NodeKind.CATEGORY)
        self.assertEqual(graph.entries, {("u", "shoes"): 1})


class TestCoPurchase(unittest.TestCase):

    def test_two_users_example(self):
        events = [ev("A", "i", BUY, 1), ev("A", "j", BUY, 2), ev("B", "i", BUY, 3)]
        table = co_purchase_scores(build_graph(events, BUY, NodeKind.PRODUCT))
        self.assertAlmostEqual(table.get("i", "j"), 1 / math.sqrt(2), places=12)
        self.assertEqual(table.get("j", "i"), 0.0)
        self.assertNotIn(("j", "i"), table.scores)

    def test_equal_timestamps_contribute_nothing(self):
        events = [ev("u", "i", BUY, 1), ev("u", "j", BUY, 1)]
        table = co_purchase_scores(build_graph(events, BUY, NodeKind.PRODUCT))
        self.assertEqual(len(table), 0)

    def test_saturation(self):
        events = []
        for u in range(7):
            events += [ev(f"u{u}", "i", BUY, 1), ev(f"u{u}", "j", BUY, 2)]
        table = co_purchase_scores(build_graph(events, BUY, NodeKind.PRODUCT))
        self.assertAlmostEqual(table.get("i", "j"), 1.0, places=12)

    def test_view_graph_rejected(self):
        with self.assertRaises(ValueError):
            co_purchase_scores(build_graph([ev("u", "i", VIEW, 1)], VIEW, NodeKind.PRODUCT))

    def test_matches_brute_force(self):
        rng = random.Random(11)
        for _ in range(60):
            events = random_log(rng)
            table = co_purchase_scores(build_graph(events, BUY, NodeKind.PRODUCT))
            expected = brute_force_p(events)
            self.assertEqual(set(table.scores), set(expected))
            for pair, value in expected.items():
                self.assertAlmostEqual(table.scores[pair], value, delta=1e-10 * max(1.0, abs(value)))


class TestSubstitutivity(unittest.TestCase):

    def test_view_then_buy(self):
        events = [ev("u", "i", VIEW, 1), ev("u", "j", BUY, 2)]
        table = substitutivity_scores(build_graph(events, VIEW, NodeKind.PRODUCT),
                                      build_graph(events, BUY, NodeKind.PRODUCT))
        self.assertAlmostEqual(table.get("i", "j"), 1.0)

    def test_buy_then_view(self):
        events = [ev("u", "j", BUY, 1), ev("u", "i", VIEW, 2)]
        table = substitutivity_scores(build_graph(events, VIEW, NodeKind.PRODUCT),
                                      build_graph(events, BUY, NodeKind.PRODUCT))
        self.assertEqual(table.get("i", "j"), 0.0)

    def test_disjoint_populations(self):
        events = [ev("a", "i", VIEW, 1), ev("b", "j", BUY, 2)]
        table = substitutivity_scores(build_graph(events, VIEW, NodeKind.PRODUCT),
                                      build_graph(events, BUY, NodeKind.PRODUCT))
        self.assertEqual(len(table), 0)

    def test_node_kind_mismatch(self):
        events = [ev("u", "i", VIEW, 1), ev("u", "j", BUY, 2)]
        with self.assertRaises(ValueError):
            substitutivity_scores(build_graph(events, VIEW, NodeKind.PRODUCT),
                                  build_graph(events, BUY, NodeKind.CATEGORY))

    def test_matches_brute_force(self):
        rng = random.Random(5)
        for _ in range(60):
            events = random_log(rng)
            table = substitutivity_scores(build_graph(events, VIEW, NodeKind.PRODUCT),
                                          build_graph(events, BUY, NodeKind.PRODUCT))
            expected = brute_force_q(events)
            self.assertEqual(set(table.scores), set(expected))
            for pair, value in expected.items():
                self.assertAlmostEqual(table.scores[pair], value, delta=1e-10 * max(1.0, abs(value)))


class TestComplementarity(unittest.TestCase):

    def table(self, kind, scores):
        return ScoreTable(kind, NodeKind.PRODUCT, dict(scores))

    def test_subtraction(self):
        s = complementarity_scores(self.table(ScoreKind.CO_PURCHASE, {("i", "j"): 0.7}),
                                   self.table(ScoreKind.SUBSTITUTIVITY, {("i", "j"): 0.2}))
        self.assertAlmostEqual(s.get("i", "j"), 0.5)

    def test_absent_p(self):
        s = complementarity_scores(self.table(ScoreKind.CO_PURCHASE, {}),
                                   self.table(ScoreKind.SUBSTITUTIVITY, {("i", "j"): 0.3}))
        self.assertAlmostEqual(s.get("i", "j"), -0.3)

    def test_both_empty(self):
        s = complementarity_scores(self.table(ScoreKind.CO_PURCHASE, {}), self.table(ScoreKind.SUBSTITUTIVITY, {}))
        self.assertEqual(len(s), 0)

    def test_mismatched_node_kinds(self):
        p = self.table(ScoreKind.CO_PURCHASE, {})
        q = ScoreTable(ScoreKind.SUBSTITUTIVITY, NodeKind.CATEGORY, {})
        with self.assertRaises(ValueError):
            complementarity_scores(p, q)

    def test_wrong_kinds(self):
        with self.assertRaises(ValueError):
            complementarity_scores(self.table(ScoreKind.SUBSTITUTIVITY, {}), self.table(ScoreKind.SUBSTITUTIVITY, {}))

    def test_antitone_in_q(self):
        p = self.table(ScoreKind.CO_PURCHASE, {("i", "j"): 0.6})
        low = complementarity_scores(p, self.table(ScoreKind.SUBSTITUTIVITY, {("i", "j"): 0.1}))
        high = complementarity_scores(p, self.table(ScoreKind.SUBSTITUTIVITY, {("i", "j"): 0.4}))
        self.assertLessEqual(high.get("i", "j"), low.get("i", "j"))


class TestScoreProperties(unittest.TestCase):

    def test_bounds_on_random_logs(self):
        rng = random.Random(2024)
        for _ in range(100):
            s = build_score_tables(random_log(rng, users=8, items=6, events=40), NodeKind.PRODUCT)
            for value in s.co_purchase.scores.values():
                self.assertGreaterEqual(value, 0.0)
                self.assertLessEqual(value, 1.0 + 1e-12)
            for value in s.substitutivity.scores.values():
                self.assertGreaterEqual(value, 0.0)
                self.assertLessEqual(value, 1.0 + 1e-12)
            for (i, j), value in s.scores.items():
                self.assertGreaterEqual(value, -1.0 - 1e-12)
                self.assertLessEqual(value, 1.0 + 1e-12)
                p, q = s.components(i, j)
                self.assertAlmostEqual(value, p - q, delta=1e-12)

    def test_time_split_bounded_by_cosine(self):
        rng = random.Random(9)
        for _ in range(50):
            graph = build_graph(random_log(rng), BUY, NodeKind.PRODUCT)
            p = co_purchase_scores(graph)
            cosine = cosine_scores(graph)
            for (i, j), value in cosine.items():
                self.assertLessEqual(p.get(i, j) + p.get(j, i), value + 1e-12)

    def test_cosine_equality_with_distinct_times(self):
        events = [ev("a", "i", BUY, 1), ev("a", "j", BUY, 2), ev("b", "j", BUY, 3), ev("b", "i", BUY, 4)]
        graph = build_graph(events, BUY, NodeKind.PRODUCT)
        p = co_purchase_scores(graph)
        self.assertAlmostEqual(p.get("i", "j") + p.get("j", "i"), cosine_scores(graph)[("i", "j")])

    def test_window_restricts_events(self):
        events = [ev("u", "i", BUY, 1), ev("u", "j", BUY, 2), ev("v", "i", BUY, 10), ev("v", "k", BUY, 11)]
        s = build_score_tables(events, NodeKind.PRODUCT, start=5)
        self.assertEqual(set(s.scores), {("i", "k")})
        s = build_score_tables(events, NodeKind.PRODUCT, end=5)
        self.assertEqual(set(s.scores), {("i", "j")})


class TestSelectCandidates(unittest.TestCase):

    def setUp(self):
        p = ScoreTable(ScoreKind.CO_PURCHASE, NodeKind.PRODUCT,
                       {("a", "x"): 0.5, ("a", "y"): 0.5, ("a", "z"): 0.9, ("a", "w"): 0.3, ("b", "x"): 0.2})
        q = ScoreTable(ScoreKind.SUBSTITUTIVITY, NodeKind.PRODUCT, {("a", "z"): 0.2, ("a", "w"): 0.5})
        self.s = complementarity_scores(p, q)

    def test_no_filtering_sorted(self):
        pairs = select_candidates(self.s, "a", min_s=-1.0, max_q=1.0, top_n=1000)
        self.assertEqual([pair.candidate for pair in pairs], ["z", "x", "y", "w"])

    def test_threshold_above_all(self):
        self.assertEqual(select_candidates(self.s, "a", min_s=2.0, max_q=1.0, top_n=10), [])

    def test_equal_scores_by_id(self):
        pairs = select_candidates(self.s, "a", min_s=0.5, max_q=1.0, top_n=10)
        self.assertEqual([pair.candidate for pair in pairs], ["z", "x", "y"])
        self.assertEqual(pairs[1].complementarity, pairs[2].complementarity)

    def test_max_q_filter_and_components(self):
        pairs = select_candidates(self.s, "a", min_s=-1.0, max_q=0.1, top_n=10)
        self.assertEqual([pair.candidate for pair in pairs], ["x", "y"])
        pair = select_candidates(self.s, "a", min_s=-1.0, max_q=1.0, top_n=1)[0]
        self.assertAlmostEqual(pair.complementarity, pair.co_purchase - pair.substitutivity, delta=1e-12)

    def test_unknown_anchor(self):
        self.assertEqual(select_candidates(self.s, "nope"), [])

    def test_bad_top_n(self):
        with self.assertRaises(ValueError):
            select_candidates(self.s, "a", top_n=0)

    def test_matches_exhaustive_filter_and_sort(self):
        rng = random.Random(3)
        for _ in range(40):
            s = build_score_tables(random_log(rng, users=7, items=7, events=35), NodeKind.PRODUCT)
            min_s, max_q, top_n = rng.uniform(-0.5, 0.5), rng.uniform(0.0, 1.0), rng.randint(1, 6)
            for anchor in {i for i, _ in s.scores}:
                expected = sorted(
                    [(j, value) for (i, j), value in s.scores.items()
                     if i == anchor and value >= min_s and s.substitutivity.get(i, j) <= max_q],
                    key=lambda item: (-item[1], item[0]))[:top_n]
                got = select_candidates(s, anchor, min_s=min_s, max_q=max_q, top_n=top_n)
                self.assertEqual([pair.candidate for pair in got], [j for j, _ in expected])


class TestScoreCsv(unittest.TestCase):

    def test_round_trip_six_digits(self):
        events = [ev("A", "i", BUY, 1), ev("A", "j", BUY, 2), ev("B", "i", BUY, 3), ev("B", "k", VIEW, 1)]
        s = build_score_tables(events, NodeKind.PRODUCT)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scores.csv"
            write_score_table_csv(s, path)
            header = path.read_text().splitlines()[0]
            self.assertEqual(header, "i,j,p,q,s")
            loaded = read_score_table_csv(path)
        self.assertEqual(set(loaded.scores), set(s.scores))
        for pair, value in s.scores.items():
            self.assertAlmostEqual(loaded.scores[pair], value, delta=1e-5)
            self.assertAlmostEqual(loaded.components(*pair)[1], s.components(*pair)[1], delta=1e-5)


if __name__ == "__main__":
    unittest.main()
