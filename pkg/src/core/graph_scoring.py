"""
Graph Scoring Module

Builds binarized user-node purchase and view graphs (earliest timestamp per
user/node pair) and derives the time-ordered pair scores:

    co-purchase     p_ij = #{u bought i, then later j} / sqrt(deg(i) deg(j))
    substitutivity  q_ij = #{u viewed i, then later bought j} / sqrt(viewdeg(i) buydeg(j))
    complementarity s_ij = p_ij - q_ij

Nodes are products or categories; category graphs route events through
their category_id. Zero-numerator pairs are left out of the tables and read
as 0.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import pandas as pd

from config.settings import SCORING_CONFIG, format_error_message
from models.events import EventKind, InteractionEvent

from .file_utils import write_frame_csv
from .ingestion import filter_window, time_range

# Configure logging
logger = logging.getLogger(__name__)

Pair = Tuple[str, str]


class NodeKind(Enum):
    PRODUCT = "product"
    CATEGORY = "category"


class ScoreKind(Enum):
    CO_PURCHASE = "co_purchase"
    SUBSTITUTIVITY = "substitutivity"
    COMPLEMENTARITY = "complementarity"


@dataclass(frozen=True)
class BipartiteGraph:
    """Binarized user-node graph: (user_id, node_id) -> first-event timestamp."""

    entries: Dict[Pair, int]
    node_kind: NodeKind
    edge_kind: EventKind

    def __len__(self):
        return len(self.entries)

    def degrees(self) -> Dict[str, int]:
        """Number of distinct users per node."""
        degree: Dict[str, int] = defaultdict(int)
        for _, node in self.entries:
            degree[node] += 1
        return dict(degree)

    def by_user(self) -> Dict[str, List[Tuple[str, int]]]:
        """Per-user (node, timestamp) lists ordered by timestamp, then node id."""
        grouped: Dict[str, List[Tuple[str, int]]] = defaultdict(list)
        for (user, node), stamp in self.entries.items():
            grouped[user].append((node, stamp))
        return {user: sorted(items, key=lambda item: (item[1], item[0])) for user, items in grouped.items()}


@dataclass
class ScoreTable:
    """
    Sparse directional pair scores; (i, j) and (j, i) are independent entries.
    A complementarity table keeps references to the p and q tables it came from.
    """

    kind: ScoreKind
    node_kind: NodeKind
    scores: Dict[Pair, float] = field(default_factory=dict)
    co_purchase: Optional["ScoreTable"] = None
    substitutivity: Optional["ScoreTable"] = None
    _rows: Optional[Dict[str, Dict[str, float]]] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self):
        return len(self.scores)

    def get(self, i: str, j: str) -> float:
        return self.scores.get((i, j), 0.0)

    def row(self, anchor: str) -> Dict[str, float]:
        """All stored scores with the given first node."""
        if self._rows is None:
            rows: Dict[str, Dict[str, float]] = defaultdict(dict)
            for (i, j), value in self.scores.items():
                rows[i][j] = value
            self._rows = dict(rows)
        return self._rows.get(anchor, {})

    def components(self, i: str, j: str) -> Tuple[float, float]:
        """(p_ij, q_ij) behind a complementarity entry."""
        q = self.substitutivity.get(i, j) if self.substitutivity is not None else 0.0
        p = self.co_purchase.get(i, j) if self.co_purchase is not None else self.get(i, j) + q
        return p, q

    def to_frame(self) -> pd.DataFrame:
        """The i,j,p,q,s export sorted by (i, j)."""
        rows = []
        for (i, j) in sorted(self.scores):
            if self.kind is ScoreKind.COMPLEMENTARITY:
                p, q = self.components(i, j)
                s = self.scores[(i, j)]
            elif self.kind is ScoreKind.CO_PURCHASE:
                p, q = self.scores[(i, j)], 0.0
                s = p
            else:
                p, q = 0.0, self.scores[(i, j)]
                s = -q
            rows.append((i, j, p, q, s))
        return pd.DataFrame(rows, columns=list(SCORING_CONFIG["csv_columns"]))


@dataclass(frozen=True)
class CandidatePair:
    anchor: str
    candidate: str
    complementarity: float
    co_purchase: float
    substitutivity: float


def _node_of(event: InteractionEvent, node_kind: NodeKind) -> str:
    return event.item_id if node_kind is NodeKind.PRODUCT else event.category_id


def build_graph(events: Iterable[InteractionEvent], edge_kind: EventKind, node_kind: NodeKind) -> BipartiteGraph:
    """
    Binarize the events of one kind into a user-node graph, keeping the
    earliest timestamp per (user, node).
    """
    entries: Dict[Pair, int] = {}
    for event in events:
        if event.kind is not edge_kind:
            continue
        key = (event.user_id, _node_of(event, node_kind))
        previous = entries.get(key)
        if previous is None or event.timestamp < previous:
            entries[key] = event.timestamp
    logger.debug(f"Built {edge_kind.value} graph over {node_kind.value} nodes with {len(entries)} entries")
    return BipartiteGraph(entries, node_kind, edge_kind)


def _require_edge_kind(graph: BipartiteGraph, expected: EventKind):
    if graph.edge_kind is not expected:
        raise ValueError(format_error_message(
            "score_kind_mismatch", expected=f"{expected.value} graph", actual=f"{graph.edge_kind.value} graph"))


def co_purchase_scores(purchase_graph: BipartiteGraph) -> ScoreTable:
    """
    Time-ordered co-purchase score for buying j after buying i.

    Equal timestamps contribute nothing (strict inequality).
    """
    _require_edge_kind(purchase_graph, EventKind.PURCHASE)
    degree = purchase_graph.degrees()
    numerators: Dict[Pair, int] = defaultdict(int)
    for items in purchase_graph.by_user().values():
        for i, t_i in items:
            for j, t_j in items:
                if t_j > t_i:
                    numerators[(i, j)] += 1

    scores = {pair: count / math.sqrt(degree[pair[0]] * degree[pair[1]]) for pair, count in numerators.items()}
    logger.info(f"Computed {len(scores)} co-purchase scores over {len(degree)} {purchase_graph.node_kind.value} nodes")
    return ScoreTable(ScoreKind.CO_PURCHASE, purchase_graph.node_kind, scores)


def substitutivity_scores(view_graph: BipartiteGraph, purchase_graph: BipartiteGraph) -> ScoreTable:
    """
    Substitutivity score for viewing i and later buying j. Views of the item
    that is later bought (i == j) are counted as well.
    """
    _require_edge_kind(view_graph, EventKind.VIEW)
    _require_edge_kind(purchase_graph, EventKind.PURCHASE)
    if view_graph.node_kind is not purchase_graph.node_kind:
        raise ValueError(format_error_message(
            "node_kind_mismatch", left=view_graph.node_kind.value, right=purchase_graph.node_kind.value))

    view_degree = view_graph.degrees()
    purchase_degree = purchase_graph.degrees()
    purchases = purchase_graph.by_user()
    numerators: Dict[Pair, int] = defaultdict(int)
    for user, views in view_graph.by_user().items():
        bought = purchases.get(user)
        if not bought:
            continue
        for i, t_view in views:
            for j, t_buy in bought:
                if t_buy > t_view:
                    numerators[(i, j)] += 1

    scores = {
        pair: count / math.sqrt(view_degree[pair[0]] * purchase_degree[pair[1]])
        for pair, count in numerators.items()
    }
    logger.info(f"Computed {len(scores)} substitutivity scores")
    return ScoreTable(ScoreKind.SUBSTITUTIVITY, view_graph.node_kind, scores)


def complementarity_scores(p: ScoreTable, q: ScoreTable) -> ScoreTable:
    """s_ij = p_ij - q_ij over the union of pairs; absent entries read as 0."""
    if p.kind is not ScoreKind.CO_PURCHASE:
        raise ValueError(format_error_message("score_kind_mismatch", expected="co-purchase", actual=p.kind.value))
    if q.kind is not ScoreKind.SUBSTITUTIVITY:
        raise ValueError(format_error_message("score_kind_mismatch", expected="substitutivity", actual=q.kind.value))
    if p.node_kind is not q.node_kind:
        raise ValueError(format_error_message("node_kind_mismatch", left=p.node_kind.value, right=q.node_kind.value))

    pairs = set(p.scores) | set(q.scores)
    scores = {pair: p.scores.get(pair, 0.0) - q.scores.get(pair, 0.0) for pair in pairs}
    return ScoreTable(ScoreKind.COMPLEMENTARITY, p.node_kind, scores, co_purchase=p, substitutivity=q)


def select_candidates(s: ScoreTable, anchor: str, min_s: float = SCORING_CONFIG["min_s"],
                      max_q: float = SCORING_CONFIG["max_q"], top_n: int = SCORING_CONFIG["candidate_pool"]
                      ) -> List[CandidatePair]:
    """
    Complementary candidates for an anchor: s >= min_s and q <= max_q,
    sorted by s descending then candidate id ascending, cut to top_n.
    An unknown anchor yields an empty list.
    """
    if top_n < 1:
        raise ValueError(format_error_message("bad_top_n", top_n=top_n))
    if s.kind is not ScoreKind.COMPLEMENTARITY:
        raise ValueError(format_error_message("score_kind_mismatch", expected="complementarity", actual=s.kind.value))

    selected = []
    for candidate, value in s.row(anchor).items():
        p_value, q_value = s.components(anchor, candidate)
        if value >= min_s and q_value <= max_q:
            selected.append(CandidatePair(anchor, candidate, value, p_value, q_value))
    selected.sort(key=lambda pair: (-pair.complementarity, pair.candidate))
    return selected[:top_n]


def build_score_tables(events: List[InteractionEvent], node_kind: NodeKind,
                       start: Optional[int] = None, end: Optional[int] = None) -> ScoreTable:
    """
    Complementarity table (with its p and q sources) for the events in
    [start, end); either bound may be omitted.
    """
    if start is not None or end is not None:
        first, last = time_range(events)
        lo = start if start is not None else first
        hi = end if end is not None else last
        events = filter_window(events, lo, hi)
    purchases = build_graph(events, EventKind.PURCHASE, node_kind)
    views = build_graph(events, EventKind.VIEW, node_kind)
    table = complementarity_scores(co_purchase_scores(purchases), substitutivity_scores(views, purchases))
    logger.info(f"Built {len(table)} {node_kind.value}-level complementarity scores from {len(events)} events")
    return table


def cosine_scores(purchase_graph: BipartiteGraph) -> Dict[Pair, float]:
    """Unordered co-purchase cosine keyed by (i, j) with i < j."""
    _require_edge_kind(purchase_graph, EventKind.PURCHASE)
    degree = purchase_graph.degrees()
    shared: Dict[Pair, int] = defaultdict(int)
    for items in purchase_graph.by_user().values():
        nodes = sorted(node for node, _ in items)
        for a, i in enumerate(nodes):
            for j in nodes[a + 1:]:
                shared[(i, j)] += 1
    return {pair: count / math.sqrt(degree[pair[0]] * degree[pair[1]]) for pair, count in shared.items()}


def write_score_table_csv(table: ScoreTable, path) -> str:
    """Export as CSV with header i,j,p,q,s, sorted by (i, j), 6 significant digits."""
    return write_frame_csv(table.to_frame(), path, float_format=SCORING_CONFIG["csv_float_format"])


def read_score_table_csv(path, node_kind: NodeKind = NodeKind.PRODUCT) -> ScoreTable:
    """Rebuild a complementarity table and its p/q sources from an i,j,p,q,s CSV."""
    frame = pd.read_csv(path, dtype={"i": str, "j": str}, keep_default_na=False)
    missing = [c for c in SCORING_CONFIG["csv_columns"] if c not in frame.columns]
    if missing:
        raise ValueError(f"Score CSV {path} is missing columns {missing}")

    p_scores, q_scores, s_scores = {}, {}, {}
    for i, j, p, q, s in frame[list(SCORING_CONFIG["csv_columns"])].itertuples(index=False):
        pair = (str(i), str(j))
        if p != 0:
            p_scores[pair] = float(p)
        if q != 0:
            q_scores[pair] = float(q)
        s_scores[pair] = float(s)
    p_table = ScoreTable(ScoreKind.CO_PURCHASE, node_kind, p_scores)
    q_table = ScoreTable(ScoreKind.SUBSTITUTIVITY, node_kind, q_scores)
    logger.info(f"Loaded {len(s_scores)} {node_kind.value} scores from {path}")
    return ScoreTable(ScoreKind.COMPLEMENTARITY, node_kind, s_scores, co_purchase=p_table, substitutivity=q_table)
