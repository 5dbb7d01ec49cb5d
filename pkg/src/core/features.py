"""
Features Module

Assembles the four feature families into the assignment vector x_hat and the
prediction vector x:

    user             k-means cluster one-hot, active score, cold-start flag, demographics
    product          sales and views per window, price (+ missingness flag)
    user-product     user-item and user-category preference scores per window
    product-product  product and category complementarity scores

Windows nest (1d inside 2d inside 7d inside 28d) and are measured back from
a reference time; only events strictly before the reference time are used.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from config.settings import FEATURE_CONFIG, SECONDS_PER_DAY, format_error_message
from models.events import CatalogItem, EventKind, InteractionEvent, PushImpression
from models.schema import BIAS_SLOT, FeatureSchema

from .file_utils import read_jsonl, write_jsonl
from .graph_scoring import NodeKind, ScoreTable, build_score_tables
from .ingestion import filter_window

# Configure logging
logger = logging.getLogger(__name__)


class FeatureUnavailable(ValueError):
    """An example cannot be assembled; reason is a short counter key."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# User features
# ---------------------------------------------------------------------------

def user_category_matrix(events: Iterable[InteractionEvent], start: int, end: int,
                         users: Optional[Sequence[str]] = None
                         ) -> Tuple[List[str], List[str], np.ndarray]:
    """
    Per-user purchase counts by category in [start, end), each row scaled to
    unit L2 norm; users without purchases keep a zero row.

    Args:
        events: interaction events
        start, end: half-open period
        users: row universe; defaults to the purchasers in the period

    Returns:
        (user ids, category ids, users x categories matrix)
    """
    counts: Dict[Tuple[str, str], int] = defaultdict(int)
    for event in filter_window(list(events), start, end):
        if event.kind is EventKind.PURCHASE:
            counts[(event.user_id, event.category_id)] += 1

    if users is None:
        users = sorted({user for user, _ in counts})
    users = list(users)
    categories = sorted({category for _, category in counts})
    row_of = {user: idx for idx, user in enumerate(users)}
    col_of = {category: idx for idx, category in enumerate(categories)}

    matrix = np.zeros((len(users), len(categories)))
    for (user, category), count in counts.items():
        if user in row_of:
            matrix[row_of[user], col_of[category]] = count

    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    np.divide(matrix, norms, out=matrix, where=norms > 0)
    return users, categories, matrix


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: List[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _squared_distances(matrix: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((matrix[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeans_plusplus(matrix: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((k, matrix.shape[1]))
    centroids[0] = matrix[rng.integers(matrix.shape[0])]
    closest = _squared_distances(matrix, centroids[:1]).min(axis=1)
    for idx in range(1, k):
        probs = closest / closest.sum()
        centroids[idx] = matrix[rng.choice(matrix.shape[0], p=probs)]
        closest = np.minimum(closest, _squared_distances(matrix, centroids[idx:idx + 1])[:, 0])
    return centroids


def kmeans(matrix: np.ndarray, k: int, seed: int = FEATURE_CONFIG["kmeans_seed"],
           max_iter: int = FEATURE_CONFIG["kmeans_max_iter"]) -> KMeansResult:
    """
    Lloyd iterations from k-means++ seeding; deterministic for a given seed.

    inertia_history holds the inertia right after each assignment step, which
    never increases. An emptied cluster keeps its previous centroid.

    Raises:
        ValueError: If k < 1 or k exceeds the number of distinct rows
    """
    matrix = np.asarray(matrix, dtype=float)
    distinct = len(np.unique(matrix, axis=0)) if matrix.size else 0
    if k < 1 or k > distinct:
        raise ValueError(format_error_message("too_many_clusters", k=k, distinct=distinct))

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plusplus(matrix, k, rng)
    labels = None
    history: List[float] = []

    for iteration in range(max_iter):
        distances = _squared_distances(matrix, centroids)
        new_labels = distances.argmin(axis=1)
        history.append(float(distances[np.arange(len(matrix)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cluster in range(k):
            members = matrix[labels == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
    else:
        distances = _squared_distances(matrix, centroids)
        labels = distances.argmin(axis=1)
        history.append(float(distances[np.arange(len(matrix)), labels].sum()))

    logger.debug(f"k-means with k={k} stopped after {len(history)} assignment steps, inertia {history[-1]:.6g}")
    return KMeansResult(labels=labels, centroids=centroids, inertia_history=history)


def active_scores(events: Iterable[InteractionEvent], start: int, end: int) -> Dict[str, float]:
    """
    Rank-normalized event counts in [start, end): average rank among active
    users divided by the number of active users. Absent users are not listed.
    """
    counts: Dict[str, int] = defaultdict(int)
    for event in filter_window(list(events), start, end):
        counts[event.user_id] += 1
    if not counts:
        return {}
    users = sorted(counts)
    ranks = rankdata([counts[user] for user in users], method="average")
    return {user: float(rank) / len(users) for user, rank in zip(users, ranks)}


def active_score(events: Iterable[InteractionEvent], user_id: str, start: int, end: int) -> float:
    """Active score of one user in [start, end); 0 when the user has no events there."""
    return active_scores(events, start, end).get(user_id, 0.0)


@dataclass(frozen=True)
class UserProfile:
    cluster_id: int
    active_score: float
    demographics: Mapping[str, int] = field(default_factory=dict)

    def slot_values(self, schema: FeatureSchema) -> Dict[str, float]:
        values = {f"cluster_{k}": 0.0 for k in range(schema.user_clusters)}
        if 0 <= self.cluster_id < schema.user_clusters:
            values[f"cluster_{self.cluster_id}"] = 1.0
        values["active_score"] = self.active_score
        values["cold_start"] = 0.0
        for group, buckets in schema.demographics.items():
            for bucket in range(buckets):
                values[f"{group}_{bucket}"] = 1.0 if self.demographics.get(group) == bucket else 0.0
        return values


def cold_user_values(schema: FeatureSchema) -> Dict[str, float]:
    """Zeroed user slots with the cold-start flag raised."""
    values = UserProfile(cluster_id=-1, active_score=0.0).slot_values(schema)
    values["cold_start"] = 1.0
    return values


# ---------------------------------------------------------------------------
# Windowed behavioural aggregates
# ---------------------------------------------------------------------------

def window_starts(ref_time: int, windows: Sequence[int]) -> List[int]:
    return [ref_time - days * SECONDS_PER_DAY for days in windows]


def _damped(value: float, maximum: float) -> float:
    if value <= 0 or maximum <= 0:
        return 0.0
    return math.log1p(value) / math.log1p(maximum)


class PreferenceIndex:
    """
    Weighted interaction counts per (user, target) and window, where the
    target is an item or a category; view weight 1, purchase weight 5.
    """

    def __init__(self, events: Iterable[InteractionEvent], ref_time: int, level: NodeKind = NodeKind.PRODUCT,
                 windows: Sequence[int] = None, view_weight: float = FEATURE_CONFIG["view_weight"],
                 purchase_weight: float = FEATURE_CONFIG["purchase_weight"]):
        self.windows = tuple(windows or FEATURE_CONFIG["windows_days"])
        self.level = level
        starts = window_starts(ref_time, self.windows)
        self.counts: List[Dict[Tuple[str, str], float]] = [defaultdict(float) for _ in self.windows]
        for event in events:
            if event.timestamp >= ref_time:
                continue
            target = event.item_id if level is NodeKind.PRODUCT else event.category_id
            weight = purchase_weight if event.kind is EventKind.PURCHASE else view_weight
            for idx, start in enumerate(starts):
                if event.timestamp >= start:
                    self.counts[idx][(event.user_id, target)] += weight
        self.maxima = [max(window.values(), default=0.0) for window in self.counts]

    def scores(self, user_id: str, target: str) -> np.ndarray:
        return np.array([
            _damped(window.get((user_id, target), 0.0), maximum)
            for window, maximum in zip(self.counts, self.maxima)
        ])


def preference_scores(events: Iterable[InteractionEvent], user_id: str, target: str, ref_time: int,
                      level: NodeKind = NodeKind.PRODUCT, windows: Sequence[int] = None) -> np.ndarray:
    """
    log(1 + weighted count) per window, divided by log(1 + the largest weighted
    count of any user-target pair in that window).
    """
    return PreferenceIndex(events, ref_time, level, windows).scores(user_id, target)


class ProductIndex:
    """Per-item sales and view counts per window plus log-damped prices."""

    def __init__(self, events: Iterable[InteractionEvent], ref_time: int, windows: Sequence[int] = None,
                 prices: Optional[Mapping[str, Optional[float]]] = None):
        self.windows = tuple(windows or FEATURE_CONFIG["windows_days"])
        starts = window_starts(ref_time, self.windows)
        self.sales: List[Dict[str, int]] = [defaultdict(int) for _ in self.windows]
        self.views: List[Dict[str, int]] = [defaultdict(int) for _ in self.windows]
        for event in events:
            if event.timestamp >= ref_time:
                continue
            bucket = self.sales if event.kind is EventKind.PURCHASE else self.views
            for idx, start in enumerate(starts):
                if event.timestamp >= start:
                    bucket[idx][event.item_id] += 1
        self.max_sales = [max(window.values(), default=0) for window in self.sales]
        self.max_views = [max(window.values(), default=0) for window in self.views]
        self.prices = dict(prices or {})
        self.max_price = max((p for p in self.prices.values() if p is not None), default=0.0)

    def slot_values(self, item_id: str) -> Dict[str, float]:
        values = {}
        for idx, days in enumerate(self.windows):
            values[f"sales_{days}d"] = _damped(self.sales[idx].get(item_id, 0), self.max_sales[idx])
            values[f"views_{days}d"] = _damped(self.views[idx].get(item_id, 0), self.max_views[idx])
        price = self.prices.get(item_id)
        values["price"] = 0.0 if price is None else _damped(price, self.max_price)
        values["price_missing"] = 1.0 if price is None else 0.0
        return values

    def vector(self, item_id: str) -> np.ndarray:
        values = self.slot_values(item_id)
        names = [f"sales_{d}d" for d in self.windows] + [f"views_{d}d" for d in self.windows]
        return np.array([values[name] for name in names] + [values["price"], values["price_missing"]])


def product_aggregates(events: Iterable[InteractionEvent], item_id: str, ref_time: int,
                       windows: Sequence[int] = None,
                       prices: Optional[Mapping[str, Optional[float]]] = None) -> np.ndarray:
    """
    (sales x windows, views x windows, price, price_missing) for one item,
    each count log-damped and max-normalized across items per window.
    """
    return ProductIndex(events, ref_time, windows, prices).vector(item_id)


# ---------------------------------------------------------------------------
# Feature sources and example assembly
# ---------------------------------------------------------------------------

@dataclass
class FeatureSources:
    """Everything example assembly reads, frozen at one reference time."""

    ref_time: int
    profiles: Dict[str, UserProfile]
    products: ProductIndex
    item_preferences: PreferenceIndex
    category_preferences: PreferenceIndex
    item_category: Dict[str, str]
    product_scores: Optional[ScoreTable] = None
    category_scores: Optional[ScoreTable] = None
    clusters: Optional[KMeansResult] = None

    def is_known_item(self, item_id: str) -> bool:
        return item_id in self.item_category


def build_user_profiles(history: List[InteractionEvent], ref_time: int, schema: FeatureSchema,
                        demographics: Optional[Mapping[str, Mapping[str, int]]] = None,
                        seed: int = FEATURE_CONFIG["kmeans_seed"]
                        ) -> Tuple[Dict[str, UserProfile], Optional[KMeansResult]]:
    """Cluster users on category-level purchases and score their activity."""
    if not history:
        return {}, None
    start = min(event.timestamp for event in history)
    users = sorted({event.user_id for event in history})
    _, _, matrix = user_category_matrix(history, start, ref_time, users=users)

    distinct = len(np.unique(matrix, axis=0)) if matrix.size else 1
    k = min(schema.user_clusters, distinct)
    if k < schema.user_clusters:
        logger.warning(f"Only {distinct} distinct user rows; clustering with k={k} instead of {schema.user_clusters}")
    if matrix.shape[1] == 0:
        labels = np.zeros(len(users), dtype=int)
        clusters = None
    else:
        clusters = kmeans(matrix, k, seed=seed)
        labels = clusters.labels

    activity = active_scores(history, start, ref_time)
    demographics = demographics or {}
    profiles = {
        user: UserProfile(int(label), activity.get(user, 0.0), dict(demographics.get(user, {})))
        for user, label in zip(users, labels)
    }
    logger.info(f"Built {len(profiles)} user profiles with {k} clusters")
    return profiles, clusters


def build_feature_sources(events: List[InteractionEvent], ref_time: int, schema: FeatureSchema,
                          catalog: Optional[Iterable[CatalogItem]] = None,
                          demographics: Optional[Mapping[str, Mapping[str, int]]] = None,
                          product_scores: Optional[ScoreTable] = None,
                          category_scores: Optional[ScoreTable] = None,
                          windows: Sequence[int] = None,
                          seed: int = FEATURE_CONFIG["kmeans_seed"]) -> FeatureSources:
    """
    Compute every feature source from the events strictly before ref_time.
    Score tables are built from the same history unless supplied.
    """
    windows = tuple(windows or FEATURE_CONFIG["windows_days"])
    history = [event for event in events if event.timestamp < ref_time]
    catalog = list(catalog or [])

    item_category = {event.item_id: event.category_id for event in history}
    for item in catalog:
        item_category.setdefault(item.item_id, item.category_id)
    prices = {item.item_id: item.price for item in catalog}

    profiles, clusters = build_user_profiles(history, ref_time, schema, demographics, seed)
    if product_scores is None:
        product_scores = build_score_tables(history, NodeKind.PRODUCT)
    if category_scores is None:
        category_scores = build_score_tables(history, NodeKind.CATEGORY)

    sources = FeatureSources(
        ref_time=ref_time,
        profiles=profiles,
        products=ProductIndex(history, ref_time, windows, prices),
        item_preferences=PreferenceIndex(history, ref_time, NodeKind.PRODUCT, windows),
        category_preferences=PreferenceIndex(history, ref_time, NodeKind.CATEGORY, windows),
        item_category=item_category,
        product_scores=product_scores,
        category_scores=category_scores,
        clusters=clusters,
    )
    logger.info(f"Feature sources at t={ref_time}: {len(history)} events, {len(profiles)} users, {len(item_category)} items")
    return sources


@dataclass
class Example:
    """One push impression as (x_hat, x, y)."""

    x_hat: np.ndarray
    x: np.ndarray
    y: int
    user_id: str = ""
    anchor_item_id: str = ""
    pushed_item_id: str = ""
    cold_start: bool = False
    schema_hash: str = ""

    def to_record(self) -> Dict:
        return {
            "user_id": self.user_id,
            "anchor_item_id": self.anchor_item_id,
            "pushed_item_id": self.pushed_item_id,
            "y": int(self.y),
            "cold_start": bool(self.cold_start),
            "schema_hash": self.schema_hash,
            "x_hat": [float(v) for v in self.x_hat],
            "x": [float(v) for v in self.x],
        }

    @classmethod
    def from_record(cls, record: Dict) -> "Example":
        return cls(
            x_hat=np.array(record["x_hat"], dtype=float),
            x=np.array(record["x"], dtype=float),
            y=int(record["y"]),
            user_id=record.get("user_id", ""),
            anchor_item_id=record.get("anchor_item_id", ""),
            pushed_item_id=record.get("pushed_item_id", ""),
            cold_start=bool(record.get("cold_start", False)),
            schema_hash=record.get("schema_hash", ""),
        )


@dataclass
class ExampleBatch:
    """Stacked examples: x_hat (N x m), x (N x n), y (N)."""

    x_hat: np.ndarray
    x: np.ndarray
    y: np.ndarray
    schema_hash: str = ""

    def __post_init__(self):
        self.x_hat = np.atleast_2d(np.asarray(self.x_hat, dtype=float))
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not (len(self.x_hat) == len(self.x) == len(self.y)):
            raise ValueError(format_error_message(
                "dimension_mismatch", name="example rows", expected=len(self.y), actual=(len(self.x_hat), len(self.x))))

    def __len__(self):
        return len(self.y)

    @property
    def m(self) -> int:
        return self.x_hat.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def subset(self, indices) -> "ExampleBatch":
        indices = np.asarray(indices)
        return ExampleBatch(self.x_hat[indices], self.x[indices], self.y[indices], self.schema_hash)

    def with_assignment_columns(self, columns: Sequence[int]) -> "ExampleBatch":
        return ExampleBatch(self.x_hat[:, list(columns)], self.x, self.y, self.schema_hash)

    @classmethod
    def from_examples(cls, examples: Sequence[Example], schema_hash: str = "") -> "ExampleBatch":
        if not examples:
            raise ValueError(format_error_message("empty_dataset"))
        return cls(
            np.vstack([e.x_hat for e in examples]),
            np.vstack([e.x for e in examples]),
            np.array([e.y for e in examples]),
            schema_hash or examples[0].schema_hash,
        )


def _pick(values: Mapping[str, float], names: Sequence[str]) -> np.ndarray:
    try:
        return np.array([1.0 if name == BIAS_SLOT else values[name] for name in names])
    except KeyError as e:
        raise ValueError(format_error_message("unknown_slot", name=e.args[0]))


def _user_values(user_id: str, sources: FeatureSources, schema: FeatureSchema,
                 allow_cold_user: bool) -> Tuple[Dict[str, float], bool]:
    profile = sources.profiles.get(user_id)
    if profile is not None:
        return profile.slot_values(schema), False
    if not allow_cold_user:
        raise FeatureUnavailable("unknown_user", f"Unknown user {user_id}")
    return cold_user_values(schema), True


def assignment_vector(user_id: str, item_id: str, sources: FeatureSources, schema: FeatureSchema,
                      allow_cold_user: bool = False) -> Tuple[np.ndarray, bool]:
    """x_hat for a user and an item: [bias | user slots | product slots of the item]."""
    if not sources.is_known_item(item_id):
        raise FeatureUnavailable("unknown_item", f"Unknown item {item_id}")
    values, cold = _user_values(user_id, sources, schema, allow_cold_user)
    values.update(sources.products.slot_values(item_id))
    return _pick(values, schema.assignment_names), cold


def prediction_vector(user_id: str, anchor_item_id: str, pushed_item_id: str, sources: FeatureSources,
                      schema: FeatureSchema) -> np.ndarray:
    """x: [bias | product slots | user-product slots | product-product slots]."""
    for item in (anchor_item_id, pushed_item_id):
        if not sources.is_known_item(item):
            raise FeatureUnavailable("unknown_item", f"Unknown item {item}")
    pushed_category = sources.item_category[pushed_item_id]
    anchor_category = sources.item_category[anchor_item_id]

    values = dict(sources.products.slot_values(pushed_item_id))
    item_pref = sources.item_preferences.scores(user_id, pushed_item_id)
    category_pref = sources.category_preferences.scores(user_id, pushed_category)
    for idx, days in enumerate(sources.item_preferences.windows):
        values[f"pref_item_{days}d"] = float(item_pref[idx])
        values[f"pref_category_{days}d"] = float(category_pref[idx])
    values["s_product"] = sources.product_scores.get(anchor_item_id, pushed_item_id) if sources.product_scores else 0.0
    values["s_category"] = (
        sources.category_scores.get(anchor_category, pushed_category) if sources.category_scores else 0.0
    )
    return _pick(values, schema.prediction_names)


def assemble_example(impression: PushImpression, sources: FeatureSources, schema: FeatureSchema,
                     allow_cold_user: bool = False) -> Example:
    """
    Build the Example for one impression.

    Raises:
        FeatureUnavailable: unknown user/item, or sources not strictly older than the impression
    """
    if sources.ref_time >= impression.timestamp:
        raise FeatureUnavailable("reference_time", format_error_message(
            "reference_time", ref_time=sources.ref_time, timestamp=impression.timestamp))
    x_hat, cold = assignment_vector(impression.user_id, impression.pushed_item_id, sources, schema, allow_cold_user)
    x = prediction_vector(impression.user_id, impression.anchor_item_id, impression.pushed_item_id, sources, schema)
    return Example(
        x_hat=x_hat,
        x=x,
        y=impression.opened,
        user_id=impression.user_id,
        anchor_item_id=impression.anchor_item_id,
        pushed_item_id=impression.pushed_item_id,
        cold_start=cold,
        schema_hash=schema.schema_hash,
    )


def featurize_impressions(impressions: Iterable[PushImpression], sources: FeatureSources, schema: FeatureSchema
                          ) -> Tuple[List[Example], Dict[str, int]]:
    """Assemble every impression, dropping and counting the ones that cannot be featurized."""
    examples: List[Example] = []
    dropped: Dict[str, int] = defaultdict(int)
    for impression in impressions:
        try:
            examples.append(assemble_example(impression, sources, schema))
        except FeatureUnavailable as e:
            dropped[e.reason] += 1
    if dropped:
        logger.warning(f"Dropped impressions: {dict(dropped)}")
    logger.info(f"Featurized {len(examples)} impressions (m={schema.assignment_dims}, n={schema.prediction_dims})")
    return examples, dict(dropped)


def write_examples(examples: Iterable[Example], path) -> int:
    return write_jsonl((example.to_record() for example in examples), path)


def read_examples(path) -> List[Example]:
    examples = [Example.from_record(record) for record in read_jsonl(path)]
    logger.info(f"Read {len(examples)} examples from {path}")
    return examples
