"""
Synthetic Data Module

Generators with planted ground truth.

generate_synthetic() simulates a shop: users with category tastes and
activity levels browse and buy, complementary purchases follow a fixed
category shift, and same-category views before a purchase leave a
substitution signal. Push impressions sent after the history are
featurized through the regular pipeline and labelled by sampling a context
from the planted assignment model and an open from the planted expert.

planted_examples() skips the shop and draws Gaussian feature vectors
directly, for recovery and convergence studies.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from config.settings import FEATURE_CONFIG, OUTPUT_CONFIG, SCORING_CONFIG, SECONDS_PER_DAY
from models.events import CatalogItem, EventKind, InteractionEvent, PushImpression
from models.params import MixtureParams
from models.schema import Family, FeatureSchema, default_schema, save_schema

from .features import (
    Example,
    ExampleBatch,
    FeatureSources,
    FeatureUnavailable,
    assemble_example,
    assignment_vector,
    build_feature_sources,
    prediction_vector,
    write_examples,
)
from .file_utils import ensure_directory_exists, read_json, write_json
from .graph_scoring import select_candidates
from .ingestion import write_catalog, write_demographics, write_events, write_impressions
from .mixture import assignment_probs, predict_open_rate

# Configure logging
logger = logging.getLogger(__name__)

HISTORY_START = 1_600_000_000


@dataclass
class SyntheticSpec:
    """Shape of a simulated shop plus the planted mixture."""

    users: int = 400
    items: int = 200
    categories: int = 20
    contexts: int = 2
    noise: float = 0.1
    impressions: int = 20000
    seed: int = 0
    history_days: int = 35
    sessions_per_user: float = 8.0
    purchase_rate: float = 0.6
    complement_rate: float = 0.5
    price_missing_rate: float = 0.05
    user_clusters: int = FEATURE_CONFIG["user_clusters"]
    planted_theta: Optional[List[List[float]]] = None
    planted_psi: Optional[List[List[float]]] = None

    def __post_init__(self):
        problems = []
        if self.contexts < 1:
            problems.append("contexts must be >= 1")
        if self.items < self.categories or self.categories < 2:
            problems.append("need at least 2 categories and one item per category")
        if self.users < 1 or self.impressions < 0:
            problems.append("users must be >= 1 and impressions >= 0")
        if not 0.0 <= self.noise <= 1.0:
            problems.append("noise must lie in [0, 1]")
        if problems:
            raise ValueError(f"Invalid synthetic spec: {'; '.join(problems)}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticSpec":
        known = {name for name in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown synthetic spec fields: {unknown}")
        return cls(**data)


def load_synthetic_spec(path) -> SyntheticSpec:
    return SyntheticSpec.from_dict(read_json(path))


@dataclass
class GroundTruth:
    """The planted model evaluated on pipeline features; simulates opens for any push."""

    params: MixtureParams
    sources: FeatureSources
    schema: FeatureSchema
    _cache: Dict[Tuple[str, str, str], float] = field(default_factory=dict, repr=False)

    def open_probability(self, user_id: str, anchor_item_id: str, item_id: str) -> float:
        key = (user_id, anchor_item_id, item_id)
        if key not in self._cache:
            x_hat, _ = assignment_vector(user_id, item_id, self.sources, self.schema, allow_cold_user=True)
            x = prediction_vector(user_id, anchor_item_id, item_id, self.sources, self.schema)
            self._cache[key] = predict_open_rate(self.params, x_hat, x)
        return self._cache[key]


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    schema: FeatureSchema
    events: List[InteractionEvent]
    catalog: List[CatalogItem]
    impressions: List[PushImpression]
    examples: List[Example]
    contexts: np.ndarray
    ref_time: int
    truth: GroundTruth
    demographics: Dict[str, Dict[str, int]]

    @property
    def batch(self) -> ExampleBatch:
        return ExampleBatch.from_examples(self.examples, self.schema.schema_hash)

    @property
    def planted(self) -> MixtureParams:
        return self.truth.params

    def purchases_by_user(self) -> Dict[str, List[str]]:
        return purchases_by_user(self.events)

    def ground_truth_record(self) -> Dict:
        opened = [impression.opened for impression in self.impressions]
        return {
            "spec": self.spec.to_dict(),
            "M": self.planted.contexts,
            "schema_hash": self.schema.schema_hash,
            "theta": self.planted.theta.tolist(),
            "psi": self.planted.psi.tolist(),
            "ref_time": self.ref_time,
            "impressions": len(self.impressions),
            "open_rate": float(np.mean(opened)) if opened else None,
            "context_counts": np.bincount(self.contexts, minlength=self.planted.contexts).tolist(),
        }


def purchases_by_user(events: Sequence[InteractionEvent]) -> Dict[str, List[str]]:
    """Distinct purchased items per user in first-purchase order."""
    bought: Dict[str, List[str]] = {}
    for event in events:
        if event.kind is EventKind.PURCHASE:
            items = bought.setdefault(event.user_id, [])
            if event.item_id not in items:
                items.append(event.item_id)
    return bought


# ---------------------------------------------------------------------------
# Planted parameters
# ---------------------------------------------------------------------------

def default_planted_params(schema: FeatureSchema, contexts: int, strength: float = 4.0) -> MixtureParams:
    """
    Contexts ordered from active to inactive users.

    The assignment model routes on the active score alone; active contexts
    reward user-product preference and recent sales; inactive contexts
    reward complementarity and penalize best sellers. Weights follow the
    expert sign convention, so a negative psi entry raises the open
    probability.
    """
    assignment = schema.assignment_names
    prediction = schema.prediction_names
    theta = np.zeros((contexts - 1, len(assignment)))
    psi = np.zeros((contexts, len(prediction)))
    levels = np.linspace(1.0, -1.0, contexts) if contexts > 1 else np.zeros(1)

    active = assignment.index("active_score")
    for k in range(contexts - 1):
        shift = strength * (levels[k] - levels[-1])
        theta[k, active] = 2.0 * shift
        theta[k, 0] = -shift

    user_product = schema.prediction_indices(Family.USER_PRODUCT)
    product_product = schema.prediction_indices(Family.PRODUCT_PRODUCT)
    sales = [i for i, name in enumerate(prediction) if name.startswith("sales_")]
    for k, level in enumerate(levels):
        psi[k, 0] = 1.0 + 0.5 * level
        psi[k, user_product] = -0.75 * strength * (1.0 + level) / 2.0
        psi[k, product_product] = -2.0 * strength * (1.0 - level) / 2.0 - 0.5
        psi[k, sales] = -strength * level / max(len(sales), 1)
    return MixtureParams(theta, psi, schema.schema_hash)


def random_params(contexts: int, m: int, n: int, seed: int = 0, scale: float = 2.0,
                  schema_hash: str = "") -> MixtureParams:
    """Gaussian planted parameters for feature-level studies."""
    rng = np.random.default_rng(seed)
    return MixtureParams(rng.normal(0.0, scale, size=(contexts - 1, m)),
                         rng.normal(0.0, scale, size=(contexts, n)), schema_hash)


@dataclass
class PlantedSample:
    batch: ExampleBatch
    contexts: np.ndarray
    open_probs: np.ndarray


def sample_labels(params: MixtureParams, x_hat: np.ndarray, x: np.ndarray, rng: np.random.Generator
                  ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw z from the assignment model and y from the drawn expert."""
    weights = assignment_probs(params.theta, x_hat) if params.contexts > 1 else np.ones((len(x_hat), 1))
    weights = np.atleast_2d(weights)
    draws = rng.random(len(x_hat))
    contexts = np.minimum((weights.cumsum(axis=1) < draws[:, None]).sum(axis=1), params.contexts - 1)
    open_probs = expit(-np.einsum("ij,ij->i", x, params.psi[contexts]))
    labels = (rng.random(len(x_hat)) < open_probs).astype(int)
    return contexts, labels, open_probs


def planted_examples(n: int, params: MixtureParams, seed: int = 0, noise: float = 1.0) -> PlantedSample:
    """
    n examples with x_hat = [1, N(0, noise^2) ...] and x = [1, N(0, noise^2) ...],
    labelled by the planted mixture.
    """
    rng = np.random.default_rng(seed)
    x_hat = np.hstack([np.ones((n, 1)), rng.normal(0.0, noise, size=(n, params.m - 1))])
    x = np.hstack([np.ones((n, 1)), rng.normal(0.0, noise, size=(n, params.n - 1))])
    contexts, labels, open_probs = sample_labels(params, x_hat, x, rng)
    return PlantedSample(ExampleBatch(x_hat, x, labels, params.schema_hash), contexts, open_probs)


def split_examples(batch: ExampleBatch, fraction: float, seed: int = 0) -> Tuple[ExampleBatch, ExampleBatch]:
    """
    Disjoint (train, validation) split; the same seed always gives the same rows.

    Raises:
        ValueError: If either side would be empty
    """
    order = np.random.default_rng(seed).permutation(len(batch))
    n_valid = int(round(len(batch) * fraction))
    if n_valid < 1 or n_valid >= len(batch):
        raise ValueError(f"Validation fraction {fraction} leaves an empty side for {len(batch)} examples")
    return batch.subset(np.sort(order[n_valid:])), batch.subset(np.sort(order[:n_valid]))


# ---------------------------------------------------------------------------
# Simulated shop
# ---------------------------------------------------------------------------

def _simulate_catalog(spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[List[CatalogItem], np.ndarray]:
    popularity = rng.lognormal(0.0, 1.0, size=spec.items)
    prices = rng.lognormal(3.0, 0.6, size=spec.items)
    missing = rng.random(spec.items) < spec.price_missing_rate
    catalog = [
        CatalogItem(f"i{idx:05d}", f"c{idx % spec.categories:03d}", None if missing[idx] else round(float(prices[idx]), 2))
        for idx in range(spec.items)
    ]
    return catalog, popularity


def _simulate_events(spec: SyntheticSpec, catalog: List[CatalogItem], popularity: np.ndarray,
                     rng: np.random.Generator) -> Tuple[List[InteractionEvent], int]:
    ref_time = HISTORY_START + spec.history_days * SECONDS_PER_DAY
    by_category = [np.arange(c, spec.items, spec.categories) for c in range(spec.categories)]
    category_weights = [popularity[pool] / popularity[pool].sum() for pool in by_category]
    activity = rng.lognormal(0.0, 0.8, size=spec.users)
    tastes = rng.dirichlet(np.full(spec.categories, 0.3), size=spec.users)

    def event(user, item, kind, timestamp):
        entry = catalog[item]
        return InteractionEvent(user, entry.item_id, entry.category_id, kind, int(timestamp))

    events: List[InteractionEvent] = []
    for u in range(spec.users):
        user = f"u{u:05d}"
        for _ in range(rng.poisson(spec.sessions_per_user * activity[u])):
            start = rng.integers(HISTORY_START, ref_time - 3600)
            category = rng.choice(spec.categories, p=tastes[u])
            pool = by_category[category]
            browsed = rng.choice(pool, size=min(len(pool), 1 + rng.integers(3)), replace=False,
                                 p=category_weights[category])
            for offset, item in enumerate(browsed):
                events.append(event(user, item, EventKind.VIEW, start + 60 * offset))
            if rng.random() < spec.noise:
                events.append(event(user, rng.integers(spec.items), EventKind.VIEW, start + 300))
            if rng.random() < spec.purchase_rate:
                events.append(event(user, browsed[rng.integers(len(browsed))], EventKind.PURCHASE, start + 600))
                if rng.random() < spec.complement_rate:
                    shifted = (category + 1) % spec.categories
                    item = rng.choice(by_category[shifted], p=category_weights[shifted])
                    events.append(event(user, item, EventKind.PURCHASE, start + 1800))

    events.sort(key=lambda e: (e.timestamp, e.user_id, e.item_id, e.kind.value))
    return events, ref_time


def _simulate_demographics(spec: SyntheticSpec, schema: FeatureSchema, rng: np.random.Generator
                           ) -> Dict[str, Dict[str, int]]:
    return {
        f"u{u:05d}": {group: int(rng.integers(buckets)) for group, buckets in schema.demographics.items()}
        for u in range(spec.users)
    }


def _choose_push(anchor: str, sources: FeatureSources, item_ids: Sequence[str], rng: np.random.Generator) -> str:
    """Half the pushes come from the complementary candidates, the rest at random."""
    pool = []
    if sources.product_scores is not None:
        pool = [pair.candidate for pair in select_candidates(
            sources.product_scores, anchor, min_s=-1.0, max_q=1.0, top_n=SCORING_CONFIG["candidate_pool"])
            if pair.candidate != anchor]
    if pool and rng.random() < 0.5:
        return pool[rng.integers(len(pool))]
    while True:
        item = item_ids[rng.integers(len(item_ids))]
        if item != anchor:
            return item


def generate_synthetic(spec: SyntheticSpec, schema: Optional[FeatureSchema] = None) -> SyntheticDataset:
    """
    Simulate events, push impressions and their labels.

    Impressions are featurized with sources frozen at the end of the
    history, then labelled by sampling a context and an open from the
    planted model. Identical specs give identical datasets.
    """
    schema = schema or default_schema(user_clusters=spec.user_clusters)
    rng = np.random.default_rng(spec.seed)

    catalog, popularity = _simulate_catalog(spec, rng)
    events, ref_time = _simulate_events(spec, catalog, popularity, rng)
    demographics = _simulate_demographics(spec, schema, rng)
    logger.info(f"Simulated {len(events)} events for {spec.users} users and {spec.items} items")

    # Must match what featurize rebuilds from the written files
    sources = build_feature_sources(events, ref_time, schema, catalog=catalog, demographics=demographics)
    if spec.planted_psi is not None:
        theta = np.array(spec.planted_theta or np.zeros((spec.contexts - 1, schema.assignment_dims)), dtype=float)
        planted = MixtureParams(theta.reshape(spec.contexts - 1, schema.assignment_dims),
                                np.array(spec.planted_psi, dtype=float), schema.schema_hash)
    else:
        planted = default_planted_params(schema, spec.contexts)

    bought = purchases_by_user(events)
    buyers = sorted(bought)
    item_ids = [item.item_id for item in catalog]

    drafts: List[Example] = []
    stamps: List[int] = []
    for _ in range(spec.impressions if buyers else 0):
        user = buyers[rng.integers(len(buyers))]
        anchor = bought[user][rng.integers(len(bought[user]))]
        pushed = _choose_push(anchor, sources, item_ids, rng)
        timestamp = ref_time + 1 + int(rng.integers(7 * SECONDS_PER_DAY))
        try:
            drafts.append(assemble_example(PushImpression(user, anchor, pushed, 0, timestamp), sources, schema))
            stamps.append(timestamp)
        except FeatureUnavailable as e:
            logger.debug(f"Skipped synthetic impression: {e}")

    if drafts:
        x_hat = np.vstack([draft.x_hat for draft in drafts])
        x = np.vstack([draft.x for draft in drafts])
        contexts, labels, _ = sample_labels(planted, x_hat, x, rng)
    else:
        contexts, labels = np.zeros(0, dtype=int), np.zeros(0, dtype=int)

    examples, impressions = [], []
    for draft, timestamp, label in zip(drafts, stamps, labels):
        draft.y = int(label)
        examples.append(draft)
        impressions.append(PushImpression(draft.user_id, draft.anchor_item_id, draft.pushed_item_id,
                                          int(label), timestamp))

    truth = GroundTruth(planted, sources, schema)
    dataset = SyntheticDataset(spec, schema, events, catalog, impressions, examples, contexts, ref_time, truth,
                               demographics)
    if impressions:
        logger.info(f"Generated {len(impressions)} impressions, open rate {np.mean(labels):.4f}, "
                    f"context counts {np.bincount(contexts, minlength=planted.contexts).tolist()}")
    return dataset


def write_synthetic(dataset: SyntheticDataset, out_dir) -> Dict[str, str]:
    """Write every artifact of a dataset; returns the paths by role."""
    out_dir = Path(ensure_directory_exists(str(out_dir)))
    paths = {
        "events": out_dir / OUTPUT_CONFIG["events_file"],
        "impressions": out_dir / OUTPUT_CONFIG["impressions_file"],
        "catalog": out_dir / OUTPUT_CONFIG["catalog_file"],
        "demographics": out_dir / OUTPUT_CONFIG["demographics_file"],
        "schema": out_dir / OUTPUT_CONFIG["schema_file"],
        "examples": out_dir / OUTPUT_CONFIG["examples_file"],
        "ground_truth": out_dir / OUTPUT_CONFIG["ground_truth_file"],
    }
    write_events(dataset.events, paths["events"])
    write_impressions(dataset.impressions, paths["impressions"])
    write_catalog(dataset.catalog, paths["catalog"])
    write_demographics(dataset.demographics, paths["demographics"])
    save_schema(dataset.schema, paths["schema"])
    write_examples(dataset.examples, paths["examples"])
    write_json(dataset.ground_truth_record(), paths["ground_truth"])
    return {role: str(path) for role, path in paths.items()}
