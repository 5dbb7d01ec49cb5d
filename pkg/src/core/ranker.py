"""
Ranker Module

Chooses what to push after a purchase: complementary candidates for the
anchor item are scored with the mixture model and ordered by predicted open
rate (ties by item id). With shared_assignment the context distribution is
computed once per (user, anchor) from the user slots and the anchor's
product slots, then reused for every candidate.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import RANKING_CONFIG, SCORING_CONFIG, format_error_message
from models.events import PushImpression
from models.params import MixtureParams
from models.schema import FeatureSchema

from .features import FeatureSources, FeatureUnavailable, assignment_vector, prediction_vector
from .file_utils import read_jsonl, write_jsonl
from .graph_scoring import CandidatePair, ScoreTable, select_candidates
from .mixture import assignment_probs, check_schema, predict_from_assignment, predict_open_rate

# Configure logging
logger = logging.getLogger(__name__)

PairLike = Union[Tuple[str, str], PushImpression]


@dataclass(frozen=True)
class RankedCandidate:
    item_id: str
    predicted_open_rate: float
    complementarity: float
    rank: int
    cold_start: bool = False


@dataclass(frozen=True)
class RankFailure:
    index: int
    user_id: str
    anchor_item_id: str
    reason: str


class Ranker:
    """
    Scores complementary candidates for (user, anchor) pairs with a fitted
    mixture model. The model and the feature schema must share a hash.
    """

    def __init__(self, params: MixtureParams, sources: FeatureSources, schema: FeatureSchema,
                 scores: Optional[ScoreTable] = None,
                 min_s: float = SCORING_CONFIG["min_s"],
                 max_q: float = SCORING_CONFIG["max_q"],
                 candidate_pool: int = SCORING_CONFIG["candidate_pool"],
                 shared_assignment: bool = RANKING_CONFIG["shared_assignment"],
                 allow_cold_user: bool = True):
        check_schema(params, schema.schema_hash)
        if params.m != schema.assignment_dims or params.n != schema.prediction_dims:
            raise ValueError(format_error_message(
                "dimension_mismatch", name="model (m, n)",
                expected=(schema.assignment_dims, schema.prediction_dims), actual=(params.m, params.n)))
        self.params = params
        self.sources = sources
        self.schema = schema
        self.scores = scores if scores is not None else sources.product_scores
        self.min_s = min_s
        self.max_q = max_q
        self.candidate_pool = candidate_pool
        self.shared_assignment = shared_assignment
        self.allow_cold_user = allow_cold_user

    def candidates(self, anchor_item_id: str) -> List[CandidatePair]:
        """Complementary candidates with known features, the anchor itself excluded."""
        if self.scores is None:
            return []
        pool = select_candidates(self.scores, anchor_item_id, self.min_s, self.max_q, self.candidate_pool)
        return [pair for pair in pool
                if pair.candidate != anchor_item_id and self.sources.is_known_item(pair.candidate)]

    def score(self, user_id: str, anchor_item_id: str, candidates: Sequence[CandidatePair]
              ) -> Tuple[np.ndarray, bool]:
        """Predicted open rates for the candidates, plus the cold-start flag."""
        x = np.vstack([
            prediction_vector(user_id, anchor_item_id, pair.candidate, self.sources, self.schema)
            for pair in candidates
        ])
        if self.shared_assignment:
            x_hat, cold = assignment_vector(user_id, anchor_item_id, self.sources, self.schema, self.allow_cold_user)
            weights = assignment_probs(self.params.theta, x_hat)
            return predict_from_assignment(self.params, weights, x), cold

        rates, cold = [], False
        for pair, row in zip(candidates, x):
            x_hat, cold = assignment_vector(user_id, pair.candidate, self.sources, self.schema, self.allow_cold_user)
            rates.append(predict_open_rate(self.params, x_hat, row))
        return np.array(rates), cold

    def rank(self, user_id: str, anchor_item_id: str, top_n: int = RANKING_CONFIG["top_n"]) -> List[RankedCandidate]:
        """
        Candidates ordered by predicted open rate descending, item id ascending,
        cut to top_n. No candidates gives an empty list.

        Raises:
            ValueError: If top_n < 1
            FeatureUnavailable: If the user is unknown and cold users are not allowed
        """
        if top_n < 1:
            raise ValueError(format_error_message("bad_top_n", top_n=top_n))
        candidates = self.candidates(anchor_item_id)
        if not candidates:
            return []
        rates, cold = self.score(user_id, anchor_item_id, candidates)
        order = sorted(range(len(candidates)), key=lambda idx: (-rates[idx], candidates[idx].candidate))
        return [
            RankedCandidate(candidates[idx].candidate, float(rates[idx]), candidates[idx].complementarity, position, cold)
            for position, idx in enumerate(order[:top_n], start=1)
        ]

    def batch_rank(self, pairs: Iterable[PairLike], top_n: int = RANKING_CONFIG["top_n"],
                   max_per_user: Optional[int] = RANKING_CONFIG["max_per_user"], n_jobs: int = 1
                   ) -> Tuple[List[Dict], List[RankFailure]]:
        """
        Rank every (user, anchor) pair in input order. Failed pairs are
        reported and skipped; max_per_user caps the pairs emitted per user.

        Returns:
            (output rows, failures)
        """
        pairs = [_as_pair(pair) for pair in pairs]

        def attempt(indexed):
            idx, (user_id, anchor) = indexed
            try:
                return self.rank(user_id, anchor, top_n), None
            except (FeatureUnavailable, ValueError, KeyError) as e:
                return None, RankFailure(idx, user_id, anchor, str(e))

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                outcomes = list(pool.map(attempt, enumerate(pairs)))
        else:
            outcomes = [attempt(item) for item in enumerate(pairs)]

        rows: List[Dict] = []
        failures: List[RankFailure] = []
        emitted: Dict[str, int] = {}
        capped = empty = 0
        for (user_id, anchor), (ranked, failure) in zip(pairs, outcomes):
            if failure is not None:
                failures.append(failure)
                continue
            if not ranked:
                empty += 1
                continue
            if max_per_user is not None and emitted.get(user_id, 0) >= max_per_user:
                capped += 1
                continue
            emitted[user_id] = emitted.get(user_id, 0) + 1
            rows.extend(_output_row(user_id, anchor, candidate) for candidate in ranked)

        for failure in failures[:10]:
            logger.warning(f"Pair {failure.index} ({failure.user_id}, {failure.anchor_item_id}) failed: {failure.reason}")
        logger.info(f"Ranked {len(pairs)} pairs: {len(rows)} rows, {len(failures)} failed, "
                    f"{empty} without candidates, {capped} over the per-user cap")
        return rows, failures


def _as_pair(pair: PairLike) -> Tuple[str, str]:
    if isinstance(pair, PushImpression):
        return pair.user_id, pair.anchor_item_id
    user_id, anchor = pair
    return str(user_id), str(anchor)


def _output_row(user_id: str, anchor: str, candidate: RankedCandidate) -> Dict:
    return {
        "user_id": user_id,
        "anchor_item_id": anchor,
        "pushed_item_id": candidate.item_id,
        "predicted_open_rate": candidate.predicted_open_rate,
        "s": candidate.complementarity,
        "rank": candidate.rank,
    }


def rank(user_id: str, anchor_item_id: str, params: MixtureParams, scores: ScoreTable, sources: FeatureSources,
         schema: FeatureSchema, top_n: int = RANKING_CONFIG["top_n"], **options) -> List[RankedCandidate]:
    return Ranker(params, sources, schema, scores, **options).rank(user_id, anchor_item_id, top_n)


def batch_rank(pairs: Iterable[PairLike], params: MixtureParams, scores: ScoreTable, sources: FeatureSources,
               schema: FeatureSchema, top_n: int = RANKING_CONFIG["top_n"],
               max_per_user: Optional[int] = RANKING_CONFIG["max_per_user"], **options
               ) -> Tuple[List[Dict], List[RankFailure]]:
    return Ranker(params, sources, schema, scores, **options).batch_rank(pairs, top_n, max_per_user)


def read_pairs(path) -> List[Tuple[str, str]]:
    """(user_id, anchor_item_id) pairs from a JSON-lines file."""
    return [(str(record["user_id"]), str(record["anchor_item_id"])) for record in read_jsonl(path)]


def write_rankings(rows: Iterable[Dict], path) -> int:
    return write_jsonl(rows, path)
