"""
Evaluation Module

Offline studies on synthetic populations:

- context_curve: validation log-likelihood for k = 1..K_max under several
  assignment feature sets
- weight_analysis: per-context assignment weight on the active score
  against the mean prediction effect of user-product and product-product
  slots
- policy_compare: simulated open rates of push policies against the
  planted ground truth, chained two-proportion z-tests
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config.settings import EVAL_CONFIG, FIT_CONFIG
from models.params import FitConfig, MixtureParams
from models.schema import Family, FeatureSchema

from .features import ExampleBatch, FeatureUnavailable
from .graph_scoring import select_candidates
from .mixture import em_fit, log_likelihood
from .ranker import Ranker
from .synthetic import GroundTruth, split_examples

# Configure logging
logger = logging.getLogger(__name__)

Send = Tuple[str, str]
Chooser = Callable[[str, str], Optional[str]]

CURVE_COLUMNS = ["feature_set", "k", "train_loglik", "valid_loglik", "iterations", "converged", "monotonic"]
WEIGHT_COLUMNS = ["context", "active_score_weight", "user_product_effect", "product_product_effect"]
POLICY_COLUMNS = ["policy", "sends", "opens", "open_rate", "expected_open_rate", "relative_open_rate",
                  "z_stat", "p_value", "significant"]


# ---------------------------------------------------------------------------
# Context-count curve
# ---------------------------------------------------------------------------

def _fit_cell(train: ExampleBatch, valid: ExampleBatch, feature_set: str, columns: Sequence[int], k: int,
              config: FitConfig) -> Dict:
    cell_config = replace(config, contexts=k, n_jobs=1)
    result = em_fit(train.with_assignment_columns(columns), cell_config)
    valid_loglik = log_likelihood(result.params, valid.with_assignment_columns(columns), config.logit_clamp)
    logger.info(f"Curve cell {feature_set} k={k}: valid loglik {valid_loglik:.6f}")
    return {
        "feature_set": feature_set,
        "k": k,
        "train_loglik": result.final_log_likelihood,
        "valid_loglik": valid_loglik,
        "iterations": len(result.trace.records) - 1,
        "converged": result.trace.converged,
        "monotonic": all(trace.is_monotonic() for trace in result.traces),
    }


def context_curve(batch: ExampleBatch, schema: FeatureSchema, k_max: int = EVAL_CONFIG["k_max"],
                  feature_sets: Sequence[str] = EVAL_CONFIG["feature_sets"], config: Optional[FitConfig] = None,
                  validation_fraction: float = EVAL_CONFIG["validation_fraction"], seed: int = FIT_CONFIG["seed"],
                  n_jobs: int = 1) -> pd.DataFrame:
    """
    Fit k = 1..k_max for every feature set on one train/validation split.

    Feature sets restrict x_hat to the schema columns they keep; x is never
    restricted. Cells are independent and may run in a thread pool.

    Returns:
        DataFrame with CURVE_COLUMNS, one row per (feature_set, k)
    """
    config = config or FitConfig(seed=seed)
    train, valid = split_examples(batch, validation_fraction, seed)
    cells = [(name, schema.assignment_indices(name), k) for name in feature_sets for k in range(1, k_max + 1)]
    logger.info(f"Context curve: {len(cells)} cells on {len(train)} train / {len(valid)} validation examples")

    def run(cell):
        name, columns, k = cell
        return _fit_cell(train, valid, name, columns, k, config)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(cell) for cell in cells]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def select_k(curve: pd.DataFrame, feature_set: str = "full", threshold: float = 0.002) -> int:
    """Smallest k whose successor gains less than threshold in validation log-likelihood."""
    rows = curve[curve["feature_set"] == feature_set].sort_values("k")
    ks, values = rows["k"].tolist(), rows["valid_loglik"].tolist()
    for idx in range(len(ks) - 1):
        if values[idx + 1] - values[idx] < threshold:
            return int(ks[idx])
    return int(ks[-1]) if ks else 1


def check_curve(curve: pd.DataFrame) -> List[str]:
    issues = []
    if not curve["monotonic"].all():
        bad = curve.loc[~curve["monotonic"], ["feature_set", "k"]].values.tolist()
        issues.append(f"EM objective decreased in cells {bad}")
    single = curve.loc[curve["k"] == 1, "valid_loglik"]
    if len(single) > 1 and single.max() - single.min() > 1e-6:
        issues.append("k=1 cells differ across feature sets")
    return issues


# ---------------------------------------------------------------------------
# Weight analysis
# ---------------------------------------------------------------------------

def weight_analysis(params: MixtureParams, schema: FeatureSchema) -> pd.DataFrame:
    """
    Per-context scatter data. Effects are reported as -psi, so a positive
    effect means the slot raises the open probability. The pinned context
    has assignment weight 0. A single-context model gives an empty table.
    """
    if params.contexts < 2:
        logger.info("Weight analysis needs at least 2 contexts; returning an empty table")
        return pd.DataFrame(columns=WEIGHT_COLUMNS)
    active = schema.assignment_names.index("active_score")
    theta = np.vstack([params.theta, np.zeros((1, params.m))])
    user_product = schema.prediction_indices(Family.USER_PRODUCT)
    product_product = schema.prediction_indices(Family.PRODUCT_PRODUCT)
    rows = [
        {
            "context": k,
            "active_score_weight": float(theta[k, active]),
            "user_product_effect": float(-params.psi[k, user_product].mean()),
            "product_product_effect": float(-params.psi[k, product_product].mean()),
        }
        for k in range(params.contexts)
    ]
    return pd.DataFrame(rows, columns=WEIGHT_COLUMNS)


def weight_correlation(table: pd.DataFrame, column: str = "user_product_effect") -> float:
    """Spearman correlation between active-score weight and an effect column; nan when undefined."""
    if len(table) < 2 or table["active_score_weight"].nunique() < 2 or table[column].nunique() < 2:
        return float("nan")
    return float(stats.spearmanr(table["active_score_weight"], table[column]).correlation)


# ---------------------------------------------------------------------------
# Significance
# ---------------------------------------------------------------------------

def two_proportion_ztest(opens_a: int, n_a: int, opens_b: int, n_b: int) -> Tuple[float, float]:
    """
    Pooled two-sided z-test of rate_b against rate_a.

    Returns:
        (z, p); a zero standard error gives (0.0, 1.0)
    """
    if n_a == 0 or n_b == 0:
        return 0.0, 1.0
    pooled = (opens_a + opens_b) / (n_a + n_b)
    se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b))
    if se == 0:
        return 0.0, 1.0
    z = (opens_b / n_b - opens_a / n_a) / se
    return float(z), float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def aa_pvalues(open_probs: Sequence[float], replicates: int, seed: int = 0) -> np.ndarray:
    """p-values of A/A tests: two independent simulations of the same push set per replicate."""
    open_probs = np.asarray(open_probs, dtype=float)
    pvalues = np.empty(replicates)
    for idx, child in enumerate(np.random.SeedSequence(seed).spawn(replicates)):
        rng = np.random.default_rng(child)
        opens_a = int((rng.random(len(open_probs)) < open_probs).sum())
        opens_b = int((rng.random(len(open_probs)) < open_probs).sum())
        pvalues[idx] = two_proportion_ztest(opens_a, len(open_probs), opens_b, len(open_probs))[1]
    return pvalues


def uniformity_pvalue(pvalues: Sequence[float]) -> float:
    """Kolmogorov-Smirnov test of the p-values against U(0, 1)."""
    return float(stats.kstest(np.asarray(pvalues, dtype=float), "uniform").pvalue)


# ---------------------------------------------------------------------------
# Policy comparison
# ---------------------------------------------------------------------------

def sample_sends(bought: Dict[str, List[str]], count: int, seed: int = 0) -> List[Send]:
    """(user, anchor) sends drawn uniformly over buyers, then over their purchases."""
    rng = np.random.default_rng(seed)
    buyers = sorted(bought)
    if not buyers:
        return []
    sends = []
    for _ in range(count):
        user = buyers[rng.integers(len(buyers))]
        sends.append((user, bought[user][rng.integers(len(bought[user]))]))
    return sends


@dataclass
class PolicySet:
    """Push policies over one population; each caches its choice per (user, anchor)."""

    truth: GroundTruth
    models: Dict[str, MixtureParams] = field(default_factory=dict)
    _popular: List[str] = field(default_factory=list, init=False, repr=False)
    _rankers: Dict[str, Ranker] = field(default_factory=dict, init=False, repr=False)
    _preferred: Dict[str, List[Tuple[float, str]]] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        sources = self.truth.sources
        sales = sources.products.sales[-1]
        self._popular = sorted(sources.item_category, key=lambda item: (-sales.get(item, 0), item))
        self._rankers = {name: Ranker(params, sources, self.truth.schema) for name, params in self.models.items()}
        for (user, item), value in sources.item_preferences.counts[-1].items():
            self._preferred.setdefault(user, []).append((-value, item))
        for ranked in self._preferred.values():
            ranked.sort()

    def popularity(self, user_id: str, anchor: str) -> Optional[str]:
        return next((item for item in self._popular if item != anchor), None)

    def ppr_proxy(self, user_id: str, anchor: str) -> Optional[str]:
        """Highest user-item preference over the longest window, no anchor involved."""
        for _, item in self._preferred.get(user_id, []):
            if item != anchor:
                return item
        return self.popularity(user_id, anchor)

    def _user_product_score(self, user_id: str, item_id: str) -> float:
        sources = self.truth.sources
        category = sources.item_category[item_id]
        return float(np.mean(np.concatenate([
            sources.item_preferences.scores(user_id, item_id),
            sources.category_preferences.scores(user_id, category),
        ])))

    def cpr_rule(self, user_id: str, anchor: str) -> Optional[str]:
        """Highest user-product score times complementarity among the candidates."""
        sources = self.truth.sources
        candidates = [pair for pair in select_candidates(sources.product_scores, anchor)
                      if pair.candidate != anchor and sources.is_known_item(pair.candidate)]
        if not candidates:
            return self.popularity(user_id, anchor)
        best = min(candidates, key=lambda pair: (
            -self._user_product_score(user_id, pair.candidate) * pair.complementarity,
            -pair.complementarity, pair.candidate))
        return best.candidate

    def model(self, name: str) -> Chooser:
        ranker = self._rankers[name]

        def choose(user_id: str, anchor: str) -> Optional[str]:
            ranked = ranker.rank(user_id, anchor, top_n=1)
            return ranked[0].item_id if ranked else self.popularity(user_id, anchor)

        return choose


def _simulate(choices: List[Optional[str]], sends: Sequence[Send], truth: GroundTruth,
              uniforms: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.array([
        truth.open_probability(user, anchor, item) if item is not None else 0.0
        for (user, anchor), item in zip(sends, choices)
    ])
    return probs, uniforms < probs


def _oracle_choice(truth: GroundTruth, user: str, anchor: str, picked: Sequence[Optional[str]]) -> Optional[str]:
    sources = truth.sources
    options = {item for item in picked if item is not None}
    if sources.product_scores is not None:
        options.update(pair.candidate for pair in select_candidates(sources.product_scores, anchor))
    options = sorted(item for item in options if item != anchor and sources.is_known_item(item))
    if not options:
        return None
    return max(options, key=lambda item: (truth.open_probability(user, anchor, item), item))


def policy_choices(truth: GroundTruth, sends: Sequence[Send], policies: Dict[str, Chooser],
                   include_oracle: bool = True) -> Dict[str, List[Optional[str]]]:
    """
    The item each policy pushes for every send, None where it has nothing to
    push. The oracle takes the best true open probability over the anchor's
    complementary candidates and everything the other policies picked.
    """
    distinct = sorted(set(sends))
    picks: Dict[str, Dict[Send, Optional[str]]] = {}
    for name, chooser in policies.items():
        cache: Dict[Send, Optional[str]] = {}
        for user, anchor in distinct:
            try:
                cache[(user, anchor)] = chooser(user, anchor)
            except (FeatureUnavailable, ValueError, KeyError) as e:
                logger.warning(f"Policy {name} failed for ({user}, {anchor}): {e}")
                cache[(user, anchor)] = None
        picks[name] = cache

    if include_oracle:
        picks["oracle"] = {
            send: _oracle_choice(truth, send[0], send[1], [cache[send] for cache in picks.values()])
            for send in distinct
        }
    return {name: [cache[send] for send in sends] for name, cache in picks.items()}


def policy_compare(truth: GroundTruth, sends: Sequence[Send], policies: Dict[str, Chooser], seed: int = 0,
                   baseline: str = "popularity", include_oracle: bool = True,
                   significance_level: float = EVAL_CONFIG["significance_level"],
                   independent: Sequence[str] = ()) -> pd.DataFrame:
    """
    Simulate every policy on the same sends with common random numbers: send
    i opens when u_i < P(open | pushed item). Policies named in independent
    (A/A arms) draw their own uniforms instead. Rows keep the policy order
    with the oracle last; each row is z-tested against the previous one,
    the first against itself.
    """
    rng = np.random.default_rng(seed)
    uniforms = rng.random(len(sends))
    own_uniforms = {name: rng.random(len(sends)) for name in independent}
    chosen = policy_choices(truth, sends, policies, include_oracle)

    rows = []
    previous = None
    for name, choices in chosen.items():
        probs, opens = _simulate(choices, sends, truth, own_uniforms.get(name, uniforms))
        n_opens, n_sends = int(opens.sum()), len(sends)
        rate = n_opens / n_sends if n_sends else 0.0
        reference = previous if previous is not None else (n_opens, n_sends)
        z, p = two_proportion_ztest(reference[0], reference[1], n_opens, n_sends)
        rows.append({
            "policy": name,
            "sends": n_sends,
            "opens": n_opens,
            "open_rate": rate,
            "expected_open_rate": float(probs.mean()) if n_sends else 0.0,
            "relative_open_rate": np.nan,
            "z_stat": z,
            "p_value": p,
            "significant": bool(p < significance_level),
        })
        previous = (n_opens, n_sends)

    table = pd.DataFrame(rows, columns=POLICY_COLUMNS)
    reference_row = table[table["policy"] == baseline]
    baseline_rate = float((reference_row if len(reference_row) else table).iloc[0]["open_rate"]) if len(table) else 0.0
    if baseline_rate > 0:
        table["relative_open_rate"] = table["open_rate"] / baseline_rate
    for row in table.itertuples(index=False):
        logger.info(f"Policy {row.policy}: open rate {row.open_rate:.4f} "
                    f"(expected {row.expected_open_rate:.4f}), p={row.p_value:.3g}")
    return table


def check_policy_table(table: pd.DataFrame) -> List[str]:
    issues = []
    if not table["p_value"].between(0.0, 1.0).all():
        issues.append("p-values outside [0, 1]")
    if "oracle" in set(table["policy"]):
        oracle = float(table.loc[table["policy"] == "oracle", "expected_open_rate"].iloc[0])
        if (table["expected_open_rate"] > oracle + 1e-12).any():
            issues.append("a policy beats the oracle's expected open rate")
    return issues


def run_policy_study(truth: GroundTruth, batch: ExampleBatch, sends: Sequence[Send], k_hat: int,
                     config: Optional[FitConfig] = None, seed: int = 0, aa_row: bool = True) -> pd.DataFrame:
    """
    Fit CPR+MM with one context and with k_hat contexts on the batch, then
    compare popularity, PPR proxy, CPR rule and both models.
    """
    config = config or FitConfig(seed=seed)
    models = {
        "cpr_mm_1": em_fit(batch, replace(config, contexts=1)).params,
        "cpr_mm_k": em_fit(batch, replace(config, contexts=k_hat)).params,
    }
    policy_set = PolicySet(truth, models)
    policies: Dict[str, Chooser] = {"popularity": policy_set.popularity}
    if aa_row:
        policies["popularity_aa"] = policy_set.popularity
    policies.update({
        "ppr_proxy": policy_set.ppr_proxy,
        "cpr_rule": policy_set.cpr_rule,
        "cpr_mm_1": policy_set.model("cpr_mm_1"),
        "cpr_mm_k": policy_set.model("cpr_mm_k"),
    })
    return policy_compare(truth, sends, policies, seed=seed, independent=("popularity_aa",) if aa_row else ())
