"""
Configuration Settings Module

This module centralizes all configuration settings and constants for the
complementary-product push pipeline. Values can be overridden through
environment variables (or a .env file) and, at run time, through CLI flags.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Application Information
APP_NAME = "PushMix"
APP_SUBTITLE = "Complementary product push recommendation with a mixture of logistic experts"
APP_VERSION = "1.0.0"
CLI_NAME = "pushmix"

# Default Paths
MODULE_DIR = Path(__file__).parent.parent.parent  # Go up to workspace root
DEFAULT_OUTPUT_DIR = "output"
DEFAULT_SCHEMA_FILE = MODULE_DIR / "example_schema.json"
DEFAULT_SYNTHETIC_SPEC_FILE = MODULE_DIR / "example_synthetic_spec.json"

SECONDS_PER_DAY = 86400


# Environment Variables
def get_env_setting(key: str, default=None, required=False, cast=None):
    """
    Get environment variable with optional default, cast and required validation.

    Args:
        key (str): Environment variable key
        default: Default value if not found
        required (bool): Whether the variable is required
        cast (callable, optional): Conversion applied to a value read from the environment

    Returns:
        Environment variable value (cast if requested) or the default

    Raises:
        ValueError: If required variable is not found or cannot be cast
    """
    value = os.environ.get(key)
    if value is None:
        if required:
            raise ValueError(f"Required environment variable {key} is not set")
        return default
    if cast is not None:
        try:
            return cast(value)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Environment variable {key}={value!r} is invalid: {e}")
    return value


# Logging Configuration
LOGGING_CONFIG = {
    "level": get_env_setting("PUSHMIX_LOG_LEVEL", "INFO").upper(),
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "log_dir": get_env_setting("PUSHMIX_LOG_DIR", "logs"),
    "file_prefix": "pushmix",
}

# Ingestion Configuration
INGESTION_CONFIG = {
    "event_fields": ("user_id", "item_id", "category_id", "kind", "timestamp"),
    "impression_fields": ("user_id", "anchor_item_id", "pushed_item_id", "opened", "timestamp"),
    "catalog_fields": ("item_id", "category_id", "price"),
    "demographic_fields": ("user_id", "groups"),
    "encoding": "utf-8",
    "max_reported_errors": 20,  # Errors echoed to the log per file
}

# Graph Scoring Configuration
SCORING_CONFIG = {
    "min_s": 0.0,
    "max_q": 0.1,
    "candidate_pool": 50,       # Candidates pulled per anchor before ranking
    "csv_float_format": "%.6g",
    "csv_columns": ("i", "j", "p", "q", "s"),
}

# Feature Configuration
FEATURE_CONFIG = {
    "windows_days": (1, 2, 7, 28),
    "user_clusters": 8,
    "purchase_weight": 5.0,
    "view_weight": 1.0,
    "kmeans_max_iter": 100,
    "kmeans_seed": 0,
    "demographics": {"age": 5, "income": 4},
}

# Fitting Configuration
FIT_CONFIG = {
    "contexts": 2,
    "tolerance": 1e-5,          # Relative change of the mean per-example objective
    "max_iter": 200,
    "restarts": 5,
    "l2": 1e-6,
    "inner_tolerance": 1e-8,
    "inner_max_iter": 500,
    "logit_clamp": 35.0,
    "n_jobs": get_env_setting("PUSHMIX_N_JOBS", 1, cast=int),
    "seed": get_env_setting("PUSHMIX_SEED", 0, cast=int),
    "monotonic_slack": 1e-9,
}

# Ranking Configuration
RANKING_CONFIG = {
    "top_n": 1,
    "max_per_user": None,
    "shared_assignment": True,
}

# Evaluation Configuration
EVAL_CONFIG = {
    "k_max": 8,
    "validation_fraction": 0.25,
    "sends": 100000,
    "significance_level": 0.05,
    "feature_sets": ("full", "user-only", "product-only"),
}

# Output Configuration
OUTPUT_CONFIG = {
    "base_dir": get_env_setting("PUSHMIX_OUTPUT_DIR", DEFAULT_OUTPUT_DIR),
    "events_file": "events.jsonl",
    "impressions_file": "impressions.jsonl",
    "catalog_file": "catalog.jsonl",
    "demographics_file": "demographics.jsonl",
    "schema_file": "schema.json",
    "examples_file": "examples.jsonl",
    "ground_truth_file": "ground_truth.json",
    "curve_file": "context_curve.csv",
    "weights_file": "weight_analysis.csv",
    "policies_file": "policy_compare.csv",
    "summary_file": "summary.txt",
    "model_format_version": 1,
}

# Validation Rules
VALIDATION_RULES = {
    "log_levels": ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"),
    "min_contexts": 1,
    "min_restarts": 1,
}

# Error Messages
ERROR_MESSAGES = {
    "file_not_found": "File not found: {path}",
    "malformed_line": "Line {line_no}: {reason}",
    "bad_window": "Window start {start} is after end {end}",
    "dimension_mismatch": "Dimension mismatch for {name}: expected {expected}, got {actual}",
    "node_kind_mismatch": "Score tables have different node kinds: {left} vs {right}",
    "score_kind_mismatch": "Expected a {expected} table, got {actual}",
    "bad_top_n": "top_n must be at least 1, got {top_n}",
    "too_many_clusters": "Cannot form {k} clusters from {distinct} distinct rows",
    "empty_dataset": "Dataset is empty",
    "too_many_contexts": "Context count {contexts} exceeds example count {examples}",
    "bad_fit_config": "Invalid fit configuration: {error}",
    "schema_mismatch": "Schema hash mismatch: model {model} vs features {features}",
    "unknown_slot": "Unknown feature slot: {name}",
    "reference_time": "Reference time {ref_time} is not before impression time {timestamp}",
    "unknown_loss": "Unknown gradient-check loss kind: {kind}",
    "unknown_feature_set": "Unknown feature set: {name}",
}


def validate_config():
    """Validate configuration settings and environment."""
    issues = []

    if not MODULE_DIR.exists():
        issues.append(f"Module directory not found: {MODULE_DIR}")

    if LOGGING_CONFIG["level"] not in VALIDATION_RULES["log_levels"]:
        issues.append(f"Invalid log level: {LOGGING_CONFIG['level']}")

    if FIT_CONFIG["tolerance"] <= 0:
        issues.append("Fit tolerance must be positive")
    if FIT_CONFIG["contexts"] < VALIDATION_RULES["min_contexts"]:
        issues.append(f"Default context count must be at least {VALIDATION_RULES['min_contexts']}")
    if FIT_CONFIG["restarts"] < VALIDATION_RULES["min_restarts"]:
        issues.append("At least one restart is required")
    if FIT_CONFIG["n_jobs"] < 1:
        issues.append(f"PUSHMIX_N_JOBS must be at least 1, got {FIT_CONFIG['n_jobs']}")

    windows = FEATURE_CONFIG["windows_days"]
    if list(windows) != sorted(windows):
        issues.append(f"Feature windows must be increasing: {windows}")

    if not DEFAULT_SCHEMA_FILE.exists():
        issues.append(f"Example schema file missing (optional): {DEFAULT_SCHEMA_FILE}")

    return issues


def get_output_directory(base_dir=None):
    """Get the output directory, creating it if necessary."""
    output_dir = Path(base_dir or OUTPUT_CONFIG["base_dir"])
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def format_error_message(message_key, **kwargs):
    """Format an error message with provided parameters."""
    template = ERROR_MESSAGES.get(message_key, "Unknown error")
    return template.format(**kwargs)
