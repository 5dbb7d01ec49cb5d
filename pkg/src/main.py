#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
PushMix - Main Entry Point

Command-line interface for the complementary-product push pipeline:
ingestion, graph scoring, featurization, mixture training, prediction,
ranking, synthetic data and the offline evaluation studies.

Usage:
    python src/main.py <command> [options]
    python src/main.py --help

Exit codes: 0 success, 1 runtime or data error, 2 bad arguments,
3 an embedded invariant check failed.
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path

# Add src directory to Python path for imports
src_dir = Path(__file__).parent
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from config.settings import (
    APP_NAME, APP_SUBTITLE, APP_VERSION, CLI_NAME, EVAL_CONFIG, FIT_CONFIG, LOGGING_CONFIG,
    OUTPUT_CONFIG, RANKING_CONFIG, get_output_directory, validate_config
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVARIANT = 3

logger = logging.getLogger(CLI_NAME)


def setup_logging(level=None, log_file=True):
    """Setup application logging with console output and an optional timestamped log file."""
    handlers = [logging.StreamHandler(sys.stderr)]
    log_filename = None

    if log_file:
        logs_dir = Path(LOGGING_CONFIG["log_dir"])
        logs_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_filename = logs_dir / f"{LOGGING_CONFIG['file_prefix']}_{timestamp}.log"
        handlers.append(logging.FileHandler(log_filename, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, (level or LOGGING_CONFIG["level"]).upper()),
        format=LOGGING_CONFIG["format"],
        handlers=handlers,
        force=True,
    )

    if log_filename is not None:
        # Also point latest.log at the newest file for easy access
        latest_log = log_filename.parent / "latest.log"
        try:
            if latest_log.exists() or latest_log.is_symlink():
                latest_log.unlink()
            try:
                latest_log.symlink_to(log_filename.name)
            except (OSError, NotImplementedError):
                with open(latest_log, "w") as f:
                    f.write(str(log_filename))
        except OSError:
            pass  # Don't fail if we can't create the pointer
        logging.getLogger(CLI_NAME).debug(f"Logs are being written to: {log_filename}")

    return log_filename


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    from core.ingestion import read_catalog, read_events, read_impressions, write_catalog, write_events, write_impressions

    out_dir = get_output_directory(args.out_dir)
    events = read_events(args.events, strict=args.strict)
    write_events(events.records, out_dir / OUTPUT_CONFIG["events_file"])
    report = [f"events: {len(events.records)} parsed, {events.skipped} skipped"]
    if args.impressions:
        impressions = read_impressions(args.impressions, strict=args.strict)
        write_impressions(impressions.records, out_dir / OUTPUT_CONFIG["impressions_file"])
        report.append(f"impressions: {len(impressions.records)} parsed, {impressions.skipped} skipped")
    if args.catalog:
        catalog = read_catalog(args.catalog, strict=args.strict)
        write_catalog(catalog.records, out_dir / OUTPUT_CONFIG["catalog_file"])
        report.append(f"catalog: {len(catalog.records)} parsed, {catalog.skipped} skipped")
    print("\n".join(report))
    return EXIT_OK


def cmd_score(args):
    from core.graph_scoring import NodeKind, build_score_tables, write_score_table_csv
    from core.ingestion import read_events

    events = read_events(args.events).records
    table = build_score_tables(events, NodeKind(args.node_kind), args.start, args.end)
    write_score_table_csv(table, args.out)
    print(f"{len(table)} {args.node_kind} pairs written to {args.out}")
    return EXIT_OK


def _load_schema(path):
    from models.schema import default_schema, load_schema

    return load_schema(path) if path else default_schema()


def _build_sources(args, schema, ref_time):
    from core.features import build_feature_sources
    from core.graph_scoring import NodeKind, read_score_table_csv
    from core.ingestion import read_catalog, read_demographics, read_events, time_range

    events = read_events(args.events).records
    catalog = read_catalog(args.catalog).records if getattr(args, "catalog", None) else None
    demographics = read_demographics(args.demographics) if getattr(args, "demographics", None) else None
    product_scores = read_score_table_csv(args.scores, NodeKind.PRODUCT) if getattr(args, "scores", None) else None
    if ref_time is None:
        ref_time = time_range(events, default=(0, 1))[1]
    return build_feature_sources(events, ref_time, schema, catalog=catalog, demographics=demographics,
                                 product_scores=product_scores)


def cmd_featurize(args):
    from core.features import featurize_impressions, write_examples
    from core.ingestion import read_impressions
    from models.schema import save_schema

    schema = _load_schema(args.schema)
    impressions = read_impressions(args.impressions).records
    ref_time = args.ref_time
    if ref_time is None:
        ref_time = min((impression.timestamp for impression in impressions), default=1) - 1
    sources = _build_sources(args, schema, ref_time)
    examples, dropped = featurize_impressions(impressions, sources, schema)
    write_examples(examples, args.out)
    if args.schema_out:
        save_schema(schema, args.schema_out)
    print(f"{len(examples)} examples written to {args.out} (m={schema.assignment_dims}, n={schema.prediction_dims}); "
          f"dropped {dropped or 0}")
    return EXIT_OK


def _fit_config(args, contexts=None):
    from models.params import FitConfig

    return FitConfig(
        contexts=contexts if contexts is not None else args.contexts,
        tolerance=args.tol,
        max_iter=args.max_iter,
        restarts=args.restarts,
        seed=args.seed,
        l2=args.l2,
        n_jobs=args.n_jobs,
    )


def cmd_train(args):
    import pandas as pd

    from core.features import ExampleBatch, read_examples
    from core.file_utils import write_frame_csv
    from core.mixture import em_fit
    from models.params import save_model

    batch = ExampleBatch.from_examples(read_examples(args.examples))
    result = em_fit(batch, _fit_config(args))
    save_model(result.params, args.out, result.config, result.final_log_likelihood)
    if args.trace:
        frame = pd.DataFrame([vars(record) for record in result.trace.records])
        write_frame_csv(frame, args.trace, float_format="%.10g")
    print(f"M={result.params.contexts} final mean log-likelihood {result.final_log_likelihood:.6f} "
          f"(restart {result.best_restart}, converged={result.trace.converged})")
    if not all(trace.is_monotonic() for trace in result.traces):
        logger.error("EM objective decreased between iterations")
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_predict(args):
    from core.features import ExampleBatch, read_examples
    from core.file_utils import write_jsonl
    from core.mixture import predict_batch
    from models.params import load_model

    params = load_model(args.model)
    examples = read_examples(args.examples)
    rates = predict_batch(params, ExampleBatch.from_examples(examples))
    rows = ({
        "user_id": example.user_id,
        "anchor_item_id": example.anchor_item_id,
        "pushed_item_id": example.pushed_item_id,
        "predicted_open_rate": float(rate),
    } for example, rate in zip(examples, rates))
    count = write_jsonl(rows, args.out)
    print(f"{count} predictions written to {args.out}")
    return EXIT_OK


def cmd_rank(args):
    from core.ranker import Ranker, read_pairs, write_rankings
    from models.params import load_model

    schema = _load_schema(args.schema)
    params = load_model(args.model)
    sources = _build_sources(args, schema, args.ref_time)
    ranker = Ranker(params, sources, schema, shared_assignment=not args.per_candidate_assignment)
    rows, failures = ranker.batch_rank(read_pairs(args.pairs), args.top_n, args.max_per_user, args.n_jobs)
    write_rankings(rows, args.out)
    print(f"{len(rows)} rankings written to {args.out}; {len(failures)} pairs failed")
    return EXIT_OK


def _dataset_from_spec(path, seed=None):
    from core.synthetic import generate_synthetic, load_synthetic_spec

    spec = load_synthetic_spec(path)
    if seed is not None:
        spec.seed = seed
    return generate_synthetic(spec)


def cmd_synth(args):
    from core.synthetic import write_synthetic

    dataset = _dataset_from_spec(args.spec, args.seed)
    paths = write_synthetic(dataset, args.out_dir)
    print(f"{len(dataset.events)} events and {len(dataset.impressions)} impressions written to {args.out_dir}")
    for role, path in paths.items():
        print(f"  {role}: {path}")
    return EXIT_OK


def _write_summary(out_dir, lines):
    from core.file_utils import write_lines

    path = Path(out_dir) / OUTPUT_CONFIG["summary_file"]
    write_lines(lines, path)
    print("\n".join(lines))


def cmd_eval_curve(args):
    from core.evaluation import check_curve, context_curve, select_k
    from core.features import ExampleBatch, read_examples
    from core.file_utils import write_frame_csv

    if args.spec:
        dataset = _dataset_from_spec(args.spec)
        batch, schema = dataset.batch, dataset.schema
    else:
        schema = _load_schema(args.schema)
        batch = ExampleBatch.from_examples(read_examples(args.examples))
    out_dir = get_output_directory(args.out_dir)
    curve = context_curve(batch, schema, args.kmax, args.feature_sets, _fit_config(args, contexts=1),
                          args.validation_fraction, args.seed, args.n_jobs)
    write_frame_csv(curve, out_dir / OUTPUT_CONFIG["curve_file"], float_format="%.10g")
    issues = check_curve(curve)
    lines = [f"{APP_NAME} context curve", f"selected k (full): {select_k(curve)}"]
    lines += [f"{row.feature_set:>12} k={row.k}: valid {row.valid_loglik:.6f}" for row in curve.itertuples()]
    lines += [f"CHECK FAILED: {issue}" for issue in issues]
    _write_summary(out_dir, lines)
    return EXIT_INVARIANT if issues else EXIT_OK


def cmd_eval_weights(args):
    from core.evaluation import weight_analysis, weight_correlation
    from core.file_utils import write_frame_csv
    from models.params import load_model

    table = weight_analysis(load_model(args.model), _load_schema(args.schema))
    out = args.out or get_output_directory(args.out_dir) / OUTPUT_CONFIG["weights_file"]
    write_frame_csv(table, out)
    if len(table):
        print(f"Spearman(active weight, user-product effect) = {weight_correlation(table):.3f}")
    else:
        print("Single-context model: no weight analysis")
    return EXIT_OK


def cmd_eval_policies(args):
    from core.evaluation import check_policy_table, context_curve, run_policy_study, sample_sends, select_k
    from core.file_utils import write_frame_csv

    dataset = _dataset_from_spec(args.spec)
    out_dir = get_output_directory(args.out_dir)
    config = _fit_config(args, contexts=1)
    k_hat = args.k_hat
    if k_hat is None:
        curve = context_curve(dataset.batch, dataset.schema, args.kmax, ("full",), config,
                              args.validation_fraction, args.seed, args.n_jobs)
        k_hat = select_k(curve)
    sends = sample_sends(dataset.purchases_by_user(), args.sends, args.seed)
    table = run_policy_study(dataset.truth, dataset.batch, sends, k_hat, config, args.seed)
    write_frame_csv(table, out_dir / OUTPUT_CONFIG["policies_file"])
    issues = check_policy_table(table)
    lines = [f"{APP_NAME} policy comparison (k_hat={k_hat}, sends={len(sends)})"]
    lines += [f"{row.policy:>14}: open rate {row.open_rate:.4f} relative {row.relative_open_rate:.3f} p={row.p_value:.3g}"
              for row in table.itertuples()]
    lines += [f"CHECK FAILED: {issue}" for issue in issues]
    _write_summary(out_dir, lines)
    return EXIT_INVARIANT if issues else EXIT_OK


def cmd_gradcheck(args):
    from core.features import ExampleBatch, read_examples
    from core.mixture import gradient_check
    from core.synthetic import planted_examples, random_params

    if args.examples:
        batch = ExampleBatch.from_examples(read_examples(args.examples)[:args.size])
        params = random_params(args.contexts, batch.m, batch.n, args.seed, scale=0.5, schema_hash=batch.schema_hash)
    else:
        params = random_params(args.contexts, 4, 5, args.seed, scale=0.5)
        batch = planted_examples(args.size, params, args.seed).batch
    error = gradient_check(args.kind, params, batch, args.l2)
    print(f"{args.kind} gradient max relative error: {error:.3e}")
    return EXIT_INVARIANT if error >= args.threshold else EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_fit_arguments(parser, contexts=True):
    if contexts:
        parser.add_argument("--contexts", "-M", type=int, default=FIT_CONFIG["contexts"], help="Context count M")
    parser.add_argument("--tol", type=float, default=FIT_CONFIG["tolerance"], help="Relative convergence threshold")
    parser.add_argument("--max-iter", type=int, default=FIT_CONFIG["max_iter"], help="Max EM iterations")
    parser.add_argument("--restarts", type=int, default=FIT_CONFIG["restarts"], help="EM restarts")
    parser.add_argument("--l2", type=float, default=FIT_CONFIG["l2"], help="L2 strength")
    parser.add_argument("--n-jobs", type=int, default=FIT_CONFIG["n_jobs"], help="Worker threads")
    parser.add_argument("--seed", type=int, default=FIT_CONFIG["seed"], help="Random seed")


def build_parser():
    parser = argparse.ArgumentParser(prog=CLI_NAME, description=f"{APP_NAME} - {APP_SUBTITLE}")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument("--log-level", help="Override the log level")
    parser.add_argument("--no-log-file", action="store_true", help="Log to the console only")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="Validate and normalize raw logs")
    ingest.add_argument("--events", required=True)
    ingest.add_argument("--impressions")
    ingest.add_argument("--catalog")
    ingest.add_argument("--strict", action="store_true", help="Stop at the first malformed line")
    ingest.add_argument("--out-dir", default=OUTPUT_CONFIG["base_dir"])
    ingest.set_defaults(handler=cmd_ingest)

    score = commands.add_parser("score", help="Compute complementarity scores")
    score.add_argument("--events", required=True)
    score.add_argument("--node-kind", choices=["product", "category"], default="product")
    score.add_argument("--start", type=int)
    score.add_argument("--end", type=int)
    score.add_argument("--out", required=True)
    score.set_defaults(handler=cmd_score)

    featurize = commands.add_parser("featurize", help="Turn impressions into examples")
    featurize.add_argument("--events", required=True)
    featurize.add_argument("--impressions", required=True)
    featurize.add_argument("--catalog")
    featurize.add_argument("--demographics", help="Demographics JSON-lines; demographic slots stay zero when omitted")
    featurize.add_argument("--scores", help="Product score CSV; computed from events when omitted")
    featurize.add_argument("--schema", help="Schema JSON; default schema when omitted")
    featurize.add_argument("--schema-out")
    featurize.add_argument("--ref-time", type=int, help="Feature reference time (default: before the first impression)")
    featurize.add_argument("--out", required=True)
    featurize.set_defaults(handler=cmd_featurize)

    train = commands.add_parser("train", help="Fit the mixture model by EM")
    train.add_argument("--examples", required=True)
    _add_fit_arguments(train)
    train.add_argument("--trace", help="Write the best restart's EM trace as CSV")
    train.add_argument("--out", required=True)
    train.set_defaults(handler=cmd_train)

    predict = commands.add_parser("predict", help="Predict open rates for examples")
    predict.add_argument("--model", required=True)
    predict.add_argument("--examples", required=True)
    predict.add_argument("--out", required=True)
    predict.set_defaults(handler=cmd_predict)

    rank = commands.add_parser("rank", help="Choose the item to push for (user, anchor) pairs")
    rank.add_argument("--model", required=True)
    rank.add_argument("--events", required=True)
    rank.add_argument("--scores", required=True)
    rank.add_argument("--pairs", required=True)
    rank.add_argument("--catalog")
    rank.add_argument("--demographics", help="Demographics JSON-lines, as given to featurize")
    rank.add_argument("--schema")
    rank.add_argument("--ref-time", type=int)
    rank.add_argument("--top-n", type=int, default=RANKING_CONFIG["top_n"])
    rank.add_argument("--max-per-user", type=int, default=RANKING_CONFIG["max_per_user"])
    rank.add_argument("--per-candidate-assignment", action="store_true",
                      help="Rebuild x_hat from each candidate instead of the anchor")
    rank.add_argument("--n-jobs", type=int, default=FIT_CONFIG["n_jobs"])
    rank.add_argument("--out", required=True)
    rank.set_defaults(handler=cmd_rank)

    synth = commands.add_parser("synth", help="Generate a synthetic population")
    synth.add_argument("--spec", required=True)
    synth.add_argument("--out-dir", required=True)
    synth.add_argument("--seed", type=int, help="Override the spec seed")
    synth.set_defaults(handler=cmd_synth)

    evaluate = commands.add_parser("eval", help="Offline studies")
    studies = evaluate.add_subparsers(dest="study", required=True)

    curve = studies.add_parser("curve", help="Validation log-likelihood by context count and feature set")
    curve.add_argument("--spec")
    curve.add_argument("--examples")
    curve.add_argument("--schema")
    curve.add_argument("--kmax", type=int, default=EVAL_CONFIG["k_max"])
    curve.add_argument("--feature-sets", nargs="+", default=list(EVAL_CONFIG["feature_sets"]))
    curve.add_argument("--validation-fraction", type=float, default=EVAL_CONFIG["validation_fraction"])
    _add_fit_arguments(curve, contexts=False)
    curve.add_argument("--out-dir", default=OUTPUT_CONFIG["base_dir"])
    curve.set_defaults(handler=cmd_eval_curve)

    weights = studies.add_parser("weights", help="Per-context weight analysis")
    weights.add_argument("--model", required=True)
    weights.add_argument("--schema")
    weights.add_argument("--out")
    weights.add_argument("--out-dir", default=OUTPUT_CONFIG["base_dir"])
    weights.set_defaults(handler=cmd_eval_weights)

    policies = studies.add_parser("policies", help="Simulated policy comparison")
    policies.add_argument("--spec", required=True)
    policies.add_argument("--sends", type=int, default=EVAL_CONFIG["sends"])
    policies.add_argument("--k-hat", type=int, help="Context count for CPR+MM (default: chosen from the curve)")
    policies.add_argument("--kmax", type=int, default=EVAL_CONFIG["k_max"])
    policies.add_argument("--validation-fraction", type=float, default=EVAL_CONFIG["validation_fraction"])
    _add_fit_arguments(policies, contexts=False)
    policies.add_argument("--out-dir", default=OUTPUT_CONFIG["base_dir"])
    policies.set_defaults(handler=cmd_eval_policies)

    gradcheck = commands.add_parser("gradcheck", help="Check analytic gradients against finite differences")
    gradcheck.add_argument("--kind", choices=["assignment", "prediction", "joint"], default="joint")
    gradcheck.add_argument("--examples")
    gradcheck.add_argument("--contexts", "-M", type=int, default=FIT_CONFIG["contexts"])
    gradcheck.add_argument("--size", type=int, default=20)
    gradcheck.add_argument("--l2", type=float, default=FIT_CONFIG["l2"])
    gradcheck.add_argument("--threshold", type=float, default=1e-5)
    gradcheck.add_argument("--seed", type=int, default=FIT_CONFIG["seed"])
    gradcheck.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv=None):
    """Main application entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(args.log_level, log_file=not args.no_log_file)
    for issue in validate_config():
        logger.warning(f"Configuration: {issue}")

    if args.command == "eval" and args.study == "curve" and not args.spec and not args.examples:
        parser.error("eval curve needs --spec or --examples")

    try:
        return args.handler(args)
    except (FileNotFoundError, ValueError, KeyError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
