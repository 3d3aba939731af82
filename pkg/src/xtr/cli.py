"""Command-line surface: one binary, one subcommand per workflow.

Exit codes: 0 success, 1 usage error, 2 data error, 3 self-test failure.
Input paths resolve against ``--data-dir`` (default: the ``XTR_DATA_DIR``
environment variable, else the current directory). A ``key=value`` config
file supplies defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fixtures, metrics, probes, scoring, training
from .cost import CostModelParams, cost_report
from .errors import XTRError
from .index import TokenIndex, build_partitions, load_partitions, save_partitions
from .pipeline import PipelineConfig, run_queries, write_trec_run
from .scoring import ImputationRule
from .store import build_corpus, load_embeddings, load_queries

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SELFTEST = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args: argparse.Namespace, config: dict[str, str], key: str,
             default, cast):
    """Explicit flag > config file > built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        try:
            return cast(config[key])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key {key}: {exc}")
    return default


def _parse_imputation(text: str) -> ImputationRule:
    text = text.strip().lower()
    if text == "none":
        return ImputationRule.none()
    if text in ("topk", "topk_score"):
        return ImputationRule.topk_score()
    if text.startswith(("const:", "constant:")):
        try:
            return ImputationRule.constant(float(text.split(":", 1)[1]))
        except ValueError:
            raise UsageError(f"bad constant imputation value in {text!r}")
    raise UsageError(
        f"unknown imputation {text!r}; use none, topk, or const:<value>")


def _data_path(path: str, data_dir: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(data_dir) / p


def _load_index(args, data_dir: str) -> TokenIndex:
    matrix = load_embeddings(_data_path(args.embeddings, data_dir))
    records, stats = build_corpus(_data_path(args.manifest, data_dir), matrix)
    return TokenIndex(matrix, records, stats)


def _load_query_set(args, data_dir: str):
    matrix = load_embeddings(_data_path(args.query_embeddings, data_dir))
    return load_queries(_data_path(args.query_manifest, data_dir), matrix)


def _emit(obj, output: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_build_index(args, config) -> int:
    index = _load_index(args, args.data_dir)
    report = {
        "num_docs": index.stats.num_docs,
        "total_tokens": index.stats.total_tokens,
        "mean_doc_tokens": index.stats.mean_doc_tokens,
        "dim": index.dim,
        "normalized": index.normalized,
    }
    partitions = _resolve(args, config, "partitions", None, int)
    if partitions:
        part = build_partitions(index, partitions, seed=args.seed)
        out = args.partitions_out or "partitions.json"
        save_partitions(part, out)
        report["partitions"] = part.num_partitions
        report["partitions_file"] = out
    _emit(report, args.output)
    return EXIT_OK


def _cmd_search(args, config) -> int:
    mode = _resolve(args, config, "mode", "xtr", str)
    k_prime = _resolve(args, config, "k_prime", 64, int)
    top_docs = _resolve(args, config, "top_docs", 1000, int)
    imputation_text = _resolve(args, config, "imputation", None, str)
    imputation = _parse_imputation(imputation_text) if imputation_text else None
    index = _load_index(args, args.data_dir)
    queries = _load_query_set(args, args.data_dir)
    pipeline_config = PipelineConfig(
        mode=mode, k_prime=k_prime, top_docs=top_docs,
        imputation=imputation, workers=args.workers)
    retriever = None
    if args.partitions_file:
        part = load_partitions(index,
                               _data_path(args.partitions_file, args.data_dir))
        probes_count = args.probes or part.num_partitions
        retriever = lambda matrix: part.retrieve(matrix, k_prime, probes_count)
    run = run_queries(index, queries, pipeline_config, retriever=retriever)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            write_trec_run(run, fh, tag=args.tag)
    else:
        write_trec_run(run, sys.stdout, tag=args.tag)
    return EXIT_OK


def _cmd_evaluate(args, config) -> int:
    run = metrics.load_run(_data_path(args.run, args.data_dir))
    qrels = metrics.load_qrels(_data_path(args.qrels, args.data_dir))
    mrr_k = _resolve(args, config, "mrr_k", 10, int)
    ndcg_k = _resolve(args, config, "ndcg_k", 10, int)
    recall_k = _resolve(args, config, "recall_k", 100, int)
    _emit(metrics.evaluate_run(run, qrels, mrr_k, ndcg_k, recall_k),
          args.output)
    return EXIT_OK


def _cmd_cost_model(args, config) -> int:
    params = CostModelParams(
        query_tokens=_resolve(args, config, "n", 16, int),
        dim=_resolve(args, config, "d", 128, int),
        k_prime=_resolve(args, config, "k_prime", 100, int),
        mean_doc_tokens=_resolve(args, config, "m_bar", 55.0, float),
        mean_retrieved_per_doc=_resolve(args, config, "r_bar", 2.5, float),
    )
    _emit(cost_report(params), args.output)
    return EXIT_OK


def _cmd_grad_check(args, config) -> int:
    rng = np.random.default_rng(args.seed)
    batches = _resolve(args, config, "batches", 20, int)
    batch_size = _resolve(args, config, "batch_size", 4, int)
    n = _resolve(args, config, "query_tokens", 4, int)
    m = _resolve(args, config, "doc_tokens", 5, int)
    dim = _resolve(args, config, "dim", 8, int)
    k_train = _resolve(args, config, "k_train", 3, int)
    h = _resolve(args, config, "h", 1e-5, float)
    som = training.GradReport()
    xtr = training.GradReport()
    for _ in range(batches):
        query = fixtures.random_unit_vectors(rng, n, dim).astype(np.float64)
        docs = [fixtures.random_unit_vectors(rng, m, dim).astype(np.float64)
                for _ in range(batch_size)]
        positive = int(rng.integers(0, batch_size))
        batch = training.MiniBatch(query, docs, positive)
        p_batch = training.batch_affinities(batch)
        a_batch = scoring.alignment_inbatch_topk(p_batch, k_train)
        for report, masks in ((som, None), (xtr, a_batch)):
            part = training.finite_diff_check(p_batch, positive, h,
                                              a_batch=masks)
            report.entries.extend(part.entries)
            report.excluded.extend(part.excluded)
    _emit({"som": som.to_dict(), "xtr": xtr.to_dict()}, args.output)
    return EXIT_OK


def _cmd_probe(args, config) -> int:
    index = _load_index(args, args.data_dir)
    queries = _load_query_set(args, args.data_dir)
    k_prime = _resolve(args, config, "k_prime", 16, int)
    max_rank = _resolve(args, config, "max_rank", k_prime, int)
    results = {q.query_id: index.retrieve(q.matrix, k_prime, args.workers)
               for q in queries}
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        if args.probe == "gold":
            if not args.qrels:
                raise UsageError("--qrels is required for the gold probe")
            qrels = metrics.load_qrels(_data_path(args.qrels, args.data_dir))
            probes.write_rank_csv(
                probes.gold_token_prob(results, qrels, max_rank), out)
        elif args.probe == "lexical":
            from .store import corpus_token_texts
            corpus_texts = corpus_token_texts(index.records)
            if corpus_texts is None:
                raise XTRError("corpus manifest lacks token_texts")
            query_texts = {}
            for q in queries:
                if q.token_texts is None:
                    raise XTRError(f"query {q.query_id!r} lacks token_texts")
                query_texts[q.query_id] = list(q.token_texts)
            probes.write_rank_csv(
                probes.lexical_match_prob(results, query_texts,
                                          corpus_texts, max_rank), out)
        else:
            bins = _resolve(args, config, "bins", 40, int)
            edges, densities = probes.score_histogram(
                results, bins, normalized=index.normalized)
            probes.write_histogram_csv(edges, densities, out)
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def _selftest_fixture(report) -> bool:
    fx = fixtures.peaked_negative_batch()
    batch = training.MiniBatch(fx["query"], fx["docs"], fx["positive_index"])
    p_batch = training.batch_affinities(batch)
    som = training.colbert_scores(p_batch)
    ok = abs(som[0] - fx["positive_score"]) <= 1e-9
    ok &= int(np.argmax(som)) == 0
    ok &= training.ce_loss(som, 0) < 0.05

    result = fx["index"].retrieve(fx["query_matrix"], k_prime=1)
    positive_rows = int((result.doc_ordinals == 0).sum())
    ok &= positive_rows == 0

    a_batch = scoring.alignment_inbatch_topk(p_batch, k_train=1)
    xtr = training.xtr_scores(p_batch, a_batch)
    ok &= xtr[0] == 0.0
    ok &= training.ce_loss(xtr, 0) >= math.log(len(fx["docs"])) - 0.05
    report("peaked-negative fixture", ok)
    return ok


def _selftest_reduction(report, seed: int) -> bool:
    rng = np.random.default_rng(seed)
    index = fixtures.random_corpus_index(rng, num_docs=30, max_doc_tokens=6,
                                         dim=8)
    queries = fixtures.random_query_set(rng, num_queries=3,
                                        max_query_tokens=4, dim=8)
    k_full = index.num_tokens
    xtr_run = run_queries(index, queries, PipelineConfig(
        mode="xtr", k_prime=k_full, top_docs=index.stats.num_docs,
        imputation=ImputationRule.topk_score()))
    colbert_run = run_queries(index, queries, PipelineConfig(
        mode="colbert", k_prime=k_full, top_docs=index.stats.num_docs))
    ok = True
    for xe, ce in zip(xtr_run.entries, colbert_run.entries):
        ok &= [d for d, _ in xe.ranking] == [d for d, _ in ce.ranking]
        ok &= all(abs(a - b) <= 1e-6
                  for (_, a), (_, b) in zip(xe.ranking, ce.ranking))
    report("full-coverage reduction", ok)
    return ok


def _cmd_selftest(args, config) -> int:
    def report(name: str, ok: bool) -> None:
        print(f"selftest {name}: {'PASS' if ok else 'FAIL'}")

    passed = _selftest_fixture(report)
    passed &= _selftest_reduction(report, args.seed)
    return EXIT_OK if passed else EXIT_SELFTEST


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def _add_corpus_args(sub) -> None:
    sub.add_argument("--embeddings", required=True,
                     help="corpus embedding file")
    sub.add_argument("--manifest", required=True,
                     help="corpus manifest (JSON lines)")


def _add_query_args(sub) -> None:
    sub.add_argument("--query-embeddings", required=True)
    sub.add_argument("--query-manifest", required=True)


def build_parser() -> _Parser:
    parser = _Parser(prog="xtr", description=__doc__)
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for every randomized fixture")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--config", help="key=value defaults file")
    parser.add_argument("--data-dir",
                        default=os.environ.get("XTR_DATA_DIR", "."),
                        help="base directory for relative input paths")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("build-index", parents=[], help="validate a corpus")
    _add_corpus_args(sub)
    sub.add_argument("--partitions", type=int)
    sub.add_argument("--partitions-out")
    sub.add_argument("--output")
    sub.set_defaults(func=_cmd_build_index)

    sub = subs.add_parser("search", help="rank documents for queries")
    _add_corpus_args(sub)
    _add_query_args(sub)
    sub.add_argument("--mode", choices=("colbert", "xtr"))
    sub.add_argument("--k-prime", type=int, dest="k_prime")
    sub.add_argument("--top-docs", type=int, dest="top_docs")
    sub.add_argument("--imputation",
                     help="none, topk, or const:<value>")
    sub.add_argument("--partitions-file")
    sub.add_argument("--probes", type=int)
    sub.add_argument("--tag", default="xtr")
    sub.add_argument("--output")
    sub.set_defaults(func=_cmd_search)

    sub = subs.add_parser("evaluate", help="score a run against qrels")
    sub.add_argument("--run", required=True)
    sub.add_argument("--qrels", required=True)
    sub.add_argument("--mrr-k", type=int, dest="mrr_k")
    sub.add_argument("--ndcg-k", type=int, dest="ndcg_k")
    sub.add_argument("--recall-k", type=int, dest="recall_k")
    sub.add_argument("--output")
    sub.set_defaults(func=_cmd_evaluate)

    sub = subs.add_parser("cost-model", help="scoring-stage FLOPs estimates")
    sub.add_argument("--n", type=int)
    sub.add_argument("--d", type=int)
    sub.add_argument("--k-prime", type=int, dest="k_prime")
    sub.add_argument("--m-bar", type=float, dest="m_bar")
    sub.add_argument("--r-bar", type=float, dest="r_bar")
    sub.add_argument("--output")
    sub.set_defaults(func=_cmd_cost_model)

    sub = subs.add_parser("grad-check",
                          help="verify analytic gradients numerically")
    sub.add_argument("--batches", type=int)
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--query-tokens", type=int, dest="query_tokens")
    sub.add_argument("--doc-tokens", type=int, dest="doc_tokens")
    sub.add_argument("--dim", type=int)
    sub.add_argument("--k-train", type=int, dest="k_train")
    sub.add_argument("--h", type=float)
    sub.add_argument("--output")
    sub.set_defaults(func=_cmd_grad_check)

    sub = subs.add_parser("probe", help="retrieval-quality diagnostics")
    _add_corpus_args(sub)
    _add_query_args(sub)
    sub.add_argument("--probe", choices=("gold", "lexical", "histogram"),
                     required=True)
    sub.add_argument("--k-prime", type=int, dest="k_prime")
    sub.add_argument("--max-rank", type=int, dest="max_rank")
    sub.add_argument("--bins", type=int)
    sub.add_argument("--qrels")
    sub.add_argument("--output")
    sub.set_defaults(func=_cmd_probe)

    sub = subs.add_parser("selftest",
                          help="run the built-in end-to-end checks")
    sub.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _parse_config_file(args.config) if args.config else {}
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (XTRError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
