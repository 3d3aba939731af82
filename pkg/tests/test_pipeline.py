"""Pipeline tests: both modes, instrumentation, determinism, TREC output."""

import io

import numpy as np
import pytest

from xtr.fixtures import make_index, random_corpus_index, random_query_set
from xtr.pipeline import (
    PipelineConfig,
    aggregate_stats,
    run_colbert,
    run_queries,
    run_xtr,
    write_trec_run,
)
from xtr.scoring import ImputationRule
from xtr.store import Query, QuerySet, TokenMatrix


def small_world(seed, num_docs=25, max_doc_tokens=6, dim=8, num_queries=3,
                max_query_tokens=4):
    rng = np.random.default_rng(seed)
    index = random_corpus_index(rng, num_docs, max_doc_tokens, dim)
    queries = random_query_set(rng, num_queries, max_query_tokens, dim)
    return index, queries


def query_set(matrix, query_id="q0"):
    return QuerySet((Query(query_id, TokenMatrix(matrix, normalized=False)),))


class TestReduction:
    def test_full_coverage_xtr_equals_colbert(self):
        """k'=M with top-k' imputation reproduces the gather pipeline."""
        for seed in range(5):
            index, queries = small_world(seed)
            k_full = index.num_tokens
            xtr_run = run_xtr(index, queries, PipelineConfig(
                "xtr", k_full, top_docs=index.stats.num_docs,
                imputation=ImputationRule.topk_score()))
            colbert_run = run_colbert(index, queries, PipelineConfig(
                "colbert", k_full, top_docs=index.stats.num_docs))
            for xe, ce in zip(xtr_run.entries, colbert_run.entries):
                assert [d for d, _ in xe.ranking] == [d for d, _ in ce.ranking]
                for (_, sa), (_, sb) in zip(xe.ranking, ce.ranking):
                    assert sa == pytest.approx(sb, abs=1e-6)

    def test_k_equals_m_matches_exhaustive_scoring(self):
        from xtr.scoring import score_colbert
        index, queries = small_world(83)
        run = run_colbert(index, queries, PipelineConfig(
            "colbert", index.num_tokens, top_docs=index.stats.num_docs))
        for query, entry in zip(queries, run.entries):
            exhaustive = {
                rec.doc_id: score_colbert(query.matrix.data,
                                          index.gather_doc(i))
                for i, rec in enumerate(index.records)
            }
            expected = sorted(exhaustive.items(), key=lambda kv: (-kv[1], kv[0]))
            assert entry.ranking == expected


class TestGatherWins:
    def test_gold_needs_gathering_to_win(self):
        """The winner's margin comes from a token retrieval never saw.

        Row-1 top-3 includes gold's first token; row-2 top-3 misses gold
        entirely, so only the gathered rescore reveals its true sum-of-max.
        """
        embeddings = np.array([
            [0.6, 0.0],   # gold token 0
            [0.0, 0.6],   # gold token 1
            [0.9, 0.0],   # p1a
            [0.8, 0.0],   # p1b
            [0.0, 0.9],   # p2a
            [0.0, 0.85],  # p2b
            [0.0, 0.8],   # p2c
        ], dtype=np.float32)
        index = make_index(embeddings, [2, 1, 1, 1, 1, 1],
                           doc_ids=["gold", "p1a", "p1b", "p2a", "p2b", "p2c"])
        queries = query_set(np.eye(2, dtype=np.float32))
        result = index.retrieve(np.eye(2, dtype=np.float32), 3)
        # brute-force the construction: row 2 never retrieves gold
        assert "gold" not in {h.doc_id for h in result.hits(1)}
        assert "gold" in {h.doc_id for h in result.hits(0)}

        run = run_colbert(index, queries,
                          PipelineConfig("colbert", k_prime=3))
        ranking = run.entries[0].ranking
        assert ranking[0][0] == "gold"
        assert ranking[0][1] == pytest.approx(0.6)

    def test_single_doc_corpus(self):
        rng = np.random.default_rng(7)
        index = random_corpus_index(rng, num_docs=1, max_doc_tokens=5, dim=6)
        queries = random_query_set(rng, 2, 3, 6)
        for mode in ("colbert", "xtr"):
            run = run_queries(index, queries,
                              PipelineConfig(mode, k_prime=2))
            for entry in run.entries:
                assert entry.ranking[0][0] == index.records[0].doc_id

    def test_unretrieved_doc_absent_from_run(self):
        # doc "far" can never enter any top-2 token list
        embeddings = np.array([
            [1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, -1.0],
        ], dtype=np.float32)
        index = make_index(embeddings, [1, 1, 1, 1],
                           doc_ids=["a", "b", "c", "far"])
        queries = query_set(np.array([[1, 0], [0, 1]], dtype=np.float32))
        for mode in ("colbert", "xtr"):
            run = run_queries(index, queries, PipelineConfig(mode, k_prime=2))
            docs = {d for d, _ in run.entries[0].ranking}
            assert "far" not in docs


class TestInstrumentation:
    def test_xtr_never_gathers(self, monkeypatch):
        index, queries = small_world(11)

        def poisoned(ordinal):
            raise AssertionError("gather called in xtr mode")

        monkeypatch.setattr(index, "gather_doc", poisoned)
        run = run_xtr(index, queries, PipelineConfig("xtr", k_prime=5))
        assert all(e.stats.bytes_gathered == 0 for e in run.entries)
        assert all(e.stats.scoring_inner_products == 0 for e in run.entries)

    def test_colbert_counts_are_exact(self):
        index, queries = small_world(12)
        run = run_colbert(index, queries, PipelineConfig("colbert", k_prime=4))
        for query, entry in zip(queries, run.entries):
            n = query.matrix.rows
            result = index.retrieve(query.matrix, 4)
            gathered_tokens = sum(
                index.records[int(o)].token_count
                for o in np.unique(result.doc_ordinals))
            assert entry.stats.bytes_gathered == gathered_tokens * index.dim * 4
            assert entry.stats.scoring_inner_products == n * gathered_tokens
            assert entry.stats.search_inner_products == n * index.num_tokens
            assert entry.stats.candidates == np.unique(result.doc_ordinals).size

    def test_candidate_cap(self):
        index, queries = small_world(13)
        k = 5
        run = run_xtr(index, queries, PipelineConfig("xtr", k_prime=k))
        for query, entry in zip(queries, run.entries):
            assert entry.stats.candidates <= query.matrix.rows * k

    def test_aggregate_stats(self):
        index, queries = small_world(14)
        run = run_xtr(index, queries, PipelineConfig("xtr", k_prime=3))
        agg = aggregate_stats(run)
        assert agg["queries"] == len(run.entries)
        assert agg["bytes_gathered"] == 0


class TestDeterminism:
    def test_identical_bytes_across_runs_and_workers(self):
        index, queries = small_world(21, num_queries=5)
        outputs = []
        for workers in (1, 1, 3):
            config = PipelineConfig("xtr", k_prime=6, workers=workers,
                                    imputation=ImputationRule.topk_score())
            buf = io.StringIO()
            write_trec_run(run_queries(index, queries, config), buf)
            outputs.append(buf.getvalue())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_imputation_variants_differ_and_reproduce(self):
        """Distinct fills yield distinct runs; reruns are byte-identical."""
        index, queries = small_world(22, num_docs=40)
        variants = {
            "none": ImputationRule.none(),
            "const": ImputationRule.constant(0.2),
            "topk": ImputationRule.topk_score(),
        }
        rendered = {}
        for name, rule in variants.items():
            outs = []
            for _ in range(2):
                buf = io.StringIO()
                write_trec_run(run_xtr(index, queries, PipelineConfig(
                    "xtr", k_prime=4, imputation=rule)), buf)
                outs.append(buf.getvalue())
            assert outs[0] == outs[1]
            rendered[name] = outs[0]
        assert len(set(rendered.values())) == 3

    def test_trec_format(self):
        index, queries = small_world(23, num_queries=1)
        run = run_xtr(index, queries, PipelineConfig("xtr", k_prime=3,
                                                     top_docs=5))
        buf = io.StringIO()
        write_trec_run(run, buf, tag="mytag")
        lines = buf.getvalue().splitlines()
        assert lines
        prev_score = None
        for rank, line in enumerate(lines, start=1):
            parts = line.split()
            assert len(parts) == 6
            assert parts[0] == "q000" and parts[1] == "Q0"
            assert int(parts[3]) == rank
            score = float(parts[4])
            assert "." in parts[4] and len(parts[4].split(".")[1]) == 6
            if prev_score is not None:
                assert score <= prev_score
            prev_score = score
            assert parts[5] == "mytag"


class TestConfig:
    def test_colbert_warns_on_imputation(self):
        with pytest.warns(UserWarning, match="imputation is ignored"):
            PipelineConfig("colbert", k_prime=4,
                           imputation=ImputationRule.topk_score())

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            PipelineConfig("hybrid", k_prime=4)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            PipelineConfig("xtr", k_prime=0)
        with pytest.raises(ValueError):
            PipelineConfig("xtr", k_prime=1, top_docs=0)

    def test_mode_guards(self):
        index, queries = small_world(31, num_queries=1)
        with pytest.raises(ValueError):
            run_xtr(index, queries, PipelineConfig("colbert", k_prime=2))
        with pytest.raises(ValueError):
            run_colbert(index, queries, PipelineConfig("xtr", k_prime=2))
