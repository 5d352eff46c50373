from __future__ import annotations

import csv
import gc
import json
import logging
import tracemalloc
from dataclasses import replace

import numpy as np
import pytest

from helpers import blobs
from lsrom import harness
from lsrom.core import DataChunk, write_chunk_csv
from lsrom.harness import (VARIANTS, GaussianSpec, RunConfig, StreamResult, config_from_dict,
                           effective_q, fit_exponent, load_config, read_rows, run_ablation,
                           run_bench, run_chunk, run_sensitivity, run_stream,
                           write_run_outputs)
from lsrom.merge import MergeParams
from lsrom.rsom import RsomParams
from lsrom.tlrs import TlrsSpec, make_four_blob_base, write_stream

FAST = RunConfig(rsom=RsomParams(Q=5, epochs=2), kmeans_max_iters=20)


@pytest.fixture(scope="module")
def two_blob_chunk():
    rng = np.random.default_rng(0)
    x, y = blobs(rng, [(0.0, 0.0), (10.0, 0.0)], 1.0, [3333, 667])
    return DataChunk(x, y)


@pytest.fixture(scope="module")
def small_chunk():
    rng = np.random.default_rng(1)
    x, y = blobs(rng, [(0.0, 0.0), (6.0, 0.0), (0.0, 6.0)], 0.5, [200, 80, 40])
    return DataChunk(x, y)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.rsom.Q == 10 and cfg.merge.kappa == 10 and cfg.kmeans_max_iters == 100
        assert cfg.deterministic

    def test_from_dict(self):
        cfg = config_from_dict({"rsom": {"Q": 6, "epochs": 3}, "merge": {"kappa": 7,
                                "ann": {"ef_search": 32}}, "kmeansMaxIters": 5, "seed": 11})
        assert (cfg.rsom.Q, cfg.rsom.epochs, cfg.merge.kappa) == (6, 3, 7)
        assert cfg.merge.ann.ef_search == 32 and cfg.kmeans_max_iters == 5
        assert cfg.seed == 11 and cfg.merge.ann.seed == 11

    @pytest.mark.parametrize("data", [{"bogus": 1}, {"rsom": {"q": 3}}, {"merge": {"ann": {"x": 1}}}])
    def test_unknown_keys(self, data):
        with pytest.raises(ValueError):
            config_from_dict(data)

    def test_env_seed_overrides_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 3}))
        assert load_config(p, env={}).seed == 3
        assert load_config(p, env={"LSROM_SEED": "8"}).seed == 8
        with pytest.raises(ValueError):
            load_config(p, env={"LSROM_SEED": "x"})

    def test_bad_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        with pytest.raises(ValueError):
            load_config(p, env={})
        with pytest.raises(ValueError):
            load_config(tmp_path / "missing.json", env={})

    def test_to_json_roundtrip(self):
        cfg = RunConfig(rsom=RsomParams(Q=7, seed=4), merge=MergeParams(kappa=9))
        back = config_from_dict({k: v for k, v in cfg.to_json().items()})
        assert back == cfg


class TestRunChunk:
    def test_two_blobs(self, two_blob_chunk):
        part, trace, rep = run_chunk(two_blob_chunk)
        assert trace.k_star == 2 and rep.nmi == 1.0 and rep.dcv == 0.0
        assert rep.k_pred == 2 and rep.k_true == 2 and rep.runtime_ms > 0
        assert part.sizes.sum() == two_blob_chunk.n

    def test_unlabeled(self, small_chunk):
        run = run_chunk(DataChunk(small_chunk.objects), FAST)
        assert run.report.nmi is None and run.report.dcv is None
        assert run.report.k_pred == run.trace.k_star and run.report.runtime_ms >= 0

    def test_q_lowered(self, caplog):
        x = np.random.default_rng(0).random((20, 2))
        with caplog.at_level(logging.WARNING):
            run = run_chunk(DataChunk(x), FAST)
        assert run.q_lowered and run.q_used == 4 == effective_q(20, 5)
        assert effective_q(30, 10) == 5 and effective_q(200, 10) == 10
        assert any("Q lowered" in r.message for r in caplog.records)

    def test_tiny_chunk_rejected(self):
        with pytest.raises(ValueError):
            run_chunk(DataChunk(np.zeros((3, 2))), FAST)

    def test_unknown_variant(self, small_chunk):
        with pytest.raises(ValueError):
            run_chunk(small_chunk, FAST, variant="nope")

    def test_outputs_byte_identical(self, small_chunk, tmp_path):
        cfg = replace(FAST, emit_stages=True)
        for d in ("a", "b"):
            write_run_outputs(run_chunk(small_chunk, cfg), cfg, tmp_path / d)
        for name in ("result.json", "report.csv", "curves.csv", "stages.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        result = json.loads((tmp_path / "a" / "result.json").read_text())
        assert result["report"]["runtime_ms"] is None
        stages = json.loads((tmp_path / "a" / "stages.json").read_text())
        assert {"rsom", "micro", "refined"} <= set(stages)

    def test_timings_kept_when_not_deterministic(self, small_chunk, tmp_path):
        cfg = replace(FAST, deterministic=False)
        write_run_outputs(run_chunk(small_chunk, cfg), cfg, tmp_path)
        assert json.loads((tmp_path / "result.json").read_text())["report"]["runtime_ms"] > 0

    def test_curves_file(self, small_chunk, tmp_path):
        run = run_chunk(small_chunk, FAST)
        write_run_outputs(run, FAST, tmp_path)
        rows = list(csv.reader(open(tmp_path / "curves.csv")))
        assert rows[0] == ["k", "com", "sep"]
        assert [int(r[0]) for r in rows[1:]] == [s.k for s in run.trace.states]


class TestStream:
    @pytest.fixture
    def chunk_dir(self, tmp_path):
        base = make_four_blob_base(4000, seed=2)
        write_stream(TlrsSpec(base, 19.0, chunk_count=4, chunk_size_cap=400, seed=1),
                     tmp_path / "chunks")
        return tmp_path / "chunks"

    def test_stream_and_aggregate(self, chunk_dir, tmp_path):
        res = run_stream(chunk_dir, FAST, tmp_path / "out")
        rows = read_rows(tmp_path / "out" / "results.csv")
        assert [r.chunk_id for r in rows] == [0, 1, 2, 3]
        agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
        assert agg["chunks"] == 4 and agg["skipped"] == []
        assert abs(agg["nmi"]["mean"] - np.mean([r.nmi for r in rows])) <= 1e-9
        assert abs(agg["dcv"]["std"] - np.std([r.dcv for r in rows])) <= 1e-9
        assert res.aggregate == agg and set(res.k_stars) == {0, 1, 2, 3}

    def test_single_chunk_aggregate_equals_row(self, tmp_path, small_chunk):
        (tmp_path / "one").mkdir()
        write_chunk_csv(small_chunk, tmp_path / "one" / "c.csv")
        res = run_stream(tmp_path / "one", FAST, tmp_path / "out")
        assert res.aggregate["nmi"]["mean"] == res.per_chunk[0].nmi
        assert res.aggregate["nmi"]["std"] == 0.0

    def test_resume_does_not_recompute(self, chunk_dir, tmp_path, monkeypatch):
        out = tmp_path / "out"
        run_stream(chunk_dir, FAST, out)
        lines = (out / "results.csv").read_text().splitlines()
        (out / "results.csv").write_text("\n".join(lines[:3]) + "\n")  # header + 2 rows
        calls = []
        real = harness.run_chunk

        def spy(chunk, config=None, **kw):
            calls.append(kw["chunk_id"])
            return real(chunk, config, **kw)
        monkeypatch.setattr(harness, "run_chunk", spy)
        run_stream(chunk_dir, FAST, out, resume=True)
        assert calls == [2, 3]
        assert (out / "results.csv").read_text().splitlines() == lines

    def test_malformed_chunk_skipped(self, chunk_dir, tmp_path, caplog):
        (chunk_dir / "chunk_0001.csv").write_text("f0,f1\n1,oops\n")
        with caplog.at_level(logging.ERROR):
            res = run_stream(chunk_dir, FAST, tmp_path / "out")
        assert res.skipped == ["chunk_0001.csv"]
        assert [r.chunk_id for r in res.per_chunk] == [0, 2, 3]
        assert any("chunk_0001.csv" in r.message for r in caplog.records)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            run_stream(tmp_path, FAST)

    def test_memory_does_not_grow_with_stream_length(self, tmp_path):
        base = make_four_blob_base(4000, seed=3)
        write_stream(TlrsSpec(base, 19.0, chunk_count=50, chunk_size_cap=150, seed=2),
                     tmp_path / "c")
        peaks = []
        real = harness.run_chunk

        def probe(chunk, config=None, **kw):
            out = real(chunk, config, **kw)
            gc.collect()
            peaks.append(tracemalloc.get_traced_memory()[0])
            return out
        tracemalloc.start()
        try:
            harness.run_chunk = probe
            run_stream(tmp_path / "c", replace(FAST, rsom=RsomParams(Q=4, epochs=1)),
                       tmp_path / "out")
        finally:
            harness.run_chunk = real
            tracemalloc.stop()
        first, last = np.mean(peaks[5:15]), np.mean(peaks[-10:])
        assert last <= first * 1.5 + 200_000

    def test_summarize_empty_values(self):
        agg = StreamResult.summarize([])
        assert agg["chunks"] == 0 and agg["nmi"]["mean"] is None


class TestExperiments:
    def test_gaussian_spec(self):
        c = GaussianSpec().sample(1000)
        assert c.n == 1000 and np.bincount(c.labels).tolist() == [250] * 4
        assert np.array_equal(GaussianSpec().sample(1000).objects, c.objects)

    def test_fit_exponent(self):
        ns = [1e5, 2e5, 4e5]
        assert fit_exponent(ns, [n**1.2 for n in ns]) == pytest.approx(1.2)
        assert fit_exponent([10], [1.0]) is None

    def test_bench_small(self, tmp_path):
        res = run_bench([400, 800], config=FAST)
        assert [r[0] for r in res.rows] == [400, 800] and res.alpha is not None
        res.write_csv(tmp_path / "b.csv")
        assert (tmp_path / "b.csv").read_text().splitlines()[0] == "n,runtimeMs"

    def test_bench_empty(self, tmp_path):
        res = run_bench([], config=FAST)
        res.write_csv(tmp_path / "b.csv")
        assert (tmp_path / "b.csv").read_text() == "n,runtimeMs\n"

    def test_bench_needs_ascending(self):
        with pytest.raises(ValueError):
            run_bench([800, 400])

    def test_sensitivity_grid(self, small_chunk):
        rows = run_sensitivity([5, 4], [9, 7], small_chunk, FAST)
        assert [(r["Q"], r["kappa"]) for r in rows] == [(4, 7), (4, 9), (5, 7), (5, 9)]
        swapped = run_sensitivity([4, 5], [7, 9], small_chunk, FAST)
        assert rows == swapped

    def test_sensitivity_single_cell_equals_run(self, small_chunk):
        (row,) = run_sensitivity([5], [10], small_chunk, FAST)
        rep = run_chunk(small_chunk, FAST).report
        assert (row["nmi"], row["dcv"], row["k_pred"]) == (rep.nmi, rep.dcv, rep.k_pred)

    def test_sensitivity_empty_rejected(self, small_chunk):
        with pytest.raises(ValueError):
            run_sensitivity([], [7], small_chunk, FAST)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_ablation_tags(self, variant, small_chunk):
        rep = run_ablation(variant, small_chunk, FAST)
        assert rep.variant == variant
        assert (rep.note is not None) == (variant == "sgms-placeholder-off")

    def test_ablation_unknown(self, small_chunk):
        with pytest.raises(ValueError):
            run_ablation("sgms", small_chunk, FAST)

    def test_no_finetune_close_on_separated_blobs(self, two_blob_chunk):
        full = run_ablation("full", two_blob_chunk)
        nof = run_ablation("no-finetune", two_blob_chunk)
        assert abs(full.nmi - nof.nmi) <= 0.05
