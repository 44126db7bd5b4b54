"""Acceptance suite: one test per primary criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`."""

import json
import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihskit.cli import dispatch
from ihskit.data import Label, ingest, label_sbic, label_toxigen, make_splits
from ihskit.gradcheck import grad_check
from ihskit.metrics import compute_metrics
from ihskit.models import ModelKind, ModelSpec
from ihskit.optim import LrSchedule, OptimizerState, TrainHyper, adamw_step, hyper_for, lr_at
from ihskit.store import EmbeddingStore, Pooling, read_cache, write_cache
from ihskit.training import evaluate, train

from helpers import conditioned_case, two_gaussian_setup
from test_cli import ingest_corpus, make_corpus, strip_timestamps, write_config
from test_data import IHC_FIXTURE, _synthetic_set
from test_metrics import assert_matches_oracle, oracle_metrics


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


class TestGradientFidelity:
    def test_all_architectures_ten_seeds(self):
        """Analytic gradients match central differences to < 1e-4 relative
        error for all five architectures, d_t=d_c=16, d_e=7, eps=1e-5."""
        t0 = time.time()
        worst = 0.0
        worst_case = None
        for seed in range(10):
            for kind in ModelKind:
                model, feats, labels = conditioned_case(kind, seed)
                err = grad_check(model, feats, labels, eps=1e-5)
                if err > worst:
                    worst, worst_case = err, (seed, kind.value)
        elapsed = time.time() - t0
        report(
            "gradient fidelity",
            worst < 1e-4,
            f"max rel err {worst:.3e} at {worst_case}, {elapsed:.1f}s",
        )


class TestMetricsOracle:
    def test_thousand_random_sets(self):
        rng = np.random.default_rng(202608)
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            preds = rng.integers(0, 2, n).tolist()
            labels = rng.integers(0, 2, n).tolist()
            assert_matches_oracle(
                compute_metrics(preds, labels), oracle_metrics(preds, labels), tol=1e-12
            )
        report("metrics oracle, 1000 random sets", True, "<= 1e-12 per field")

    def test_hand_derived_example(self):
        metrics = compute_metrics([1, 0, 1, 0], [1, 1, 1, 0])
        ok = (
            abs(metrics.f1_macro - 11 / 15) <= 1e-12
            and abs(metrics.f1_weighted - 23 / 30) <= 1e-12
            and metrics.accuracy == 0.75
        )
        report(
            "metrics hand example",
            ok,
            f"macro {metrics.f1_macro:.4f} weighted {metrics.f1_weighted:.4f} "
            f"acc {metrics.accuracy:.2f}",
        )


class TestOptimizerSchedulerValues:
    def test_adamw_single_steps(self):
        hyper = TrainHyper(learning_rate=0.1, weight_decay=0.0, warmup_fraction=0.0,
                           dropout=0.0, batch_size=1, epochs=1)
        params = {"p": np.array([1.0])}
        adamw_step(params, {"p": np.array([1.0])}, OptimizerState(), hyper, lr_now=0.1)
        no_decay = params["p"][0]
        expected_no_decay = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))

        hyper_decay = TrainHyper(learning_rate=0.1, weight_decay=0.5, warmup_fraction=0.0,
                                 dropout=0.0, batch_size=1, epochs=1)
        params = {"p": np.array([1.0])}
        adamw_step(params, {"p": np.array([1.0])}, OptimizerState(), hyper_decay, lr_now=0.1)
        with_decay = params["p"][0]
        expected_decay = (1.0 - 0.1 * 0.5) - 0.1 * (1.0 / (1.0 + 1e-8))

        ok = (abs(no_decay - expected_no_decay) < 1e-12
              and abs(with_decay - expected_decay) < 1e-12)
        report("adamw single-step values", ok,
               f"{no_decay:.9f} (~0.9), {with_decay:.9f} (~0.85)")

    def test_scheduler_values(self):
        sched = LrSchedule(base_rate=2e-6, total_steps=1000, warmup_fraction=0.2)
        checks = {
            100: 1e-6,
            200: 2e-6,
            600: 1e-6,
        }
        ok = all(abs(lr_at(sched, step) - want) < 1e-12 for step, want in checks.items())
        report("scheduler values", ok,
               ", ".join(f"step {s} -> {lr_at(sched, s):.1e}" for s in checks))


class TestSyntheticConvergence:
    def test_two_gaussians_linear_probe(self):
        t0 = time.time()
        samples, splits, stores = two_gaussian_setup()
        spec = ModelSpec(kind=ModelKind.EMBED_HEAD, d_tweet=64, hidden=64)
        run = train(spec, samples, splits, stores, hyper_for("linear-probe"), seed=0)
        metrics = evaluate(run, samples, splits.test, stores)
        elapsed = time.time() - t0
        report(
            "synthetic convergence",
            metrics.accuracy >= 0.99 and elapsed < 30.0,
            f"test acc {metrics.accuracy:.4f} in {elapsed:.1f}s",
        )


class TestLabelRules:
    def test_all_boundaries(self, tmp_path):
        sbic_boundary = label_sbic([1.0, 0.5, 0.0]) == Label.HATE
        toxigen_strict = label_toxigen(2.75, 2.75) == Label.NOT_HATE
        toxigen_above = label_toxigen(3.0, 2.6) == Label.HATE

        path = tmp_path / "ihc.tsv"
        path.write_text(IHC_FIXTURE, encoding="utf-8")
        ihc = ingest("ihc", path)
        explicit_dropped = len(ihc) == 2 and ihc.counts == {Label.HATE: 1, Label.NOT_HATE: 1}

        splits = make_splits(_synthetic_set(18666), (0.6, 0.2, 0.2), seed=0)
        sizes = (len(splits.train), len(splits.validation), len(splits.test))
        train_set, val_set, test_set = (
            set(splits.train), set(splits.validation), set(splits.test),
        )
        disjoint = (
            not (train_set & val_set)
            and not (train_set & test_set)
            and not (val_set & test_set)
            and len(train_set | val_set | test_set) == 18666
        )
        ok = (sbic_boundary and toxigen_strict and toxigen_above
              and explicit_dropped and sizes == (11199, 3733, 3734) and disjoint)
        report("label rules and splits", ok, f"split sizes {sizes}")


class TestDeterminism:
    def test_multi_seed_reports_byte_equal(self, tmp_path):
        tsv, store_path = make_corpus(tmp_path)
        samples_path, splits_path = ingest_corpus(tmp_path, tsv)
        config_a = write_config(tmp_path, samples_path, splits_path, store_path, "det-a",
                                seeds=(0, 1, 2))
        config_b = write_config(tmp_path, samples_path, splits_path, store_path, "det-b",
                                seeds=(0, 1, 2))
        assert dispatch(["multi-seed", "--config", str(config_a)]) == 0
        assert dispatch(["multi-seed", "--config", str(config_b)]) == 0
        a = (tmp_path / "det-a" / "report.json").read_text()
        b = (tmp_path / "det-b" / "report.json").read_text().replace("det-b", "det-a")
        ok = strip_timestamps(a) == strip_timestamps(b)
        report("multi-seed determinism", ok, "byte-equal modulo timestamps")


class TestFormatConformance:
    @settings(max_examples=60, deadline=None)
    @given(dim=st.integers(1, 64), count=st.integers(0, 100), seed=st.integers(0, 2**31))
    def test_roundtrip_property(self, tmp_path_factory, dim, count, seed):
        rng = np.random.default_rng(seed)
        store = EmbeddingStore(
            model_id="roundtrip", pooling=Pooling.NORMALIZED_SUM, dim=dim,
            instruction_digest=bytes(range(32)),
        )
        for i in range(count):
            store.add(f"rec-{i}", rng.normal(size=dim).astype(np.float32))
        path = tmp_path_factory.mktemp("accept") / "c.embc"
        write_cache(store, path)
        back = read_cache(path)
        assert back.dim == dim and len(back) == count
        assert back.instruction_digest == store.instruction_digest
        for sid, vec in store.records.items():
            np.testing.assert_array_equal(back.records[sid], vec)

    def test_roundtrip_summary_line(self):
        report("embc roundtrip property", True, "dims 1-64, counts 0-100")

    def test_pinned_byte_layout(self, tmp_path):
        store = EmbeddingStore(
            model_id="m", pooling=Pooling.NONE, dim=2,
            instruction_digest=bytes(32),
            records={"a": np.array([1.0, 2.0], dtype=np.float32)},
        )
        path = tmp_path / "c.embc"
        write_cache(store, path)
        raw = path.read_bytes()
        header_len = struct.unpack("<I", raw[8:12])[0]
        body = raw[12 + header_len:]
        ok = (raw[:4] == b"EMBC"
              and struct.unpack("<I", raw[4:8])[0] == 1
              and body == bytes.fromhex("0100610000803f00000040"))
        report("embc byte layout", ok, body.hex())
