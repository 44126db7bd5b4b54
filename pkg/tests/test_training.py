"""Training loop, selection, evaluation, and aggregation tests."""

import math

import numpy as np
import pytest

from ihskit.data import Label, Sample, SampleSet, SplitAssignment
from ihskit.errors import ContractError, EmbeddingLookupError, ProtocolError
from ihskit.metrics import compute_metrics
from ihskit.models import ModelKind, ModelSpec, default_hidden
from ihskit.optim import TrainHyper, hyper_for
from ihskit.store import INSTRUCTION_DIGEST, NO_INSTRUCTION_DIGEST
from ihskit.training import (
    aggregate_runs,
    cross_evaluate,
    evaluate,
    run_multi_seed,
    train,
)

from helpers import emotion_rows, fusion_setup, make_store, two_gaussian_setup


def tiny_hyper(**overrides):
    base = dict(learning_rate=2e-3, weight_decay=0.1, warmup_fraction=0.2,
                dropout=0.2, batch_size=8, epochs=3)
    base.update(overrides)
    return TrainHyper(**base)


def small_setup(n=60, d=8, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    vectors = rng.normal(size=(n, d)) + np.where(labels[:, None] == 1, 1.0, -1.0)
    ids = [f"s{i:03d}" for i in range(n)]
    samples = SampleSet(
        samples=[Sample(id=ids[i], text=f"t {i}", label=Label(int(labels[i])), dataset="ihc")
                 for i in range(n)],
        source="ihc",
    )
    splits = SplitAssignment(
        train=ids[: n - 20], validation=ids[n - 20 : n - 10], test=ids[n - 10 :],
        ratios=(2 / 3, 1 / 6, 1 / 6), seed=seed,
    )
    stores = {"tweet": make_store(ids, vectors.astype(np.float32))}
    return samples, splits, stores


def spec_head(d=8):
    return ModelSpec(kind=ModelKind.EMBED_HEAD, d_tweet=d, hidden=d)


class TestTrain:
    def test_identical_seeds_bitwise_identical(self):
        samples, splits, stores = small_setup()
        hyper = tiny_hyper()
        a = train(spec_head(), samples, splits, stores, hyper, seed=3)
        b = train(spec_head(), samples, splits, stores, hyper, seed=3)
        assert a.best_epoch == b.best_epoch
        for epoch_a, epoch_b in zip(a.history, b.history):
            assert epoch_a["train_loss"] == epoch_b["train_loss"]
            assert epoch_a["val"] == epoch_b["val"]
        for name in a.model.params:
            np.testing.assert_array_equal(a.model.params[name], b.model.params[name])

    def test_different_seeds_differ(self):
        samples, splits, stores = small_setup()
        hyper = tiny_hyper()
        a = train(spec_head(), samples, splits, stores, hyper, seed=1)
        b = train(spec_head(), samples, splits, stores, hyper, seed=2)
        assert any(
            not np.array_equal(a.model.params[n], b.model.params[n]) for n in a.model.params
        )

    def test_history_length_and_selection_rule(self):
        samples, splits, stores = small_setup()
        hyper = tiny_hyper(epochs=5)
        run = train(spec_head(), samples, splits, stores, hyper, seed=0)
        assert len(run.history) == 5
        f1s = [h["val"].f1_weighted for h in run.history]
        best = max(f1s)
        assert run.best_epoch == f1s.index(best)  # earliest epoch on ties
        assert run.best_val_weighted_f1 == best

    def test_scheduler_covers_all_steps(self):
        samples, splits, stores = small_setup(n=60)
        hyper = tiny_hyper(batch_size=16, epochs=3)  # 40 train samples
        run = train(spec_head(), samples, splits, stores, hyper, seed=0)
        assert run.total_steps == 3 * math.ceil(40 / 16)

    def test_missing_embedding_aborts_with_id(self):
        samples, splits, stores = small_setup()
        del stores["tweet"].records["s005"]
        with pytest.raises(EmbeddingLookupError, match="s005"):
            train(spec_head(), samples, splits, stores, tiny_hyper(), seed=0)

    def test_fusion_requires_all_stores(self):
        samples, splits, stores = small_setup()
        spec = ModelSpec(kind=ModelKind.CONCAT_FUSION, d_tweet=8, d_context=8, hidden=23)
        with pytest.raises(ContractError, match="context"):
            train(spec, samples, splits, stores, tiny_hyper(), seed=0)

    def test_invalid_emotion_vector_names_sample(self):
        samples, splits, stores = small_setup()
        rng = np.random.default_rng(0)
        n = len(samples)
        ids = samples.ids()
        stores["context"] = make_store(ids, rng.normal(size=(n, 8)).astype(np.float32))
        emo = emotion_rows(rng, n)
        emo[7] = 0.9  # breaks the sum-to-one invariant
        stores["emotion"] = make_store(ids, emo.astype(np.float32))
        spec = ModelSpec(kind=ModelKind.CONCAT_FUSION, d_tweet=8, d_context=8, hidden=23)
        with pytest.raises(ContractError, match="s007"):
            train(spec, samples, splits, stores, tiny_hyper(), seed=0)

    def test_provenance_records_store_triple(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=0)
        meta = run.provenance["tweet"]
        assert meta["model_id"] == "test-encoder"
        assert meta["pooling"] == "normalized_sum"
        assert meta["instruction_sha256"] == INSTRUCTION_DIGEST.hex()


class TestEvaluate:
    def test_validation_metrics_reproduce_history(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=4)
        metrics = evaluate(run, samples, splits.validation, stores)
        assert metrics == run.history[run.best_epoch]["val"]

    def test_order_invariant(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=4)
        forward_order = evaluate(run, samples, splits.test, stores)
        reversed_order = evaluate(run, samples, splits.test[::-1], stores)
        assert forward_order == reversed_order

    def test_empty_ids_rejected(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=0)
        with pytest.raises(ContractError):
            evaluate(run, samples, [], stores)


class TestCrossEvaluate:
    def test_own_test_split_equals_evaluate(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=1)
        direct = evaluate(run, samples, splits.test, stores)
        crossed = cross_evaluate(run, samples, stores, ids=splits.test)
        assert direct == crossed

    def test_full_foreign_dataset_by_default(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=1)
        foreign_samples, _, foreign_stores = small_setup(n=30, seed=9)
        metrics = cross_evaluate(run, foreign_samples, foreign_stores)
        assert metrics.hate.support + metrics.not_hate.support == 30

    def test_instruction_digest_mismatch_is_protocol_error(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=1)
        foreign_samples, _, _ = small_setup(n=30, seed=9)
        rng = np.random.default_rng(0)
        bad = {
            "tweet": make_store(
                foreign_samples.ids(), rng.normal(size=(30, 8)).astype(np.float32),
                digest=NO_INSTRUCTION_DIGEST,
            )
        }
        with pytest.raises(ProtocolError, match="instruction_sha256"):
            cross_evaluate(run, foreign_samples, bad)

    def test_model_id_mismatch_is_protocol_error(self):
        samples, splits, stores = small_setup()
        run = train(spec_head(), samples, splits, stores, tiny_hyper(), seed=1)
        foreign_samples, _, _ = small_setup(n=30, seed=9)
        rng = np.random.default_rng(0)
        bad = {
            "tweet": make_store(
                foreign_samples.ids(), rng.normal(size=(30, 8)).astype(np.float32),
                model_id="different-encoder",
            )
        }
        with pytest.raises(ProtocolError, match="model_id"):
            cross_evaluate(run, foreign_samples, bad)


class TestAggregate:
    def test_multi_seed_report_recomputable(self):
        samples, splits, stores = small_setup()
        report, runs = run_multi_seed(
            spec_head(), samples, splits, stores, tiny_hyper(), seeds=(0, 1, 2)
        )
        assert report.seeds == [0, 1, 2]
        assert len(report.per_seed) == 3
        flat = [m.flatten() for m in report.per_seed]
        for key, value in report.mean.items():
            assert abs(value - sum(f[key] for f in flat) / 3) < 1e-15

    def test_aggregate_contract(self):
        with pytest.raises(ContractError):
            aggregate_runs([], [])
        with pytest.raises(ContractError):
            aggregate_runs([compute_metrics([1], [1])], [0, 1])


class TestClassWeights:
    def test_unit_weights_match_unweighted(self):
        from ihskit.models import build_model, loss_and_grads

        samples, splits, stores = small_setup()
        model = build_model(spec_head(), seed=0)
        rng = np.random.default_rng(0)
        feats = {"tweet": rng.normal(size=(6, 8))}
        labels = np.array([0, 1, 0, 1, 1, 0])
        plain, grads_plain = loss_and_grads(model, feats, labels)
        weighted, grads_weighted = loss_and_grads(
            model, feats, labels, class_weights=(1.0, 1.0)
        )
        assert abs(plain - weighted) < 1e-12
        for name in grads_plain:
            np.testing.assert_allclose(grads_plain[name], grads_weighted[name], atol=1e-15)

    def test_weighted_loss_matches_hand_formula(self):
        import ihskit.autodiff as ad
        from ihskit.models import build_model, loss_and_grads, loss_only

        model = build_model(spec_head(), seed=1)
        rng = np.random.default_rng(1)
        feats = {"tweet": rng.normal(size=(4, 8))}
        labels = np.array([0, 1, 1, 0])
        weights = (0.5, 2.0)
        got = loss_only(model, feats, labels, class_weights=weights)
        per_sample = np.array([loss_only(model, {"tweet": feats["tweet"][i : i + 1]},
                                         labels[i : i + 1]) for i in range(4)])
        w = np.array([weights[y] for y in labels])
        assert abs(got - float((w * per_sample).sum() / w.sum())) < 1e-12

    def test_weighted_gradients_pass_fd_check(self):
        from ihskit.models import build_model, loss_and_grads, loss_only

        model = build_model(spec_head(), seed=2)
        rng = np.random.default_rng(2)
        feats = {"tweet": rng.normal(size=(4, 8))}
        labels = np.array([0, 1, 1, 0])
        weights = (0.5, 2.0)
        _, grads = loss_and_grads(model, feats, labels, class_weights=weights)
        eps = 1e-6
        for name, p in model.params.items():
            flat = p.reshape(-1)
            gflat = grads[name].reshape(-1)
            for i in range(0, flat.size, 7):  # sampled coordinates
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_only(model, feats, labels, class_weights=weights)
                flat[i] = orig - eps
                fm = loss_only(model, feats, labels, class_weights=weights)
                flat[i] = orig
                numeric = (fp - fm) / (2 * eps)
                assert abs(gflat[i] - numeric) < 1e-6

    def test_hyper_carries_weights_through_training(self):
        samples, splits, stores = small_setup()
        weighted = tiny_hyper(class_weights=(1.0, 3.0))
        plain = tiny_hyper()
        a = train(spec_head(), samples, splits, stores, weighted, seed=0)
        b = train(spec_head(), samples, splits, stores, plain, seed=0)
        assert any(
            not np.array_equal(a.model.params[n], b.model.params[n])
            for n in a.model.params
        )
        assert TrainHyper.from_dict(weighted.to_dict()) == weighted


class TestSyntheticConvergence:
    def test_linear_probe_reaches_99_percent(self):
        samples, splits, stores = two_gaussian_setup()
        hyper = hyper_for("linear-probe")
        spec = ModelSpec(kind=ModelKind.EMBED_HEAD, d_tweet=64, hidden=64)
        run = train(spec, samples, splits, stores, hyper, seed=0)
        metrics = evaluate(run, samples, splits.test, stores)
        assert metrics.accuracy >= 0.99
        val = evaluate(run, samples, splits.validation, stores)
        assert val.accuracy >= 0.99

    @pytest.mark.parametrize(
        "kind",
        [
            ModelKind.CONCAT_FUSION,
            ModelKind.ADAPTIVE_FUSION,
            ModelKind.MOE_FUSION,
            ModelKind.SHARED_QUERY_FUSION,
        ],
    )
    def test_every_fusion_architecture_learns(self, kind):
        samples, splits, stores = fusion_setup()
        spec = ModelSpec(
            kind=kind, d_tweet=8, d_context=8,
            hidden=default_hidden(kind, 8, 8),
        )
        hyper = TrainHyper(learning_rate=2e-3, weight_decay=0.1, warmup_fraction=0.2,
                           dropout=0.2, batch_size=64, epochs=10)
        run = train(spec, samples, splits, stores, hyper, seed=0)
        metrics = evaluate(run, samples, splits.test, stores)
        assert metrics.accuracy >= 0.9, f"{kind.value}: {metrics.accuracy:.3f}"
