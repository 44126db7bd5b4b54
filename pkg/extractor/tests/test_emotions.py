"""Emotion extraction tests over the dummy classifier."""

import numpy as np
import pytest

import ihskit.store as engine_store
from ihsextract.backends import EMOTION_CLASSES, DummyEmotionClassifier
from ihsextract.cli import dispatch
from ihsextract.jobs import ExtractionError, extract_emotions


class TestEmotions:
    def test_class_order_fixed(self):
        assert EMOTION_CLASSES == (
            "fear", "disgust", "surprise", "anger", "sadness", "joy", "other",
        )

    def test_simplex_and_dimension(self, sample_file, tmp_path):
        path, texts = sample_file
        out = tmp_path / "emo.embc"
        report = extract_emotions(str(path), str(out))
        assert report.dim == 7 and report.count == len(texts)
        store = engine_store.read_cache(out)
        assert store.dim == 7
        for vec in store.records.values():
            assert (vec >= 0).all()
            assert abs(float(vec.sum()) - 1.0) < 1e-5

    def test_deterministic_across_runs(self, sample_file, tmp_path):
        path, _ = sample_file
        extract_emotions(str(path), str(tmp_path / "a.embc"))
        extract_emotions(str(path), str(tmp_path / "b.embc"))
        a = engine_store.read_cache(tmp_path / "a.embc")
        b = engine_store.read_cache(tmp_path / "b.embc")
        for sid in a.records:
            np.testing.assert_array_equal(a.records[sid], b.records[sid])

    def test_vectors_feed_engine_feature_bundle(self, sample_file, tmp_path):
        from ihskit.store import FeatureBundle

        path, _ = sample_file
        out = tmp_path / "emo.embc"
        extract_emotions(str(path), str(out))
        store = engine_store.read_cache(out)
        for vec in store.records.values():
            FeatureBundle(tweet=np.zeros(4), emotion=vec.astype(np.float64))

    def test_wrong_class_count_rejected(self, sample_file, tmp_path, monkeypatch):
        path, _ = sample_file

        class FiveClass(DummyEmotionClassifier):
            def predict_proba(self, texts):
                return np.full((len(texts), 5), 0.2, dtype=np.float32)

        monkeypatch.setattr("ihsextract.jobs.load_emotion_classifier",
                            lambda model, device="cpu": FiveClass())
        with pytest.raises(ExtractionError, match="shape"):
            extract_emotions(str(path), str(tmp_path / "x.embc"))

    def test_cli(self, sample_file, tmp_path):
        path, texts = sample_file
        out = tmp_path / "emo.embc"
        assert dispatch(["emotions", "--samples", str(path), "--output", str(out)]) == 0
        assert len(engine_store.read_cache(out)) == len(texts)
