"""Format conformance: extractor-written caches must be readable by the
training engine, byte-for-byte compatible, and digest-aligned."""

import numpy as np
import pytest

import ihskit.store as engine_store
from ihsextract.embc import (
    INSTRUCTION_DIGEST,
    INSTRUCTION_PREFIX,
    NO_INSTRUCTION_DIGEST,
    CacheWriteError,
    build_instruction_text,
    write_embc,
)


class TestSharedContract:
    def test_instruction_template_matches_engine(self):
        assert INSTRUCTION_PREFIX == engine_store.INSTRUCTION_PREFIX
        assert INSTRUCTION_DIGEST == engine_store.INSTRUCTION_DIGEST
        assert NO_INSTRUCTION_DIGEST == engine_store.NO_INSTRUCTION_DIGEST

    def test_instruction_builder_matches_engine(self):
        text = "round them up"
        assert build_instruction_text(text) == engine_store.build_instruction_text(text)


class TestConformance:
    def _records(self, rng, n=17, dim=12):
        return {f"id-{i:04d}": rng.normal(size=dim).astype(np.float32) for i in range(n)}

    def test_engine_reads_extractor_cache(self, tmp_path):
        rng = np.random.default_rng(0)
        records = self._records(rng)
        path = tmp_path / "cache.embc"
        write_embc(path, records, model_id="enc-x", pooling="normalized_sum",
                   dim=12, instruction_digest=INSTRUCTION_DIGEST)
        store = engine_store.read_cache(path)
        assert store.model_id == "enc-x"
        assert store.pooling == engine_store.Pooling.NORMALIZED_SUM
        assert store.dim == 12 and len(store) == len(records)
        assert store.instruction_digest == INSTRUCTION_DIGEST
        for sid, vec in records.items():
            np.testing.assert_array_equal(store.lookup(sid), vec)

    def test_byte_identical_with_engine_writer(self, tmp_path):
        rng = np.random.default_rng(1)
        records = self._records(rng, n=9, dim=5)
        ours = tmp_path / "ours.embc"
        write_embc(ours, records, model_id="enc-y", pooling="mean_passthrough",
                   dim=5, instruction_digest=NO_INSTRUCTION_DIGEST)
        theirs = tmp_path / "theirs.embc"
        store = engine_store.EmbeddingStore(
            model_id="enc-y", pooling=engine_store.Pooling.MEAN_PASSTHROUGH, dim=5,
            instruction_digest=NO_INSTRUCTION_DIGEST,
            records={sid: vec.copy() for sid, vec in records.items()},
        )
        engine_store.write_cache(store, theirs)
        assert ours.read_bytes() == theirs.read_bytes()

    def test_empty_cache_roundtrips(self, tmp_path):
        path = tmp_path / "empty.embc"
        write_embc(path, {}, model_id="enc", pooling="none", dim=3,
                   instruction_digest=INSTRUCTION_DIGEST)
        assert len(engine_store.read_cache(path)) == 0

    def test_shape_and_finiteness_enforced(self, tmp_path):
        with pytest.raises(CacheWriteError):
            write_embc(tmp_path / "x.embc", {"a": np.zeros(3, np.float32)},
                       model_id="m", pooling="none", dim=4,
                       instruction_digest=INSTRUCTION_DIGEST)
        with pytest.raises(CacheWriteError):
            write_embc(tmp_path / "y.embc",
                       {"a": np.array([np.nan, 1.0], np.float32)},
                       model_id="m", pooling="none", dim=2,
                       instruction_digest=INSTRUCTION_DIGEST)

    def test_failed_write_leaves_no_partial_file(self, tmp_path):
        target = tmp_path / "cache.embc"
        records = {"ok": np.zeros(2, np.float32), "bad": np.zeros(3, np.float32)}
        with pytest.raises(CacheWriteError):
            write_embc(target, records, model_id="m", pooling="none", dim=2,
                       instruction_digest=INSTRUCTION_DIGEST)
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []

    def test_unknown_pooling_rejected(self, tmp_path):
        with pytest.raises(CacheWriteError):
            write_embc(tmp_path / "x.embc", {}, model_id="m", pooling="max",
                       dim=2, instruction_digest=INSTRUCTION_DIGEST)
