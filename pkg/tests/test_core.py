"""Core types, lifecycle DAG, manifest and embedding container persistence."""

import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from winnow.errors import DataError, FormatError, LifecycleError
from winnow.manifest import (append_annotations, dump_jsonl, load_annotations,
                             load_manifest, persist_manifest)
from winnow.rng import derive_seed, generator, splitmix64
from winnow.types import (LIFECYCLE, AnnotationReason, AnnotationRecord, ClassDef,
                          EmbeddingVector, ExpertKind, LabelSpace, Sample, Status,
                          content_id, l2_normalize, text_id, transition)
from winnow.vectors import EmbeddingStore, load_embeddings, save_embeddings

from conftest import random_units


def make_sample(i: int, status: Status = Status.RAW, description=None) -> Sample:
    sid = hashlib.blake2b(str(i).encode(), digest_size=16).hexdigest()
    return Sample(id=sid, image_path=f"images/{sid}.png", keyword="part a",
                  description=description, status=status)


class TestContentId:
    def test_identical_bytes_identical_id(self):
        assert content_id(b"abc") == content_id(b"abc")

    def test_format(self):
        sid = content_id(b"payload")
        assert len(sid) == 32
        assert sid == sid.lower()
        int(sid, 16)

    def test_different_bytes_differ(self):
        assert content_id(b"a") != content_id(b"b")

    def test_text_id_utf8(self):
        assert text_id("schlüssel") == content_id("schlüssel".encode("utf-8"))


class TestLifecycle:
    def test_legal_transitions(self):
        s = make_sample(1)
        refined = transition(s, Status.REFINED)
        assert refined.status == Status.REFINED
        committed = transition(refined, Status.COMMITTED)
        assert committed.status == Status.COMMITTED

    def test_illegal_transition_raises(self):
        s = make_sample(1)
        with pytest.raises(LifecycleError):
            transition(s, Status.COMMITTED)

    def test_self_transition_is_noop(self):
        s = make_sample(1, Status.REFINED)
        assert transition(s, Status.REFINED) is s

    @given(st.lists(st.sampled_from(list(Status)), min_size=1, max_size=12))
    @settings(max_examples=300)
    def test_fuzzed_sequences_respect_dag(self, moves):
        sample = make_sample(0)
        for target in moves:
            allowed = target == sample.status or target in LIFECYCLE[sample.status]
            if allowed:
                sample = transition(sample, target)
                assert sample.status == target
            else:
                with pytest.raises(LifecycleError):
                    transition(sample, target)


class TestManifest:
    def test_empty_manifest_is_zero_bytes(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        persist_manifest([], path)
        assert path.read_bytes() == b""
        assert load_manifest(path) == []

    def test_single_sample_round_trip(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        sample = make_sample(7, Status.REFINED, description="a red part")
        persist_manifest([sample], path)
        assert load_manifest(path) == [sample]

    def test_thousand_samples_byte_identical(self, tmp_path):
        samples = [make_sample(i, Status.RAW) for i in range(1000)]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        persist_manifest(samples, p1)
        persist_manifest(samples, p2)
        h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert h1 == h2

    def test_field_order_fixed(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        persist_manifest([make_sample(1)], path)
        line = path.read_text().splitlines()[0]
        keys = list(__import__("json").loads(line))
        assert keys == ["id", "image_path", "keyword", "description", "status",
                        "source_lang"]

    def test_missing_parent_dir_raises(self, tmp_path):
        with pytest.raises(FormatError):
            persist_manifest([], tmp_path / "nope" / "manifest.jsonl")

    def test_unicode_survives(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        sample = Sample(id=content_id(b"x"), image_path="images/x.png",
                        keyword="überschwemmtes auto", source_lang="de")
        persist_manifest([sample], path)
        assert load_manifest(path)[0].keyword == "überschwemmtes auto"


class TestAnnotations:
    def test_round_trip_and_duplicate_rejection(self, tmp_path):
        path = tmp_path / "annotations.jsonl"
        rec = AnnotationRecord(sample_id=content_id(b"1"), label="A", annotator="h",
                               round=0, reason=AnnotationReason.SEED)
        append_annotations(path, [rec])
        assert load_annotations(path) == [rec]
        with pytest.raises(DataError):
            append_annotations(path, [rec])

    def test_reannotation_in_later_round_allowed(self, tmp_path):
        path = tmp_path / "annotations.jsonl"
        sid = content_id(b"1")
        first = AnnotationRecord(sid, "A", "h", 0, AnnotationReason.SEED)
        second = AnnotationRecord(sid, "B", "h", 2, AnnotationReason.BOUNDARY)
        append_annotations(path, [first])
        append_annotations(path, [second])
        assert len(load_annotations(path)) == 2


class TestEmbeddingVector:
    def test_dim_enforced(self):
        with pytest.raises(DataError):
            EmbeddingVector(expert=ExpertKind.CLIP_IMAGE,
                            data=np.ones(10, dtype=np.float32))

    def test_unit_norm_enforced(self):
        bad = np.full(768, 0.5, dtype=np.float32)
        with pytest.raises(DataError):
            EmbeddingVector(expert=ExpertKind.CLIP_IMAGE, data=bad)

    def test_valid_vector(self):
        vec = l2_normalize(np.arange(1, 769, dtype=np.float64))
        emb = EmbeddingVector(expert=ExpertKind.CLIP_IMAGE, data=vec)
        assert emb.dim == 768
        assert not emb.data.flags.writeable


class TestEmbeddingContainer:
    def test_empty_container(self, tmp_path):
        path = tmp_path / "clip_image.bin"
        save_embeddings(path, EmbeddingStore(expert=ExpertKind.CLIP_IMAGE, vectors={}))
        store = load_embeddings(path)
        assert len(store) == 0
        assert store.expert == ExpertKind.CLIP_IMAGE

    def test_three_vector_round_trip(self, tmp_path):
        path = tmp_path / "dinov2.bin"
        vectors = {content_id(str(i).encode()): random_units(1, 1024, seed=i)[0]
                   for i in range(3)}
        save_embeddings(path, EmbeddingStore(expert=ExpertKind.DINOV2, vectors=vectors))
        loaded = load_embeddings(path)
        assert len(loaded) == 3
        for key, vec in vectors.items():
            cos = float(np.dot(vec.astype(np.float64), loaded[key].astype(np.float64)))
            assert cos == pytest.approx(1.0, abs=1e-6)

    def test_write_is_byte_deterministic(self, tmp_path):
        vectors = {content_id(str(i).encode()): random_units(1, 768, seed=i)[0]
                   for i in range(50)}
        store = EmbeddingStore(expert=ExpertKind.CLIP_IMAGE, vectors=vectors)
        save_embeddings(tmp_path / "a.bin", store)
        save_embeddings(tmp_path / "b.bin", store)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_oversized_record_reports_index(self, tmp_path):
        path = tmp_path / "clip_image.bin"
        vectors = {content_id(str(i).encode()): random_units(1, 768, seed=i)[0]
                   for i in range(3)}
        save_embeddings(path, EmbeddingStore(expert=ExpertKind.CLIP_IMAGE, vectors=vectors))
        # splice 256 extra floats into the middle record: header still says 768
        data = bytearray(path.read_bytes())
        record = 16 + 4 * 768
        insert_at = 20 + record + 16 + 4 * 768
        data[insert_at:insert_at] = b"\x00" * (4 * 256)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="record framing breaks at index"):
            load_embeddings(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "clip_image.bin"
        vec = random_units(1, 768, seed=1)[0].copy()
        save_embeddings(path, EmbeddingStore(
            expert=ExpertKind.CLIP_IMAGE, vectors={content_id(b"x"): vec}))
        data = bytearray(path.read_bytes())
        data[20 + 16: 20 + 20] = np.array([np.nan], dtype="<f4").tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(DataError, match="non-finite"):
            load_embeddings(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_embeddings(path)


class TestLabelSpace:
    def test_noise_must_be_member(self):
        with pytest.raises(DataError):
            LabelSpace(classes=(ClassDef("A", "a"),), noise_class="Z", traces=("none",))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            LabelSpace(classes=(ClassDef("A", "a"), ClassDef("A", "b")),
                       noise_class="A", traces=())

    def test_index_follows_declaration_order(self):
        space = LabelSpace(classes=(ClassDef("B", "b"), ClassDef("A", "a")),
                           noise_class="A", traces=())
        assert space.index("B") == 0
        assert space.index("A") == 1


class TestRng:
    def test_splitmix_known_stream_is_stable(self):
        state, v1 = splitmix64(0)
        _, v2 = splitmix64(state)
        assert v1 != v2
        assert splitmix64(0) == splitmix64(0)

    def test_derive_seed_depends_on_labels(self):
        assert derive_seed(1, "a") != derive_seed(1, "b")
        assert derive_seed(1, "a", "b") != derive_seed(1, "b", "a")
        assert derive_seed(1, "a") == derive_seed(1, "a")

    def test_generator_reproducible(self):
        a = generator(42, "step").integers(0, 1 << 30, size=8)
        b = generator(42, "step").integers(0, 1 << 30, size=8)
        assert np.array_equal(a, b)


def test_dump_jsonl_is_deterministic():
    rows = [{"b": 1, "a": 2}, {"x": "ü"}]
    assert dump_jsonl(rows) == dump_jsonl(rows)
    assert "ü".encode("utf-8") in dump_jsonl(rows)
