"""Keyword corpus construction and crawl ingestion."""

import io

import pytest
from PIL import Image

from winnow.acquisition import (DirectoryFetcher, TableLexicon, decode_image,
                                expand_keywords, ingest_crawl)
from winnow.config import PipelineConfig
from winnow.errors import AcquisitionError, PreconditionError
from winnow.project import Project
from winnow.types import Status


class ScriptedVlm:
    def __init__(self, visual, text, fail=()):
        self.visual = visual
        self.text = text
        self.fail = set(fail)

    def expand_keywords(self, images, prompt, channel):
        if channel in self.fail:
            raise RuntimeError(f"{channel} endpoint down")
        return list(self.visual if channel == "visual" else self.text)


def png_bytes(color=(200, 10, 10), side=8) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (side, side), color).save(buf, format="PNG")
    return buf.getvalue()


class TestExpandKeywords:
    def test_identical_channels_dedup(self):
        vlm = ScriptedVlm(visual=["a", "b", "c"], text=["a", "b", "c"])
        corpus = expand_keywords([b"seed"], "flooded car", "A", ["en"], vlm)
        assert len(corpus.entries) == 3
        assert corpus.texts() == ["a", "b", "c"]

    def test_union_times_langs(self):
        vlm = ScriptedVlm(visual=["b", "c"], text=["a", "b"])
        corpus = expand_keywords([b"seed"], "prompt", "A", ["en", "de"], vlm)
        # union {a,b,c} x {de,en} with the identity lexicon -> 6 entries
        assert len(corpus.entries) == 6
        assert [e.lang for e in corpus.entries] == ["de", "de", "de", "en", "en", "en"]

    def test_visual_source_wins_collisions(self):
        vlm = ScriptedVlm(visual=["b"], text=["b"])
        corpus = expand_keywords([b"seed"], "prompt", "A", ["en"], vlm)
        assert corpus.entries[0].source == "vlm_visual"

    def test_text_only_without_seeds(self):
        vlm = ScriptedVlm(visual=["x"], text=["a"])
        corpus = expand_keywords([], "prompt", "A", ["en"], vlm)
        assert corpus.texts() == ["a"]  # visual channel skipped without seeds

    def test_lang_order_does_not_matter(self):
        vlm = ScriptedVlm(visual=["b"], text=["a"])
        c1 = expand_keywords([b"s"], "p", "A", ["en", "de"], vlm)
        c2 = expand_keywords([b"s"], "p", "A", ["de", "en"], vlm)
        assert c1 == c2

    def test_case_and_whitespace_dedup(self):
        vlm = ScriptedVlm(visual=["Flooded  Car"], text=["flooded car"])
        corpus = expand_keywords([b"s"], "p", "A", ["en"], vlm)
        assert len(corpus.entries) == 1

    def test_channel_failure_reported(self):
        vlm = ScriptedVlm(visual=["a"], text=["b"], fail={"text"})
        with pytest.raises(AcquisitionError, match="text"):
            expand_keywords([b"s"], "p", "A", ["en"], vlm)

    def test_no_inputs_rejected(self):
        vlm = ScriptedVlm(visual=[], text=[])
        with pytest.raises(PreconditionError):
            expand_keywords([], "   ", "A", ["en"], vlm)

    def test_empty_union_rejected(self):
        vlm = ScriptedVlm(visual=[], text=[])
        with pytest.raises(AcquisitionError, match="no keywords"):
            expand_keywords([b"s"], "p", "A", ["en"], vlm)

    def test_table_lexicon_expansion(self, tmp_path):
        tsv = tmp_path / "lex.tsv"
        tsv.write_text("flooded car\tde\tüberschwemmtes auto\n"
                       "flooded car\tde\tauto mit wasserschaden\n", encoding="utf-8")
        lexicon = TableLexicon.from_tsv(tsv)
        vlm = ScriptedVlm(visual=[], text=["flooded car"])
        corpus = expand_keywords([], "p", "A", ["de"], vlm, lexicon=lexicon)
        assert corpus.texts() == ["auto mit wasserschaden", "überschwemmtes auto"]

    def test_table_lexicon_missing_entry_passthrough(self):
        lexicon = TableLexicon({})
        assert lexicon.expand("rust", "fr") == ["rust"]

    def test_keywords_per_channel_cap(self):
        vlm = ScriptedVlm(visual=[], text=[f"kw{i}" for i in range(50)])
        corpus = expand_keywords([], "p", "A", ["en"], vlm, keywords_per_channel=5)
        assert len(corpus.entries) == 5


class TestIngest:
    def project(self, tmp_path):
        return Project.init(tmp_path / "proj", PipelineConfig())

    def test_duplicate_bytes_counted_once(self, tmp_path):
        project = self.project(tmp_path)
        img = png_bytes()
        report = ingest_crawl(project, [(img, "kw one", "en"), (img, "kw two", "en")])
        assert report.added == 1
        assert report.duplicate == 1
        samples = project.load_samples()
        assert len(samples) == 1
        assert samples[0].status == Status.RAW
        assert (project.root / samples[0].image_path).exists()

    def test_empty_results(self, tmp_path):
        report = ingest_crawl(self.project(tmp_path), [])
        assert (report.added, report.duplicate, report.rejected) == (0, 0, 0)

    def test_undecodable_rejected(self, tmp_path):
        report = ingest_crawl(self.project(tmp_path), [(b"not an image", "kw", "en")])
        assert report.rejected == 1
        assert report.added == 0

    def test_distinct_hash_count(self, tmp_path):
        project = self.project(tmp_path)
        results = []
        for i in range(100):
            # 7 byte-level duplicates: indices 93..99 repeat 0..6
            source = i if i < 93 else i - 93
            results.append((png_bytes(color=(source % 256, 40, 40)), "kw", "en"))
        report = ingest_crawl(project, results)
        assert report.added == 93
        assert report.duplicate == 7
        assert report.total == 100

    def test_reingest_idempotent(self, tmp_path):
        project = self.project(tmp_path)
        results = [(png_bytes(color=(i, 0, 0)), "kw", "en") for i in range(5)]
        first = ingest_crawl(project, results)
        second = ingest_crawl(project, results)
        assert first.added == 5
        assert second.added == 0
        assert second.duplicate == 5
        assert len(project.load_samples()) == 5

    def test_decode_image_extensions(self):
        assert decode_image(png_bytes()) == ".png"
        buf = io.BytesIO()
        Image.new("RGB", (4, 4)).save(buf, format="JPEG")
        assert decode_image(buf.getvalue()) == ".jpg"
        assert decode_image(b"junk") is None


class TestDirectoryFetcher:
    def test_reads_keyword_slug_folders(self, tmp_path):
        folder = tmp_path / "crawl" / "flooded-car"
        folder.mkdir(parents=True)
        (folder / "a.png").write_bytes(png_bytes(color=(1, 2, 3)))
        (folder / "b.png").write_bytes(png_bytes(color=(4, 5, 6)))
        (folder / "notes.txt").write_text("skip me")
        fetcher = DirectoryFetcher(tmp_path / "crawl")
        got = list(fetcher.fetch("Flooded Car", "en"))
        assert len(got) == 2

    def test_missing_folder_is_empty(self, tmp_path):
        fetcher = DirectoryFetcher(tmp_path)
        assert list(fetcher.fetch("nothing here", "en")) == []
