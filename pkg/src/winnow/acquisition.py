"""Keyword corpus construction and crawl-result ingestion.

Keyword expansion asks the VLM twice per category — once with seed images
plus the category prompt (visual channel), once with the prompt alone
(text channel) — then widens the union through a multilingual lexicon and
dedups. Actual web fetching sits behind a small fetcher interface; the
shipped implementation reads a local directory tree so the pipeline can run
offline.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from PIL import Image

from .errors import AcquisitionError, PreconditionError
from .types import Sample, Status, content_id

logger = logging.getLogger(__name__)


VLM_VISUAL = "vlm_visual"
TEXT_ONLY = "text_only"


@dataclass(frozen=True)
class KeywordEntry:
    text: str
    source: str  # vlm_visual | text_only
    lang: str


@dataclass(frozen=True)
class KeywordCorpus:
    category: str
    entries: tuple[KeywordEntry, ...]

    def texts(self) -> list[str]:
        return [e.text for e in self.entries]


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


class Lexicon(Protocol):
    """Multilingual expansion: maps a term into a target language."""

    def expand(self, term: str, lang: str) -> list[str]:
        ...


class IdentityLexicon:
    """Passthrough: every term maps to itself in every requested language."""

    def expand(self, term: str, lang: str) -> list[str]:
        return [term]


class TableLexicon:
    """TSV-driven lexicon (term<TAB>lang<TAB>translation, UTF-8).

    Terms without a table entry for the requested language fall back to
    passthrough so recall never drops because of a sparse table.
    """

    def __init__(self, table: dict[tuple[str, str], list[str]]):
        self._table = table

    @classmethod
    def from_tsv(cls, path: Path) -> "TableLexicon":
        table: dict[tuple[str, str], list[str]] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise AcquisitionError(f"{path}:{lineno}: expected term<TAB>lang<TAB>translation")
            term, lang, translation = (p.strip() for p in parts)
            table.setdefault((_normalize(term), lang), []).append(translation)
        return cls(table)

    def expand(self, term: str, lang: str) -> list[str]:
        return self._table.get((_normalize(term), lang), [term])


class KeywordVlm(Protocol):
    def expand_keywords(self, images: list[bytes], prompt: str, channel: str) -> list[str]:
        ...


def expand_keywords(seed_images: list[bytes], category_prompt: str, category: str,
                    langs: list[str], vlm: KeywordVlm,
                    lexicon: Lexicon | None = None,
                    keywords_per_channel: int = 20) -> KeywordCorpus:
    """Build the crawl keyword corpus for one category.

    Output is deduped under (normalized text, lang) and sorted by
    (lang, text), so it is independent of seed and language ordering. When
    the same keyword comes from both channels the visual channel wins the
    source tag.
    """
    if not seed_images and not category_prompt.strip():
        raise PreconditionError("need seed images or a category prompt to expand keywords")
    if not langs:
        raise PreconditionError("need at least one target language")
    lexicon = lexicon or IdentityLexicon()
    failures = []
    visual: list[str] = []
    textual: list[str] = []
    if seed_images:
        # canonical seed order so the corpus cannot depend on input ordering
        ordered_seeds = sorted(seed_images, key=content_id)
        try:
            visual = vlm.expand_keywords(ordered_seeds, category_prompt,
                                         "visual")[:keywords_per_channel]
        except Exception as exc:
            failures.append(f"visual: {exc}")
    try:
        textual = vlm.expand_keywords([], category_prompt, "text")[:keywords_per_channel]
    except Exception as exc:
        failures.append(f"text: {exc}")
    if failures:
        raise AcquisitionError("keyword expansion failed on channel(s): " + "; ".join(failures))
    union: list[tuple[str, str]] = [(kw, TEXT_ONLY) for kw in textual]
    union += [(kw, VLM_VISUAL) for kw in visual]
    dedup: dict[tuple[str, str], KeywordEntry] = {}
    for kw, source in union:
        for lang in sorted(set(langs)):
            for translated in lexicon.expand(kw, lang):
                key = (_normalize(translated), lang)
                current = dedup.get(key)
                # Visual source takes precedence on collisions.
                if current is None or (current.source == TEXT_ONLY and source == VLM_VISUAL):
                    dedup[key] = KeywordEntry(text=" ".join(translated.split()),
                                              source=source, lang=lang)
    entries = tuple(sorted(dedup.values(), key=lambda e: (e.lang, e.text)))
    if not entries:
        raise AcquisitionError("no keywords produced")
    return KeywordCorpus(category=category, entries=entries)


@dataclass
class IngestReport:
    added: int = 0
    duplicate: int = 0
    rejected: int = 0

    @property
    def total(self) -> int:
        return self.added + self.duplicate + self.rejected


_FORMAT_EXT = {"JPEG": ".jpg", "PNG": ".png", "WEBP": ".webp"}


def decode_image(data: bytes) -> str | None:
    """Return the canonical file extension if the bytes decode, else None."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.verify()
            return _FORMAT_EXT.get(img.format or "", f".{(img.format or 'img').lower()}")
    except Exception:
        return None


class Fetcher(Protocol):
    def fetch(self, keyword: str, lang: str) -> Iterable[bytes]:
        ...


def _slug(keyword: str) -> str:
    cleaned = "".join(c if c.isalnum() else "-" for c in keyword.casefold())
    return "-".join(p for p in cleaned.split("-") if p)


class DirectoryFetcher:
    """Reads crawl results from `<root>/<keyword-slug>/*.{jpg,png,webp}`."""

    EXTENSIONS = (".jpg", ".jpeg", ".png", ".webp")

    def __init__(self, root: Path):
        self.root = Path(root)

    def fetch(self, keyword: str, lang: str) -> Iterable[bytes]:
        folder = self.root / _slug(keyword)
        if not folder.is_dir():
            return []
        for path in sorted(folder.iterdir()):
            if path.suffix.lower() in self.EXTENSIONS and path.is_file():
                yield path.read_bytes()


def ingest_crawl(project, results: Iterable[tuple[bytes, str, str]]) -> IngestReport:
    """Add crawl results (bytes, keyword, lang) to the project manifest.

    Content-identical images dedup on their hash; undecodable payloads are
    rejected and logged with their keyword for audit. Re-ingesting the same
    results only grows the duplicate count.
    """
    report = IngestReport()
    with project.lock():
        samples = project.load_samples()
        known = {s.id for s in samples}
        added: list[Sample] = []
        for data, keyword, lang in results:
            ext = decode_image(data)
            if ext is None:
                report.rejected += 1
                logger.warning("rejecting undecodable image for keyword %r", keyword)
                continue
            sid = content_id(data)
            if sid in known:
                report.duplicate += 1
                continue
            rel_path = f"images/{sid}{ext}"
            (project.root / rel_path).write_bytes(data)
            added.append(Sample(id=sid, image_path=rel_path, keyword=keyword,
                                status=Status.RAW, source_lang=lang))
            known.add(sid)
            report.added += 1
        if added:
            project.save_samples(samples + added)
    return report
