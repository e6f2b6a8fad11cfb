"""Documentation chunking and an embedded flat vector index.

The index is an exhaustive-scan store: campaign corpora are a few thousand
chunks, where exact scan is both faster and simpler than approximate
structures. It persists as one chunk manifest (JSONL) plus one embedding
matrix (.npy) so a campaign directory is self-contained.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyIndex, InvalidPolicy, ZeroVector


@dataclass(frozen=True)
class Chunk:
    """One retrievable documentation fragment."""

    chunk_id: str
    doc_id: str
    text: str
    ordinal: int


@dataclass(frozen=True)
class RetrievedChunk:
    chunk: Chunk
    distance: float


@dataclass(frozen=True)
class ChunkPolicy:
    max_chars: int = 1500
    overlap_chars: int = 200

    def validate(self) -> None:
        if self.max_chars <= 0 or self.overlap_chars < 0 or self.max_chars <= self.overlap_chars:
            raise InvalidPolicy(
                f"require max_chars > overlap_chars >= 0, got {self.max_chars}/{self.overlap_chars}"
            )


@dataclass(frozen=True)
class IndexStats:
    count: int
    dim: int


_SENTENCE_END_RE = re.compile(r"[.!?][)\"']*[ \t\n]")


def _pick_cut(window: str, overlap: int) -> int:
    """Cut position within a full window: paragraph, then sentence, then hard.

    The cut must exceed ``overlap`` so the next chunk makes progress after
    rewinding by the overlap.
    """
    para = window.rfind("\n\n")
    if para != -1 and para + 2 > overlap:
        return para + 2
    best = -1
    for m in _SENTENCE_END_RE.finditer(window):
        if m.end() > overlap:
            best = m.end()
    if best != -1:
        return best
    return len(window)


def chunk_document(doc_id: str, content: str, policy: ChunkPolicy | None = None) -> list[Chunk]:
    """Split a document into overlapping chunks of at most max_chars.

    Boundaries prefer paragraph breaks, then sentence ends, then a hard cut.
    Consecutive chunks share exactly ``overlap_chars`` characters, so
    ``chunks[0].text + "".join(c.text[overlap:] for c in chunks[1:])``
    reconstructs the input.
    """
    policy = policy or ChunkPolicy()
    policy.validate()
    if not content:
        raise InvalidPolicy(f"document {doc_id!r} is empty")
    max_chars, overlap = policy.max_chars, policy.overlap_chars
    chunks: list[Chunk] = []
    pos = 0
    ordinal = 0
    while pos < len(content):
        if len(content) - pos <= max_chars:
            text = content[pos:]
            chunks.append(Chunk(f"{doc_id}#{ordinal}", doc_id, text, ordinal))
            break
        cut = _pick_cut(content[pos : pos + max_chars], overlap)
        chunks.append(Chunk(f"{doc_id}#{ordinal}", doc_id, content[pos : pos + cut], ordinal))
        pos += cut - overlap
        ordinal += 1
    return chunks


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b), clamped into [0, 2].

    Bitwise-identical vectors return exactly 0.0; the analytic value for
    a == b is zero and the fast path keeps self-retrieval exact.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dim {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine distance is undefined for the all-zero vector")
    if np.array_equal(a, b):
        return 0.0
    d = 1.0 - float(np.dot(a, b)) / (na * nb)
    return min(max(d, 0.0), 2.0)


class VectorIndex:
    """Flat, exhaustively scanned embedding index with JSON+npy persistence.

    Indexing is idempotent per chunk_id (re-adding overwrites). Mutation is
    not thread-safe; campaigns index once up front and then only read.
    """

    MANIFEST = "chunks.jsonl"
    MATRIX = "embeddings.npy"
    META = "meta.json"

    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._chunks: list[Chunk] = []
        self._vectors: list[np.ndarray] = []
        self._row_by_id: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._chunks)

    def add(self, chunk: Chunk, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.ndim != 1:
            raise DimensionMismatch(f"expected 1-d vector, got shape {vector.shape}")
        if self.dim is None:
            self.dim = int(vector.shape[0])
        if vector.shape[0] != self.dim:
            raise DimensionMismatch(f"index dim {self.dim}, embedding dim {vector.shape[0]}")
        row = self._row_by_id.get(chunk.chunk_id)
        if row is None:
            self._row_by_id[chunk.chunk_id] = len(self._chunks)
            self._chunks.append(chunk)
            self._vectors.append(vector)
        else:
            self._chunks[row] = chunk
            self._vectors[row] = vector

    def index_chunks(self, chunks: list[Chunk], embedder) -> IndexStats:
        """Embed and store every chunk; returns (count, dim) after the pass."""
        for chunk in chunks:
            self.add(chunk, embedder.embed_text(chunk.text))
        return IndexStats(count=len(self._chunks), dim=self.dim or 0)

    def retrieve(self, query_text: str, threshold: float, k: int, embedder) -> list[RetrievedChunk]:
        """Up to k chunks with distance < threshold, closest first.

        Ties are broken by (doc_id, ordinal) so retrieval is deterministic.
        """
        if not 0.0 < threshold <= 2.0:
            raise ValueError(f"threshold must be in (0, 2], got {threshold}")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self._chunks:
            raise EmptyIndex("retrieve on an empty index")
        q = embedder.embed_text(query_text)
        scored = []
        for chunk, vec in zip(self._chunks, self._vectors):
            d = cosine_distance(q, vec)
            if d < threshold:
                scored.append(RetrievedChunk(chunk=chunk, distance=d))
        scored.sort(key=lambda r: (r.distance, r.chunk.doc_id, r.chunk.ordinal))
        return scored[:k]

    # --- persistence ---

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / self.MANIFEST, "w", encoding="utf-8") as fh:
            for chunk in self._chunks:
                fh.write(json.dumps(chunk.__dict__, sort_keys=True) + "\n")
        matrix = (
            np.vstack(self._vectors) if self._vectors else np.zeros((0, self.dim or 0))
        )
        np.save(directory / self.MATRIX, matrix)
        (directory / self.META).write_text(
            json.dumps({"count": len(self._chunks), "dim": self.dim}, sort_keys=True)
        )

    @classmethod
    def load(cls, directory: Path) -> "VectorIndex":
        directory = Path(directory)
        meta = json.loads((directory / cls.META).read_text())
        index = cls(dim=meta["dim"])
        matrix = np.load(directory / cls.MATRIX)
        with open(directory / cls.MANIFEST, encoding="utf-8") as fh:
            for row, line in enumerate(fh):
                rec = json.loads(line)
                index.add(Chunk(**rec), matrix[row])
        return index
