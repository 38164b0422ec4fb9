"""Flat inner-product index over unit-normalized embeddings.

Vectors are normalized on insertion and on query, so the inner product is
cosine similarity. Search is an exhaustive scan: exact results, no
approximation. Scores are accumulated in float64 for reproducibility, while
the stored vectors are float32 (the on-disk format), so a saved and reloaded
index returns bit-identical scores.

Thread safety: building (``add``) is single-writer. Once built or loaded the
index is immutable in practice and safe for any number of concurrent readers;
interleaving ``add`` with ``search`` is not supported.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import CorruptManifest, DimensionMismatch, DuplicateId, IoFailure, ZeroVector

_FORMAT = "flat-ip-v1"

MANIFEST_FILE = "manifest.json"
VECTORS_FILE = "vectors.f32"
PAYLOADS_FILE = "payloads.jsonl"


def normalize(vector: Sequence[float] | np.ndarray) -> np.ndarray:
    """Return ``vector`` scaled to unit L2 norm, as float64.

    Raises ZeroVector if the norm is below 1e-12.
    """
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm


@dataclass
class IndexEntry:
    """One row to be inserted: an id, its embedding, and the stored payload.

    ``payload`` is the JSON-serializable record behind the vector (the
    ``payloads.jsonl`` row); it must carry the same ``id``.
    """

    id: str
    vector: Sequence[float] | np.ndarray
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SearchHit:
    id: str
    score: float


class FlatIndex:
    """Exhaustive cosine-similarity index with thresholded search."""

    def __init__(self, dim: int | None = None):
        self._dim = dim
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._rows: list[np.ndarray] = []  # float32 unit rows, the storage form
        self._payloads: list[dict[str, Any]] = []
        self._matrix64: np.ndarray | None = None  # search cache, rebuilt after add

    @property
    def dim(self) -> int | None:
        return self._dim

    def size(self) -> int:
        return len(self._ids)

    def payload(self, entry_id: str) -> dict[str, Any]:
        return self._payloads[self._pos[entry_id]]

    def payloads(self) -> list[dict[str, Any]]:
        return list(self._payloads)

    def add(self, entries: Iterable[IndexEntry]) -> int:
        """Normalize and append ``entries``; returns the number added.

        Raises DimensionMismatch or DuplicateId before mutating anything.
        """
        staged: list[tuple[str, np.ndarray, dict[str, Any]]] = []
        seen: set[str] = set()
        dim = self._dim
        for entry in entries:
            unit = normalize(entry.vector)
            if dim is None:
                dim = unit.shape[0]
            elif unit.shape[0] != dim:
                raise DimensionMismatch(
                    f"entry {entry.id!r} has dim {unit.shape[0]}, index has dim {dim}"
                )
            if entry.id in self._pos or entry.id in seen:
                raise DuplicateId(f"id {entry.id!r} already present")
            seen.add(entry.id)
            staged.append((entry.id, unit.astype(np.float32), dict(entry.payload)))

        for entry_id, row, payload in staged:
            self._pos[entry_id] = len(self._ids)
            self._ids.append(entry_id)
            self._rows.append(row)
            self._payloads.append(payload)
        self._dim = dim
        self._matrix64 = None
        return len(staged)

    def search(self, query: Sequence[float] | np.ndarray, threshold: float) -> list[SearchHit]:
        """Return entries with cosine similarity strictly above ``threshold``.

        Hits are sorted by descending score, ties broken by ascending id.
        Scores are clamped to [-1, 1] so a threshold of 1.0 always yields an
        empty result.
        """
        if not self._ids:
            return []
        q = normalize(query)
        if q.shape[0] != self._dim:
            raise DimensionMismatch(f"query has dim {q.shape[0]}, index has dim {self._dim}")
        if self._matrix64 is None:
            self._matrix64 = np.vstack(self._rows).astype(np.float64)
        scores = np.clip(self._matrix64 @ q, -1.0, 1.0)
        hits = [
            SearchHit(self._ids[i], float(scores[i]))
            for i in np.nonzero(scores > threshold)[0]
        ]
        hits.sort(key=lambda h: (-h.score, h.id))
        return hits

    # --- persistence ---------------------------------------------------
    # Layout: manifest.json (dim, count, checksums), vectors.f32 (row-major
    # contiguous little-endian float32), payloads.jsonl (one object per row).

    def save(self, location: str | Path) -> None:
        path = Path(location)
        try:
            path.mkdir(parents=True, exist_ok=True)
            vec_bytes = (
                np.vstack(self._rows).astype("<f4").tobytes()
                if self._rows
                else b""
            )
            payload_lines = [
                json.dumps(p, ensure_ascii=False, sort_keys=True) for p in self._payloads
            ]
            payload_bytes = ("".join(line + "\n" for line in payload_lines)).encode("utf-8")
            manifest = {
                "format": _FORMAT,
                "dim": self._dim or 0,
                "count": self.size(),
                "vectors_sha256": hashlib.sha256(vec_bytes).hexdigest(),
                "payloads_sha256": hashlib.sha256(payload_bytes).hexdigest(),
            }
            (path / VECTORS_FILE).write_bytes(vec_bytes)
            (path / PAYLOADS_FILE).write_bytes(payload_bytes)
            (path / MANIFEST_FILE).write_text(
                json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
            )
        except OSError as exc:
            raise IoFailure(f"cannot write index at {path}: {exc}") from exc

    @classmethod
    def load(cls, location: str | Path) -> "FlatIndex":
        path = Path(location)
        manifest_path = path / MANIFEST_FILE
        if not manifest_path.is_file():
            raise CorruptManifest(f"no {MANIFEST_FILE} at {path}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CorruptManifest(f"unreadable manifest at {path}: {exc}") from exc
        if manifest.get("format") != _FORMAT:
            raise CorruptManifest(f"unknown index format {manifest.get('format')!r}")

        try:
            vec_bytes = (path / VECTORS_FILE).read_bytes()
            payload_bytes = (path / PAYLOADS_FILE).read_bytes()
        except OSError as exc:
            raise CorruptManifest(f"missing index file at {path}: {exc}") from exc

        for key, blob in (("vectors_sha256", vec_bytes), ("payloads_sha256", payload_bytes)):
            if hashlib.sha256(blob).hexdigest() != manifest.get(key):
                raise CorruptManifest(f"checksum mismatch for {key} at {path}")

        count = int(manifest["count"])
        dim = int(manifest["dim"]) or None
        index = cls(dim)
        if count == 0:
            return index

        if dim is None or len(vec_bytes) != count * dim * 4:
            raise CorruptManifest(f"vector blob has wrong size at {path}")
        matrix = np.frombuffer(vec_bytes, dtype="<f4").reshape(count, dim)
        payload_lines = payload_bytes.decode("utf-8").splitlines()
        if len(payload_lines) != count:
            raise CorruptManifest(f"expected {count} payload rows at {path}")
        for row, line in zip(matrix, payload_lines):
            payload = json.loads(line)
            entry_id = str(payload["id"])
            if entry_id in index._pos:
                raise CorruptManifest(f"duplicate id {entry_id!r} in stored payloads")
            index._pos[entry_id] = len(index._ids)
            index._ids.append(entry_id)
            index._rows.append(np.asarray(row, dtype=np.float32))
            index._payloads.append(payload)
        return index
