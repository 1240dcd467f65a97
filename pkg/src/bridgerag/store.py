"""Unified flat vector store with exact cosine top-n search and persistence.

AKU and bridging entries live side by side in one store. Vectors are
L2-normalized once at insert and similarity is a dot product, which equals
cosine but is cheaper per query. Zero-norm vectors are rejected at insert
and at query since cosine is undefined for them.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import IndexEntry

FORMAT_VERSION = 1

_ZERO_TOL = 1e-12


class StoreError(RuntimeError):
    """Dimension mismatch or an undefined (zero-norm) vector."""


class PersistenceError(RuntimeError):
    """A store file is missing, corrupt, or of an unknown format version."""


@dataclass(frozen=True)
class SearchHit:
    entry: IndexEntry
    score: float


class VectorStore:
    """In-memory flat store; many concurrent readers, writes exclusive."""

    def __init__(self) -> None:
        self._entries: list[IndexEntry] = []
        self._rows: list[np.ndarray] = []  # L2-normalized, parallel to entries
        self._pos: dict[str, int] = {}
        self._dim: int | None = None
        self._matrix: np.ndarray | None = None  # cached vstack of rows
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def dimension(self) -> int | None:
        """Embedding dimension, fixed by the first insert; None while empty."""
        return self._dim

    def entries(self) -> list[IndexEntry]:
        return list(self._entries)

    def get(self, entry_id: str) -> IndexEntry | None:
        pos = self._pos.get(entry_id)
        return self._entries[pos] if pos is not None else None

    def counts_by_kind(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self._entries:
            counts[entry.kind] = counts.get(entry.kind, 0) + 1
        return counts

    def _normalize(self, vec: Sequence[float], what: str) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1:
            raise StoreError(f"{what} must be a flat vector")
        if self._dim is not None and arr.shape[0] != self._dim:
            raise StoreError(
                f"{what} has dimension {arr.shape[0]}, store expects {self._dim}"
            )
        norm = float(np.linalg.norm(arr))
        if norm < _ZERO_TOL:
            raise StoreError(f"{what} has zero norm; cosine is undefined")
        return arr / norm

    def upsert(self, entries: Iterable[IndexEntry]) -> int:
        """Insert entries; an existing entry_id is replaced in place."""
        count = 0
        with self._lock:
            for entry in entries:
                row = self._normalize(entry.embedding, f"entry {entry.entry_id!r}")
                if self._dim is None:
                    self._dim = row.shape[0]
                pos = self._pos.get(entry.entry_id)
                if pos is None:
                    self._pos[entry.entry_id] = len(self._entries)
                    self._entries.append(entry)
                    self._rows.append(row)
                else:
                    self._entries[pos] = entry
                    self._rows[pos] = row
                count += 1
            self._matrix = None
        return count

    def delete(self, entry_ids: Iterable[str]) -> int:
        """Remove entries by id; unknown ids are ignored."""
        doomed = {i for i in entry_ids if i in self._pos}
        if not doomed:
            return 0
        with self._lock:
            keep = [
                (e, r)
                for e, r in zip(self._entries, self._rows)
                if e.entry_id not in doomed
            ]
            self._entries = [e for e, _ in keep]
            self._rows = [r for _, r in keep]
            self._pos = {e.entry_id: i for i, e in enumerate(self._entries)}
            self._matrix = None
        return len(doomed)

    def search(self, query_vec: Sequence[float], n: int) -> list[SearchHit]:
        """Exact top-n by cosine over all entries.

        Ties are broken by insertion order (stable). An empty store yields
        an empty result rather than an error.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        entries = self._entries
        if not entries:
            return []
        q = self._normalize(query_vec, "query")
        matrix = self._matrix
        if matrix is None or matrix.shape[0] != len(entries):
            matrix = np.vstack(self._rows)
            self._matrix = matrix
        # row-wise multiply-reduce instead of BLAS matvec: identical vectors
        # must score identically regardless of row position, so ties between
        # duplicates stay exact and insertion order can break them
        scores = (matrix * q).sum(axis=1)
        order = np.argsort(-scores, kind="stable")[:n]
        return [SearchHit(entry=entries[i], score=float(scores[i])) for i in order]

    def save(self, path: str | Path) -> None:
        """Write one JSON header line then one JSON record per entry."""
        header = {
            "format_version": FORMAT_VERSION,
            "dimension": self._dim,
            "count": len(self._entries),
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
            for entry in self._entries:
                fh.write(
                    json.dumps(
                        {
                            "entry_id": entry.entry_id,
                            "kind": entry.kind,
                            "text": entry.text,
                            "embedding": list(entry.embedding),
                            "provenance": sorted(entry.provenance),
                            "entity": entry.entity,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise PersistenceError(f"cannot read store file {path}: {exc}") from exc
        if not lines:
            raise PersistenceError(f"store file {path} is empty")
        try:
            header = json.loads(lines[0])
            version = header["format_version"]
            if version != FORMAT_VERSION:
                raise PersistenceError(
                    f"store file {path} has unknown format version {version!r}"
                )
            store = cls()
            entries = []
            for line in lines[1:]:
                if not line.strip():
                    continue
                rec = json.loads(line)
                entries.append(
                    IndexEntry(
                        entry_id=rec["entry_id"],
                        kind=rec["kind"],
                        text=rec["text"],
                        embedding=tuple(float(x) for x in rec["embedding"]),
                        provenance=frozenset(rec["provenance"]),
                        entity=rec.get("entity"),
                    )
                )
            store.upsert(entries)
        except PersistenceError:
            raise
        except (json.JSONDecodeError, KeyError, ValueError, StoreError) as exc:
            raise PersistenceError(f"store file {path} is corrupt: {exc}") from exc
        if len(store) != header.get("count"):
            raise PersistenceError(
                f"store file {path} holds {len(store)} entries, "
                f"header says {header.get('count')}"
            )
        return store
