"""On-disk cache for solved semidefinite programs."""
from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

import diskcache
import numpy as np

logger = logging.getLogger(__name__)


class SolutionCache:
    """Stores SDP variable assignments keyed by a fingerprint of the problem data."""

    def __init__(self, cache_dir: Path | str) -> None:
        self.cache_dir = Path(cache_dir).expanduser().resolve()
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._cache = diskcache.Cache(str(self.cache_dir))
        self.hits: int = 0
        self.misses: int = 0

    # Cache key computation
    @staticmethod
    def build_key(chunks: Iterable[bytes]) -> str:
        """Compute a cache key from the serialized problem data."""
        h = hashlib.sha256()
        for chunk in chunks:
            h.update(chunk)
        return h.hexdigest()

    def load(self, key: str) -> Optional[dict]:
        entry = self._cache.get(key)
        if entry is None:
            self.misses += 1
            logger.info("Cache miss for %s", key[:12])
            return None
        self.hits += 1
        logger.info("Cache hit for %s", key[:12])
        return {
            "values": {name: np.array(value) for name, value in entry["values"].items()},
            "objective": entry["objective"],
            "status": entry["status"],
            "solver": entry["solver"],
        }

    def save(
        self,
        key: str,
        values: Dict[str, np.ndarray],
        objective: Optional[float],
        status: str,
        solver: str,
    ) -> None:
        self._cache.set(
            key,
            {
                "values": {name: np.asarray(value).tolist() for name, value in values.items()},
                "objective": objective,
                "status": status,
                "solver": solver,
            },
        )
        logger.info("Cached SDP solution %s (%s)", key[:12], status)

    def delete(self, key: str) -> bool:
        removed = bool(self._cache.delete(key))
        if removed:
            logger.info("Deleted cached solution %s", key[:12])
        return removed

    def cache_size_bytes(self) -> int:
        return int(self._cache.volume())

    def close(self) -> None:
        self._cache.close()
