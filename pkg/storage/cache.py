"""Caching layer for decoded and resized images."""

import hashlib
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from diskcache import Cache

from utils.config import settings
from utils.logger import get_logger

logger = get_logger(__name__)


class DecodeCache:
    """Disk cache of decoded E x E x 3 float32 arrays to skip repeated PNG decoding."""

    def __init__(self, cache_dir: Optional[Path] = None, enabled: Optional[bool] = None):
        """Initialize cache.

        Args:
            cache_dir: Directory for cache storage (uses settings.cache_dir if not provided)
            enabled: Override settings.decode_cache_enabled
        """
        self.enabled = settings.decode_cache_enabled if enabled is None else enabled
        self.cache_dir = Path(cache_dir or settings.cache_dir) / "decoded"
        self.logger = logger
        self.cache: Optional[Cache] = None
        if not self.enabled:
            return

        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            self.cache = Cache(
                directory=str(self.cache_dir),
                size_limit=settings.max_cache_size_mb * 1024 * 1024,
            )
            self.logger.debug(f"Decode cache initialized at {self.cache_dir}")
        except Exception as e:
            self.logger.warning(f"Decode cache unavailable, decoding without it: {e}")
            self.enabled = False

    def _generate_key(self, path: Path, extent: int) -> str:
        """Key from (absolute path, size, mtime, extent); a rewritten file gets a new key."""
        path = Path(path).resolve()
        stat = path.stat()
        raw = f"{path}|{stat.st_size}|{stat.st_mtime_ns}|{extent}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def get(self, path: Path, extent: int) -> Optional[np.ndarray]:
        if self.cache is None:
            return None
        try:
            key = self._generate_key(path, extent)
            cached = self.cache.get(key)
            if cached is None:
                return None
            return np.frombuffer(cached, dtype=np.float32).reshape(extent, extent, 3).copy()
        except Exception as e:
            self.logger.warning(f"Error reading decode cache for {path}: {e}")
            return None

    def set(self, path: Path, extent: int, pixels: np.ndarray):
        if self.cache is None:
            return
        try:
            key = self._generate_key(path, extent)
            self.cache.set(key, np.ascontiguousarray(pixels, dtype=np.float32).tobytes())
        except Exception as e:
            self.logger.warning(f"Error writing decode cache for {path}: {e}")

    def stats(self) -> Dict[str, Any]:
        if self.cache is None:
            return {"enabled": False}
        try:
            return {
                "enabled": True,
                "size_mb": round(self.cache.volume() / (1024 * 1024), 2),
                "item_count": len(self.cache),
                "cache_dir": str(self.cache_dir),
                "max_size_mb": settings.max_cache_size_mb,
            }
        except Exception as e:
            self.logger.error(f"Error getting cache stats: {e}")
            return {}

    def close(self):
        if self.cache is not None:
            self.cache.close()


_cache: Optional[DecodeCache] = None


def get_decode_cache() -> DecodeCache:
    """Get or create the global decode cache instance"""
    global _cache
    if _cache is None:
        _cache = DecodeCache()
    return _cache
