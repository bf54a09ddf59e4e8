"""Content-addressed frame storage and small persistence helpers."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image


def content_hash(array: np.ndarray) -> str:
    """Stable content hash of an image or mask array.

    Covers dtype kind, shape and raw bytes, so renaming or re-encoding a
    file never changes the hash but any pixel change does.
    """
    array = np.ascontiguousarray(array)
    h = hashlib.sha256()
    h.update(array.dtype.str.encode())
    h.update(struct.pack(f"<{array.ndim + 1}q", array.ndim, *array.shape))
    h.update(array.tobytes())
    return h.hexdigest()


class ObjectStore:
    """Append-only store of arrays keyed by content hash.

    Holds frames (H, W, 3 uint8) and binary masks (H, W). When bound to a
    directory each object is also persisted as a PNG named by its hash;
    reads fall back to disk, so a store loaded from a project directory is
    lazy.
    """

    def __init__(self, directory: str | Path | None = None):
        self._memory: dict[str, np.ndarray] = {}
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def put(self, array: np.ndarray) -> str:
        key = content_hash(array)
        if key not in self._memory:
            self._memory[key] = array
            if self.directory is not None:
                self._write(key, array)
        return key

    def get(self, key: str) -> np.ndarray:
        if key in self._memory:
            return self._memory[key]
        if self.directory is not None:
            path = self.directory / f"{key}.png"
            if path.is_file():
                array = self._read(path)
                self._memory[key] = array
                return array
        raise KeyError(key)

    def __contains__(self, key: str) -> bool:
        if key in self._memory:
            return True
        return (
            self.directory is not None and (self.directory / f"{key}.png").is_file()
        )

    def keys(self) -> list[str]:
        keys = set(self._memory)
        if self.directory is not None:
            keys.update(p.stem for p in self.directory.glob("*.png"))
        return sorted(keys)

    def bind(self, directory: str | Path) -> None:
        """Attach a directory and flush everything held in memory."""
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        for key, array in self._memory.items():
            self._write(key, array)

    def _write(self, key: str, array: np.ndarray) -> None:
        path = self.directory / f"{key}.png"
        if path.exists():
            return
        if array.ndim == 2:
            Image.fromarray(np.asarray(array) > 0).save(path, bits=1)
        else:
            Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)

    @staticmethod
    def _read(path: Path) -> np.ndarray:
        with Image.open(path) as img:
            if img.mode == "1":
                return (np.asarray(img) > 0).astype(np.float64)
            return np.asarray(img.convert("RGB"))


def atomic_write_json(path: str | Path, payload: Any) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
    tmp.replace(path)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
