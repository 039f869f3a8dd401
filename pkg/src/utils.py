"""Shared utility functions for wildflow."""
from __future__ import annotations

import hashlib
import json
import platform
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

_TRACKED_PACKAGES = ("numpy", "scipy", "pydantic", "rich", "click", "python-dotenv")


def _default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonical_json(data: Any, *, indent: int | None = None) -> str:
    """Deterministic JSON: sorted keys, no trailing whitespace, numpy-aware."""
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(
        data, sort_keys=True, separators=separators, indent=indent, ensure_ascii=False, default=_default
    )


def config_hash(payload: Any) -> str:
    """Short SHA-256 of the canonical JSON form of ``payload``."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]


def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_json(path: Path | str, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(data, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path: Path | str) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
