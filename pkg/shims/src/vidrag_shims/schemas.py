"""Locate and load the shared wire-protocol JSON schemas.

The schemas are the engine's published interface files. Resolution order:
an explicit directory, the VIDRAG_SCHEMAS_DIR environment variable, a
``schemas/`` directory under the current working directory, and finally the
copies shipped inside an installed ``vidrag`` package.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

KINDS = ("ocr", "asr", "detect", "embed_text", "clip_score", "lvlm_generate")


def find_schemas_dir(explicit: str | Path | None = None) -> Path:
    candidates = []
    if explicit:
        candidates.append(Path(explicit))
    env = os.environ.get("VIDRAG_SCHEMAS_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path.cwd() / "schemas")
    for candidate in candidates:
        if (candidate / "envelope.json").is_file():
            return candidate
    try:
        from importlib import resources

        packaged = resources.files("vidrag") / "schemas"
        if (packaged / "envelope.json").is_file():
            return Path(str(packaged))
    except (ImportError, ModuleNotFoundError):
        pass
    raise FileNotFoundError(
        "cannot locate the wire schemas; pass --schemas, set VIDRAG_SCHEMAS_DIR, "
        "or run from a directory containing schemas/"
    )


class SchemaSet:
    def __init__(self, directory: str | Path | None = None):
        self.directory = find_schemas_dir(directory)
        self._cache: dict[str, dict] = {}

    def _load(self, name: str) -> dict:
        if name not in self._cache:
            path = Path(self.directory) / f"{name}.json"
            self._cache[name] = json.loads(path.read_text(encoding="utf-8"))
        return self._cache[name]

    def envelope(self, side: str) -> dict:
        return self._load("envelope")["properties"][side]

    def payload(self, kind: str, side: str) -> dict:
        return self._load(kind)["properties"][side]
