"""Deterministic file formats: canonical JSON, JSON-lines scenario/track files.

Every emitted file starts with a header record carrying the schema version
and a run manifest (config hash, seeds, package version). Floats are written
with 17 significant digits so files round-trip exactly and reruns with the
same seeds are byte-identical; nothing time- or host-dependent is recorded.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from . import __version__

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Raised when a file does not match the expected schema."""


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (exact round trip)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    return format(x, ".17g")


def _canonize(obj: Any, out: list[str]) -> None:
    if obj is None or obj is True or obj is False:
        out.append("null" if obj is None else ("true" if obj is True else "false"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, np.ndarray):
        _canonize(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be str, got {type(k).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _canonize(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _canonize(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} canonically")


def dumps_canonical(obj: Any) -> str:
    """Serialize to compact JSON with deterministic float formatting."""
    out: list[str] = []
    _canonize(obj, out)
    return "".join(out)


def config_hash(config: dict) -> str:
    """Stable hash of a resolved configuration (sorted keys, canonical floats)."""

    def sort_keys(o: Any) -> Any:
        if isinstance(o, dict):
            return {k: sort_keys(o[k]) for k in sorted(o)}
        if isinstance(o, (list, tuple)):
            return [sort_keys(v) for v in o]
        return o

    return hashlib.sha256(dumps_canonical(sort_keys(config)).encode()).hexdigest()


def make_manifest(kind: str, *, seed: int | None = None, config: dict | None = None) -> dict:
    manifest: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "package_version": __version__,
    }
    if seed is not None:
        manifest["seed"] = int(seed)
    if config is not None:
        manifest["config_hash"] = config_hash(config)
    return manifest


def write_jsonl(path: str | Path, header: dict, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(header))
        fh.write("\n")
        for record in records:
            fh.write(dumps_canonical(record))
            fh.write("\n")


def read_jsonl(path: str | Path, expect_kind: str | None = None) -> tuple[dict, list[dict]]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = json.loads(lines[0])
    if not isinstance(header, dict) or "schema_version" not in header:
        raise SchemaError(f"{path}: missing schema header")
    if header["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: unsupported schema_version {header['schema_version']!r}"
        )
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise SchemaError(f"{path}: expected kind {expect_kind!r}, got {header.get('kind')!r}")
    return header, [json.loads(line) for line in lines[1:]]


def write_json(path: str | Path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")


def read_json(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path: str | Path, columns: list[str], rows: Iterator[Iterable[Any]]) -> None:
    """Write a small CSV with canonical float formatting.

    Fields are quoted only when they contain separators (e.g. sweep cell
    keys), so files without such fields stay plain byte-stable text.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def cell(v: Any) -> str:
        if isinstance(v, (float, np.floating)):
            return format_float(float(v))
        return str(v)

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell(v) for v in row])
