"""Human-readable ``key=value`` run manifests with a content hash of outputs."""
from __future__ import annotations

import hashlib
from dataclasses import fields, is_dataclass
from pathlib import Path

MANIFEST_NAME = "manifest.txt"


def blob_hash(data: bytes) -> str:
    """Git blob id of ``data`` (SHA-1 over ``blob <len>\\0`` + data)."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(directory, exclude=(MANIFEST_NAME,)) -> str:
    """Hash of every file below ``directory``: SHA-1 over sorted ``<blob> <relpath>`` lines."""
    root = Path(directory)
    lines = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        if rel in exclude:
            continue
        lines.append(f"{blob_hash(path.read_bytes())} {rel}\n")
    return hashlib.sha1("".join(lines).encode()).hexdigest()


def flatten(prefix: str, obj) -> dict[str, str]:
    """Dataclass fields as ``prefix.field`` entries; other values via ``str``."""
    if is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        for f in fields(obj):
            out.update(flatten(f"{prefix}.{f.name}", getattr(obj, f.name)))
        return out
    if isinstance(obj, float):
        return {prefix: repr(obj)}
    if isinstance(obj, (tuple, list)):
        return {prefix: ",".join(str(v) for v in obj)}
    return {prefix: "" if obj is None else str(obj)}


def trial_items(algorithm: str, cfg, r: float, trial: int, seed: int) -> dict[str, str]:
    items = {"algorithm": algorithm, "r": repr(float(r)), "trial": str(trial), "seed": str(seed)}
    for key, value in flatten("config", cfg).items():
        items[key] = value
    return items


def write_manifest(path, items: dict, content_dir=None) -> None:
    """Write ``items`` one per line; ``content_hash`` is appended when a directory is given."""
    items = dict(items)
    if content_dir is not None:
        items["content_hash"] = content_hash(content_dir)
    lines = []
    for key, value in items.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise ValueError(f"manifest entry {key!r} cannot contain newlines or '=' in the key")
        lines.append(f"{key}={text}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text(encoding="utf-8"), str(path))


def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{source}:{n}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out
