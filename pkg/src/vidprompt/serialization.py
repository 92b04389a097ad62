"""Manifest + raw payload tensor files.

Layout::

    #vidprompt-tensors 1
    #config <canonical JSON>
    <name>\t<tag>\t<dtype>\t<d0,d1,...>\t<byte offset>
    ...
    #end
    <little-endian payload, tensors in manifest order>
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = "#vidprompt-tensors 1"
_DTYPES = {"float32": "<f4", "int64": "<i8"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dumps(records: Iterable[tuple[str, str, np.ndarray]], header: Mapping) -> bytes:
    manifest = [MAGIC, "#config " + canonical_json(header)]
    chunks = []
    offset = 0
    for name, tag, array in records:
        if "\t" in name or "\n" in name:
            raise ValueError(f"tensor name {name!r} contains a tab or newline")
        array = np.asarray(array)
        kind = "int64" if np.issubdtype(array.dtype, np.integer) else "float32"
        raw = np.ascontiguousarray(array, dtype=_DTYPES[kind]).tobytes()
        shape = ",".join(str(d) for d in array.shape)
        manifest.append(f"{name}\t{tag}\t{kind}\t{shape}\t{offset}")
        chunks.append(raw)
        offset += len(raw)
    manifest.append("#end")
    return ("\n".join(manifest) + "\n").encode("utf-8") + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict, list[tuple[str, str, np.ndarray]]]:
    marker = b"\n#end\n"
    cut = blob.find(marker)
    if not blob.startswith(MAGIC.encode()) or cut < 0:
        raise ValueError("not a tensor file (bad magic or missing #end)")
    lines = blob[:cut].decode("utf-8").split("\n")
    payload = memoryview(blob)[cut + len(marker):]
    if len(lines) < 2 or not lines[1].startswith("#config "):
        raise ValueError("tensor file is missing its #config line")
    header = json.loads(lines[1][len("#config "):])
    records = []
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split("\t")
        if len(parts) != 5 or parts[2] not in _DTYPES:
            raise ValueError(f"manifest line {lineno} is malformed: {line!r}")
        name, tag, kind, shape_s, off_s = parts
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        dt = np.dtype(_DTYPES[kind])
        count = int(np.prod(shape, dtype=np.int64))
        start = int(off_s)
        end = start + count * dt.itemsize
        if end > len(payload):
            raise ValueError(f"tensor {name} runs past the end of the payload")
        arr = np.frombuffer(payload[start:end], dtype=dt).reshape(shape)
        records.append((name, tag, arr.astype(dt.newbyteorder("="))))
    return header, records


def save(path: str | Path, records, header: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(records, header))
    return path


def load(path: str | Path):
    return loads(Path(path).read_bytes())


def save_checkpoint(path: str | Path, store, config, meta: Mapping | None = None) -> Path:
    """Write every tensor of ``store`` (float32) with the model config and ``meta`` in the header."""
    header = {"model": config.to_dict(), "meta": dict(meta or {})}
    records = [(name, store.tags[name], store.arrays[name].astype(np.float32)) for name in store.arrays]
    return save(path, records, header)


def load_checkpoint(path: str | Path):
    """Returns (ParameterStore, ModelConfig, meta)."""
    from .encoders import ModelConfig, ParameterStore, build_layout

    header, records = load(path)
    if "model" not in header:
        raise ValueError(f"{path}: header has no model config")
    config = ModelConfig.from_dict(header["model"])
    store = ParameterStore({n: a for n, _, a in records}, {n: t for n, t, _ in records})
    expected = build_layout(config)
    if store.layout() != expected:
        missing = sorted(set(expected) - set(store.arrays))
        raise ValueError(f"{path}: tensors do not match the model config (missing {missing[:5]})")
    return store, config, header.get("meta", {})
