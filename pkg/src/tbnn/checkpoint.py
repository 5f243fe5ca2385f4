"""Portable parameter checkpoints and chain archives.

A checkpoint file is an 8-byte little-endian u64 manifest length, the JSON
manifest itself, then a contiguous blob of little-endian IEEE-754 values in
manifest order. The manifest records the format version, a dtype tag ("f64"
or "f32") and per-tensor records {name, shape, offset, count} with byte
offsets into the blob. Manifests are readable without touching the blob,
and the JSON is serialized deterministically so identical parameters give
identical bytes.

A chain archive is a directory: chain.json (sampler config, seed,
divergence state), draws.jsonl (one metadata object per draw) and one
checkpoint per draw (draw_00000.ckpt, ...).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import ParamTree

CHECKPOINT_VERSION = 1
ARCHIVE_VERSION = 1

_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


def _dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def write_checkpoint(path, params: ParamTree, dtype: str = "f64") -> None:
    """Write a ParamTree to one checkpoint file, tensors in tree order."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be 'f64' or 'f32', got {dtype!r}")
    np_dtype = _DTYPES[dtype]
    records = []
    blobs = []
    offset = 0
    for name, arr in params.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype=np_dtype)
        records.append({"name": name, "shape": list(a.shape),
                        "offset": offset, "count": int(a.size)})
        blobs.append(a.tobytes())
        offset += a.size * np_dtype.itemsize
    manifest = _dump_json({"version": CHECKPOINT_VERSION, "dtype": dtype,
                           "tensors": records})
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def _read_head(path) -> tuple[dict, int, int]:
    """Parse the header; returns (manifest, blob start offset, blob bytes)."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataError(f"{path}: truncated header, need 8 bytes at byte 0, "
                            f"file has {len(head)}")
        (mlen,) = struct.unpack("<Q", head)
        raw = fh.read(mlen)
    if len(raw) < mlen:
        raise DataError(f"{path}: truncated manifest, need {mlen} bytes at byte 8, "
                        f"found {len(raw)}")
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: manifest is not valid JSON at byte 8: {exc}") from exc
    if not isinstance(manifest, dict):
        raise DataError(f"{path}: manifest must be a JSON object")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    dtype = manifest.get("dtype")
    if dtype not in _DTYPES:
        raise DataError(f"{path}: unknown dtype tag {dtype!r}")
    width = _DTYPES[dtype].itemsize
    prev_end = 0
    for rec in manifest.get("tensors", []):
        missing = {"name", "shape", "offset", "count"} - set(rec)
        if missing:
            raise DataError(f"{path}: tensor record missing fields {sorted(missing)}")
        if int(np.prod(rec["shape"], dtype=np.int64)) != rec["count"]:
            raise DataError(f"{path}: tensor {rec['name']!r} shape {rec['shape']} "
                            f"does not match count {rec['count']}")
        if rec["offset"] < prev_end:
            raise DataError(f"{path}: tensor {rec['name']!r} offset {rec['offset']} "
                            f"overlaps previous tensor ending at {prev_end}")
        prev_end = rec["offset"] + rec["count"] * width
    return manifest, 8 + mlen, prev_end


def read_manifest(path) -> dict:
    """Parse and validate the manifest only; the blob is not read."""
    return _read_head(path)[0]


def read_checkpoint(path) -> ParamTree:
    """Read a checkpoint back into a ParamTree, bit-exactly."""
    manifest, blob_start, expected = _read_head(path)
    np_dtype = _DTYPES[manifest["dtype"]]
    blob = Path(path).read_bytes()[blob_start:]
    if len(blob) != expected:
        raise DataError(f"{path}: blob at byte {blob_start} has {len(blob)} bytes, "
                        f"manifest requires {expected}")
    params: ParamTree = {}
    for rec in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype=np_dtype, count=rec["count"],
                            offset=rec["offset"])
        params[rec["name"]] = arr.reshape(rec["shape"]).copy()
    return params


def _clean_meta(obj):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean_meta(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_meta(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def draw_filename(index: int) -> str:
    return f"draw_{index:05d}.ckpt"


def write_archive(dirpath, archive) -> Path:
    """Write a SampleArchive as one directory; returns the directory path."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    head = {
        "version": ARCHIVE_VERSION,
        "config": _clean_meta(asdict(archive.config)),
        "seed": archive.seed,
        "diverged": archive.diverged,
        "divergence_info": _clean_meta(archive.divergence_info),
        "n_draws": len(archive.draws),
    }
    (out / "chain.json").write_bytes(_dump_json(head) + b"\n")
    with open(out / "draws.jsonl", "wb") as fh:
        for i, draw in enumerate(archive.draws):
            fh.write(_dump_json({"index": i, **_clean_meta(draw.meta)}) + b"\n")
    for i, draw in enumerate(archive.draws):
        write_checkpoint(out / draw_filename(i), draw.params)
    return out


def read_archive(dirpath):
    """Read a chain archive directory back into a SampleArchive."""
    from .samplers import Draw, SampleArchive, SamplerConfig

    src = Path(dirpath)
    head_path = src / "chain.json"
    if not head_path.exists():
        raise DataError(f"{src}: not a chain archive (chain.json missing)")
    head = json.loads(head_path.read_text())
    if head.get("version") != ARCHIVE_VERSION:
        raise DataError(f"{src}: unsupported archive version {head.get('version')!r}")
    config = SamplerConfig(**head["config"])
    metas = []
    jsonl = src / "draws.jsonl"
    if jsonl.exists():
        for line in jsonl.read_text().splitlines():
            if line.strip():
                metas.append(json.loads(line))
    draws = []
    for i in range(head["n_draws"]):
        params = read_checkpoint(src / draw_filename(i))
        meta = metas[i] if i < len(metas) else {}
        meta.pop("index", None)
        draws.append(Draw(params=params, meta=meta))
    return SampleArchive(config=config, seed=head["seed"], draws=draws,
                         diverged=head["diverged"],
                         divergence_info=head["divergence_info"])
