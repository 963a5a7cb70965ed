"""Checkpoint persistence: plain-text manifest plus raw little-endian blob.

Layout of a checkpoint file:

    line 1: magic "parlance-ckpt v1"
    line 2: JSON manifest with sorted keys: role, model config, extra payload,
            blob sha256, and one entry per array (name, dtype, shape, offset,
            nbytes)
    rest:   the concatenated array bytes, little-endian, in entry order

Round-trips are bit-exact: loading a file and saving it again with the same
storage dtype produces identical bytes. float32 storage is lossless to
re-save because widening to float64 and narrowing back is exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, Parameters

MAGIC = "parlance-ckpt v1"

_ALLOWED_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params, extra=None, optimizer_arrays=None, storage_dtype="float64"):
    """Write params (and optional optimizer arrays) to `path`."""
    if storage_dtype not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unsupported storage dtype {storage_dtype!r}")
    np_dtype = np.dtype(_ALLOWED_DTYPES[storage_dtype])

    arrays = {name: t.data for name, t in params.tensors.items()}
    if optimizer_arrays:
        for name, arr in optimizer_arrays.items():
            arrays[f"opt.{name}"] = arr

    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        raw = np.ascontiguousarray(arrays[name], dtype=np_dtype).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": storage_dtype,
                "shape": list(arrays[name].shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)

    manifest = {
        "v": 1,
        "role": params.role,
        "model_config": dataclasses.asdict(params.config),
        "extra": extra or {},
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "entries": entries,
    }
    with open(path, "wb") as fh:
        fh.write((MAGIC + "\n").encode())
        fh.write((json.dumps(manifest, sort_keys=True) + "\n").encode())
        fh.write(blob)


def read_manifest(path):
    with open(path, "rb") as fh:
        magic = fh.readline().decode().rstrip("\n")
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        manifest = json.loads(fh.readline().decode())
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("checkpoint blob failed its checksum")
    return manifest, blob


def load_checkpoint(path):
    """Read params back (float64 in memory) plus extra payload and optimizer.

    Returns (Parameters, extra, optimizer_arrays, storage_dtype).
    """
    manifest, blob = read_manifest(path)
    config = ModelConfig(**manifest["model_config"])
    tensors = {}
    optimizer = {}
    storage_dtype = "float64"
    for entry in manifest["entries"]:
        dt = entry["dtype"]
        if dt not in _ALLOWED_DTYPES:
            raise CheckpointError(f"unsupported dtype {dt!r} in manifest")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise CheckpointError(f"entry {entry['name']!r} overruns the blob")
        arr = np.frombuffer(blob[start : start + nbytes], dtype=_ALLOWED_DTYPES[dt])
        arr = arr.reshape(entry["shape"]).astype(np.float64)
        name = entry["name"]
        if name.startswith("opt."):
            optimizer[name[4:]] = arr
        else:
            expected = _expected_shape(config, name)
            if expected is not None and tuple(arr.shape) != expected:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: manifest {tuple(arr.shape)}, config wants {expected}"
                )
            tensors[name] = Tensor(arr.copy(), requires_grad=True, name=name)
            storage_dtype = dt
    params = Parameters(config, manifest["role"], tensors)
    return params, manifest["extra"], optimizer, storage_dtype


def _expected_shape(config, name):
    """Shape implied by the config for well-known names (None to skip)."""
    d = config.d_model
    known = {
        "tok_emb": (config.vocab_size, d),
        "seg_emb": (config.n_segments, d),
        "pos_emb": (config.max_positions, d),
        "lm_head_w": (d, config.vocab_size),
        "latent_emb": (config.latent_k, d),
        "post_head_w": (d, config.latent_k),
        "bow_head_w": (d, config.vocab_size),
        "coh_head_w": (d, 1),
        "coh_head_b": (1,),
        "ln_f_g": (d,),
        "ln_f_b": (d,),
    }
    return known.get(name)


def content_hash(path):
    """Stable hex digest of a checkpoint file, embedded into reports."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
