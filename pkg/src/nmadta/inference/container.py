"""Binary posterior container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(sorted keys), then little-endian float64 draws in chain-major order
``(chains, draws, dim)`` followed by the deviance trace ``(chains, draws)``.
A JSON index next to the container records the byte offsets.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..model import ModelSpec
from .sampler import PosteriorSamples, SamplerConfig

__all__ = ["write_container", "read_container", "spec_hash", "index_path", "MAGIC"]

MAGIC = b"NMADTA\x00\x01"
FORMAT_VERSION = 1


def spec_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(spec.to_config().encode()).hexdigest()


def index_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".index.json")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def write_container(samples: PosteriorSamples, path, extra: dict | None = None) -> Path:
    """Write ``samples`` and its index; returns the container path."""
    path = Path(path)
    chains, n, dim = samples.draws.shape
    header = {
        "format_version": FORMAT_VERSION,
        "names": list(samples.names),
        "spec": samples.spec.to_config(),
        "spec_hash": spec_hash(samples.spec),
        "sampler": samples.config.to_dict(),
        "data_fingerprint": samples.data_fingerprint,
        "shape": [chains, n, dim],
        "accept_rates": samples.accept_rates,
        "resume": samples.final,
        "extra": extra or {},
    }
    head = _dumps(header)
    draws = np.ascontiguousarray(samples.draws, dtype="<f8").tobytes()
    dev = np.ascontiguousarray(samples.deviance, dtype="<f8").tobytes()
    prefix = len(MAGIC) + 8 + len(head)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(draws)
        fh.write(dev)
    index = {
        "container": path.name,
        "header_offset": len(MAGIC) + 8,
        "header_bytes": len(head),
        "draws_offset": prefix,
        "draws_shape": [chains, n, dim],
        "deviance_offset": prefix + len(draws),
        "deviance_shape": [chains, n],
        "dtype": "<f8",
        "order": "chain-major",
        "spec_hash": header["spec_hash"],
        "data_fingerprint": samples.data_fingerprint,
        "parameters": list(samples.names),
    }
    index_path(path).write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    return path


def read_container(path) -> PosteriorSamples:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a posterior container")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(raw[start: start + hlen])
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {header['format_version']}")
    chains, n, dim = header["shape"]
    body = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    if body.size != chains * n * (dim + 1):
        raise ValueError(f"{path}: truncated container body")
    draws = body[: chains * n * dim].reshape(chains, n, dim).astype(float)
    dev = body[chains * n * dim:].reshape(chains, n).astype(float)
    spec = ModelSpec.from_config(header["spec"])
    if spec_hash(spec) != header["spec_hash"]:
        raise ValueError(f"{path}: spec hash mismatch")
    return PosteriorSamples(draws, dev, header["names"], spec, SamplerConfig.from_dict(header["sampler"]),
                            header["data_fingerprint"], header["accept_rates"], header["resume"])
