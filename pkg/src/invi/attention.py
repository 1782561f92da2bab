"""Anchor-based cross-frame attention and the anchor key/value cache.

During frame generation, self-attention layers attend over their own tokens
plus the tokens recorded from the previously generated (anchor) frame at the
same layer and denoising timestep. The cache holds exactly one frame's
features at a time and is swapped wholesale once the next frame finishes.

Cache spill format (``save_cache`` / ``load_cache``): a single little-endian
binary file. Header: magic ``IVKV``, version u16, anchor frame index u32,
record count u32. Each record: layer u32, timestep u32, token count u32,
feature width u32, then the key matrix and the value matrix as raw float64,
row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CacheMissError

_SPILL_MAGIC = b"IVKV"
_SPILL_VERSION = 1


@dataclass
class KVPair:
    """Key and value matrices for one self-attention layer at one timestep."""

    k: np.ndarray
    v: np.ndarray
    layer: int
    timestep: int

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.k.ndim != 2 or self.v.ndim != 2:
            raise ValueError("K and V must be 2-D (tokens, width)")
        if self.k.shape[0] != self.v.shape[0]:
            raise ValueError(
                f"K and V token counts differ: {self.k.shape[0]} vs {self.v.shape[0]}")

    @property
    def n_tokens(self) -> int:
        return self.k.shape[0]


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    # Subtract the per-row max before exponentiation to avoid overflow.
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def extended_attention(q: np.ndarray, self_kv: KVPair,
                       anchor_kv: KVPair | None = None,
                       return_weights: bool = False):
    """Scaled-dot-product attention over self tokens plus optional anchor tokens.

    Keys and values from the anchor are appended along the token axis, so the
    query rows compete over the concatenated set. With no anchor this is
    plain self-attention.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError("Q must be 2-D (queries, width)")
    d = q.shape[1]
    if self_kv.k.shape[1] != d or self_kv.v.shape[1] != d:
        raise ValueError(
            f"feature width mismatch: Q has {d}, self K/V have "
            f"{self_kv.k.shape[1]}/{self_kv.v.shape[1]}")
    keys, values = self_kv.k, self_kv.v
    if anchor_kv is not None:
        if anchor_kv.k.shape[1] != d or anchor_kv.v.shape[1] != d:
            raise ValueError(
                f"feature width mismatch: Q has {d}, anchor K/V have "
                f"{anchor_kv.k.shape[1]}/{anchor_kv.v.shape[1]}")
        keys = np.concatenate([keys, anchor_kv.k], axis=0)
        values = np.concatenate([values, anchor_kv.v], axis=0)
    weights = _softmax_rows(q @ keys.T / np.sqrt(d))
    out = weights @ values
    if return_weights:
        return out, weights
    return out


class AnchorCacheBuilder:
    """Write-side of the cache: collects one frame's K/V as it denoises.

    The expected key set (all self-attention layers crossed with all
    inference timesteps) is fixed up front so completeness is checkable.
    """

    def __init__(self, frame_index: int, layers, timesteps):
        self.frame_index = frame_index
        self.expected = {(l, t) for l in layers for t in timesteps}
        self.entries: dict[tuple[int, int], KVPair] = {}

    def store(self, layer: int, timestep: int, kv: KVPair) -> None:
        key = (layer, timestep)
        if key in self.entries:
            raise ValueError(
                f"duplicate cache entry for layer={layer}, t={timestep} "
                f"(frame {self.frame_index})")
        self.entries[key] = kv

    def is_complete(self) -> bool:
        return set(self.entries) == self.expected

    def finalize(self) -> "AnchorCache":
        if not self.is_complete():
            missing = sorted(self.expected - set(self.entries))
            extra = sorted(set(self.entries) - self.expected)
            raise ValueError(
                f"incomplete cache for frame {self.frame_index}: "
                f"missing={missing[:4]}{'...' if len(missing) > 4 else ''} "
                f"extra={extra}")
        return AnchorCache(self.frame_index, dict(self.entries))


class AnchorCache:
    """Read-side of the cache: the finished anchor frame's features."""

    def __init__(self, anchor_frame_index: int,
                 entries: dict[tuple[int, int], KVPair]):
        self.anchor_frame_index = anchor_frame_index
        self.entries = entries

    def load(self, layer: int, timestep: int) -> KVPair:
        try:
            return self.entries[(layer, timestep)]
        except KeyError:
            raise CacheMissError(
                f"no cached features for layer={layer}, t={timestep} "
                f"(anchor frame {self.anchor_frame_index})") from None

    def __len__(self) -> int:
        return len(self.entries)


def cache_store(builder: AnchorCacheBuilder, layer: int, timestep: int,
                kv: KVPair) -> None:
    builder.store(layer, timestep, kv)


def cache_load(cache: AnchorCache, layer: int, timestep: int) -> KVPair:
    return cache.load(layer, timestep)


def cache_promote(old: AnchorCache, fresh: AnchorCacheBuilder) -> AnchorCache:
    """Swap in the just-finished frame's features as the new anchor.

    The old anchor is dropped; consecutive-frame order is enforced so the
    anchor index always advances by one.
    """
    if fresh.frame_index != old.anchor_frame_index + 1:
        raise ValueError(
            f"cannot promote frame {fresh.frame_index} over anchor "
            f"{old.anchor_frame_index}: frames must be consecutive")
    promoted = fresh.finalize()
    old.entries.clear()
    return promoted


def save_cache(cache: AnchorCache, path) -> None:
    """Write the cache to disk in the documented spill format."""
    records = sorted(cache.entries.items())
    with open(path, "wb") as f:
        f.write(_SPILL_MAGIC)
        f.write(struct.pack("<HII", _SPILL_VERSION, cache.anchor_frame_index,
                            len(records)))
        for (layer, t), kv in records:
            n, d = kv.k.shape
            f.write(struct.pack("<IIII", layer, t, n, d))
            f.write(np.ascontiguousarray(kv.k, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(kv.v, dtype="<f8").tobytes())


def load_cache(path) -> AnchorCache:
    """Read a cache written by :func:`save_cache`."""
    raw = Path(path).read_bytes()
    if raw[:4] != _SPILL_MAGIC:
        raise ValueError(f"{path}: not a cache spill file")
    version, frame_index, n_records = struct.unpack_from("<HII", raw, 4)
    if version != _SPILL_VERSION:
        raise ValueError(f"{path}: unsupported spill version {version}")
    offset = 4 + struct.calcsize("<HII")
    entries: dict[tuple[int, int], KVPair] = {}
    for _ in range(n_records):
        layer, t, n, d = struct.unpack_from("<IIII", raw, offset)
        offset += struct.calcsize("<IIII")
        nbytes = n * d * 8
        k = np.frombuffer(raw, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
        offset += nbytes
        v = np.frombuffer(raw, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
        offset += nbytes
        entries[(layer, t)] = KVPair(k.copy(), v.copy(), layer=layer, timestep=t)
    return AnchorCache(frame_index, entries)
