"""Run-length coding for binary masks.

Masks travel over the HTTP API as alternating run counts over the
row-major flattened mask.  The first count covers zeros and may be 0 when
the mask starts with a foreground pixel; every later count is positive, so
each mask has exactly one canonical encoding.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def rle_encode(mask) -> dict:
    """Encode a 2-D binary mask.

    Args:
        mask: array-like of shape (H, W); nonzero means foreground.

    Returns:
        dict with "counts" (list of ints) and "size" ([H, W]).
    """
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D mask, got shape {arr.shape}")
    flat = (arr.reshape(-1) != 0).astype(np.int64)
    n = flat.size
    counts = []
    if n == 0:
        return {"counts": [], "size": [0, 0]}
    # Boundaries between runs of equal value.
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], change, [n]))
    runs = np.diff(edges)
    if flat[0] == 1:
        counts.append(0)
    counts.extend(int(r) for r in runs)
    return {"counts": counts, "size": [int(arr.shape[0]), int(arr.shape[1])]}


def rle_decode(rle: dict) -> np.ndarray:
    """Decode back to a uint8 mask of shape (H, W) with values {0, 1}."""
    try:
        counts = list(rle["counts"])
        h, w = (int(v) for v in rle["size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeMismatch(f"malformed rle object: {exc}") from exc
    if h < 0 or w < 0:
        raise ShapeMismatch(f"bad rle size {rle.get('size')}")
    total = sum(int(c) for c in counts)
    if total != h * w:
        raise ShapeMismatch(f"rle counts sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for c in counts:
        c = int(c)
        if c < 0:
            raise ShapeMismatch("rle counts must be non-negative")
        if value:
            flat[pos : pos + c] = 1
        pos += c
        value ^= 1
    return flat.reshape(h, w)
