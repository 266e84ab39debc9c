"""bfloat16 rounding emulated on float32 storage."""

from __future__ import annotations

import numpy as np


def round_bf16(v):
    """Round float32 values to the nearest bfloat16 (ties to even).

    Accepts a scalar or an array and returns float32 of the same shape. The
    result keeps the float32 exponent and the top 7 mantissa bits; signed
    zeros and infinities pass through and NaN stays NaN.
    """
    arr = np.asarray(v, dtype=np.float32)
    bits = np.ascontiguousarray(arr).reshape(-1).view(np.uint32)
    lsb = (bits >> np.uint32(16)) & np.uint32(1)
    rounded = (bits + np.uint32(0x7FFF) + lsb) & np.uint32(0xFFFF0000)
    # keep NaN payloads quiet instead of letting the carry turn them into Inf
    nan = (bits & np.uint32(0x7FFFFFFF)) > np.uint32(0x7F800000)
    rounded = np.where(nan, (bits | np.uint32(0x00400000)) & np.uint32(0xFFFF0000), rounded)
    out = rounded.astype(np.uint32).view(np.float32)
    if arr.ndim == 0:
        return np.float32(out[0])
    return out.reshape(arr.shape)


def is_bf16(v) -> np.ndarray:
    """Elementwise check that float32 values are exactly representable in bf16."""
    arr = np.asarray(v, dtype=np.float32)
    bits = np.ascontiguousarray(np.atleast_1d(arr)).view(np.uint32)
    nan = np.isnan(np.atleast_1d(arr))
    return ((bits & np.uint32(0xFFFF)) == 0) | nan
