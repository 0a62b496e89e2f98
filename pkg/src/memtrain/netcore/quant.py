"""Uniform symmetric weight fake-quantization with a straight-through gradient."""

from __future__ import annotations

import numpy as np


def quant_step(n_levels: int, clip: float) -> float:
    return 2.0 * clip / (n_levels - 1)


def fake_quantize(w, n_levels: int, clip: float) -> np.ndarray:
    """Round ``clamp(w, -clip, clip)`` to the nearest multiple of the level step.

    With an even level count the outermost multiple can overshoot ``clip``; the
    result is clamped again so it always stays inside the range.
    """
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    if not clip > 0:
        raise ValueError("clip must be positive")
    w = np.asarray(w)
    step = quant_step(n_levels, clip)
    q = np.round(np.clip(w, -clip, clip) / step) * step
    return np.clip(q, -clip, clip).astype(w.dtype, copy=False)


def fake_quantize_grad(grad_out):
    """Straight-through estimator: the incoming gradient passes unchanged."""
    return grad_out
