"""Dense numpy kernels used by capsule inference.

Everything is float64 and row-major. These are deliberately plain
implementations; desk-scale models do not need anything faster.
"""

from __future__ import annotations

import numpy as np


def conv2d(inp: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1) -> np.ndarray:
    """Valid (no padding) cross-correlation.

    inp: [C_in, H, W], weight: [C_out, C_in, k, k], bias: [C_out].
    Output: [C_out, H', W'] with H' = (H - k)//stride + 1.
    """
    inp = np.asarray(inp, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if inp.ndim != 3 or weight.ndim != 4 or bias.ndim != 1:
        raise ValueError(f"conv2d rank mismatch: input {inp.shape}, "
                         f"weight {weight.shape}, bias {bias.shape}")
    c_in, h, w = inp.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in_w != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {c_in}, weight expects {c_in_w}")
    if bias.shape[0] != c_out:
        raise ValueError(f"conv2d bias length {bias.shape[0]} != out channels {c_out}")
    if kh != kw:
        raise ValueError(f"conv2d kernel must be square, got {kh}x{kw}")
    if kh > h or kw > w:
        raise ValueError(f"conv2d kernel {kh} larger than input {h}x{w}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    windows = np.lib.stride_tricks.sliding_window_view(inp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [C_in, H', W', k, k]
    out = np.einsum("chwij,ocij->ohw", windows, weight, optimize=True)
    return out + bias[:, None, None]


def capsule_affine(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-pair affine votes: out[i,j,:] = w[i,j,:,:] @ u[i,:].

    u: [N_in, D_in], w: [N_in, N_out, D_out, D_in] -> [N_in, N_out, D_out].
    """
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if u.ndim != 2 or w.ndim != 4:
        raise ValueError(f"capsule_affine rank mismatch: u {u.shape}, w {w.shape}")
    if w.shape[0] != u.shape[0] or w.shape[3] != u.shape[1]:
        raise ValueError(f"capsule_affine shape mismatch: u {u.shape}, w {w.shape}")
    return np.einsum("ijod,id->ijo", w, u, optimize=True)


def l2_norm_lastdim(t: np.ndarray) -> np.ndarray:
    """Euclidean norm along the last axis."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 1 or t.shape[-1] < 1:
        raise ValueError(f"need a non-empty last axis, got shape {t.shape}")
    return np.linalg.norm(t, axis=-1)


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)
