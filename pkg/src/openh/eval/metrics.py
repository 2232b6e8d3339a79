"""Per-frame pixel metrics for generated-versus-recorded video.

Frames are ``F x H x W x C`` arrays with values in ``[0, 1]``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from openh.errors import EvalError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def to_unit(frames) -> np.ndarray:
    """uint8 frames to float64 in [0, 1]; float input passes through."""
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        return frames.astype(np.float64) / 255.0
    return frames.astype(np.float64, copy=False)


def _as_video(x) -> np.ndarray:
    x = to_unit(x)
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4:
        raise EvalError(f"expected F x H x W x C frames, got shape {x.shape}")
    return x


def _pair(generated, reference):
    g, r = _as_video(generated), _as_video(reference)
    if g.shape != r.shape:
        raise EvalError(f"shape mismatch: {g.shape} vs {r.shape}")
    return g, r


def l1_per_frame(generated, reference) -> np.ndarray:
    """Mean absolute error per frame over all pixels and channels."""
    g, r = _pair(generated, reference)
    return np.abs(g - r).mean(axis=(1, 2, 3))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Separable valid-region filtering over the two trailing spatial axes.
    k = w.size
    out = sliding_window_view(img, k, axis=-2) @ w
    return sliding_window_view(out, k, axis=-1) @ w


def ssim_map(generated, reference) -> np.ndarray:
    """SSIM map ``F x C x (H-10) x (W-10)`` over the valid region."""
    g, r = _pair(generated, reference)
    if g.shape[1] < SSIM_WINDOW or g.shape[2] < SSIM_WINDOW:
        raise EvalError(f"frames of {g.shape[1]}x{g.shape[2]} are smaller than the {SSIM_WINDOW}px window")
    g = np.moveaxis(g, -1, 1)
    r = np.moveaxis(r, -1, 1)
    w = gaussian_window()
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mu_g = _filter_valid(g, w)
    mu_r = _filter_valid(r, w)
    var_g = _filter_valid(g * g, w) - mu_g ** 2
    var_r = _filter_valid(r * r, w) - mu_r ** 2
    cov = _filter_valid(g * r, w) - mu_g * mu_r
    num = (2 * mu_g * mu_r + c1) * (2 * cov + c2)
    den = (mu_g ** 2 + mu_r ** 2 + c1) * (var_g + var_r + c2)
    return num / den


def ssim_per_frame(generated, reference) -> np.ndarray:
    """Single-scale SSIM per frame, averaged over channels and window positions."""
    return ssim_map(generated, reference).mean(axis=(1, 2, 3))
