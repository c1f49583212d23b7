"""Retrospective image degradation in k-space.

Both operations work on a single 2-D grayscale map and are deterministic
(undersampling has no randomness; motion takes an explicit seed). Outputs are
clipped back to the input's own intensity range so downstream normalization
stays valid; at identity settings (keep_fraction 1.0, zero severity) both
operations return the input within floating-point round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class MotionSeverity:
    """Rigid-motion corruption parameters: k-space rows are split into
    ``segments`` bands, each imaged at a random pose within the bounds."""

    segments: int = 4
    max_rotation_deg: float = 5.0
    max_translation_px: float = 3.0

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("need at least one k-space segment")
        if self.max_rotation_deg < 0 or self.max_translation_px < 0:
            raise ValueError("severity bounds must be nonnegative")


def centered_mask(h: int, w: int, n_keep: int, mode: str = "square") -> np.ndarray:
    """Boolean keep-mask over fftshifted k-space with exactly ``n_keep`` True
    entries for the default square mode.

    ``square`` grows centered square shells (Chebyshev distance), filling a
    partial outer shell by Euclidean distance; ``lines`` keeps whole central
    rows, rounding n_keep up to a multiple of the width.
    """
    if not (1 <= n_keep <= h * w):
        raise ValueError(f"n_keep {n_keep} outside [1, {h * w}]")
    dy = np.arange(h) - h // 2
    dx = np.arange(w) - w // 2
    if mode == "square":
        gy, gx = np.meshgrid(dy, dx, indexing="ij")
        cheb = np.maximum(np.abs(gy), np.abs(gx)).ravel()
        eucl = (gy ** 2 + gx ** 2).ravel()
        order = np.lexsort((gx.ravel(), gy.ravel(), eucl, cheb))
        mask = np.zeros(h * w, dtype=bool)
        mask[order[:n_keep]] = True
        return mask.reshape(h, w)
    if mode == "lines":
        n_lines = min(h, math.ceil(n_keep / w))
        row_order = np.lexsort((dy, np.abs(dy)))
        mask = np.zeros((h, w), dtype=bool)
        mask[row_order[:n_lines], :] = True
        return mask
    raise ValueError(f"unknown mask mode {mode!r}")


def undersample_kspace(image: np.ndarray, keep_fraction: float = 0.08, mode: str = "square") -> np.ndarray:
    """Zero k-space outside a centered low-frequency region and reconstruct.

    The region contains exactly ceil(keep_fraction * H * W) coefficients in
    the default square mode; the acceleration factor is 1 / keep_fraction.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a 2-D grayscale map")
    h, w = image.shape
    if h % 2 or w % 2:
        raise ValueError(f"dimensions must be even, got {h}x{w}")
    n_keep = math.ceil(keep_fraction * h * w)
    mask = centered_mask(h, w, n_keep, mode=mode)
    k = np.fft.fftshift(np.fft.fft2(image, norm="ortho"))
    k[~mask] = 0.0
    out = np.fft.ifft2(np.fft.ifftshift(k), norm="ortho").real
    return np.clip(out, image.min(), image.max())


def rigid_transform(image: np.ndarray, angle_deg: float, shift: tuple[float, float]) -> np.ndarray:
    """Rotate about the image center and translate; cubic spline resampling."""
    image = np.asarray(image, dtype=np.float64)
    if angle_deg == 0.0 and shift[0] == 0.0 and shift[1] == 0.0:
        return image.copy()
    theta = math.radians(angle_deg)
    # output -> input mapping: inverse rotation, then undo the translation
    inv = np.array([[math.cos(theta), math.sin(theta)],
                    [-math.sin(theta), math.cos(theta)]])
    center = (np.asarray(image.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - inv @ (center + np.asarray(shift, dtype=np.float64))
    return ndimage.affine_transform(
        image, inv, offset=offset, order=3, mode="constant", cval=float(image.min())
    )


def simulate_motion(image: np.ndarray, severity: MotionSeverity, seed: int) -> np.ndarray:
    """Compose k-space row bands from randomly posed copies of the image.

    The band containing the DC row keeps the reference (identity) pose so the
    corrupted image stays registered with the clean one. Deterministic for a
    fixed seed.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a 2-D grayscale map")
    h, w = image.shape
    rng = np.random.default_rng(seed)
    bands = np.array_split(np.arange(h), min(severity.segments, h))
    k_out = np.zeros((h, w), dtype=np.complex128)
    for band in bands:
        if h // 2 in band:  # reference pose for the low-frequency band
            angle, shift = 0.0, (0.0, 0.0)
        else:
            angle = float(rng.uniform(-severity.max_rotation_deg, severity.max_rotation_deg))
            shift = (
                float(rng.uniform(-severity.max_translation_px, severity.max_translation_px)),
                float(rng.uniform(-severity.max_translation_px, severity.max_translation_px)),
            )
        moved = rigid_transform(image, angle, shift)
        k = np.fft.fftshift(np.fft.fft2(moved, norm="ortho"), axes=0)
        k_out[band, :] = k[band, :]
    out = np.fft.ifft2(np.fft.ifftshift(k_out, axes=0), norm="ortho").real
    return np.clip(out, image.min(), image.max())
