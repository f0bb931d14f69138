"""Semitone pitch normalization with unvoiced-frame masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyVoicedError, InputError


@dataclass(frozen=True)
class NormalizedPitch:
    """Median-centered semitone contour; unvoiced frames are exactly 0."""

    p_norm: np.ndarray
    voiced_mask: np.ndarray


def normalize_pitch(f0_hz, f_ref: float = 440.0) -> NormalizedPitch:
    """Convert an F0 contour (Hz, 0 = unvoiced) to median-centered semitones.

    Voiced frames map to 12*log2(f0/f_ref) minus the median over voiced
    frames (even counts use the mean of the two central values); unvoiced
    frames are excluded from the median and set to 0.
    """
    f0 = np.asarray(f0_hz, dtype=float)
    if np.any(f0 < 0):
        raise InputError("f0 values must be >= 0 (0 denotes unvoiced)")
    voiced = f0 > 0
    if not np.any(voiced):
        raise EmptyVoicedError("contour has no voiced frames")
    s = 12.0 * np.log2(f0[voiced] / f_ref)
    s -= np.median(s)
    # one rounding of the median can leave the centered median a few ulps
    # off zero for even counts; iterate until it is exactly zero
    for _ in range(4):
        m = np.median(s)
        if m == 0.0:
            break
        s -= m
    p_norm = np.zeros_like(f0)
    p_norm[voiced] = s
    return NormalizedPitch(p_norm=p_norm, voiced_mask=voiced)


def pitch_or_zeros(f0_hz, f_ref: float = 440.0) -> np.ndarray:
    """normalize_pitch with the caller-side fallback: all-unvoiced -> zeros."""
    try:
        return normalize_pitch(f0_hz, f_ref).p_norm
    except EmptyVoicedError:
        return np.zeros(len(np.atleast_1d(f0_hz)))
