"""Vector-quantization bottleneck with a two-term commitment loss.

The codebook learns through the loss (no EMA): its gradient comes from the
beta-weighted half of the commitment term.  In this package the content
features are data, not encoder outputs, so the straight-through path to the
features is exposed but normally unused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass
class Codebook:
    entries: np.ndarray  # (K, E)
    beta: float = 0.25

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise InputError("codebook needs at least 2 entries of shape (K, E)")
        if not np.all(np.isfinite(self.entries)):
            raise InputError("codebook entries must be finite")

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class QuantizeResult:
    c_vq: np.ndarray        # (T, E) nearest codewords
    indices: np.ndarray     # (T,) assigned codeword ids
    commit_loss: float


def quantize(f_sem, codebook: Codebook) -> QuantizeResult:
    """Nearest-codeword assignment (ties break to the lowest index).

    commit_loss is the standard two-term form; both terms share the same
    numeric value and differ only in which side the gradient reaches.
    """
    f = np.asarray(f_sem, dtype=float)
    if f.ndim != 2 or f.shape[0] == 0:
        raise InputError("f_sem must be a non-empty (T, E) matrix")
    if f.shape[1] != codebook.entries.shape[1]:
        raise InputError(f"feature dim {f.shape[1]} != codebook dim "
                         f"{codebook.entries.shape[1]}")
    # exact squared distances via differences so ties stay exact
    diff = f[:, None, :] - codebook.entries[None, :, :]
    d2 = np.einsum("tke,tke->tk", diff, diff)
    indices = np.argmin(d2, axis=1)
    c_vq = codebook.entries[indices]
    mse = float(np.mean((f - c_vq) ** 2))
    return QuantizeResult(c_vq=c_vq, indices=indices,
                          commit_loss=(1.0 + codebook.beta) * mse)


def codebook_grad(f_sem, result: QuantizeResult, codebook: Codebook) -> np.ndarray:
    """d(commit_loss)/d(entries): only the beta term reaches the codebook."""
    f = np.asarray(f_sem, dtype=float)
    g = np.zeros_like(codebook.entries)
    scale = 2.0 * codebook.beta / f.size
    np.add.at(g, result.indices, scale * (result.c_vq - f))
    return g


def straight_through_grad(d_cvq: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. f_sem of anything downstream of c_vq (pass-through)."""
    return np.asarray(d_cvq)
