"""Covert attention: mixture-of-Gaussians masks over the activation grid.

A head network emits a raw 4K vector (importance, width, row-center,
col-center blocks). The raw values are squashed to their proper ranges and
the mask is evaluated on the 1-based integer grid, all on the gradient
tape, so the meta-controller trains through the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ndgrad as ng
from .ndgrad import Tensor


@dataclass
class GaussianAttnParams:
    """Per-component mixture parameters, each of shape (K,) or (B, K).

    alpha lies on the simplex, beta in [1.5, 2.0], kappa1 in [0, m],
    kappa2 in [0, n].
    """
    alpha: Tensor
    beta: Tensor
    kappa1: Tensor
    kappa2: Tensor

    @property
    def components(self) -> int:
        return self.alpha.data.shape[-1]


def transform_raw_params(raw: Tensor, m: int, n: int) -> GaussianAttnParams:
    """Squash a raw (..., 4K) head output into valid mixture parameters.

    Blocks are ordered (alpha, beta, kappa1, kappa2). alpha is softmaxed;
    beta = 1.5 + 0.5*sigmoid keeps widths inside [1.5, 2.0] with nonzero
    gradient everywhere; centers are sigmoid-scaled to the grid extent.
    """
    total = raw.data.shape[-1]
    if total % 4 != 0 or total == 0:
        raise ValueError(f"attention head output length {total} is not 4*K")
    k = total // 4
    alpha = ng.softmax(ng.narrow(raw, -1, 0, k))
    beta = ng.add(ng.mul(ng.sigmoid(ng.narrow(raw, -1, k, k)), 0.5), 1.5)
    kappa1 = ng.mul(ng.sigmoid(ng.narrow(raw, -1, 2 * k, k)), float(m))
    kappa2 = ng.mul(ng.sigmoid(ng.narrow(raw, -1, 3 * k, k)), float(n))
    return GaussianAttnParams(alpha, beta, kappa1, kappa2)


def build_mask(p: GaussianAttnParams, m: int, n: int) -> Tensor:
    """Evaluate the mixture on the m*n grid; returns (m, n) or (B, m, n)."""
    flat = ng.gaussian_mask(p.alpha, p.beta, p.kappa1, p.kappa2, m, n)
    if flat.data.ndim == 1:
        return ng.reshape(flat, (m, n))
    return ng.reshape(flat, (flat.data.shape[0], m, n))


def build_mask_flat(p: GaussianAttnParams, m: int, n: int) -> Tensor:
    """Same mask, kept row-major flat (..., m*n) for grid-vector wiring."""
    return ng.gaussian_mask(p.alpha, p.beta, p.kappa1, p.kappa2, m, n)
