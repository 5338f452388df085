"""Image-space kernels: affine bilinear resampling and total variation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class AffineParams:
    """A similarity transform about the image centre.

    ``translate`` is a fraction of the image width/height. Positive
    ``rotation_deg`` turns the +x axis towards +y (row index grows downward).
    """

    rotation_deg: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def forward_matrix(self) -> np.ndarray:
        theta = math.radians(self.rotation_deg)
        c, s = math.cos(theta), math.sin(theta)
        return self.scale * np.array([[c, -s], [s, c]])

    @property
    def is_identity(self) -> bool:
        return self.rotation_deg == 0.0 and self.translate == (0.0, 0.0) and self.scale == 1.0


@dataclass(frozen=True)
class AugmentConfig:
    max_rotation_deg: float = 30.0
    max_translate: float = 0.10
    scale_range: tuple[float, float] = (0.70, 1.00)
    probability: float = 0.5

    def validate(self) -> None:
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 2.0):
            raise ValueError(f"scale range must lie within (0, 2], got {self.scale_range}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"augmentation probability must be in [0, 1], got {self.probability}")
        if self.max_rotation_deg < 0 or self.max_translate < 0:
            raise ValueError("rotation and translation ranges must be non-negative")


def sample_affine(rng: np.random.Generator, cfg: AugmentConfig) -> AffineParams:
    """Draw one augmentation; with probability ``1 - cfg.probability`` it is the identity.

    The same number of random draws is consumed either way so the stream
    stays aligned across steps.
    """
    apply, rot, tx, ty, sc = rng.random(5)
    if apply >= cfg.probability:
        return AffineParams()
    lo, hi = cfg.scale_range
    return AffineParams(
        rotation_deg=float((2 * rot - 1) * cfg.max_rotation_deg),
        translate=(float((2 * tx - 1) * cfg.max_translate), float((2 * ty - 1) * cfg.max_translate)),
        scale=float(lo + sc * (hi - lo)),
    )


def _source_coords(params: AffineParams, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Input-pixel coordinates read by every output pixel (inverse mapping)."""
    fwd = params.forward_matrix()
    if abs(np.linalg.det(fwd)) < 1e-8:
        raise ValueError(f"degenerate affine transform (det={np.linalg.det(fwd):.3g})")
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if params.is_identity:
        return xs.ravel(), ys.ravel()
    inv = np.linalg.inv(fwd)
    px = xs - cx - params.translate[0] * w
    py = ys - cy - params.translate[1] * h
    ux = inv[0, 0] * px + inv[0, 1] * py + cx
    uy = inv[1, 0] * px + inv[1, 1] * py + cy
    return ux.ravel(), uy.ravel()


def _bilinear_taps(ux: np.ndarray, uy: np.ndarray, h: int, w: int):
    """Four (flat index, weight) taps per output pixel; out-of-bounds taps get weight 0."""
    x0 = np.floor(ux)
    y0 = np.floor(uy)
    fx = ux - x0
    fy = uy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    idx, wts = [], []
    for dy, dx, wt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                       (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx.append(np.where(inside, yi * w + xi, 0))
        wts.append(np.where(inside, wt, 0.0))
    return np.stack(idx), np.stack(wts)


def affine_grid_sample(image: Tensor, params) -> Tensor:
    """Bilinearly resample ``image`` under an affine map, zero padding outside.

    ``image`` is (C, H, W) with a single :class:`AffineParams`, or (N, C, H, W)
    with a sequence of N params (one per image). Gradients flow to the image;
    the transform itself is not differentiated.
    """
    batched = image.ndim == 4
    if not batched:
        if image.ndim != 3:
            raise ValueError(f"expected (C,H,W) or (N,C,H,W), got {image.shape}")
        params = [params]
    n, c, h, w = (image.shape if batched else (1, *image.shape))
    if len(params) != n:
        raise ValueError(f"need {n} affine params, got {len(params)}")
    hw = h * w

    idx = np.empty((n, 4, hw), dtype=np.int64)
    wts = np.empty((n, 4, hw), dtype=image.data.dtype)
    for i, p in enumerate(params):
        ux, uy = _source_coords(p, h, w)
        idx[i], wts[i] = _bilinear_taps(ux, uy, h, w)

    src = image.data.reshape(n, c, hw)
    out = np.zeros((n, c, hw), dtype=image.data.dtype)
    for k in range(4):
        gathered = np.take_along_axis(src, np.broadcast_to(idx[:, None, k, :], (n, c, hw)), axis=2)
        out += wts[:, None, k, :] * gathered
    out_shape = image.shape

    def backward(g):
        g = g.reshape(n, c, hw)
        # flat destination index over (n, c, hw)
        base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * hw
        dest = np.concatenate([(base + idx[:, None, k, :]).ravel() for k in range(4)])
        vals = np.concatenate([(g * wts[:, None, k, :]).ravel() for k in range(4)])
        gi = np.bincount(dest, weights=vals, minlength=n * c * hw)
        return (gi.reshape(out_shape).astype(image.data.dtype),)

    return Tensor._from_op(out.reshape(out_shape), (image,), backward, "affine_grid_sample")


def total_variation(image: Tensor) -> Tensor:
    """Anisotropic total variation averaged over neighbour-difference terms.

    (C, H, W) -> scalar; (N, C, H, W) -> (N,) per-image values.
    """
    if image.ndim not in (3, 4) or image.size == 0:
        raise ValueError(f"total_variation expects a non-empty (C,H,W) or (N,C,H,W) image, got {image.shape}")
    x = image.data
    c, h, w = x.shape[-3:]
    count = c * (h * (w - 1) + (h - 1) * w)
    dh = x[..., :, 1:] - x[..., :, :-1]
    dv = x[..., 1:, :] - x[..., :-1, :]
    axes = (-3, -2, -1)
    if count == 0:
        out = np.zeros(x.shape[:-3], dtype=x.dtype)
    else:
        out = (np.abs(dh).sum(axis=axes) + np.abs(dv).sum(axis=axes)) / count

    def backward(g):
        if count == 0:
            return (np.zeros_like(x),)
        gg = np.asarray(g)[..., None, None, None] / count
        sh = np.sign(dh) * gg
        sv = np.sign(dv) * gg
        gx = np.zeros_like(x)
        gx[..., :, 1:] += sh
        gx[..., :, :-1] -= sh
        gx[..., 1:, :] += sv
        gx[..., :-1, :] -= sv
        return (gx,)

    return Tensor._from_op(out, (image,), backward, "total_variation")
