"""Space-variant blur around a fixation point.

The image is decomposed into a stack of progressively low-passed copies
(all at full size). Each output pixel blends the two stack levels that
bracket the resolution still available at its distance from the fixation,
so the fixated neighbourhood keeps full detail and the periphery degrades.

All smoothing is written in "difference form" (``x + sum(w * (x_k - x))``)
so that constant regions pass through every stage bit-exactly.
"""

from dataclasses import dataclass, asdict
from typing import NamedTuple, Optional

import numpy as np

from .errors import BoundsError, ConfigError, DimensionError
from .imageio import check_image

# 5-tap binomial approximation of a Gaussian
KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_OFFSETS = (-2, -1, 0, 1, 2)


class FixationPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class FoveationParams:
    pyramid_levels: int = 6
    sigma_base: float = 0.248
    k: float = 3.0
    alpha: float = 2.5
    # eccentricity normaliser in pixels; None means width / 100
    p_scale: Optional[float] = None

    def __post_init__(self):
        if self.pyramid_levels < 2:
            raise ConfigError("pyramid_levels must be >= 2")
        for name in ("sigma_base", "k", "alpha"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.p_scale is not None and not self.p_scale > 0:
            raise ConfigError("p_scale must be > 0")

    def resolve_p_scale(self, width):
        return float(self.p_scale) if self.p_scale is not None else width / 100.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def _shift(padded, axis, start, length):
    sl = [slice(None)] * padded.ndim
    sl[axis] = slice(start, start + length)
    return padded[tuple(sl)]


def _pad_axis(x, axis, width=2):
    pad = [(0, 0)] * x.ndim
    pad[axis] = (width, width)
    return np.pad(x, pad, mode="reflect")


def _smooth_axis(x, axis):
    n = x.shape[axis]
    xp = _pad_axis(x, axis)
    out = x.copy()
    for w, off in zip(KERNEL, _OFFSETS):
        if off:
            out += w * (_shift(xp, axis, 2 + off, n) - x)
    return out


def _upsample_axis(x, target, axis):
    """Zero-insert to ``target`` samples along ``axis`` and interpolate."""
    n = x.shape[axis]
    if (target + 1) // 2 != n:
        raise DimensionError(f"cannot expand {n} samples to {target}")
    shape = list(x.shape)
    shape[axis] = target
    up = np.zeros(shape)
    even = [slice(None)] * x.ndim
    even[axis] = slice(0, None, 2)
    up[tuple(even)] = x
    mask_shape = [1] * x.ndim
    mask_shape[axis] = target
    mask = np.zeros(mask_shape)
    mask[tuple(even)] = 1.0
    # value of the nearest retained sample at or before each position
    ref = _shift(np.repeat(x, 2, axis=axis), axis, 0, target)
    upp = _pad_axis(up, axis)
    maskp = _pad_axis(mask, axis)
    out = ref.copy()
    for w, off in zip(KERNEL, _OFFSETS):
        m = _shift(maskp, axis, 2 + off, target)
        out += 2.0 * w * m * (_shift(upp, axis, 2 + off, target) - ref)
    return out


def reduce(image):
    """Smooth then keep every second row and column."""
    x = _smooth_axis(_smooth_axis(image, 0), 1)
    return x[::2, ::2]


def expand(image, shape):
    """Upsample by two to ``shape[:2]``, interpolating the inserted samples."""
    x = _upsample_axis(image, shape[0], 0)
    return _upsample_axis(x, shape[1], 1)


def build_pyramid(image, levels=6):
    """Return ``levels`` full-size copies of ``image``, each more low-passed.

    Level 0 is the input itself; level ``i`` is the input reduced ``i`` times
    and expanded back to the original size.
    """
    img = check_image(image, min_side=1)
    if levels < 2:
        raise ConfigError("levels must be >= 2")
    need = 2 ** (levels - 1)
    h, w = img.shape[:2]
    if h < need or w < need:
        raise DimensionError(f"{w}x{h} image too small for {levels} pyramid levels (needs >= {need} px per side)")
    shapes = [img.shape]
    reduced = [img]
    for _ in range(1, levels):
        reduced.append(reduce(reduced[-1]))
        shapes.append(reduced[-1].shape)
    out = [img.copy()]
    for i in range(1, levels):
        x = reduced[i]
        for j in range(i - 1, -1, -1):
            x = expand(x, shapes[j])
        out.append(x)
    return out


def level_cutoffs(params):
    """Resolution value at which each level's transfer falls to one half.

    Decreasing in level index; the coarsest level's cutoff is 0.
    """
    L = params.pyramid_levels
    c = np.zeros(L)
    base = params.sigma_base * np.sqrt(np.log(2.0) / params.k)
    for j in range(L - 1):
        c[j] = min(1.0, base * 2.0 ** (2 - j))
    return c


def _transfer(j, R, params):
    if j >= params.pyramid_levels - 1:
        return np.zeros_like(R)
    return np.exp(-params.k * (2.0 ** (j - 2) * R / params.sigma_base) ** 2)


def resolution_map(shape, fixation, params):
    """Relative resolution alpha / (e / p + alpha) at every pixel (1 at the fixation)."""
    h, w = shape[:2]
    p = params.resolve_p_scale(w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ecc = np.hypot(xx - fixation[0], yy - fixation[1])
    return params.alpha / (ecc / p + params.alpha)


def blend_weights(shape, fixation, params=None):
    """Per-pixel weights over pyramid levels, shape ``(levels, H, W)``.

    Weights are nonnegative and sum to one. Pixels whose resolution is at or
    above the level-0 cutoff put all their weight on level 0.
    """
    params = params or FoveationParams()
    R = resolution_map(shape, fixation, params)
    L = params.pyramid_levels
    cut = level_cutoffs(params)
    band = np.zeros(R.shape, dtype=int)
    assigned = R >= cut[0]
    for j in range(1, L):
        sel = ~assigned & (R >= cut[j])
        band[sel] = j
        assigned |= sel
    weights = np.zeros((L,) + R.shape)
    weights[0][band == 0] = 1.0
    for j in range(1, L):
        sel = band == j
        if not sel.any():
            continue
        r = R[sel]
        t_fine = _transfer(j - 1, r, params)
        t_coarse = _transfer(j, r, params)
        denom = t_fine - t_coarse
        b = np.where(denom > 0, (0.5 - t_coarse) / np.where(denom > 0, denom, 1.0), 1.0)
        b = np.clip(b, 0.0, 1.0)
        weights[j - 1][sel] = b
        weights[j][sel] = 1.0 - b
    return weights


def foveate(image, fixation, params=None, pyramid=None):
    """Render ``image`` as seen while fixating ``fixation`` (x, y in pixels).

    ``pyramid`` may be passed in when many fixations share one image.
    """
    params = params or FoveationParams()
    img = check_image(image)
    h, w = img.shape[:2]
    fx, fy = fixation
    if not (0 <= fx < w and 0 <= fy < h):
        raise BoundsError(f"fixation ({fx}, {fy}) outside {w}x{h} image")
    if pyramid is None:
        pyramid = build_pyramid(img, params.pyramid_levels)
    elif len(pyramid) != params.pyramid_levels:
        raise DimensionError("pyramid depth does not match params.pyramid_levels")
    weights = blend_weights(img.shape, (fx, fy), params)
    base = pyramid[0]
    out = base.copy()
    for j in range(1, params.pyramid_levels):
        wj = weights[j] if img.ndim == 2 else weights[j][:, :, None]
        if not wj.any():
            continue
        out += wj * (pyramid[j] - base)
    return np.clip(out, 0.0, 1.0)
