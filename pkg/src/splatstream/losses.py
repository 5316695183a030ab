"""Photometric and density losses with analytic gradients.

The total objective is lambda_1 * L1 + lambda_ssim * (1 - SSIM) +
lambda_load * std(soft blend count).  The load term measures how unevenly
splats pile up across pixels; its gradient flows through the rasterizer's
differentiable soft count, which reaches only the opacity logits.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidParameter

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
_PAD = SSIM_WINDOW // 2


@dataclass
class LossWeights:
    l1: float = 0.47
    ssim: float = 0.12
    load: float = 0.41

    def __post_init__(self):
        for name in ("l1", "ssim", "load"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidParameter(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    l1: float
    ssim_loss: float
    load: float
    total: float
    d_image: np.ndarray  # dL/d rendered color, (H, W, 3)
    d_soft: np.ndarray  # dL/d soft count, (H, W)
    hard_count_std: float  # integer-count std, diagnostics only


def _check_shapes(rendered, target):
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise InvalidParameter(f"shape mismatch {rendered.shape} vs {target.shape}")
    return rendered, target


def l1_loss(rendered, target):
    """Mean absolute difference and its gradient w.r.t. ``rendered``."""
    rendered, target = _check_shapes(rendered, target)
    diff = rendered - target
    value = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return value, grad


def _gauss_window():
    t = np.arange(SSIM_WINDOW) - _PAD
    g = np.exp(-(t * t) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


_WIN = _gauss_window()


def _blur(a):
    out = correlate1d(a, _WIN, axis=0, mode="constant")
    return correlate1d(out, _WIN, axis=1, mode="constant")


def ssim_value_and_grad(x, y):
    """Mean SSIM over the interior (window fully inside) plus d(SSIM)/dx.

    Channels are averaged.  The crop keeps every window tap on real pixels,
    so the result matches a Gaussian-weighted reference implementation
    regardless of its boundary mode.
    """
    x, y = _check_shapes(x, y)
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    h, w, n_ch = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise InvalidParameter(f"image {h}x{w} smaller than the {SSIM_WINDOW}-tap SSIM window")

    grad = np.empty_like(x)
    total = 0.0
    crop = (slice(_PAD, h - _PAD), slice(_PAD, w - _PAD))
    n_crop = (h - 2 * _PAD) * (w - 2 * _PAD)
    for ch in range(n_ch):
        xc, yc = x[:, :, ch], y[:, :, ch]
        mu_x = _blur(xc)
        mu_y = _blur(yc)
        gx2 = _blur(xc * xc)
        gy2 = _blur(yc * yc)
        gxy = _blur(xc * yc)
        var_x = gx2 - mu_x * mu_x
        var_y = gy2 - mu_y * mu_y
        cov = gxy - mu_x * mu_y
        a1 = 2.0 * mu_x * mu_y + SSIM_C1
        a2 = 2.0 * cov + SSIM_C2
        b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
        b2 = var_x + var_y + SSIM_C2
        smap = (a1 * a2) / (b1 * b2)
        total += float(smap[crop].mean())

        # upstream weight of each map pixel in mean-over-crop, mean-over-channels
        m = np.zeros((h, w))
        m[crop] = 1.0 / (n_crop * n_ch)
        d_mu = m * (2.0 * mu_y * (a2 - a1) / (b1 * b2) - 2.0 * mu_x * smap * (1.0 / b1 - 1.0 / b2))
        d_gx2 = m * (-smap / b2)
        d_gxy = m * (2.0 * a1 / (b1 * b2))
        # self-adjoint window (symmetric taps, constant padding)
        grad[:, :, ch] = _blur(d_mu) + 2.0 * xc * _blur(d_gx2) + yc * _blur(d_gxy)
    value = total / n_ch
    return value, grad


def ssim_loss(rendered, target):
    """1 - mean SSIM and its gradient w.r.t. ``rendered``."""
    value, grad = ssim_value_and_grad(rendered, target)
    return 1.0 - value, -grad


def load_balancing_loss(soft_count):
    """Population std of the per-pixel soft blend count, plus gradient."""
    s = np.asarray(soft_count, dtype=np.float64)
    if s.size == 0 or s.min() == s.max():
        return 0.0, np.zeros_like(s)
    mean = s.mean()
    dev = s - mean
    var = float((dev * dev).mean())
    std = var ** 0.5
    if std == 0.0:
        return 0.0, np.zeros_like(s)
    grad = dev / (s.size * std)
    return std, grad


def total_loss(rendered, target, output, weights: LossWeights) -> LossBreakdown:
    """Weighted training objective over one rendered view.

    ``output`` is the RenderOutput carrying the soft and hard blend counts.
    The returned gradients split into the color image path and the
    soft-count path (zero when the load weight is zero).
    """
    v_l1, g_l1 = l1_loss(rendered, target)
    v_ssim, g_ssim = ssim_loss(rendered, target)
    if weights.load > 0.0:
        v_load, g_load = load_balancing_loss(output.soft_count)
        d_soft = weights.load * g_load
    else:
        v_load = 0.0
        d_soft = np.zeros_like(output.soft_count)
    total = weights.l1 * v_l1 + weights.ssim * v_ssim + weights.load * v_load
    d_image = weights.l1 * g_l1 + weights.ssim * g_ssim
    counts = output.hard_count.astype(np.float64)
    return LossBreakdown(
        l1=v_l1,
        ssim_loss=v_ssim,
        load=v_load,
        total=total,
        d_image=d_image,
        d_soft=d_soft,
        hard_count_std=float(counts.std()),
    )


def psnr(rendered, target) -> float:
    """Peak signal-to-noise ratio in dB on [0, 1] range; inf for identical."""
    rendered, target = _check_shapes(rendered, target)
    mse = float(((rendered - target) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)
