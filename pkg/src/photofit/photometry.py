"""Appearance losses: affine brightness transform, patch SSIM, the blended
photometric error pe, and depth-error weights for down-weighting SSIM where
predicted depths disagree across views.

SSIM uses 3x3 uniform patch statistics with edge-replicate padding. The
printed source formula mixes mean and variance symbols in the covariance
slot; we implement the standard form with covariance sigma_xy and variances
sigma_x^2, sigma_y^2. Gradients are exact because the backward pass uses the
true adjoint of the padded mean filter.

Images are single-channel luminance in [0, 1]; RGB input is converted with
fixed 0.299/0.587/0.114 weights at the I/O boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PE_ALPHA = 0.85  # SSIM:L1 blend ratio 0.85:0.15


@dataclass(frozen=True)
class BrightnessParams:
    """Gain/bias of the affine intensity change between the two frames."""

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.a <= 0:
            raise InvalidInputError(f"brightness gain must be positive, got {self.a}")


def rgb_to_luminance(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        w = np.array([0.299, 0.587, 0.114])
        return np.asarray(img, dtype=np.float64) @ w
    raise InvalidInputError(f"expected HxW or HxWx3 image, got shape {img.shape}")


def brightness_transform(img: np.ndarray, params: BrightnessParams) -> np.ndarray:
    """I' = a*I + b; dI'/da = I and dI'/db = 1 elementwise."""
    return params.a * np.asarray(img, dtype=np.float64) + params.b


def mean_filter3(img: np.ndarray) -> np.ndarray:
    """3x3 uniform mean with edge-replicate padding."""
    p = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += p[di : di + img.shape[0], dj : dj + img.shape[1]]
    return out / 9.0


def mean_filter3_adjoint(g: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`mean_filter3` (box-sum adjoint + pad adjoint)."""
    H, W = g.shape
    gp = np.zeros((H + 2, W + 2))
    for di in range(3):
        for dj in range(3):
            gp[di : di + H, dj : dj + W] += g
    out = gp[1:-1, 1:-1].copy()
    out[0, :] += gp[0, 1:-1]
    out[-1, :] += gp[-1, 1:-1]
    out[:, 0] += gp[1:-1, 0]
    out[:, -1] += gp[1:-1, -1]
    out[0, 0] += gp[0, 0]
    out[0, -1] += gp[0, -1]
    out[-1, 0] += gp[-1, 0]
    out[-1, -1] += gp[-1, -1]
    return out / 9.0


class SsimCache:
    """Forward-pass patch statistics reused by the backward pass."""

    __slots__ = ("x", "y", "mu_x", "mu_y", "sxx", "syy", "sxy", "n1", "n2", "d1", "d2", "value")


def ssim(ia: np.ndarray, ib: np.ndarray, want_cache: bool = False):
    """Per-pixel structural similarity of two images in [0, 1]."""
    ia = np.asarray(ia, dtype=np.float64)
    ib = np.asarray(ib, dtype=np.float64)
    if ia.shape != ib.shape:
        raise InvalidInputError(f"image sizes differ: {ia.shape} vs {ib.shape}")
    mu_x = mean_filter3(ia)
    mu_y = mean_filter3(ib)
    sxx = mean_filter3(ia * ia) - mu_x * mu_x
    syy = mean_filter3(ib * ib) - mu_y * mu_y
    sxy = mean_filter3(ia * ib) - mu_x * mu_y
    n1 = 2.0 * mu_x * mu_y + SSIM_C1
    n2 = 2.0 * sxy + SSIM_C2
    d1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    d2 = sxx + syy + SSIM_C2
    value = (n1 * n2) / (d1 * d2)
    if not want_cache:
        return value
    c = SsimCache()
    c.x, c.y = ia, ib
    c.mu_x, c.mu_y = mu_x, mu_y
    c.sxx, c.syy, c.sxy = sxx, syy, sxy
    c.n1, c.n2, c.d1, c.d2 = n1, n2, d1, d2
    c.value = value
    return value, c


def ssim_vjp(g: np.ndarray, c: SsimCache) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum(g * ssim) w.r.t. both input images."""
    inv = 1.0 / (c.d1 * c.d2)
    g_n1 = g * c.n2 * inv
    g_n2 = g * c.n1 * inv
    g_d1 = -g * c.value / c.d1
    g_d2 = -g * c.value / c.d2
    g_sxy = 2.0 * g_n2
    g_sxx = g_d2
    g_syy = g_d2
    g_mu_x = 2.0 * c.mu_y * g_n1 + 2.0 * c.mu_x * g_d1 - 2.0 * c.mu_x * g_sxx - c.mu_y * g_sxy
    g_mu_y = 2.0 * c.mu_x * g_n1 + 2.0 * c.mu_y * g_d1 - 2.0 * c.mu_y * g_syy - c.mu_x * g_sxy
    g_x = mean_filter3_adjoint(g_mu_x) + 2.0 * c.x * mean_filter3_adjoint(g_sxx) + c.y * mean_filter3_adjoint(g_sxy)
    g_y = mean_filter3_adjoint(g_mu_y) + 2.0 * c.y * mean_filter3_adjoint(g_syy) + c.x * mean_filter3_adjoint(g_sxy)
    return g_x, g_y


@dataclass
class ErrorMap:
    """Per-pixel non-negative error with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise InvalidInputError("error values and mask must share a grid")


class PeCache:
    __slots__ = ("ssim_cache", "diff", "weights", "use_ssim")


def pe(
    ia: np.ndarray,
    ib: np.ndarray,
    use_ssim: bool = True,
    ssim_weights: np.ndarray | None = None,
    want_cache: bool = False,
):
    """Blended photometric error alpha/2 (1 - SSIM) + (1 - alpha) |Ia - Ib|.

    With ``use_ssim=False`` this degrades to plain L1. ``ssim_weights``
    optionally scales the SSIM term per pixel (depth-error weighting).
    """
    ia = np.asarray(ia, dtype=np.float64)
    ib = np.asarray(ib, dtype=np.float64)
    if ia.shape != ib.shape:
        raise InvalidInputError(f"image sizes differ: {ia.shape} vs {ib.shape}")
    diff = ia - ib
    if use_ssim:
        s, sc = ssim(ia, ib, want_cache=True)
        w = 1.0 if ssim_weights is None else ssim_weights
        out = 0.5 * PE_ALPHA * w * (1.0 - s) + (1.0 - PE_ALPHA) * np.abs(diff)
    else:
        sc = None
        out = np.abs(diff)
    if not want_cache:
        return out
    c = PeCache()
    c.ssim_cache = sc
    c.diff = diff
    c.weights = ssim_weights
    c.use_ssim = use_ssim
    return out, c


def pe_vjp(g: np.ndarray, c: PeCache):
    """Gradients of sum(g * pe) w.r.t. (Ia, Ib, ssim_weights)."""
    sign = np.sign(c.diff)
    if not c.use_ssim:
        return g * sign, -g * sign, None
    l1_w = 1.0 - PE_ALPHA
    g_x = l1_w * g * sign
    g_y = -l1_w * g * sign
    w = 1.0 if c.weights is None else c.weights
    g_ssim = -0.5 * PE_ALPHA * w * g
    gx_s, gy_s = ssim_vjp(g_ssim, c.ssim_cache)
    g_w = None
    if c.weights is not None:
        g_w = 0.5 * PE_ALPHA * (1.0 - c.ssim_cache.value) * g
    return g_x + gx_s, g_y + gy_s, g_w


class DwCache:
    __slots__ = ("err", "sigma2", "denom", "n", "valid")


def dw_ssim_weights(
    d_pred: np.ndarray,
    d_recon: np.ndarray,
    valid: np.ndarray | None = None,
    want_cache: bool = False,
):
    """Per-pixel weights sigma_d^2 / (sigma_d^2 + (d_recon - d_pred)^2).

    sigma_d^2 is the mean squared depth disagreement over the jointly
    valid pixels. Fully consistent depths (sigma_d^2 = 0) weigh 1
    everywhere: the 0/0 limit along the consistent direction.
    """
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_recon = np.asarray(d_recon, dtype=np.float64)
    if d_pred.shape != d_recon.shape:
        raise InvalidInputError(f"depth map sizes differ: {d_pred.shape} vs {d_recon.shape}")
    if valid is None:
        valid = np.ones(d_pred.shape, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise InvalidInputError("depth-error weighting needs at least one jointly valid pixel")
    err = np.where(valid, d_recon - d_pred, 0.0)
    sigma2 = float(np.sum(err * err) / n)
    if sigma2 == 0.0:
        w = np.ones_like(d_pred)
        denom = np.ones_like(d_pred)
    else:
        denom = sigma2 + err * err
        w = np.where(valid, sigma2 / denom, 1.0)
    if not want_cache:
        return w
    c = DwCache()
    c.err = err
    c.sigma2 = sigma2
    c.denom = denom
    c.n = n
    c.valid = valid
    return w, c


def dw_ssim_weights_vjp(g: np.ndarray, c: DwCache) -> np.ndarray:
    """Gradient of sum(g * w) w.r.t. the per-pixel error e = d_recon - d_pred.

    Includes the coupling through sigma_d^2 = mean(e^2): each pixel's error
    moves every weight. Returns dL/de; callers split it into d_recon
    (+1) and d_pred (-1) contributions.
    """
    if c.sigma2 == 0.0:
        return np.zeros_like(g)
    g = np.where(c.valid, g, 0.0)
    inv2 = 1.0 / (c.denom * c.denom)
    # dw_j/dsigma2 = e_j^2 / denom_j^2 ; dsigma2/de_k = 2 e_k / n
    s = float(np.sum(g * c.err * c.err * inv2))
    g_e = (2.0 * c.err / c.n) * s - g * 2.0 * c.sigma2 * c.err * inv2
    return np.where(c.valid, g_e, 0.0)
