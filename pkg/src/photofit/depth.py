"""Depth decoders mapping a raw scalar field to metric depth, plus the
inverse-variance regularizer that keeps direct optimization away from
collapsed depth fields.

Three decoders are supported:
  - ``disparity``         d = 1 / x                 (requires x > 0)
  - ``scaled_disparity``  d = 1 / (s_min + (s_max - s_min) x), x in [0, 1]
  - ``softplus``          d = ln(1 + exp(x))

Each decode returns the depth map together with the elementwise
derivative dd/dx so callers can chain gradients analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

VAR_EPS = 1e-12
VAR_WEIGHT = 1e-6  # scale of the inverse-variance loss

KINDS = ("disparity", "scaled_disparity", "softplus")


@dataclass(frozen=True)
class ReprConfig:
    """Decoder selection; sigma bounds apply to scaled_disparity only."""

    kind: str = "softplus"
    sigma_min: float = 0.01  # 1/meters, i.e. max depth 100 m
    sigma_max: float = 10.0  # 1/meters, i.e. min depth 0.1 m

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown depth representation {self.kind!r}; expected one of {KINDS}")
        if not (0 < self.sigma_min < self.sigma_max):
            raise InvalidInputError(
                f"disparity bounds must satisfy 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )

    @staticmethod
    def from_depth_range(kind: str, min_depth: float = 0.1, max_depth: float = 100.0) -> "ReprConfig":
        return ReprConfig(kind, sigma_min=1.0 / max_depth, sigma_max=1.0 / min_depth)

    @property
    def uses_variance_guard(self) -> bool:
        # the bounded decoder cannot collapse; the other two need the guard
        return self.kind in ("disparity", "softplus")


def _first_bad(mask: np.ndarray) -> tuple[int, int]:
    i, j = np.argwhere(mask)[0]
    return int(i), int(j)


def decode(x: np.ndarray, cfg: ReprConfig) -> tuple[np.ndarray, np.ndarray]:
    """Decode raw field x to depth; returns (depth, dd_dx)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        bad = _first_bad(~np.isfinite(x))
        raise InvalidInputError(f"non-finite network output at pixel {bad} (kind={cfg.kind})")
    if cfg.kind == "disparity":
        if (x <= 0).any():
            bad = _first_bad(x <= 0)
            raise InvalidInputError(f"disparity decode requires x > 0; violated at pixel {bad}")
        d = 1.0 / x
        return d, -d * d
    if cfg.kind == "scaled_disparity":
        if (x < 0).any() or (x > 1).any():
            bad = _first_bad((x < 0) | (x > 1))
            raise InvalidInputError(f"scaled_disparity decode requires x in [0, 1]; violated at pixel {bad}")
        span = cfg.sigma_max - cfg.sigma_min
        sigma = cfg.sigma_min + span * x
        d = 1.0 / sigma
        return d, -span * d * d
    # softplus; linear branch above 30 avoids exp overflow (error < 1e-13)
    d = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))), 0.0)
    ex = np.exp(np.minimum(x, 0))
    sig = np.where(x >= 0, sig, ex / (1.0 + ex))
    return d, sig


def encode(depth: float | np.ndarray, cfg: ReprConfig) -> np.ndarray:
    """Raw field producing the given depth; used to initialize optimizers."""
    d = np.asarray(depth, dtype=np.float64)
    if cfg.kind == "disparity":
        return 1.0 / d
    if cfg.kind == "scaled_disparity":
        sigma = 1.0 / d
        x = (sigma - cfg.sigma_min) / (cfg.sigma_max - cfg.sigma_min)
        if (x < 0).any() or (x > 1).any():
            raise InvalidInputError(f"depth {d} outside representable range of {cfg}")
        return x
    # softplus inverse: x = log(exp(d) - 1), linearized for large d
    return np.where(d > 30.0, d, np.log(np.expm1(np.minimum(d, 30.0))))


def variance_regularizer(
    d: np.ndarray, valid: np.ndarray | None = None, weight: float = VAR_WEIGHT
) -> tuple[float, np.ndarray, bool]:
    """Inverse-variance loss weight / Var(d) with its analytic gradient.

    Population variance over the valid pixels of one image. Returns
    (loss, grad, degenerate); when Var(d) < VAR_EPS the loss is capped at
    weight / VAR_EPS with a zero gradient and the degenerate flag set,
    signalling a collapsed depth field.
    """
    d = np.asarray(d, dtype=np.float64)
    if valid is None:
        valid = np.ones(d.shape, dtype=bool)
    n = int(valid.sum())
    if n < 2:
        raise InvalidInputError(f"variance regularizer needs >= 2 valid pixels, got {n}")
    vals = np.where(valid, d, 0.0)
    mean = vals.sum() / n
    centered = np.where(valid, d - mean, 0.0)
    var = float(np.sum(centered * centered) / n)
    if var < VAR_EPS:
        return weight / VAR_EPS, np.zeros_like(d), True
    loss = weight / var
    grad = (-weight / var**2) * (2.0 / n) * centered
    return loss, grad, False
