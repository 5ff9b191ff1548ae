"""Invertible 2-D affine transforms used for training augmentation and
test-time ensembling.

All transforms are anchored at the image center and composed in a fixed
order, so every sampled transform has an exact closed-form inverse.
Warping is backward (each output pixel samples the input at the
inverse-mapped location) with a constant fill for out-of-bounds samples.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AffineParams:
    """One rotation/shift/scale transform. Shifts are fractions of the
    image side; rotation is in degrees."""

    rotation_deg: float
    shift_x: float
    shift_y: float
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def is_identity(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.shift_x == 0.0
            and self.shift_y == 0.0
            and self.scale == 1.0
        )

    def to_dict(self) -> dict:
        return asdict(self)


IDENTITY = AffineParams(0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class AffineRangeConfig:
    """Closed sampling intervals for each affine component.

    ``shift`` bounds the magnitude; the sign is drawn separately per axis.
    """

    rotation_deg: tuple[float, float] = (-45.0, 45.0)
    shift: tuple[float, float] = (0.0, 0.1)
    scale: tuple[float, float] = (0.8, 1.0)

    def __post_init__(self):
        for name, (lo, hi) in (
            ("rotation_deg", self.rotation_deg),
            ("shift", self.shift),
            ("scale", self.scale),
        ):
            if lo > hi:
                raise ValueError(f"{name} interval is empty: [{lo}, {hi}]")
        if self.scale[0] <= 0:
            raise ValueError("scale interval must exclude 0")

    def is_identity_only(self) -> bool:
        return (
            self.rotation_deg == (0.0, 0.0)
            and self.shift == (0.0, 0.0)
            and self.scale == (1.0, 1.0)
        )


IDENTITY_RANGES = AffineRangeConfig(
    rotation_deg=(0.0, 0.0), shift=(0.0, 0.0), scale=(1.0, 1.0)
)


def sample_affine(rng: np.random.Generator, config: AffineRangeConfig) -> AffineParams:
    """Draw each component independently and uniformly from its interval.

    Shift magnitudes get an independent random sign per axis. The draw
    order is fixed, so a given generator state always yields the same
    parameters.
    """
    rotation = rng.uniform(*config.rotation_deg)
    shift_x = rng.uniform(*config.shift)
    shift_y = rng.uniform(*config.shift)
    scale = rng.uniform(*config.scale)
    if rng.random() < 0.5:
        shift_x = -shift_x
    if rng.random() < 0.5:
        shift_y = -shift_y
    return AffineParams(rotation, shift_x, shift_y, scale)


def _translation(dy: float, dx: float) -> np.ndarray:
    m = np.eye(3)
    m[0, 2] = dy
    m[1, 2] = dx
    return m


def to_matrix(params: AffineParams, image_side: int) -> np.ndarray:
    """Homogeneous 3x3 matrix acting on (row, col, 1) coordinates.

    Composition (right to left): move center to origin, apply the shift
    in pixels, scale, rotate, move the origin back to the center.
    """
    if image_side <= 0:
        raise ValueError(f"image_side must be positive, got {image_side}")
    c = (image_side - 1) / 2.0
    th = math.radians(params.rotation_deg)
    rot = np.array(
        [
            [math.cos(th), -math.sin(th), 0.0],
            [math.sin(th), math.cos(th), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    scl = np.diag([params.scale, params.scale, 1.0])
    shift = _translation(params.shift_y * image_side, params.shift_x * image_side)
    return _translation(c, c) @ rot @ scl @ shift @ _translation(-c, -c)


def invert(matrix_or_params, image_side: int | None = None) -> np.ndarray:
    """Exact inverse matrix; raises on a singular input."""
    if isinstance(matrix_or_params, AffineParams):
        if image_side is None:
            raise ValueError("image_side is required when inverting AffineParams")
        matrix = to_matrix(matrix_or_params, image_side)
    else:
        matrix = np.asarray(matrix_or_params, dtype=float)
    det = np.linalg.det(matrix)
    if abs(det) < 1e-12:
        raise ValueError("transform matrix is singular")
    return np.linalg.inv(matrix)


def warp(
    field: np.ndarray,
    matrix: np.ndarray,
    interp: str = "bilinear",
    fill: float = 0.0,
) -> np.ndarray:
    """Backward-warp a 2-D field by the forward transform ``matrix``.

    Masks must use ``nearest`` (binarity is preserved exactly);
    probability maps and images use ``bilinear``.
    """
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    if interp not in ("bilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interp!r}")
    inv = invert(matrix)  # raises on singular input
    order = 1 if interp == "bilinear" else 0
    if order == 1 and field.dtype not in (np.float32, np.float64):
        field = field.astype(np.float32)
    return ndimage.affine_transform(
        field, inv, order=order, mode="constant", cval=fill, output_shape=field.shape
    )
