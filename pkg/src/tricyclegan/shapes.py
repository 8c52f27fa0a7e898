"""Randomized shape-prior templates: ellipse ROIs clipped by an ultrasound cone.

All samplers take an explicit ``numpy.random.Generator`` and are otherwise
pure, so identical seeds give bit-identical masks. Masks are ``uint8`` arrays
holding only 0 and 1; rasterization tests each pixel center against the
analytic inequality with no anti-aliasing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, ResampleRequired

MIN_SIZE = 32
MAX_TEMPLATE_ATTEMPTS = 100
MIN_FOREGROUND_FRACTION = 0.02


@dataclass(frozen=True)
class EllipseSpec:
    center_dx: float
    center_dy: float
    angle: float
    semi_major: float
    semi_minor: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ConeSpec:
    """Sector-shaped imaging region.

    The apex sits above the image (``apex_y < 0``). Two straight sides leave
    the apex at ``+/- half_angle`` from vertical and end on a bottom arc, which
    is the part of an axis-aligned ellipse centred on the apex with radii
    ``radius_x``/``radius_y`` lying between the two sides.
    """

    apex_x: float
    apex_y: float
    half_angle: float
    radius_x: float
    radius_y: float
    left_end: tuple[float, float]
    right_end: tuple[float, float]

    def to_dict(self):
        d = asdict(self)
        d["left_end"] = list(self.left_end)
        d["right_end"] = list(self.right_end)
        return d


def _check_size(size):
    if int(size) != size or size < MIN_SIZE:
        raise ParameterError(f"size must be an integer >= {MIN_SIZE}, got {size!r}")
    return int(size)


def _pixel_centers(size):
    c = np.arange(size, dtype=np.float64) + 0.5
    ys, xs = np.meshgrid(c, c, indexing="ij")
    return xs, ys


def rasterize_ellipse(spec: EllipseSpec, size: int) -> np.ndarray:
    xs, ys = _pixel_centers(size)
    dx = xs - (size / 2 + spec.center_dx)
    dy = ys - (size / 2 + spec.center_dy)
    cos_t, sin_t = math.cos(spec.angle), math.sin(spec.angle)
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    inside = (u / spec.semi_major) ** 2 + (v / spec.semi_minor) ** 2 <= 1.0
    return inside.astype(np.uint8)


def rasterize_cone(spec: ConeSpec, size: int) -> np.ndarray:
    xs, ys = _pixel_centers(size)
    dx = xs - spec.apex_x
    dy = ys - spec.apex_y
    in_wedge = (dy > 0) & (np.abs(dx) <= dy * math.tan(spec.half_angle))
    in_arc = (dx / spec.radius_x) ** 2 + (dy / spec.radius_y) ** 2 <= 1.0
    return (in_wedge & in_arc).astype(np.uint8)


def sample_ellipse_spec(rng: np.random.Generator, size: int) -> EllipseSpec:
    size = _check_size(size)
    max_offset = size / 8
    semi_major = rng.uniform(size / 8, size / 4)
    return EllipseSpec(
        center_dx=float(rng.uniform(-max_offset, max_offset)),
        center_dy=float(rng.uniform(-max_offset, max_offset)),
        angle=float(rng.uniform(0.0, 2 * math.pi)),
        semi_major=float(semi_major),
        semi_minor=float(semi_major * rng.uniform(0.5, 0.9)),
    )


def sample_ellipse_mask(rng: np.random.Generator, size: int):
    """Draw a random ellipse ROI and its filled mask.

    The centre is offset from the image centre by at most ``size/8`` on each
    axis, the semi-major axis lies in ``[size/8, size/4]`` and the semi-minor
    axis is 0.5 to 0.9 times the semi-major axis.
    """
    spec = sample_ellipse_spec(rng, size)
    return spec, rasterize_ellipse(spec, int(size))


def sample_cone_spec(rng: np.random.Generator, size: int) -> ConeSpec:
    size = _check_size(size)
    apex_x = size / 2 + rng.uniform(-size / 16, size / 16)
    # at least 3 px above the top edge so the top row always cuts the wedge
    apex_y = -max(3.0, rng.uniform(0.05, 0.3) * size)
    half_angle = rng.uniform(0.4, 0.65)
    radius_y = -apex_y + size * rng.uniform(0.75, 1.0)
    radius_x = radius_y * rng.uniform(0.9, 1.3)

    def arc_point(sign):
        sx, sy = sign * math.sin(half_angle), math.cos(half_angle)
        t = 1.0 / math.sqrt((sx / radius_x) ** 2 + (sy / radius_y) ** 2)
        return (float(apex_x + t * sx), float(apex_y + t * sy))

    return ConeSpec(
        apex_x=float(apex_x),
        apex_y=float(apex_y),
        half_angle=float(half_angle),
        radius_x=float(radius_x),
        radius_y=float(radius_y),
        left_end=arc_point(-1),
        right_end=arc_point(1),
    )


def sample_ultrasound_cone(rng: np.random.Generator, size: int):
    spec = sample_cone_spec(rng, size)
    return spec, rasterize_cone(spec, int(size))


def compose_kidney_template(ellipse_mask: np.ndarray, cone_mask: np.ndarray) -> np.ndarray:
    """Remove ROI pixels lying outside the cone."""
    ellipse_mask = np.asarray(ellipse_mask)
    cone_mask = np.asarray(cone_mask)
    if ellipse_mask.shape != cone_mask.shape:
        raise ParameterError(
            f"mask shapes differ: {ellipse_mask.shape} vs {cone_mask.shape}"
        )
    return ((ellipse_mask != 0) & (cone_mask != 0)).astype(np.uint8)


@dataclass(frozen=True)
class Template:
    ellipse: EllipseSpec
    cone: ConeSpec | None
    mask: np.ndarray
    cone_mask: np.ndarray | None = None

    def params(self):
        return {
            "ellipse": self.ellipse.to_dict(),
            "cone": None if self.cone is None else self.cone.to_dict(),
            "foreground_pixels": int(self.mask.sum()),
        }


def sample_template(rng: np.random.Generator, size: int, cone: bool = True) -> Template:
    """Sample a usable ground-truth template, resampling degenerate draws.

    A draw is rejected when fewer than 2% of pixels remain foreground after
    cone clipping. Gives up with :class:`ResampleRequired` after 100 draws.
    """
    size = _check_size(size)
    min_pixels = MIN_FOREGROUND_FRACTION * size * size
    for _ in range(MAX_TEMPLATE_ATTEMPTS):
        ellipse, ellipse_mask = sample_ellipse_mask(rng, size)
        cone_spec, cone_mask = (None, None)
        mask = ellipse_mask
        if cone:
            cone_spec, cone_mask = sample_ultrasound_cone(rng, size)
            mask = compose_kidney_template(ellipse_mask, cone_mask)
        if mask.sum() >= min_pixels:
            return Template(ellipse, cone_spec, mask, cone_mask)
    raise ResampleRequired(
        f"no template with >= {MIN_FOREGROUND_FRACTION:.0%} foreground "
        f"after {MAX_TEMPLATE_ATTEMPTS} attempts"
    )
