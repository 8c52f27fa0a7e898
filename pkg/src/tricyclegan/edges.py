"""Edge maps from images and masks, and square patch occlusion.

NumPy routines operate on single ``H x W`` (or ``H x W x C``) arrays and are
what the CLI and tests use. The ``*_t`` variants are differentiable torch
equivalents over ``N x C x H x W`` batches, used inside the training graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .errors import ConfigurationError, ParameterError

NORM_FLOOR = 1e-8
MAX_OCCLUSIONS = 10
PLACEMENT_ATTEMPTS = 50

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def _to_gray(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=2)
    if image.ndim != 2:
        raise ParameterError(f"expected an HxW or HxWxC image, got shape {image.shape}")
    return image


def sobel_magnitude(image: np.ndarray) -> np.ndarray:
    """Unnormalized 3x3 Sobel gradient magnitude with edge-replicated borders."""
    gray = _to_gray(image)
    # separable form: differencing first makes flat regions exactly zero
    gx = ndimage.correlate1d(ndimage.correlate1d(gray, [-1, 0, 1], axis=1, mode="nearest"), [1, 2, 1], axis=0, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(gray, [-1, 0, 1], axis=0, mode="nearest"), [1, 2, 1], axis=1, mode="nearest")
    return np.hypot(gx, gy)


def normalize_max(values: np.ndarray) -> np.ndarray:
    return np.clip(values / max(float(values.max(initial=0.0)), NORM_FLOOR), 0.0, 1.0)


def _sobel_backend(image):
    return normalize_max(sobel_magnitude(image))


def _hysteresis_backend(image, low=0.1, high=0.3):
    from skimage.filters import apply_hysteresis_threshold

    magnitude = _sobel_backend(image)
    return apply_hysteresis_threshold(magnitude, low, high).astype(np.float64)


EDGE_BACKENDS = {
    "sobel": _sobel_backend,
    "hysteresis": _hysteresis_backend,
}


def extract_edges(image: np.ndarray, backend: str = "sobel") -> np.ndarray:
    """Edge-strength map of a domain image, scaled to [0, 1] by its own maximum.

    Multi-channel images are averaged to one channel first. A constant image
    yields an all-zero map.
    """
    try:
        fn = EDGE_BACKENDS[backend]
    except KeyError:
        raise ConfigurationError(
            f"unknown edge backend {backend!r}; choose from {sorted(EDGE_BACKENDS)}"
        ) from None
    return fn(image)


def inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour in the background."""
    fg = np.asarray(mask) != 0
    cross = ndimage.generate_binary_structure(2, 1)
    eroded = ndimage.binary_erosion(fg, structure=cross, border_value=1)
    return fg & ~eroded


def sobel_mask_to_edges(mask: np.ndarray) -> np.ndarray:
    """Convert a binary mask into a one-pixel edge map.

    Sobel magnitude is kept only on the mask's inner boundary, which keeps
    the edge band a single pixel wide instead of straddling the contour.
    """
    mask = np.asarray(mask, dtype=np.float64)
    magnitude = sobel_magnitude(mask) * inner_boundary(mask)
    return normalize_max(magnitude)


# -- differentiable torch versions -------------------------------------------------


def sobel_magnitude_t(x: torch.Tensor) -> torch.Tensor:
    """Sobel magnitude of an ``N x C x H x W`` batch (channels averaged)."""
    if x.shape[1] > 1:
        x = x.mean(dim=1, keepdim=True)
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    dx = p[:, :, :, 2:] - p[:, :, :, :-2]
    dy = p[:, :, 2:, :] - p[:, :, :-2, :]
    gx = dx[:, :, :-2] + 2 * dx[:, :, 1:-1] + dx[:, :, 2:]
    gy = dy[:, :, :, :-2] + 2 * dy[:, :, :, 1:-1] + dy[:, :, :, 2:]
    sq = gx**2 + gy**2
    # exact zero (and zero gradient) where the gradient vanishes
    return torch.where(sq > 0, torch.sqrt(sq.clamp_min(1e-12)), torch.zeros_like(sq))


def normalize_max_t(x: torch.Tensor) -> torch.Tensor:
    peak = x.amax(dim=(1, 2, 3), keepdim=True).clamp_min(NORM_FLOOR)
    return (x / peak).clamp(0.0, 1.0)


def extract_edges_t(x: torch.Tensor) -> torch.Tensor:
    return normalize_max_t(sobel_magnitude_t(x))


def sobel_mask_to_edges_t(mask: torch.Tensor) -> torch.Tensor:
    """Torch counterpart of :func:`sobel_mask_to_edges`; accepts soft masks."""
    background = 1.0 - mask
    padded = F.pad(background, (1, 1, 1, 1), mode="replicate")
    neighbours = torch.stack(
        [
            padded[:, :, :-2, 1:-1],
            padded[:, :, 2:, 1:-1],
            padded[:, :, 1:-1, :-2],
            padded[:, :, 1:-1, 2:],
        ]
    )
    gate = mask * neighbours.amax(dim=0)
    return normalize_max_t(sobel_magnitude_t(mask) * gate)


# -- occlusion ----------------------------------------------------------------------


@dataclass(frozen=True)
class OcclusionSquare:
    x: int
    y: int
    side: int

    def overlaps(self, other: "OcclusionSquare") -> bool:
        # half-open pixel spans; shared edges do not count as overlap
        return (
            self.x < other.x + other.side
            and other.x < self.x + self.side
            and self.y < other.y + other.side
            and other.y < self.y + self.side
        )


@dataclass(frozen=True)
class OcclusionSet:
    squares: tuple[OcclusionSquare, ...] = ()

    def __len__(self):
        return len(self.squares)

    def __iter__(self):
        return iter(self.squares)


def sample_occlusions(rng: np.random.Generator, size: int) -> OcclusionSet:
    """Up to ten pairwise-disjoint squares with sides in [size/8, size/2].

    The target count is uniform in 1..10. Each placement attempt draws a
    fresh side and position; a square still unplaced after 50 attempts is
    dropped.
    """
    if int(size) != size or size < 16:
        raise ParameterError(f"size must be an integer >= 16, got {size!r}")
    size = int(size)
    lo, hi = math.ceil(size / 8), size // 2
    target = int(rng.integers(1, MAX_OCCLUSIONS + 1))
    placed: list[OcclusionSquare] = []
    for _ in range(target):
        for _ in range(PLACEMENT_ATTEMPTS):
            side = int(rng.integers(lo, hi + 1))
            sq = OcclusionSquare(
                x=int(rng.integers(0, size - side + 1)),
                y=int(rng.integers(0, size - side + 1)),
                side=side,
            )
            if not any(sq.overlaps(p) for p in placed):
                placed.append(sq)
                break
    return OcclusionSet(tuple(placed))


def occlusion_mask(occ: OcclusionSet, shape: tuple[int, int]) -> np.ndarray:
    """Boolean ``H x W`` array, True inside any square."""
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    for sq in occ:
        if sq.side <= 0 or sq.x < 0 or sq.y < 0 or sq.x + sq.side > w or sq.y + sq.side > h:
            raise ParameterError(f"occlusion square {sq} lies outside a {h}x{w} image")
        out[sq.y : sq.y + sq.side, sq.x : sq.x + sq.side] = True
    return out


def apply_occlusion(edges: np.ndarray, occ: OcclusionSet) -> np.ndarray:
    edges = np.asarray(edges)
    hole = occlusion_mask(occ, edges.shape[:2])
    out = edges.copy()
    out[hole] = 0
    return out
