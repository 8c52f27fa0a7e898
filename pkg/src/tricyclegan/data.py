"""Dataset layout, image I/O, preprocessing, augmentation and the toy dataset.

On-disk layout::

    root/images/<split>/<relative path>.{png,jpg,jpeg}
    root/masks/<split>/<same relative path, .png>

Masks and edge maps are stored as 8-bit PNGs (0/255 for masks).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigurationError, DatasetError, ParameterError
from .shapes import sample_template

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "val", "eval")
DATA_ROOT_ENV = "TRICYCLEGAN_DATA_ROOT"


# -- image I/O ----------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Load an image as float64 in [0, 1]; grayscale stays ``H x W``, colour is ``H x W x 3``."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16"):
                return np.asarray(im, dtype=np.float64) / 65535.0
            if im.mode == "F":
                return np.asarray(im, dtype=np.float64)
            if im.mode in ("L", "1", "LA"):
                return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if np.array_equal(arr[..., 0], arr[..., 1]) and np.array_equal(arr[..., 1], arr[..., 2]):
        return arr[..., 0]
    return arr


def read_mask(path) -> np.ndarray:
    arr = read_image(path)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return (arr >= 0.5).astype(np.uint8)


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(np.asarray(arr, dtype=np.float64))).save(path)


def write_mask(path, mask: np.ndarray) -> None:
    write_png(path, (np.asarray(mask) != 0).astype(np.float64))


# -- preprocessing ------------------------------------------------------------------


@dataclass
class PreprocessSpec:
    percentile_lo: float = 2.0
    percentile_hi: float = 98.0
    clahe_clip: float = 0.03  # 0 disables equalization
    clahe_tiles: int = 8
    despeckle: str = "median-3"  # "off" or "median-<k>"
    target_size: int = 256
    normalize: bool = False
    mean: float | None = None
    std: float | None = None

    def __post_init__(self):
        if not 0 <= self.percentile_lo < self.percentile_hi <= 100:
            raise ConfigurationError("percentiles must satisfy 0 <= lo < hi <= 100")
        if self.target_size < 1:
            raise ConfigurationError("target_size must be positive")
        self.despeckle_kernel()

    def despeckle_kernel(self):
        if self.despeckle == "off":
            return 0
        if self.despeckle.startswith("median-"):
            try:
                k = int(self.despeckle.split("-", 1)[1])
            except ValueError:
                k = 0
            if k >= 1:
                return k
        raise ConfigurationError(f"despeckle must be 'off' or 'median-<k>', got {self.despeckle!r}")


PREPROCESS_PROFILES = {
    "kidney": PreprocessSpec(),
    "dermoscopy": PreprocessSpec(0.0, 100.0, 0.0, despeckle="off"),
    "toy": PreprocessSpec(0.0, 100.0, 0.0, despeckle="off", target_size=64),
}


def _trim_and_scale(image, lo, hi):
    low, high = np.percentile(image, [lo, hi])
    if high <= low:
        return np.zeros_like(image)
    return np.clip((image - low) / (high - low), 0.0, 1.0)


def preprocess(image: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Percentile trim to [0, 1], optional median despeckle, CLAHE, resize, optional standardization."""
    from skimage.exposure import equalize_adapthist
    from skimage.transform import resize

    image = np.asarray(image, dtype=np.float64)
    if image.size == 0 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ParameterError("image has zero size")
    image = _trim_and_scale(image, spec.percentile_lo, spec.percentile_hi)
    k = spec.despeckle_kernel()
    if k > 1:
        size = (k, k) if image.ndim == 2 else (k, k, 1)
        image = ndimage.median_filter(image, size=size, mode="nearest")
    if spec.clahe_clip > 0 and np.ptp(image) > 0:
        tile = (max(1, image.shape[0] // spec.clahe_tiles), max(1, image.shape[1] // spec.clahe_tiles))
        image = equalize_adapthist(image, kernel_size=tile, clip_limit=spec.clahe_clip)
    shape = (spec.target_size, spec.target_size) + image.shape[2:]
    if image.shape != shape:
        image = resize(image, shape, order=1, mode="edge", anti_aliasing=True)
    image = np.clip(image, 0.0, 1.0)
    if spec.normalize:
        if spec.mean is None or spec.std is None:
            raise ConfigurationError("normalization requested without training-set statistics")
        image = (image - spec.mean) / max(spec.std, 1e-8)
    return image


def training_statistics(images) -> tuple[float, float]:
    stacked = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    return float(stacked.mean()), float(stacked.std())


# -- augmentation -------------------------------------------------------------------


@dataclass
class AugmentSpec:
    max_translate_px: int = 30
    hflip_p: float = 0.5
    rotations: bool = False  # quarter-turn rotations
    brightness: float = 0.0
    contrast: float = 0.0
    hue: float = 0.0
    saturation: float = 0.0
    style_channel: bool = False

    def __post_init__(self):
        for name, value in asdict(self).items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.hflip_p > 1:
            raise ConfigurationError("hflip_p must be <= 1")


AUGMENT_PROFILES = {
    "kidney": AugmentSpec(),
    "dermoscopy": AugmentSpec(
        rotations=True, brightness=0.2, contrast=0.5, hue=0.05, saturation=0.5
    ),
    "toy": AugmentSpec(max_translate_px=7),
    "none": AugmentSpec(max_translate_px=0, hflip_p=0.0),
}


@dataclass(frozen=True)
class Geometry:
    dx: int = 0
    dy: int = 0
    flip: bool = False
    quarter_turns: int = 0


def random_geometry(rng: np.random.Generator, spec: AugmentSpec) -> Geometry:
    t = spec.max_translate_px
    dx = int(rng.integers(-t, t + 1)) if t else 0
    dy = int(rng.integers(-t, t + 1)) if t else 0
    flip = bool(rng.random() < spec.hflip_p) if spec.hflip_p > 0 else False
    turns = int(rng.integers(0, 4)) if spec.rotations else 0
    return Geometry(dx, dy, flip, turns)


def shift_image(arr: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation with zero fill; positive ``dx`` moves content right."""
    out = np.zeros_like(arr)
    h, w = arr.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[dst_y, dst_x] = arr[src_y, src_x]
    return out


def apply_geometry(arr: np.ndarray, geom: Geometry) -> np.ndarray:
    out = arr
    if geom.quarter_turns:
        out = np.rot90(out, geom.quarter_turns, axes=(0, 1))
    if geom.flip:
        out = out[:, ::-1]
    if geom.dx or geom.dy:
        out = shift_image(out, geom.dx, geom.dy)
    return np.ascontiguousarray(out)


def _photometric(image, spec: AugmentSpec, rng):
    from skimage.color import hsv2rgb, rgb2hsv

    out = image
    if spec.brightness:
        out = out * rng.uniform(1 - spec.brightness, 1 + spec.brightness)
    if spec.contrast:
        mean = out.mean()
        out = (out - mean) * rng.uniform(1 - spec.contrast, 1 + spec.contrast) + mean
    out = np.clip(out, 0.0, 1.0)
    if spec.hue or spec.saturation:
        hsv = rgb2hsv(out)
        if spec.hue:
            hsv[..., 0] = (hsv[..., 0] + rng.uniform(-spec.hue, spec.hue)) % 1.0
        if spec.saturation:
            hsv[..., 1] = np.clip(
                hsv[..., 1] * rng.uniform(1 - spec.saturation, 1 + spec.saturation), 0, 1
            )
        out = hsv2rgb(hsv)
    return np.clip(out, 0.0, 1.0)


# twelve fixed per-channel (gain, gamma) remaps; entry 0 is the identity
STYLE_BANK = [
    ((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)),
    ((1.1, 0.9, 0.8), (1.0, 1.0, 1.0)),
    ((0.8, 0.9, 1.1), (1.0, 1.0, 1.0)),
    ((1.0, 1.0, 1.0), (0.7, 0.7, 0.7)),
    ((1.0, 1.0, 1.0), (1.4, 1.4, 1.4)),
    ((1.2, 1.0, 1.0), (0.9, 1.1, 1.1)),
    ((0.9, 1.1, 0.9), (1.1, 0.9, 1.1)),
    ((0.9, 0.9, 1.2), (1.2, 1.2, 0.8)),
    ((1.1, 1.1, 0.9), (0.8, 1.0, 1.3)),
    ((0.7, 0.8, 0.9), (1.0, 0.9, 0.8)),
    ((1.0, 0.8, 0.7), (0.9, 1.2, 1.4)),
    ((0.8, 1.0, 1.2), (1.3, 0.8, 1.0)),
]


def style_channel(image: np.ndarray, style_index: int = 0) -> np.ndarray:
    """One-channel luminance of the image after a style-bank colour remap."""
    gains, gammas = STYLE_BANK[style_index % len(STYLE_BANK)]
    img = image if image.ndim == 3 else image[..., None]
    c = img.shape[2]
    styled = np.stack(
        [np.clip(gains[i % 3] * img[..., i] ** gammas[i % 3], 0, 1) for i in range(c)], axis=2
    )
    return styled.mean(axis=2)


def with_style_channel(image: np.ndarray, style_index: int = 0) -> np.ndarray:
    img = image if image.ndim == 3 else image[..., None]
    return np.concatenate([img, style_channel(image, style_index)[..., None]], axis=2)


def augment(image: np.ndarray, mask: np.ndarray | None, spec: AugmentSpec, rng: np.random.Generator):
    """Apply one random geometric transform to image and mask, photometric jitter to the image only."""
    geom = random_geometry(rng, spec)
    out = apply_geometry(np.asarray(image), geom)
    out_mask = None
    if mask is not None:
        out_mask = (apply_geometry(np.asarray(mask, dtype=np.float64), geom) >= 0.5).astype(np.uint8)
    if out.ndim == 3 and out.shape[2] >= 3 and any(
        (spec.brightness, spec.contrast, spec.hue, spec.saturation)
    ):
        out = _photometric(out, spec, rng)
    if spec.style_channel:
        out = with_style_channel(out, int(rng.integers(0, len(STYLE_BANK))))
    return out, out_mask


# -- manifests ----------------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: str
    split: str
    entries: list = field(default_factory=list)  # [(image_path, mask_path or None)]
    domain_channels: int = 1
    size: int = 0

    @property
    def labelled(self):
        return [(img, m) for img, m in self.entries if m is not None]

    def to_dict(self):
        return asdict(self)


def default_data_root():
    return os.environ.get(DATA_ROOT_ENV)


def load_dataset(root, split) -> DatasetManifest:
    if split not in SPLITS:
        raise ParameterError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(root)
    image_dir = root / "images" / split
    mask_dir = root / "masks" / split
    if not image_dir.is_dir():
        raise DatasetError(f"missing image directory {image_dir}")
    images = sorted(
        (p for p in image_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.relative_to(image_dir).as_posix(),
    )
    entries, missing = [], []
    for img in images:
        rel = img.relative_to(image_dir).with_suffix(".png")
        mask = mask_dir / rel
        entries.append((str(img), str(mask) if mask.is_file() else None))
        if not mask.is_file():
            missing.append(str(img))
    if split == "eval" and missing:
        raise DatasetError(
            f"{len(missing)} eval image(s) lack masks: {', '.join(missing[:5])}", missing
        )
    channels, size = 1, 0
    if entries:
        first = read_image(entries[0][0])
        channels = 1 if first.ndim == 2 else first.shape[2]
        size = first.shape[0]
    return DatasetManifest(str(root), split, entries, channels, size)


def load_arrays(manifest: DatasetManifest, labelled_only=False):
    """Read every entry; returns ``(images, masks)`` with ``None`` for missing masks."""
    images, masks = [], []
    for img, mask in manifest.entries:
        if labelled_only and mask is None:
            continue
        images.append(read_image(img))
        masks.append(None if mask is None else read_mask(mask))
    return images, masks


# -- toy dataset --------------------------------------------------------------------


def render_toy_image(rng: np.random.Generator, mask: np.ndarray, cone_mask: np.ndarray) -> np.ndarray:
    """Speckled ROI brighter than the surrounding cone, over a dark noise background."""
    size = mask.shape[0]
    speckle = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), 1.0)
    speckle /= max(speckle.std(), 1e-8)
    background = 0.06 + 0.03 * rng.normal(0.0, 1.0, (size, size))
    cone_level = rng.uniform(0.28, 0.4)
    roi_level = rng.uniform(0.7, 0.85)
    image = np.where(cone_mask > 0, cone_level + 0.07 * speckle, background)
    image = np.where(mask > 0, roi_level + 0.07 * speckle, image)
    return np.clip(ndimage.gaussian_filter(image, 0.6), 0.0, 1.0)


def make_toy_sample(rng: np.random.Generator, size: int):
    template = sample_template(rng, size, cone=True)
    image = render_toy_image(rng, template.mask, template.cone_mask)
    return image, template.mask, template


def make_toy_dataset(rng: np.random.Generator, count: int, size: int, out, val_count=40, eval_count=40):
    """Write a procedural dataset; train images are unlabelled, val and eval carry masks.

    Returns the manifests keyed by split.
    """
    if count < 1:
        raise ParameterError("count must be >= 1")
    out = Path(out)
    params = {}
    for split, n, labelled in (("train", count, False), ("val", val_count, True), ("eval", eval_count, True)):
        (out / "images" / split).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            image, mask, template = make_toy_sample(rng, size)
            name = f"{split}_{i:04d}.png"
            write_png(out / "images" / split / name, image)
            if labelled:
                write_mask(out / "masks" / split / name, mask)
            params[f"{split}/{name}"] = template.params()
    (out / "toy_manifest.json").write_text(json.dumps(params, indent=1))
    return {split: load_dataset(out, split) for split in SPLITS}
