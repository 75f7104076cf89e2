"""Datasets: synthetic vessel patches, directory ingestion, augmentation,
patch extraction, and patient-grouped splitting.

The synthetic generator draws a smooth dark band (a simulated vessel) over a
noisy bright background; positives carry a localized width constriction of
40-70% and differ from negatives in nothing else. Every sample records its
width profile at generation time, so a width-ratio oracle can re-derive the
label independently of any model.

All resampling (rotation, zoom, resize) is bilinear with clamped border
coordinates and half-pixel-center alignment, chosen once so that pipelines
reproduce bit for bit. Pixels live in [0,1] before normalization;
`normalize` applies the fixed map (x - 0.5) / 0.5.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, StructureError

log = logging.getLogger(__name__)

SOURCES = ("synthetic", "directory")


@dataclass
class Sample:
    image: np.ndarray  # [C,H,W] float64 in [0,1]
    label: int
    patient_id: str
    source: str = "synthetic"

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim == 2:
            self.image = self.image[None]
        if self.image.ndim != 3:
            raise StructureError(f"sample image must be [C,H,W], got {self.image.shape}")
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")
        if self.source not in SOURCES:
            raise DataError(f"source must be one of {SOURCES}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    group_by_patient: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0,1), got {self.train_fraction}")


@dataclass(frozen=True)
class AugmentPolicy:
    rotate_max_deg: float = 5.0
    flip_h: bool = True
    translate_max_frac: float = 0.02
    scale_range: tuple[float, float] = (0.95, 1.05)
    brightness_delta: float = 0.02
    crop_frac: float = 0.0
    color_jitter: float = 0.0
    positives_only: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        lo, hi = self.scale_range
        if not 0.0 < lo <= 1.0 <= hi:
            raise ConfigError(f"scale_range must straddle 1.0, got {self.scale_range}")
        for name in ("rotate_max_deg", "translate_max_frac", "brightness_delta",
                     "crop_frac", "color_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.crop_frac >= 1.0:
            raise ConfigError("crop_frac must leave a non-empty crop")

    def is_identity(self) -> bool:
        return (self.rotate_max_deg == 0 and not self.flip_h and self.translate_max_frac == 0
                and self.scale_range == (1.0, 1.0) and self.brightness_delta == 0
                and self.crop_frac == 0 and self.color_jitter == 0)


IDENTITY_POLICY = AugmentPolicy(rotate_max_deg=0.0, flip_h=False, translate_max_frac=0.0,
                                scale_range=(1.0, 1.0), brightness_delta=0.0, crop_frac=0.0,
                                color_jitter=0.0, positives_only=False)


# ---------------------------------------------------------------------------
# bilinear sampling primitives


def _bilinear_gather(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img[C,H,W] at float coords (clamped at the borders)."""
    c, h, w = img.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    y0i = np.clip(y0.astype(int), 0, h - 1)
    y1i = np.clip(y0.astype(int) + 1, 0, h - 1)
    x0i = np.clip(x0.astype(int), 0, w - 1)
    x1i = np.clip(x0.astype(int) + 1, 0, w - 1)
    top = img[:, y0i, x0i] * (1 - wx) + img[:, y0i, x1i] * wx
    bot = img[:, y1i, x0i] * (1 - wx) + img[:, y1i, x1i] * wx
    return top * (1 - wy) + bot * wy


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        out = img.copy()
    else:
        ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
        xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
        out = _bilinear_gather(img, *np.meshgrid(ys, xs, indexing="ij"))
    return out[0] if squeeze else out


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    c, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = np.deg2rad(degrees)
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dy, dx = gy - cy, gx - cx
    ys = cy + np.cos(rad) * dy - np.sin(rad) * dx
    xs = cx + np.sin(rad) * dy + np.cos(rad) * dx
    return _bilinear_gather(img, ys, xs)


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


def translate_image(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    c, h, w = img.shape
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    return _bilinear_gather(img, gy - dy, gx - dx)


def zoom_image(img: np.ndarray, factor: float) -> np.ndarray:
    c, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    return _bilinear_gather(img, (gy - cy) / factor + cy, (gx - cx) / factor + cx)


def crop_resize(img: np.ndarray, keep_frac: float, top_frac: float, left_frac: float) -> np.ndarray:
    c, h, w = img.shape
    ch = max(1, int(round(h * keep_frac)))
    cw = max(1, int(round(w * keep_frac)))
    if ch < 1 or cw < 1:
        raise ConfigError("crop produced an empty image")
    top = int(round((h - ch) * top_frac))
    left = int(round((w - cw) * left_frac))
    return resize(img[:, top:top + ch, left:left + cw], h, w)


# ---------------------------------------------------------------------------
# augmentation


def augment(sample: Sample, policy: AugmentPolicy, rng: np.random.Generator) -> Sample:
    """rotate -> flip -> translate -> scale -> brightness -> crop -> jitter.

    Each stage is skipped outright when its range is zero, so the all-zero
    policy is exactly the identity. Labels and patient ids pass through
    untouched; positives_only returns negatives as-is.
    """
    if policy.positives_only and sample.label == 0:
        return sample
    img = sample.image
    h, w = img.shape[1:]
    if policy.rotate_max_deg > 0:
        img = rotate_image(img, float(rng.uniform(-policy.rotate_max_deg, policy.rotate_max_deg)))
    if policy.flip_h and rng.random() < 0.5:
        img = flip_horizontal(img)
    if policy.translate_max_frac > 0:
        dy = float(rng.uniform(-policy.translate_max_frac, policy.translate_max_frac)) * h
        dx = float(rng.uniform(-policy.translate_max_frac, policy.translate_max_frac)) * w
        img = translate_image(img, dy, dx)
    if policy.scale_range != (1.0, 1.0):
        img = zoom_image(img, float(rng.uniform(*policy.scale_range)))
    if policy.brightness_delta > 0:
        img = img + float(rng.uniform(-policy.brightness_delta, policy.brightness_delta))
    if policy.crop_frac > 0:
        keep = 1.0 - float(rng.uniform(0.0, policy.crop_frac))
        img = crop_resize(img, keep, float(rng.random()), float(rng.random()))
    if policy.color_jitter > 0:
        factors = rng.uniform(1 - policy.color_jitter, 1 + policy.color_jitter, size=img.shape[0])
        img = img * factors[:, None, None]
    if img is sample.image:
        return sample
    return replace(sample, image=np.clip(img, 0.0, 1.0))


# ---------------------------------------------------------------------------
# synthetic vessel patches


def _render_band(size: int, rng: np.random.Generator, constrict: bool):
    """One patch plus its band width profile.

    The band follows a smooth sinusoid-perturbed path crossing the whole
    patch; a positive multiplies the width by a localized Gaussian dip of
    depth 0.4-0.7. Background brightness/noise draws are identical for both
    classes, so only the constriction separates them.
    """
    m = 160  # centerline samples
    t = np.linspace(0.0, 1.0, m)
    main = t * (size + 8) - 4.0
    center = size / 2.0 + rng.uniform(-0.12, 0.12) * size
    amp1 = rng.uniform(0.03, 0.10) * size
    amp2 = rng.uniform(0.01, 0.05) * size
    ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
    across = center + amp1 * np.sin(np.pi * t + ph1) + amp2 * np.sin(2 * np.pi * t + ph2)

    base_width = rng.uniform(0.14, 0.19) * size
    phw = rng.uniform(0, 2 * np.pi)
    widths = base_width * (1.0 + 0.05 * np.sin(2 * np.pi * t + phw))
    if constrict:
        depth = rng.uniform(0.4, 0.7)
        t0 = rng.uniform(0.3, 0.7)
        sigma = rng.uniform(0.10, 0.18)
        widths = widths * (1.0 - depth * np.exp(-((t - t0) / sigma) ** 2))

    if rng.random() < 0.5:  # half the patches run horizontally
        py, px = across, main
    else:
        py, px = main, across

    bg = rng.uniform(0.80, 0.86)
    tilt_y, tilt_x = rng.uniform(-0.04, 0.04, size=2)
    band_dark = rng.uniform(0.24, 0.30)
    noise = rng.normal(0.0, 0.02, size=(size, size))

    gy, gx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64),
                         indexing="ij")
    d2 = (gy.ravel()[:, None] - py[None, :]) ** 2 + (gx.ravel()[:, None] - px[None, :]) ** 2
    nearest = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(d2.shape[0]), nearest]).reshape(size, size)
    half = (widths[nearest] / 2.0).reshape(size, size)
    edge = np.clip((dist - half) / 1.2 + 0.5, 0.0, 1.0)  # soft band edge, ~1px

    field = bg + tilt_y * (gy - size / 2) / size + tilt_x * (gx - size / 2) / size
    img = band_dark + (field - band_dark) * edge + noise
    return np.clip(img, 0.0, 1.0)[None], widths


def width_ratio(widths: np.ndarray) -> float:
    """Constriction statistic: min width over median width."""
    return float(np.min(widths) / np.median(widths))


def oracle_label(widths: np.ndarray, threshold: float = 0.7) -> int:
    """Model-free label from the band geometry the generator wrote down."""
    return int(width_ratio(widths) < threshold)


def synthesize_with_profiles(n_per_class: int, patch_size: int,
                             seed: int) -> tuple[list[Sample], list[np.ndarray]]:
    """Alternating negative/positive patches; pure function of its arguments.

    Patient ids come in blocks of 10 consecutive samples (5 per class), so
    grouped splitting has real work to do.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    if patch_size < 16:
        raise ConfigError(f"patch_size must be >= 16, got {patch_size}")
    samples: list[Sample] = []
    profiles: list[np.ndarray] = []
    for i in range(2 * n_per_class):
        label = i % 2
        rng = np.random.default_rng([seed, 71, i])
        img, widths = _render_band(patch_size, rng, constrict=bool(label))
        samples.append(Sample(img, label, patient_id=f"synth{i // 10:04d}"))
        profiles.append(widths)
    return samples, profiles


def synthesize_dataset(n_per_class: int, patch_size: int, seed: int) -> list[Sample]:
    return synthesize_with_profiles(n_per_class, patch_size, seed)[0]


# ---------------------------------------------------------------------------
# patch extraction from annotated frames


def extract_patches(image: np.ndarray, annotations: list[tuple[int, int]], patch_size: int,
                    patient_id: str = "") -> list[Sample]:
    """Positive patch per annotated center; negatives from the surrounding
    annulus (radius patch_size..2*patch_size, placed at 1.5x on 8 compass
    directions), skipping any candidate whose box overlaps a positive box.
    Boxes clipped by the frame border are kept only if at least 3/4 of the
    nominal extent survives in both axes, then resampled to patch_size^2.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise StructureError(f"expected [H,W] or [C,H,W] image, got shape {image.shape}")
    h, w = img.shape[1:]
    if not annotations:
        log.warning("extract_patches: empty annotation list, no patches produced")
        return []
    for cy, cx in annotations:
        if not (0 <= cy < h and 0 <= cx < w):
            raise StructureError(f"annotation ({cy},{cx}) outside {h}x{w} image")

    min_keep = int(np.ceil(0.75 * patch_size))

    def cut(cy: float, cx: float) -> np.ndarray | None:
        half = patch_size / 2.0
        top, bot = int(round(cy - half)), int(round(cy + half))
        left, right = int(round(cx - half)), int(round(cx + half))
        ctop, cbot = max(top, 0), min(bot, h)
        cleft, cright = max(left, 0), min(right, w)
        if cbot - ctop < min_keep or cright - cleft < min_keep:
            return None
        return resize(img[:, ctop:cbot, cleft:cright], patch_size, patch_size)

    out: list[Sample] = []
    for cy, cx in annotations:
        patch = cut(cy, cx)
        if patch is not None:
            out.append(Sample(patch, 1, patient_id, source="directory"))

    radius = 1.5 * patch_size
    angles = np.deg2rad(np.arange(0, 360, 45))
    for cy, cx in annotations:
        for ang in angles:
            ny, nx = cy + radius * np.sin(ang), cx + radius * np.cos(ang)
            if any(abs(ny - ay) < patch_size and abs(nx - ax) < patch_size
                   for ay, ax in annotations):
                continue
            if not (0 <= ny < h and 0 <= nx < w):
                continue
            patch = cut(ny, nx)
            if patch is not None:
                out.append(Sample(patch, 0, patient_id, source="directory"))
    return out


# ---------------------------------------------------------------------------
# splitting


def split(samples: list[Sample], spec: SplitSpec) -> tuple[list[Sample], list[Sample]]:
    """Deterministic train/test partition; grouped mode keeps patients whole."""
    if not samples:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng([spec.seed, 929])
    if spec.group_by_patient:
        patients = list(dict.fromkeys(s.patient_id for s in samples))
        if len(patients) < 2:
            raise ConfigError("grouped split needs at least 2 distinct patients")
        order = [patients[i] for i in rng.permutation(len(patients))]
        n_train = int(np.clip(round(spec.train_fraction * len(patients)), 1, len(patients) - 1))
        train_ids = set(order[:n_train])
        train = [s for s in samples if s.patient_id in train_ids]
        test = [s for s in samples if s.patient_id not in train_ids]
    else:
        order = rng.permutation(len(samples))
        n_train = int(np.clip(round(spec.train_fraction * len(samples)), 1, len(samples) - 1))
        train = [samples[i] for i in order[:n_train]]
        test = [samples[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# directory ingestion and export


def _to_channels(arr: np.ndarray, channels: int) -> np.ndarray:
    """uint8 [H,W] or [H,W,3] -> float64 [channels,H,W] in [0,1]."""
    img = arr.astype(np.float64) / 255.0
    if img.ndim == 2:
        img = img[None]
    elif img.ndim == 3:
        img = img.transpose(2, 0, 1)
        if img.shape[0] == 4:  # drop alpha
            img = img[:3]
    else:
        raise DataError(f"unsupported image array shape {arr.shape}")
    if img.shape[0] == channels:
        return img
    if img.shape[0] == 1:
        return np.repeat(img, channels, axis=0)
    if channels == 1:
        return img.mean(axis=0, keepdims=True)
    raise DataError(f"cannot map {img.shape[0]}-channel image to {channels} channels")


def load_directory(root_path, channels: int = 1) -> list[Sample]:
    """Read root/{positive,negative}/<patient>/*.png into samples.

    Unreadable files are skipped with a warning; an empty class directory is
    an error. Emits a per-class count report through logging.
    """
    from PIL import Image

    root = Path(root_path)
    samples: list[Sample] = []
    n_warnings = 0
    for class_name, label in (("negative", 0), ("positive", 1)):
        class_dir = root / class_name
        if not class_dir.is_dir():
            raise DataError(f"missing class directory {class_dir}")
        count = 0
        for png in sorted(class_dir.rglob("*.png")):
            patient = png.parent.name if png.parent != class_dir else "unknown"
            try:
                with Image.open(png) as im:
                    arr = np.asarray(im.convert(im.mode if im.mode in ("L", "RGB") else "RGB"))
                samples.append(Sample(_to_channels(arr, channels), label, patient,
                                      source="directory"))
                count += 1
            except Exception as exc:  # truncated/corrupt file: skip, keep going
                n_warnings += 1
                log.warning("skipping unreadable image %s: %s", png, exc)
        if count == 0:
            raise DataError(f"class directory {class_dir} contains no readable png files")
        log.info("loaded %d %s samples from %s", count, class_name, class_dir)
    if n_warnings:
        log.warning("load_directory finished with %d warnings", n_warnings)
    return samples


def export_dataset(samples: list[Sample], root_path, split_of: dict[int, str] | None = None,
                   ) -> list[dict[str, str]]:
    """Write samples as PNGs in the load_directory layout; returns manifest rows
    (path, label, patient_id, split)."""
    from PIL import Image

    root = Path(root_path)
    rows: list[dict[str, str]] = []
    counters: dict[str, int] = {}
    for idx, sample in enumerate(samples):
        class_name = "positive" if sample.label == 1 else "negative"
        folder = root / class_name / sample.patient_id
        folder.mkdir(parents=True, exist_ok=True)
        key = f"{class_name}/{sample.patient_id}"
        counters[key] = counters.get(key, 0) + 1
        path = folder / f"{counters[key]:04d}.png"
        img = np.clip(np.round(sample.image * 255.0), 0, 255).astype(np.uint8)
        if img.shape[0] == 1:
            Image.fromarray(img[0], mode="L").save(path)
        else:
            Image.fromarray(img.transpose(1, 2, 0), mode="RGB").save(path)
        rows.append({
            "path": str(path.relative_to(root)),
            "label": str(sample.label),
            "patient_id": sample.patient_id,
            "split": (split_of or {}).get(idx, ""),
        })
    return rows


def write_manifest(rows: list[dict[str, str]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["path", "label", "patient_id", "split"])
        writer.writeheader()
        writer.writerows(rows)


def expand_positives(samples: list[Sample], copies: int, policy: AugmentPolicy,
                     seed: int) -> list[Sample]:
    """Offline positive-class expansion: append `copies` augmented variants of
    every positive sample (the class-imbalance countermeasure applied as a
    preprocessing step rather than online)."""
    if copies < 0:
        raise ConfigError("copies must be >= 0")
    out = list(samples)
    for idx, sample in enumerate(samples):
        if sample.label != 1:
            continue
        for k in range(copies):
            rng = np.random.default_rng([seed, 557, idx, k])
            out.append(augment(sample, replace(policy, positives_only=True), rng))
    return out


# ---------------------------------------------------------------------------
# model input preparation


def normalize(images: np.ndarray) -> np.ndarray:
    """Fixed input normalization: [0,1] pixels -> (x - 0.5) / 0.5."""
    return (np.asarray(images, dtype=np.float64) - 0.5) / 0.5


def to_batch(samples: list[Sample], input_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into a normalized [N,C,H,W] batch plus label vector,
    resizing any sample whose spatial size differs from input_size."""
    imgs = []
    for s in samples:
        img = s.image
        if img.shape[1] != input_size or img.shape[2] != input_size:
            img = resize(img, input_size, input_size)
        imgs.append(img)
    x = normalize(np.stack(imgs))
    y = np.array([s.label for s in samples], dtype=np.float64)
    return x, y
