"""Synthetic infrared small-target data plus on-disk dataset I/O.

A dataset directory holds ``images/*.pgm`` and ``masks/*.pgm`` (binary P5,
shared basenames, masks strictly {0, 255}) and a ``manifest.json`` caching
ids and the train/test split.  The synthetic generator is fully determined
by (seed, index): smoothed-noise background with a low-frequency gradient,
and Gaussian-profile targets thresholded at half amplitude into the mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PgmFormatError(ValueError):
    """Malformed or unsupported PGM content."""


@dataclass
class Sample:
    id: str
    image: np.ndarray  # [H, W] uint8
    mask: np.ndarray   # [H, W] uint8 in {0, 1}


@dataclass
class SynthConfig:
    h: int = 64
    w: int = 64
    targets_per_image: tuple[int, int] = (1, 3)
    target_radius: tuple[float, float] = (1.0, 4.0)
    contrast: tuple[float, float] = (0.2, 0.8)
    clutter_smoothness: int = 4
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.h < 16 or self.w < 16:
            raise ValueError("synthetic images must be at least 16x16")
        lo, hi = self.targets_per_image
        if not (1 <= lo <= hi):
            raise ValueError("targets_per_image range must satisfy 1 <= lo <= hi")
        rlo, rhi = self.target_radius
        if not (0.5 <= rlo <= rhi) or rhi * 4 >= min(self.h, self.w) / 2:
            raise ValueError("target radius range out of bounds for the image size")
        clo, chi = self.contrast
        if not (0.0 <= clo <= chi <= 1.0):
            raise ValueError("contrast range must sit inside [0, 1]")
        return self


def _box_blur(img: np.ndarray, k: int) -> np.ndarray:
    """Separable k x k mean filter (edge-padded), applied via cumulative sums."""
    if k <= 1:
        return img
    pad = k // 2
    for axis in (0, 1):
        padded = np.pad(img, [(pad, k - 1 - pad) if ax == axis else (0, 0) for ax in range(2)],
                        mode="edge")
        csum = np.cumsum(padded, axis=axis)
        zero = np.zeros_like(np.take(csum, [0], axis=axis))
        csum = np.concatenate([zero, csum], axis=axis)
        hi = np.take(csum, range(k, csum.shape[axis]), axis=axis)
        lo = np.take(csum, range(0, csum.shape[axis] - k), axis=axis)
        img = (hi - lo) / k
    return img


def generate_sample(cfg: SynthConfig, index: int) -> Sample:
    """Deterministic synthetic sample for (cfg.seed, index)."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    h, w = cfg.h, cfg.w

    background = _box_blur(rng.random((h, w)), cfg.clutter_smoothness)
    gy, gx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    angle = rng.uniform(0, 2 * np.pi)
    background = 0.30 + 0.25 * (background - background.mean()) \
        + 0.15 * (np.cos(angle) * gx + np.sin(angle) * gy)

    mask = np.zeros((h, w), dtype=np.uint8)
    image = background
    n_targets = int(rng.integers(cfg.targets_per_image[0], cfg.targets_per_image[1] + 1))
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    centers: list[tuple[float, float, float]] = []
    for _ in range(n_targets):
        for _attempt in range(64):
            radius = rng.uniform(*cfg.target_radius)
            margin = 3 * radius + 2
            cy = rng.uniform(margin, h - margin)
            cx = rng.uniform(margin, w - margin)
            if all(np.hypot(cy - oy, cx - ox) > 2 * (radius + orad) + 4
                   for oy, ox, orad in centers):
                break
        else:
            continue
        centers.append((cy, cx, radius))
        contrast = rng.uniform(*cfg.contrast)
        dist2 = (yy - cy) ** 2 + (xx - cx) ** 2
        sigma2 = radius * radius / (2.0 * np.log(2.0))  # half-max exactly at `radius`
        image = image + contrast * np.exp(-dist2 / (2.0 * sigma2))
        mask |= (dist2 <= radius * radius).astype(np.uint8)

    image_u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    return Sample(id=f"synth_{index:05d}", image=image_u8, mask=mask)


# --------------------------------------------------------------------------
# PGM (binary P5)

def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise PgmFormatError("write_pgm expects a 2D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] == b"P2":
        raise PgmFormatError(f"{path}: ASCII PGM (P2) is not supported, use binary P5")
    if raw[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a PGM file")
    # header: magic, width, height, maxval, separated by whitespace/comments
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmFormatError(f"{path}: truncated header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise PgmFormatError(f"{path}: malformed header token {raw[start:pos]!r}") from None
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise PgmFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    payload = raw[pos:pos + h * w]
    if len(payload) != h * w:
        raise PgmFormatError(f"{path}: truncated payload ({len(payload)} of {h * w} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# --------------------------------------------------------------------------
# datasets on disk

@dataclass
class Manifest:
    samples: list[dict]
    split: dict
    seed: int

    def to_dict(self) -> dict:
        return {"schema": "mimnet-manifest/1", "samples": self.samples,
                "split": self.split, "seed": self.seed}


def dataset_split(ids, train_fraction: float = 0.8, seed: int = 0) -> tuple[list[str], list[str]]:
    """Deterministic shuffled split into disjoint, exhaustive train/test ids."""
    ids = sorted(ids)
    if len(ids) < 2:
        raise ValueError("dataset_split needs at least 2 samples")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be inside (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(len(ids) * train_fraction)
    n_train = min(max(n_train, 1), len(ids) - 1)
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


def generate_dataset(cfg: SynthConfig, count: int, out_dir, train_fraction: float = 0.8) -> Manifest:
    """Write ``count`` synthetic samples plus a manifest caching the split."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for index in range(count):
        sample = generate_sample(cfg, index)
        write_pgm(out_dir / "images" / f"{sample.id}.pgm", sample.image)
        write_pgm(out_dir / "masks" / f"{sample.id}.pgm", sample.mask * 255)
        entries.append({"id": sample.id,
                        "image": f"images/{sample.id}.pgm",
                        "mask": f"masks/{sample.id}.pgm"})
    train, test = dataset_split([e["id"] for e in entries], train_fraction, cfg.seed)
    manifest = Manifest(samples=entries, split={"train": train, "test": test}, seed=cfg.seed)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def _resize(img: np.ndarray, size: int, method: str) -> np.ndarray:
    h, w = img.shape
    if (h, w) == (size, size):
        return img
    src_y = (np.arange(size) + 0.5) * (h / size) - 0.5
    src_x = (np.arange(size) + 0.5) * (w / size) - 0.5
    if method == "nearest":
        iy = np.clip(np.round(src_y), 0, h - 1).astype(np.intp)
        ix = np.clip(np.round(src_x), 0, w - 1).astype(np.intp)
        return img[iy[:, None], ix[None, :]]
    if method == "bilinear":
        src_y = np.clip(src_y, 0, h - 1)
        src_x = np.clip(src_x, 0, w - 1)
        y0 = np.floor(src_y).astype(np.intp)
        x0 = np.floor(src_x).astype(np.intp)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        fy = (src_y - y0)[:, None]
        fx = (src_x - x0)[None, :]
        img_f = img.astype(np.float64)
        out = (img_f[y0[:, None], x0[None, :]] * (1 - fy) * (1 - fx)
               + img_f[y0[:, None], x1[None, :]] * (1 - fy) * fx
               + img_f[y1[:, None], x0[None, :]] * fy * (1 - fx)
               + img_f[y1[:, None], x1[None, :]] * fy * fx)
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    raise ValueError(f"unknown resize method: {method!r}")


def load_dataset(data_dir, resize_to: int | None = None, resize_method: str = "bilinear") -> list[Sample]:
    """Read every image/mask pair, sorted by id; optionally resize to a square.

    Masks are always resized with nearest-neighbor so they stay binary.
    """
    data_dir = Path(data_dir)
    image_dir = data_dir / "images"
    mask_dir = data_dir / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise FileNotFoundError(f"{data_dir} lacks images/ and masks/ subdirectories")
    samples = []
    for image_path in sorted(image_dir.glob("*.pgm")):
        sid = image_path.stem
        mask_path = mask_dir / image_path.name
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask for sample {sid}")
        image = read_pgm(image_path)
        mask_raw = read_pgm(mask_path)
        bad = np.setdiff1d(np.unique(mask_raw), [0, 255])
        if bad.size:
            raise PgmFormatError(f"{mask_path}: mask values must be 0 or 255, found {bad.tolist()}")
        if image.shape != mask_raw.shape:
            raise PgmFormatError(f"sample {sid}: image {image.shape} vs mask {mask_raw.shape}")
        if resize_to is not None:
            image = _resize(image, resize_to, resize_method)
            mask_raw = _resize(mask_raw, resize_to, "nearest")
        samples.append(Sample(id=sid, image=image, mask=(mask_raw > 0).astype(np.uint8)))
    if not samples:
        raise FileNotFoundError(f"no .pgm images found under {image_dir}")
    return samples


def load_manifest(data_dir) -> Manifest:
    data = json.loads((Path(data_dir) / "manifest.json").read_text())
    return Manifest(samples=data["samples"], split=data["split"], seed=data.get("seed", 0))


def to_model_input(samples: list[Sample], dtype=np.float64) -> np.ndarray:
    """Stack samples into [B, 3, H, W] floats in [0, 1] (grayscale replicated)."""
    imgs = np.stack([s.image for s in samples]).astype(dtype) / 255.0
    return np.repeat(imgs[:, None, :, :], 3, axis=1)


def to_mask_batch(samples: list[Sample], dtype=np.float64) -> np.ndarray:
    return np.stack([s.mask for s in samples]).astype(dtype)
