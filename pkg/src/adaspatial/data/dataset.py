"""Directory ingestion, export and train/validation splitting."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .pnm import PnmError, read_pnm, write_pnm
from .synth import SamplePair

EXTENSIONS = (".pgm", ".ppm")


class DatasetError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _index(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in EXTENSIONS}


def _center_crop(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    top = (arr.shape[-2] - h) // 2
    left = (arr.shape[-1] - w) // 2
    return arr[..., top : top + h, left : left + w]


def load_pair_dir(images_path, masks_path, crop: bool = False) -> list[SamplePair]:
    """Load matching ``<stem>.pgm|ppm`` files from two directories.

    Masks are binarised at 0.5.  Spatial sizes must be multiples of 16
    unless ``crop`` is set, in which case both are center-cropped down.
    All problems are collected and raised together as a DatasetError.
    """
    images, masks = _index(Path(images_path)), _index(Path(masks_path))
    errors = [f"orphan image: {images[s].name}" for s in sorted(set(images) - set(masks))]
    errors += [f"orphan mask: {masks[s].name}" for s in sorted(set(masks) - set(images))]
    pairs = []
    for stem in sorted(set(images) & set(masks)):
        try:
            img = read_pnm(images[stem])
            msk = read_pnm(masks[stem])
        except (PnmError, OSError) as exc:
            errors.append(f"{stem}: {exc}")
            continue
        img = img.transpose(2, 0, 1) if img.ndim == 3 else img[None]
        msk = msk.mean(axis=2) if msk.ndim == 3 else msk
        msk = (msk >= 0.5).astype(np.float64)[None]
        if img.shape[1:] != msk.shape[1:]:
            errors.append(f"{stem}: image {img.shape[1:]} and mask {msk.shape[1:]} differ in size")
            continue
        h, w = img.shape[1:]
        if h % 16 or w % 16:
            if not crop or h < 16 or w < 16:
                errors.append(f"{stem}: size {h}x{w} not divisible by 16")
                continue
            img, msk = _center_crop(img, h - h % 16, w - w % 16), _center_crop(msk, h - h % 16, w - w % 16)
        pairs.append(SamplePair(img, msk, stem))
    if errors:
        raise DatasetError(errors)
    return pairs


def save_pairs(pairs: list[SamplePair], out_dir) -> Path:
    """Write images/ and masks/ plus manifest.json; return the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    manifest = []
    for pair in pairs:
        ext = ".ppm" if pair.image.shape[0] == 3 else ".pgm"
        img_rel = f"images/{pair.id}{ext}"
        msk_rel = f"masks/{pair.id}.pgm"
        img = pair.image.transpose(1, 2, 0) if pair.image.shape[0] == 3 else pair.image[0]
        write_pnm(out / img_rel, img)
        write_pnm(out / msk_rel, pair.mask[0])
        manifest.append({"id": pair.id, "image_path": img_rel, "mask_path": msk_rel, "ratio": pair.ratio})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def is_validation(sample_id: str, seed: int, val_fraction: float = 0.2) -> bool:
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64 < val_fraction


def train_val_split(pairs: list[SamplePair], seed: int, val_fraction: float = 0.2):
    train = [p for p in pairs if not is_validation(p.id, seed, val_fraction)]
    val = [p for p in pairs if is_validation(p.id, seed, val_fraction)]
    return train, val


def stack(pairs: list[SamplePair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.image for p in pairs]), np.stack([p.mask for p in pairs])
