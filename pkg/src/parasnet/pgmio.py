"""Binary PGM (P5) reading and writing plus the on-disk dataset layout.

A dataset directory holds one subdirectory per class, each containing
zero-padded NNNNN.pgm files, and a manifest.json recording the counts,
the image size, the generator version and the master seed. Files at
exactly twice the manifest resolution are averaged down 2x2 on read,
so full-resolution captures and pre-scaled images can be mixed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import CLASS_NAMES, NUM_CLASSES

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def write_pgm(path: str, image: np.ndarray) -> None:
    """Store a float image in [0, 1] as an 8-bit binary PGM."""
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {image.shape}")
    if image.size == 0:
        raise ValueError("refusing to write an empty image")
    lo, hi = float(image.min()), float(image.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"pixel values must lie in [0, 1], found [{lo}, {hi}]")
    h, w = image.shape
    pixels = np.rint(image * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def _read_header_token(blob: bytes, pos: int, path: str) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ValueError(f"{path}: header ended early")
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def read_pgm(path: str) -> np.ndarray:
    """Load a binary PGM as float32 in [0, 1]. Only maxval 255 is accepted."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {blob[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(blob, pos, path)
        try:
            fields.append(int(token))
        except ValueError:
            raise ValueError(f"{path}: bad header token {token!r}") from None
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported, expected 255")
    if w < 1 or h < 1:
        raise ValueError(f"{path}: bad dimensions {w}x{h}")
    pos += 1  # the single whitespace byte after maxval
    expected = w * h
    data = blob[pos : pos + expected]
    if len(data) != expected:
        raise ValueError(
            f"{path}: pixel data truncated, expected {expected} bytes, "
            f"found {len(data)}"
        )
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float32) / 255.0


def downscale_2x2(image: np.ndarray) -> np.ndarray:
    """Average non-overlapping 2x2 blocks. Both sides must be even."""
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {image.shape}")
    h, w = image.shape
    if h % 2 or w % 2:
        raise ValueError(f"dimensions {h}x{w} are not divisible by 2")
    return image.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3)).astype(image.dtype)


def write_dataset(
    root: str,
    images: np.ndarray,
    labels: np.ndarray,
    master_seed: int,
    extra: dict | None = None,
) -> None:
    """Write images into the class-directory layout with a manifest."""
    if len(images) != len(labels):
        raise ValueError("images and labels disagree in length")
    h, w = images.shape[1:3]
    counts = [0] * NUM_CLASSES
    os.makedirs(root, exist_ok=True)
    for name in CLASS_NAMES:
        os.makedirs(os.path.join(root, name), exist_ok=True)
    for image, label in zip(images, labels):
        name = CLASS_NAMES[int(label)]
        index = counts[int(label)]
        counts[int(label)] += 1
        write_pgm(os.path.join(root, name, f"{index:05d}.pgm"), image)
    manifest = {
        "version": MANIFEST_VERSION,
        "height": int(h),
        "width": int(w),
        "master_seed": int(master_seed),
        "counts": {name: counts[i] for i, name in enumerate(CLASS_NAMES)},
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(root, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(root: str) -> dict:
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("version", "height", "width", "counts"):
        if key not in manifest:
            raise ValueError(f"{path}: manifest missing {key!r}")
    if manifest["version"] != MANIFEST_VERSION:
        raise ValueError(
            f"{path}: manifest version {manifest['version']}, "
            f"expected {MANIFEST_VERSION}"
        )
    return manifest


def read_dataset(root: str) -> tuple[np.ndarray, np.ndarray]:
    """Load every image listed in the manifest, in class then index order.

    Returns (images, labels) with images shaped (N, height, width, 1).
    Files at twice the manifest resolution are downscaled on the fly.
    """
    manifest = read_manifest(root)
    h, w = manifest["height"], manifest["width"]
    images = []
    labels = []
    for label, name in enumerate(CLASS_NAMES):
        count = int(manifest["counts"].get(name, 0))
        for index in range(count):
            path = os.path.join(root, name, f"{index:05d}.pgm")
            if not os.path.exists(path):
                raise FileNotFoundError(
                    f"manifest promises {count} {name} images but {path} is missing"
                )
            img = read_pgm(path)
            if img.shape == (2 * h, 2 * w):
                img = downscale_2x2(img)
            elif img.shape != (h, w):
                raise ValueError(
                    f"{path}: got {img.shape[1]}x{img.shape[0]}, expected "
                    f"{w}x{h} or {2 * w}x{2 * h}"
                )
            images.append(img[:, :, None])
            labels.append(label)
    if not images:
        raise ValueError(f"{root}: manifest lists no images")
    return np.stack(images), np.array(labels, dtype=np.int64)
