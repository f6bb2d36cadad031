"""8-bit RGB image files <-> float arrays in [0, 1], shaped (3, H, W)."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
IMAGE_SUFFIXES = (".png", ".ppm")


class ImageFormatError(ValueError):
    pass


def _png_header(path: Path) -> tuple[int, int]:
    """(bit depth, colour type) from the IHDR chunk."""
    with open(path, "rb") as f:
        head = f.read(29)
    if len(head) < 29 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: corrupt PNG header")
    depth, colour = struct.unpack(">BB", head[24:26])
    return depth, colour


def _ppm_maxval(path: Path) -> int:
    with open(path, "rb") as f:
        head = f.read(256)
    tokens = []
    for line in head.split(b"\n"):
        line = line.split(b"#", 1)[0]
        tokens += line.split()
        if len(tokens) >= 4:
            break
    if len(tokens) < 4 or tokens[0] not in (b"P3", b"P6"):
        raise ImageFormatError(f"{path}: not an RGB PPM file")
    return int(tokens[3])


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such image")
    suffix = path.suffix.lower()
    if suffix == ".png":
        depth, colour = _png_header(path)
        if depth != 8:
            raise ImageFormatError(f"{path}: unsupported bit depth {depth} (8-bit RGB required)")
        if colour != 2:
            raise ImageFormatError(f"{path}: not an RGB image (PNG colour type {colour})")
    elif suffix == ".ppm":
        maxval = _ppm_maxval(path)
        if maxval != 255:
            raise ImageFormatError(f"{path}: unsupported bit depth (maxval {maxval})")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                raise ImageFormatError(f"{path}: not an RGB image (mode {im.mode})")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def to_bytes(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"expected a (3, H, W) image, got {img.shape}")
    return np.ascontiguousarray(np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0))


def write_image(path, img: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_bytes(img)).save(path)
    return path


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
