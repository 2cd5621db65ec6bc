"""PNG and landmark-text file formats.

Color images are 8-bit RGB PNGs (floats in [0, 1] are scaled by 255 and rounded).
Label maps are 8-bit single-channel PNGs holding class IDs. Landmark files hold
68 lines of ``x y`` decimal text in iBUG order.
"""
from __future__ import annotations

import math
import os

import numpy as np
from PIL import Image

from . import labels as L


class FormatError(ValueError):
    """A file could not be parsed; the message names the file and where parsing stopped."""


def _open_image(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(f"{os.fspath(path)}: not a readable image ({exc})") from exc
    return img


def to_uint8(image) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_rgb_png(path, image) -> None:
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"RGB image must be (H, W, 3), got {a.shape}")
    data = a if a.dtype == np.uint8 else to_uint8(a)
    Image.fromarray(np.ascontiguousarray(data), mode="RGB").save(path, format="PNG")


def read_rgb_png(path) -> np.ndarray:
    """(H, W, 3) float64 in [0, 1]; grayscale and RGBA inputs are converted to RGB."""
    img = _open_image(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_label_png(path, label_map) -> None:
    m = L.validate_label_map(label_map)
    Image.fromarray(np.ascontiguousarray(m, dtype=np.uint8), mode="L").save(path, format="PNG")


def read_label_png(path) -> np.ndarray:
    img = _open_image(path)
    if img.mode not in ("L", "P"):
        raise FormatError(f"{os.fspath(path)}: label map must be a single-channel 8-bit PNG, got mode {img.mode}")
    arr = np.asarray(img, dtype=np.uint8)
    try:
        return L.validate_label_map(arr)
    except L.LabelError as exc:
        raise FormatError(f"{os.fspath(path)}: {exc}") from exc


def format_landmarks(lmk) -> str:
    p = L.validate_landmarks(lmk)
    return "".join(f"{x:.6f} {y:.6f}\n" for x, y in p)


def write_landmarks(path, lmk) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_landmarks(lmk))


def parse_landmarks(text: bytes | str, name: str = "<landmarks>") -> np.ndarray:
    """Parse landmark text. Blank lines are ignored; anything else must be two finite numbers."""
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    rows = []
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), 1):
        line = raw.strip()
        if line:
            fields = line.split()
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                vals = []
            if len(vals) != 2 or not all(math.isfinite(v) for v in vals):
                raise FormatError(f"{name}: line {lineno} (byte offset {offset}): expected two finite "
                                  f"numbers 'x y', got {line[:40].decode('utf-8', 'replace')!r}")
            rows.append(vals)
        offset += len(raw)
    if len(rows) != L.N_LANDMARKS:
        raise FormatError(f"{name}: expected {L.N_LANDMARKS} landmark lines, found {len(rows)} "
                          f"(end of data at byte offset {offset})")
    return np.array(rows, dtype=np.float64)


def read_landmarks(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_landmarks(data, os.fspath(path))


def overlay(render, base, coverage=None, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend ``render`` over ``base``; outside ``coverage`` the base shows through unchanged."""
    r = np.asarray(render, dtype=np.float64)
    b = np.asarray(base, dtype=np.float64)
    if r.shape != b.shape:
        raise ValueError(f"overlay inputs differ in shape: {r.shape} vs {b.shape}")
    out = alpha * r + (1.0 - alpha) * b
    if coverage is not None:
        out = np.where(np.asarray(coverage, dtype=bool)[..., None], out, b)
    return out
