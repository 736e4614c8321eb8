"""Stereo image model, PPM/PFM I/O, patch tiling and synthetic scenes.

Images are float64 arrays of shape (channels, height, width) with values in
[0, 1]. Disparity maps are (height, width) float arrays referenced to the left
view.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np


class ImageFormatError(ValueError):
    """Malformed or truncated image file."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class StereoPair:
    left: np.ndarray
    right: np.ndarray
    disparity_gt: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.left.ndim != 3 or self.left.shape[0] not in (1, 3):
            raise ValueError(f"views must be (C, H, W) with C in (1, 3), got {self.left.shape}")
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} views differ in shape")
        if self.disparity_gt is not None and self.disparity_gt.shape != self.left.shape[1:]:
            raise ValueError(
                f"disparity map {self.disparity_gt.shape} does not match view size {self.left.shape[1:]}"
            )

    @property
    def shape(self):
        return self.left.shape

    @property
    def height(self):
        return self.left.shape[1]

    @property
    def width(self):
        return self.left.shape[2]

    def crop(self, top, left, height, width):
        sl = (slice(None), slice(top, top + height), slice(left, left + width))
        disp = None if self.disparity_gt is None else self.disparity_gt[sl[1:]]
        return StereoPair(self.left[sl], self.right[sl], disp)

    def swapped(self):
        return StereoPair(self.right, self.left)


# --------------------------------------------------------------------- PPM/PGM

_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf, magic_expected):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _HEADER_TOKEN.match(buf, pos)
        if m is None:
            raise ImageFormatError("truncated header", pos)
        tokens.append((m.group(1), m.start(1)))
        pos = m.end(1)
    magic, _ = tokens[0]
    if magic not in magic_expected:
        raise ImageFormatError(f"unsupported magic {magic!r}", 0)
    vals = []
    for tok, off in tokens[1:]:
        if not tok.isdigit():
            raise ImageFormatError(f"non-numeric header field {tok!r}", off)
        vals.append(int(tok))
    width, height, maxval = vals
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 supported, got {maxval}", tokens[3][1])
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header", pos)
    return magic, width, height, pos + 1


def load_ppm(path):
    """Read binary P6 (RGB) or P5 (gray) with maxval 255 into a (C, H, W) array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, start = _read_header(buf, (b"P6", b"P5"))
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if len(buf) - start < need:
        raise ImageFormatError(f"truncated payload: need {need} bytes, have {len(buf) - start}", len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    return raw.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64) / 255.0


def to_bytes(img):
    """Quantize [0, 1] floats to 8-bit with round-half-to-even."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_ppm(path, img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (C, H, W) with C in (1, 3), got {img.shape}")
    c, h, w = img.shape
    magic = b"P6" if c == 3 else b"P5"
    payload = to_bytes(img).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h) + payload)


# ------------------------------------------------------------------------- PFM

def save_pfm(path, disp):
    """Single-channel little-endian PFM; rows stored bottom to top."""
    disp = np.asarray(disp, dtype="<f4")
    if disp.ndim != 2:
        raise ValueError(f"PFM disparity must be 2-D, got {disp.shape}")
    h, w = disp.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(disp[::-1]).tobytes())


def load_pfm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    lines = []
    pos = 0
    for _ in range(3):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise ImageFormatError("truncated header", pos)
        lines.append((buf[pos:end].strip(), pos))
        pos = end + 1
    (magic, _), (dims, doff), (scale_s, soff) = lines
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise ImageFormatError(f"unsupported magic {magic!r}", 0)
    try:
        w, h = (int(v) for v in dims.split())
    except ValueError:
        raise ImageFormatError(f"bad dimensions {dims!r}", doff) from None
    try:
        scale = float(scale_s)
    except ValueError:
        raise ImageFormatError(f"bad scale {scale_s!r}", soff) from None
    dtype = "<f4" if scale < 0 else ">f4"
    need = 4 * w * h * channels
    if len(buf) - pos < need:
        raise ImageFormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=w * h * channels, offset=pos)
    data = data.reshape(h, w, channels)[::-1]
    if channels == 1:
        return data[:, :, 0].astype(np.float32)
    return data.transpose(2, 0, 1).astype(np.float32)


def load_pair(prefix):
    """Load ``{prefix}_L.ppm``, ``{prefix}_R.ppm`` and ``{prefix}_disp.pfm`` if present."""
    import os

    disp = None
    if os.path.exists(f"{prefix}_disp.pfm"):
        disp = load_pfm(f"{prefix}_disp.pfm").astype(np.float64)
    return StereoPair(load_ppm(f"{prefix}_L.ppm"), load_ppm(f"{prefix}_R.ppm"), disp)


def save_pair(prefix, pair):
    save_ppm(f"{prefix}_L.ppm", pair.left)
    save_ppm(f"{prefix}_R.ppm", pair.right)
    if pair.disparity_gt is not None:
        save_pfm(f"{prefix}_disp.pfm", pair.disparity_gt)


# --------------------------------------------------------------------- patches

def patch_anchors(length, size, stride):
    """1-D anchors on a regular grid; the last one is clamped to end at the border."""
    if size > length:
        raise ValueError(f"patch size {size} exceeds image extent {length}")
    if stride < 1:
        raise ValueError("stride must be positive")
    anchors = list(range(0, length - size + 1, stride))
    if anchors[-1] + size < length:
        anchors.append(length - size)
    return anchors


def patch_grid(height, width, size=120, stride=None):
    stride = size if stride is None else stride
    return [(r, c) for r in patch_anchors(height, size, stride) for c in patch_anchors(width, size, stride)]


def extract_patches(pair, size=120, stride=None):
    """Crop both views at identical anchors; row-major anchor order."""
    return [pair.crop(r, c, size, size) for r, c in patch_grid(pair.height, pair.width, size, stride)]


# ---------------------------------------------------------------------- scenes

def _texture(rng, channels, height, width):
    """Band-limited random color texture in [0, 1]."""
    out = np.zeros((channels, height, width))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(6):
        fy, fx = rng.uniform(-0.5, 0.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.15, size=(channels, 1, 1))
        out += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    # fine-grained detail: box-smoothed white noise
    noise = rng.standard_normal((channels, height + 2, width + 2))
    noise = sum(noise[:, dy : dy + height, dx : dx + width] for dy in range(3) for dx in range(3)) / 9.0
    out += 0.12 * noise
    base = rng.uniform(0.3, 0.7, size=(channels, 1, 1))
    return np.clip(base + out, 0.0, 1.0)


def gen_scene(seed, width=120, height=120, n_shapes=3, max_disparity=8, channels=3):
    """Textured background plus textured rectangles at integer disparities.

    The right view shows each rectangle shifted left by its disparity; the
    background sits at disparity 0. Rectangles are painted far to near so a
    larger disparity occludes a smaller one in both views.
    """
    if max_disparity >= width / 4:
        raise ValueError(f"max_disparity {max_disparity} must be < width/4 = {width / 4}")
    rng = np.random.default_rng(seed)
    background = _texture(rng, channels, height, width)
    left = background.copy()
    right = background.copy()
    disp = np.zeros((height, width))
    shapes = []
    for _ in range(n_shapes):
        d = int(rng.integers(1, max_disparity + 1))
        h = int(rng.integers(height // 6, height // 2))
        w = int(rng.integers(width // 6, width // 2))
        top = int(rng.integers(0, height - h + 1))
        x0 = int(rng.integers(d, width - w + 1))
        shapes.append((d, top, x0, h, w, _texture(rng, channels, h, w)))
    shapes.sort(key=lambda s: s[0])
    for d, top, x0, h, w, tex in shapes:
        left[:, top : top + h, x0 : x0 + w] = tex
        right[:, top : top + h, x0 - d : x0 - d + w] = tex
        disp[top : top + h, x0 : x0 + w] = d
    # quantize to the 8-bit grid so file round-trips are exact
    left = to_bytes(left) / 255.0
    right = to_bytes(right) / 255.0
    return StereoPair(left, right, disp)


def gen_rect_scene(seed, width, height, rect, disparity, channels=3):
    """Single-rectangle scene: ``rect`` = (top, left, h, w) in the left view."""
    rng = np.random.default_rng(seed)
    background = _texture(rng, channels, height, width)
    top, x0, h, w = rect
    if x0 - disparity < 0:
        raise ValueError("rectangle would leave the right view")
    tex = _texture(rng, channels, h, w)
    left = background.copy()
    right = background.copy()
    left[:, top : top + h, x0 : x0 + w] = tex
    right[:, top : top + h, x0 - disparity : x0 - disparity + w] = tex
    disp = np.zeros((height, width))
    disp[top : top + h, x0 : x0 + w] = disparity
    return StereoPair(to_bytes(left) / 255.0, to_bytes(right) / 255.0, disp)
