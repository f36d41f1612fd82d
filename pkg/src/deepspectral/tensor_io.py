"""Feature-map serialization, resampling, and color utilities.

The DSFT container holds one dense C x h x w float32 tensor:

    bytes 0-3    magic "DSFT"
    bytes 4-7    version, u32 LE (currently 1)
    bytes 8-11   C, u32 LE
    bytes 12-15  h, u32 LE
    bytes 16-19  w, u32 LE
    bytes 20-23  patch size, u32 LE
    bytes 24-31  reserved, zero
    bytes 32-    C*h*w float32 LE values, row-major [c][y][x]

Little-endian binary32 keeps the format trivially parseable from any
language; round-trips through write/read are bit-exact.
"""

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DSFT_MAGIC = b"DSFT"
DSFT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII8x")


class DsftError(ValueError):
    """Malformed or unreadable DSFT data."""


@dataclass
class FeatureMap:
    """Dense per-patch feature tensor for one image.

    data is float32 with shape (C, h, w) where h, w form the patch grid of
    an image at patch size ``patch_size``. All values must be finite.
    """

    data: np.ndarray
    patch_size: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"feature data must be (C, h, w), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature data contains non-finite values")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {self.patch_size}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def write_feature_map(fm: FeatureMap, destination) -> None:
    """Serialize a FeatureMap to a binary file-like sink or a path."""
    if isinstance(destination, (str, Path)):
        with open(destination, "wb") as fh:
            write_feature_map(fm, fh)
        return
    c, h, w = fm.data.shape
    destination.write(_HEADER.pack(DSFT_MAGIC, DSFT_VERSION, c, h, w, fm.patch_size))
    payload = fm.data.astype("<f4", copy=False)
    destination.write(payload.tobytes(order="C"))


def read_feature_map(source) -> FeatureMap:
    """Parse DSFT bytes from a binary file-like source or a path."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_feature_map(fh)
    if isinstance(source, (bytes, bytearray)):
        return read_feature_map(io.BytesIO(source))

    header = source.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise DsftError(f"truncated header: got {len(header)} of {_HEADER.size} bytes")
    magic, version, c, h, w, patch = _HEADER.unpack(header)
    if magic != DSFT_MAGIC:
        raise DsftError(f"bad magic {magic!r}, expected {DSFT_MAGIC!r}")
    if version != DSFT_VERSION:
        raise DsftError(f"unsupported version {version}")
    count = c * h * w
    raw = source.read(4 * count)
    if len(raw) < 4 * count:
        raise DsftError(f"truncated payload: expected {count} values, got {len(raw) // 4}")
    data = np.frombuffer(raw, dtype="<f4", count=count).reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise DsftError("payload contains non-finite values")
    if patch < 1:
        raise DsftError(f"invalid patch size {patch}")
    return FeatureMap(data=data.copy(), patch_size=patch)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _resample_axis_coords(out_size: int, in_size: int):
    # Pixel-center convention: output sample i lands at (i + 0.5) * in/out - 0.5
    # in input coordinates, clamped so edge samples interpolate within bounds.
    pos = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    pos = np.clip(pos, 0.0, in_size - 1.0)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, in_size - 2) if in_size > 1 else np.zeros_like(lo)
    frac = pos - lo
    return lo, frac


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of a 2-D grid or a (C, h, w) stack of grids.

    Samples are taken at pixel centers (no corner alignment), so constant
    inputs map to constant outputs and identity dims return the input values.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    grid = np.asarray(grid, dtype=np.float64)
    squeeze = grid.ndim == 2
    if squeeze:
        grid = grid[None]
    if grid.ndim != 3 or grid.shape[1] < 1 or grid.shape[2] < 1:
        raise ValueError(f"expected 2-D or (C, h, w) input, got shape {grid.shape}")

    _, h, w = grid.shape
    ylo, yfrac = _resample_axis_coords(out_h, h)
    xlo, xfrac = _resample_axis_coords(out_w, w)
    yhi = np.minimum(ylo + 1, h - 1)
    xhi = np.minimum(xlo + 1, w - 1)

    top = grid[:, ylo[:, None], xlo[None, :]] * (1 - xfrac) + grid[:, ylo[:, None], xhi[None, :]] * xfrac
    bot = grid[:, yhi[:, None], xlo[None, :]] * (1 - xfrac) + grid[:, yhi[:, None], xhi[None, :]] * xfrac
    out = top * (1 - yfrac[:, None]) + bot * yfrac[:, None]
    return out[0] if squeeze else out


def nearest_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resampling with the same pixel-center convention."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    grid = np.asarray(grid)
    h, w = grid.shape[:2]
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return grid[ys[:, None], xs[None, :]]


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resize an (H, W, 3) uint8 image, rounding back to uint8."""
    channels = bilinear_resize(np.moveaxis(img.astype(np.float64), -1, 0), out_h, out_w)
    return np.clip(np.rint(np.moveaxis(channels, 0, -1)), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Color space
# ---------------------------------------------------------------------------

def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone HSV from 8-bit RGB; hue in radians [0, 2pi), s and v in [0, 1].

    Accepts a single (r, g, b) triple or an array with a trailing axis of 3.
    Achromatic pixels get hue 0 by convention.
    """
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    v = np.maximum(np.maximum(r, g), b)
    cmin = np.minimum(np.minimum(r, g), b)
    delta = v - cmin

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)
        hue = np.where(
            delta > 0,
            np.select(
                [v == r, v == g],
                [(g - b) / np.where(delta > 0, delta, 1.0),
                 (b - r) / np.where(delta > 0, delta, 1.0) + 2.0],
                (r - g) / np.where(delta > 0, delta, 1.0) + 4.0,
            ),
            0.0,
        )
    hue = np.mod(hue * (np.pi / 3.0), 2.0 * np.pi)
    return np.stack([hue, s, v], axis=-1)


# ---------------------------------------------------------------------------
# Patch-grid alignment
# ---------------------------------------------------------------------------

def crop_to_patch_multiple(img: np.ndarray, patch_size: int) -> np.ndarray:
    """Crop dims down to multiples of patch_size, discarding right/bottom edges.

    Keeps the top-left origin so patch-grid coordinates stay aligned with
    image coordinates.
    """
    h, w = img.shape[:2]
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} smaller than one {patch_size}px patch")
    return img[: (h // patch_size) * patch_size, : (w // patch_size) * patch_size]


def replicate_pad(seg: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Grow a label grid to target dims by replicating the bottom row and right column."""
    h, w = seg.shape[:2]
    if target_h < h or target_w < w:
        raise ValueError(f"target {target_h}x{target_w} smaller than input {h}x{w}")
    pad = [(0, target_h - h), (0, target_w - w)] + [(0, 0)] * (seg.ndim - 2)
    return np.pad(seg, pad, mode="edge")


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Load a PNG (or any PIL-readable file) as (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def save_mask(mask: np.ndarray, path) -> None:
    """Binary mask to single-channel PNG: 0 background, 255 foreground."""
    Image.fromarray((np.asarray(mask) != 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128)


def save_label_map(labels: np.ndarray, path) -> None:
    """Label grid to single-channel PNG plus a JSON sidecar mapping gray -> label.

    Labels are stored directly as gray levels, so they must fit in 0..255.
    """
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label ids must lie in 0..255 for PNG serialization")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")
    mapping = {str(int(g)): int(g) for g in np.unique(labels)}
    Path(str(path) + ".json").write_text(json.dumps(mapping, indent=2, sort_keys=True))


def load_label_map(path) -> np.ndarray:
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"), dtype=np.int64)
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        mapping = {int(k): int(v) for k, v in json.loads(sidecar.read_text()).items()}
        out = gray.copy()
        for g, label in mapping.items():
            out[gray == g] = label
        return out
    return gray


def save_matte(alpha: np.ndarray, path) -> None:
    """Alpha matte in [0, 1] to 16-bit single-channel PNG."""
    arr = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 65535.0).astype(np.uint16)).save(path, format="PNG")


def load_matte(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    return arr / 65535.0
