"""Dataset I/O and image utilities.

Reads the classic big-endian IDX files (plain or gzipped) and scales
pixels to [0, 1]. When no real digit files are available the module can
render a deterministic stand-in corpus of font-drawn digits with pose and
noise jitter, written in the same IDX format so every loader and pipeline
runs unchanged; point PCGRAPH_DATA_DIR at real files to use them instead.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    """Raised for bad magic numbers, truncation, or count mismatches."""


@dataclass
class ImageDataset:
    images: np.ndarray  # (m, rows*cols) float64 in [0, 1]
    labels: np.ndarray  # (m,) int64
    rows: int = 28
    cols: int = 28
    source: str = "idx"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise IdxFormatError(
                f"images {self.images.shape} do not pair with labels {self.labels.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, m: int, seed: int | None = None) -> "ImageDataset":
        if seed is None:
            idx = np.arange(min(m, len(self)))
        else:
            idx = np.random.default_rng(seed).permutation(len(self))[:m]
        return ImageDataset(self.images[idx], self.labels[idx],
                            self.rows, self.cols, self.source)


def _open_maybe_gz(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, path) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise IdxFormatError(f"{path}: truncated (wanted {count} bytes, got {len(buf)})")
    return buf


def _read_header(fh, path, magic_want: int, ndim: int) -> tuple:
    raw = _read_exact(fh, 4 * (1 + ndim), path)
    words = struct.unpack(f">{1 + ndim}l", raw)
    if words[0] != magic_want:
        raise IdxFormatError(f"{path}: bad magic {words[0]} (expected {magic_want})")
    return words[1:]


def load_idx(images_path, labels_path) -> ImageDataset:
    """Load paired image/label IDX files into an ImageDataset."""
    with _open_maybe_gz(images_path) as fh:
        m, rows, cols = _read_header(fh, images_path, IMAGE_MAGIC, 3)
        pix = np.frombuffer(_read_exact(fh, m * rows * cols, images_path), dtype=np.uint8)
    with _open_maybe_gz(labels_path) as fh:
        (ml,) = _read_header(fh, labels_path, LABEL_MAGIC, 1)
        lab = np.frombuffer(_read_exact(fh, ml, labels_path), dtype=np.uint8)
    if m != ml:
        raise IdxFormatError(f"count mismatch: {m} images vs {ml} labels")
    images = pix.reshape(m, rows * cols).astype(np.float64) / 255.0
    return ImageDataset(images, lab.astype(np.int64), rows, cols, source="idx")


def write_idx(images_u8: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write uint8 images (m, rows, cols) and labels as IDX files."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    m, rows, cols = images_u8.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4l", IMAGE_MAGIC, m, rows, cols))
        fh.write(images_u8.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2l", LABEL_MAGIC, m))
        fh.write(labels.tobytes())


def onehot(label: int, classes: int = 10) -> np.ndarray:
    label = int(label)
    if not 0 <= label < classes:
        raise ValueError(f"label {label} outside [0, {classes})")
    v = np.zeros(classes)
    v[label] = 1.0
    return v


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Corruption:
    """Image corruption recipe: additive gaussian noise or row masking.

    kind "gaussian": add N(0, sqrt(variance)) pixel noise, clip to [0, 1].
    kind "mask_region": zero a contiguous band of rows; fraction is the
    share of rows removed (rounded so ceil(rows*(1-fraction)) survive) and
    region names which end gets masked.
    """

    kind: str
    variance: float = 0.25
    fraction: float = 0.5
    region: str = "top"
    seed: int = 0
    rows: int = 28
    cols: int = 28

    def __post_init__(self):
        if self.kind not in ("gaussian", "mask_region"):
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.kind == "gaussian" and self.variance <= 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if self.kind == "mask_region":
            if not 0.0 < self.fraction < 1.0:
                raise ValueError(f"fraction must be in (0, 1), got {self.fraction}")
            if self.region not in ("top", "bottom"):
                raise ValueError(f"region must be top or bottom, got {self.region!r}")


def masked_rows(c: Corruption) -> np.ndarray:
    kept = math.ceil(c.rows * (1.0 - c.fraction))
    gone = c.rows - kept
    if c.region == "top":
        return np.arange(gone)
    return np.arange(c.rows - gone, c.rows)


def corrupt(image: np.ndarray, c: Corruption):
    """Apply a corruption; returns (corrupted, masked_pixel_indices).

    masked_pixel_indices is None for gaussian noise and the flat indices of
    the zeroed pixels for mask_region.
    """
    img = np.asarray(image, dtype=np.float64).reshape(-1)
    if img.size != c.rows * c.cols:
        raise ValueError(f"image has {img.size} pixels, expected {c.rows * c.cols}")
    if c.kind == "gaussian":
        rng = np.random.default_rng(c.seed)
        noisy = np.clip(img + rng.normal(0.0, math.sqrt(c.variance), img.shape), 0.0, 1.0)
        return noisy, None
    rows = masked_rows(c)
    idx = (rows[:, None] * c.cols + np.arange(c.cols)[None, :]).ravel()
    out = img.copy()
    out[idx] = 0.0
    return out, idx


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------


def export_image_grid(images, layout: tuple[int, int], path, rows: int = 28,
                      cols: int = 28, gap: int = 2):
    """Tile images into a (gr, gc) grid and write a binary PGM (P5) file."""
    gr, gc = layout
    imgs = np.asarray(images, dtype=np.float64).reshape(-1, rows * cols)
    if imgs.shape[0] > gr * gc:
        raise ValueError(f"{imgs.shape[0]} images do not fit a {gr}x{gc} grid")
    H = gr * rows + (gr - 1) * gap
    W = gc * cols + (gc - 1) * gap
    canvas = np.full((H, W), 32, dtype=np.uint8)
    for k in range(imgs.shape[0]):
        r, c = divmod(k, gc)
        tile = np.clip(imgs[k], 0.0, 1.0).reshape(rows, cols)
        y, x = r * (rows + gap), c * (cols + gap)
        canvas[y:y + rows, x:x + cols] = np.round(tile * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(canvas.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM back as float64 in [0, 1] (grid round-trips)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    pix = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError("PGM payload truncated")
    return pix.reshape(h, w).astype(np.float64) / float(maxval)


# ---------------------------------------------------------------------------
# Synthetic digit corpus
# ---------------------------------------------------------------------------


def _find_fonts() -> list:
    try:
        import matplotlib
        ttf = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
        fonts = sorted(str(p) for p in ttf.glob("DejaVu*.ttf")
                       if "Display" not in p.name)
        return fonts
    except ImportError:
        return []


def render_digits(m: int, seed: int = 0, rows: int = 28, cols: int = 28):
    """Draw m jittered font digits; returns (uint8 images (m,r,c), labels)."""
    from PIL import Image, ImageDraw, ImageFilter, ImageFont

    rng = np.random.default_rng(seed)
    fonts = _find_fonts()
    font_cache = {}
    scale = 2  # render large, downsample for soft strokes
    R, C = rows * scale, cols * scale
    images = np.zeros((m, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, size=m)
    for k in range(m):
        digit = str(labels[k])
        size = int(rng.integers(R * 2 // 3, R - 6))
        if fonts:
            fpath = fonts[int(rng.integers(len(fonts)))]
            key = (fpath, size)
            if key not in font_cache:
                font_cache[key] = ImageFont.truetype(fpath, size)
            font = font_cache[key]
        else:
            font = ImageFont.load_default()
        img = Image.new("L", (R, C), 0)
        draw = ImageDraw.Draw(img)
        x0, y0, x1, y1 = draw.textbbox((0, 0), digit, font=font)
        dx = (R - (x1 - x0)) / 2 - x0 + rng.uniform(-3.0, 3.0) * scale
        dy = (C - (y1 - y0)) / 2 - y0 + rng.uniform(-3.0, 3.0) * scale
        draw.text((dx, dy), digit, fill=255, font=font)
        angle = rng.uniform(-14.0, 14.0)
        shear = rng.uniform(-0.25, 0.25)
        img = img.rotate(angle, resample=Image.BILINEAR)
        img = img.transform((R, C), Image.AFFINE, (1.0, shear, -shear * C / 2, 0.0, 1.0, 0.0),
                            resample=Image.BILINEAR)
        img = img.filter(ImageFilter.GaussianBlur(radius=rng.uniform(0.0, 1.2) * scale / 2))
        img = img.resize((cols, rows), Image.LANCZOS)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        peak = arr.max()
        if peak > 0:
            arr *= rng.uniform(0.75, 1.0) / peak
        arr += rng.normal(0.0, 0.06, arr.shape)
        images[k] = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return images, labels.astype(np.int64)


def write_synthetic_corpus(out_dir, train_m: int = 12000, test_m: int = 2000,
                           seed: int = 7):
    """Render a train/test corpus into IDX files under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tr_img, tr_lab = render_digits(train_m, seed=seed)
    te_img, te_lab = render_digits(test_m, seed=seed + 1)
    write_idx(tr_img, tr_lab, out_dir / TRAIN_IMAGES, out_dir / TRAIN_LABELS)
    write_idx(te_img, te_lab, out_dir / TEST_IMAGES, out_dir / TEST_LABELS)
    (out_dir / "SOURCE.txt").write_text(
        f"font-rendered digit corpus, seed={seed}, train={train_m}, test={test_m}\n")
    return out_dir


def _find_pair(root: Path, img_name: str, lab_name: str):
    for suffix in ("", ".gz"):
        ip, lp = root / (img_name + suffix), root / (lab_name + suffix)
        if ip.exists() and lp.exists():
            return ip, lp
    return None


def default_data_dir() -> Path:
    env = os.environ.get("PCGRAPH_DATA_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "pcgraph"


def load_split(split: str = "train", data_dir=None, synthesize: bool = True) -> ImageDataset:
    """Load a digit split from data_dir, rendering the stand-in corpus if absent.

    Raises FileNotFoundError when files are missing and synthesize=False.
    """
    root = Path(data_dir) if data_dir is not None else default_data_dir()
    names = {"train": (TRAIN_IMAGES, TRAIN_LABELS), "test": (TEST_IMAGES, TEST_LABELS)}
    if split not in names:
        raise ValueError(f"split must be train or test, got {split!r}")
    pair = _find_pair(root, *names[split])
    if pair is None:
        if not synthesize:
            raise FileNotFoundError(
                f"no {split} IDX files under {root}; set PCGRAPH_DATA_DIR or pass --data-dir")
        write_synthetic_corpus(root)
        pair = _find_pair(root, *names[split])
    ds = load_idx(*pair)
    if (root / "SOURCE.txt").exists():
        ds.source = "synthetic"
    return ds
