"""Dataset loading and generation.

IDX files follow the classic big-endian layout: two zero bytes, a type code
(only 0x08, unsigned byte, is supported), a rank byte, ``rank`` big-endian
u32 dimensions, then the raw payload. Malformed files raise ``DataError``
naming the byte offset of the problem.

Synthetic generators exist so every pipeline can run without any files on
disk; the glyph images are a stand-in corpus for handwritten-digit
experiments, not a reproduction of any real dataset.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

IDX_UBYTE = 0x08


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task: str  # 'classification' or 'regression'
    n_classes: int | None = None
    split: str = ""  # e.g. 'train', 'test'; empty when unsplit
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    target_mean: float | None = None
    target_std: float | None = None

    @property
    def n(self) -> int:
        return int(self.x.shape[0])


def load_idx(path, normalize: bool = True) -> np.ndarray:
    """Read one IDX file.

    Rank >= 2 unsigned-byte data comes back as float64 (scaled to [0, 1]
    when ``normalize``); rank-1 data comes back as int64 labels.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated magic, need 4 bytes at byte 0, file has {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad magic bytes {raw[0]:#04x} {raw[1]:#04x} at byte 0, expected zeros")
    if raw[2] != IDX_UBYTE:
        raise DataError(f"{path}: unsupported type code {raw[2]:#04x} at byte 2 (only 0x08 ubyte)")
    rank = raw[3]
    if rank < 1:
        raise DataError(f"{path}: rank 0 at byte 3")
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise DataError(f"{path}: truncated header, need {4 * rank} dimension bytes at byte 4, "
                        f"file has {len(raw) - 4}")
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    expected = int(np.prod(dims))
    payload = len(raw) - header_end
    if payload != expected:
        raise DataError(f"{path}: expected {expected} payload bytes at byte {header_end}, "
                        f"found {payload}")
    arr = np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)
    if rank == 1:
        return arr.astype(np.int64)
    out = arr.astype(np.float64)
    return out / 255.0 if normalize else out


def save_idx(path, arr: np.ndarray) -> None:
    """Write an unsigned-byte IDX file. Round-trips with load_idx(normalize=False)."""
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        if not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() > 255:
            raise ValueError(f"save_idx needs uint8-representable data, got dtype {a.dtype}")
        a = a.astype(np.uint8)
    if a.ndim < 1:
        raise ValueError("save_idx needs at least rank 1")
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, IDX_UBYTE, a.ndim]))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def load_uci_csv(path, target_column: int = -1, split_seed: int = 0,
                 split_fraction: float = 0.9, standardize: bool = True,
                 delimiter: str | None = None) -> tuple[Dataset, Dataset]:
    """Load a numeric CSV regression table and split it train/test.

    ``split_fraction`` is the train share; the split is a deterministic
    shuffle by ``split_seed``. Features and targets are standardised by
    training-set statistics only (std floored at 1e-8), and those statistics
    are recorded on both returned datasets. A header row is skipped
    automatically when its cells are not numeric. Non-numeric data cells
    raise DataError naming the 1-based row and column.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must be in (0, 1), got {split_fraction}")
    rows: list[list[float]] = []
    path = Path(path)
    with open(path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        if delimiter is None:
            # whitespace-delimited unless the file clearly uses , or ;
            counts = {d: sample.count(d) for d in (",", ";")}
            delimiter = max(counts, key=counts.get) if max(counts.values()) else None
        if delimiter:
            reader = csv.reader(fh, delimiter=delimiter)
        else:
            reader = (line.split() for line in fh)
        for i, cells in enumerate(reader, start=1):
            cells = [str(c).strip() for c in cells if str(c).strip() != ""]
            if not cells:
                continue
            if all(_is_float(c) for c in cells):
                rows.append([float(c) for c in cells])
            elif i == 1 and not rows:
                continue  # header row
            else:
                bad = next(j for j, c in enumerate(cells, start=1) if not _is_float(c))
                raise DataError(f"{path}: non-numeric value at row {i}, column {bad}")
    if not rows:
        raise DataError(f"{path}: no numeric rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: inconsistent row widths {sorted(widths)}")
    table = np.array(rows, dtype=np.float64)
    tcol = target_column if target_column >= 0 else table.shape[1] + target_column
    y = table[:, tcol]
    x = np.delete(table, tcol, axis=1)

    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(len(table))
    n_train = min(max(1, int(round(len(table) * split_fraction))), len(table) - 1)
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    fm = x[train_idx].mean(axis=0)
    fs = np.maximum(x[train_idx].std(axis=0), 1e-8)
    tm = float(y[train_idx].mean())
    ts = float(max(y[train_idx].std(), 1e-8))
    if standardize:
        x = (x - fm) / fs
        y = (y - tm) / ts

    def mk(idx, tag):
        return Dataset(x[idx], y[idx], task="regression", split=tag,
                       feature_mean=fm, feature_std=fs,
                       target_mean=tm, target_std=ts)

    return mk(train_idx, "train"), mk(test_idx, "test")


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def make_synthetic(kind: str, n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Small seeded problems: 'two_gaussians', 'two_moons', 'quadratic_regression'.

    - two_gaussians: class c centred at ((-1)^(c+1) * 1.5, 0) plus isotropic
      N(0, noise^2); separable as noise -> 0.
    - two_moons: upper half-circle of radius 1 at the origin vs lower
      half-circle shifted by (1, 0.5), plus N(0, noise^2).
    - quadratic_regression: x ~ U[-2, 2], y = x^2 + N(0, noise^2).
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "two_gaussians":
        y = rng.integers(0, 2, size=n)
        centers = np.array([[-1.5, 0.0], [1.5, 0.0]])
        x = centers[y] + rng.normal(0.0, 1.0, size=(n, 2)) * noise
        return Dataset(x, y.astype(np.int64), task="classification", n_classes=2)
    if kind == "two_moons":
        y = rng.integers(0, 2, size=n)
        t = rng.uniform(0.0, math.pi, size=n)
        x = np.where(y[:, None] == 0,
                     np.stack([np.cos(t), np.sin(t)], axis=1),
                     np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1))
        x += rng.normal(0.0, noise, size=x.shape)
        return Dataset(x, y.astype(np.int64), task="classification", n_classes=2)
    if kind == "quadratic_regression":
        x = rng.uniform(-2.0, 2.0, size=(n, 1))
        y = x[:, 0] ** 2 + rng.normal(0.0, noise, size=n)
        return Dataset(x, y, task="regression")
    raise ValueError(f"unknown synthetic kind {kind!r}")


# Seven-segment layout for the glyph generator: (top, bottom, left, right)
# in a unit box, keyed by segment name.
_SEGMENTS = {
    "A": (0.00, 0.12, 0.0, 1.0),
    "G": (0.44, 0.56, 0.0, 1.0),
    "D": (0.88, 1.00, 0.0, 1.0),
    "F": (0.00, 0.50, 0.0, 0.2),
    "B": (0.00, 0.50, 0.8, 1.0),
    "E": (0.50, 1.00, 0.0, 0.2),
    "C": (0.50, 1.00, 0.8, 1.0),
}
_DIGIT_SEGMENTS = {
    0: "ABCDEF", 1: "BC", 2: "ABGED", 3: "ABGCD", 4: "FGBC",
    5: "AFGCD", 6: "AFGEDC", 7: "ABC", 8: "ABCDEFG", 9: "ABCFGD",
}


def make_digit_glyphs(n: int, seed: int = 0, size: int = 28,
                      noise: float = 0.08, max_shift: int = 3) -> Dataset:
    """Seeded ten-class corpus of seven-segment digit glyphs.

    Each image is a segment rendering of its class digit with random
    position, stroke intensity and pixel noise, in [0, 1] on a ``size`` x
    ``size`` canvas. A stand-in for digit-image experiments when no image
    files are available.
    """
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 10, size=n).astype(np.int64)
    box_h, box_w = int(size * 0.64), int(size * 0.43)
    top0 = (size - box_h) // 2
    left0 = (size - box_w) // 2
    x = np.zeros((n, size, size))
    for i in range(n):
        glyph = np.zeros((box_h, box_w))
        for seg in _DIGIT_SEGMENTS[int(y[i])]:
            t, b, l, r = _SEGMENTS[seg]
            glyph[int(t * box_h):max(int(b * box_h), int(t * box_h) + 1),
                  int(l * box_w):max(int(r * box_w), int(l * box_w) + 1)] = 1.0
        glyph *= rng.uniform(0.7, 1.0)
        dr = int(rng.integers(-max_shift, max_shift + 1))
        dc = int(rng.integers(-max_shift, max_shift + 1))
        r0 = min(max(top0 + dr, 0), size - box_h)
        c0 = min(max(left0 + dc, 0), size - box_w)
        x[i, r0:r0 + box_h, c0:c0 + box_w] = glyph
        if noise > 0:
            x[i] = np.clip(x[i] + rng.normal(0.0, noise, size=(size, size)), 0.0, 1.0)
    return Dataset(x, y, task="classification", n_classes=10)


def rotate_images(images: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate counterclockwise about the image centre.

    Multiples of 90 degrees are exact pixel permutations; other angles use
    bilinear interpolation of the inverse map with zeros outside the frame.
    Accepts [n, H, W] or [n, C, H, W].
    """
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim == 4:
        flat = imgs.reshape(-1, imgs.shape[2], imgs.shape[3])
        out = rotate_images(flat, angle_degrees)
        return out.reshape(imgs.shape)
    if imgs.ndim != 3:
        raise ValueError(f"expected [n, H, W] or [n, C, H, W], got shape {imgs.shape}")
    angle = float(angle_degrees) % 360.0
    if angle == 0.0:
        return imgs.copy()
    if angle in (90.0, 180.0, 270.0):
        return np.ascontiguousarray(np.rot90(imgs, k=int(angle // 90), axes=(1, 2)))
    n, h, w = imgs.shape
    theta = math.radians(angle)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # inverse map: rotate output coords by -theta. With rows growing downward
    # a counterclockwise image rotation matches rot90 at angle 90.
    xr = cc - cx
    yr = rr - cy
    src_c = cos_t * xr - sin_t * yr + cx
    src_r = sin_t * xr + cos_t * yr + cy
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0
    out = np.zeros_like(imgs)
    for (dr, dc, wgt) in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                          (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        r = r0 + dr
        c = c0 + dc
        valid = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        rv = np.clip(r, 0, h - 1)
        cv = np.clip(c, 0, w - 1)
        out += imgs[:, rv, cv] * (wgt * valid)
    return out


def subsample(dataset: Dataset, n: int, seed: int = 0,
              stratified: bool = True) -> Dataset:
    """Draw ``n`` rows without replacement, deterministically by seed.

    Stratified sampling (classification only) allocates per-class quotas
    proportional to class frequencies (largest remainder rule), so a
    balanced input stays balanced to within one example per class.
    """
    y = np.asarray(dataset.y)
    total = len(y)
    if not 0 < n <= total:
        raise ValueError(f"cannot take {n} of {total} examples")
    rng = np.random.default_rng(seed)
    if stratified and dataset.task == "classification":
        classes, counts = np.unique(y, return_counts=True)
        exact = counts * (n / total)
        quota = np.floor(exact).astype(np.int64)
        short = n - quota.sum()
        if short > 0:
            order = np.argsort(-(exact - quota))
            quota[order[:short]] += 1
        picks = []
        for cls, q in zip(classes, quota):
            members = np.where(y == cls)[0]
            if q > 0:
                picks.append(rng.choice(members, size=q, replace=False))
        idx = np.concatenate(picks)
    else:
        idx = rng.choice(total, size=n, replace=False)
    idx.sort()
    return Dataset(dataset.x[idx], dataset.y[idx], task=dataset.task,
                   n_classes=dataset.n_classes, split=dataset.split,
                   feature_mean=dataset.feature_mean, feature_std=dataset.feature_std,
                   target_mean=dataset.target_mean, target_std=dataset.target_std)
