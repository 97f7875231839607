"""Synthetic scene generators, the HR->LR degradation model, and PGM I/O.

Eight procedural categories stand in for a remote-sensing corpus:
structured ones (runway, industrial, train_station, dense_residential,
business_district) carry hard edges, smooth ones (desert, river) are
low-frequency, and forest is a high-frequency texture. Everything regenerates
bit-identically from (category, seed), which is why the corpus manifest only
stores seeds; the PGM files exist for inspection, not as the source of truth.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import kernels
from .errors import (
    ConfigurationError,
    InvalidInputError,
    PgmParseError,
    PgmUnsupportedError,
)
from .rng import Xoshiro256, mix_seed

_SALT_CATEGORY = 0x5CE7E
_SALT_DEGRADE = 0xDE64ADE

MIN_SIDE = 16


class SceneCategory(enum.Enum):
    BUSINESS_DISTRICT = "business_district"
    DENSE_RESIDENTIAL = "dense_residential"
    DESERT = "desert"
    FOREST = "forest"
    INDUSTRIAL = "industrial"
    TRAIN_STATION = "train_station"
    RIVER = "river"
    RUNWAY = "runway"


CATEGORIES = tuple(SceneCategory)


def _uniform_field(rng: Xoshiro256, side: int, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * rng.uniform_array((side, side))


def _smooth_field(rng: Xoshiro256, side: int, coarse: int, lo: float, hi: float) -> np.ndarray:
    """Low-frequency field: coarse uniform grid, bilinearly upsampled."""
    grid = lo + (hi - lo) * rng.uniform_array((coarse, coarse))
    return kernels.bilinear_upsample(grid, side, side)


def _box_blur_same(img: np.ndarray, win: int) -> np.ndarray:
    pad = win // 2
    padded = np.pad(img, pad, mode="edge")
    return kernels.box_filter_valid(padded, win)


def _rect(img, y, x, h, w, value):
    img[max(y, 0) : y + h, max(x, 0) : x + w] = value


def _business_district(rng, side):
    img = _uniform_field(rng, side, 0.25, 0.33)
    for _ in range(10 + side // 3):
        h = rng.integers(3, 4 + side // 3)
        w = rng.integers(3, 4 + side // 3)
        y = rng.integers(0, side - 2)
        x = rng.integers(0, side - 2)
        _rect(img, y, x, h, w, 0.35 + 0.6 * rng.uniform())
    return img


def _dense_residential(rng, side):
    img = _uniform_field(rng, side, 0.28, 0.38)
    pitch = 3
    for gy in range(1, side - 2, pitch):
        for gx in range(1, side - 2, pitch):
            if rng.uniform() < 0.12:
                continue
            y = gy + rng.integers(0, 2)
            x = gx + rng.integers(0, 2)
            _rect(img, y, x, 2, 2, 0.5 + 0.45 * rng.uniform())
    return img


def _desert(rng, side):
    img = _smooth_field(rng, side, 4, 0.45, 0.7)
    theta = rng.uniform() * math.pi
    phase = rng.uniform() * 2.0 * math.pi
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    dunes = np.sin(2.0 * math.pi * (xx * math.cos(theta) + yy * math.sin(theta)) / (side / 1.7) + phase)
    return img + 0.04 * dunes


def _forest(rng, side):
    noise = rng.uniform_array((side, side))
    high = noise - _box_blur_same(noise, 5)  # zero-mean high-frequency residue
    return 0.45 + 1.1 * high


def _industrial(rng, side):
    img = _uniform_field(rng, side, 0.3, 0.36)
    cell = max(5, side // 5)
    for gy in range(1, side - 3, cell):
        for gx in range(1, side - 3, cell):
            if rng.uniform() < 0.2:
                continue
            h = cell - 2 + rng.integers(0, 2)
            w = cell - 2 + rng.integers(0, 2)
            _rect(img, gy, gx, h, w, 0.45 + 0.5 * rng.uniform())
    return img


def _train_station(rng, side):
    img = _uniform_field(rng, side, 0.22, 0.28)
    n_tracks = 4 + rng.integers(0, 3)
    y0 = rng.integers(2, max(3, side // 2))
    for k in range(n_tracks):
        y = y0 + 2 * k
        if y < side:
            img[y, :] = 0.75
    for _ in range(2 + rng.integers(0, 2)):
        w = rng.integers(side // 4, side // 2)
        x = rng.integers(0, side - w)
        y = rng.integers(0, side - 3)
        _rect(img, y, x, 3, w, 0.85)
    if rng.uniform() < 0.5:
        img = np.ascontiguousarray(img.T)
    return img


def _river(rng, side):
    img = _smooth_field(rng, side, 5, 0.45, 0.6)
    amp = side * (0.12 + 0.12 * rng.uniform())
    wavelength = side * (1.2 + 0.8 * rng.uniform())
    phase = rng.uniform() * 2.0 * math.pi
    width = side * (0.1 + 0.06 * rng.uniform())
    center = side / 2.0 + (rng.uniform() - 0.5) * side * 0.3
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    path = center + amp * np.sin(2.0 * math.pi * yy / wavelength + phase)
    # soft-edged band keeps this a smooth category
    mask = 1.0 / (1.0 + np.exp((np.abs(xx - path) - width) / (0.45 * width)))
    return img * (1.0 - mask) + 0.2 * mask


def _runway(rng, side):
    img = _uniform_field(rng, side, 0.14, 0.2)
    width = max(3, side // 8)
    for _ in range(2):
        x = rng.integers(2, side - width - 2)
        img[:, x : x + width] = 0.85
        center = x + width // 2
        for y in range(rng.integers(0, 3), side, 4):
            img[y : min(y + 2, side), center] = 1.0
    if rng.uniform() < 0.5:
        img = np.ascontiguousarray(img.T)
    return img


_GENERATORS = {
    SceneCategory.BUSINESS_DISTRICT: _business_district,
    SceneCategory.DENSE_RESIDENTIAL: _dense_residential,
    SceneCategory.DESERT: _desert,
    SceneCategory.FOREST: _forest,
    SceneCategory.INDUSTRIAL: _industrial,
    SceneCategory.TRAIN_STATION: _train_station,
    SceneCategory.RIVER: _river,
    SceneCategory.RUNWAY: _runway,
}


def generate_scene(category: SceneCategory, seed: int, side: int = 32) -> np.ndarray:
    """Deterministic procedural image for (category, seed), values in [0, 1]."""
    if side < MIN_SIDE:
        raise InvalidInputError(f"side must be >= {MIN_SIDE}, got {side}")
    cat_index = list(SceneCategory).index(category)
    rng = Xoshiro256(mix_seed(mix_seed(seed, _SALT_CATEGORY), cat_index))
    img = _GENERATORS[category](rng, side)
    return np.clip(img, 0.0, 1.0)


def mean_abs_gradient(img: np.ndarray) -> float:
    """Mean absolute finite difference, averaged over both axes."""
    gy = float(np.abs(np.diff(img, axis=0)).mean())
    gx = float(np.abs(np.diff(img, axis=1)).mean())
    return 0.5 * (gy + gx)


def degrade(hr, factor: int, noise_sigma: float, seed: int) -> np.ndarray:
    """Block-mean downsample by ``factor``, add seeded Gaussian noise, clamp."""
    arr = np.ascontiguousarray(hr, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected 2-D image, got shape {np.shape(hr)}")
    h, w = arr.shape
    if factor <= 0 or h % factor != 0 or w % factor != 0:
        raise InvalidInputError(f"factor {factor} does not divide image shape {arr.shape}")
    lr = kernels.block_mean(arr, factor)
    if noise_sigma > 0.0:
        rng = Xoshiro256(seed)
        lr = lr + noise_sigma * rng.normal_array(lr.shape)
    return np.clip(lr, 0.0, 1.0)


@dataclass
class ScenePair:
    """HR image, its degraded LR counterpart, and the recipe that made them."""

    hr: np.ndarray
    lr: np.ndarray
    category: SceneCategory
    seed: int


@dataclass
class Corpus:
    pairs: list  # category-major, generation order
    train: list
    test: list


def make_pair(category: SceneCategory, seed: int, side=32, factor=4, noise_sigma=0.02) -> ScenePair:
    hr = generate_scene(category, seed, side)
    lr = degrade(hr, factor, noise_sigma, mix_seed(seed, _SALT_DEGRADE))
    return ScenePair(hr=hr, lr=lr, category=category, seed=seed)


def build_corpus(n_per_category: int, seed: int, side=32, factor=4, noise_sigma=0.02) -> Corpus:
    """n pairs per category; per category the first 80% (floor) are train,
    the rest test, in seed-generation order."""
    if n_per_category < 2:
        raise InvalidInputError("need at least 2 scenes per category for a train/test split")
    pairs, train, test = [], [], []
    n_train = (4 * n_per_category) // 5
    for cat_index, category in enumerate(SceneCategory):
        cat_base = mix_seed(seed, cat_index)
        for i in range(n_per_category):
            pair = make_pair(category, mix_seed(cat_base, i), side, factor, noise_sigma)
            pairs.append(pair)
            (train if i < n_train else test).append(pair)
    return Corpus(pairs=pairs, train=train, test=test)


# --- PGM P5 I/O (maxval 255 only) -------------------------------------------


def save_pgm(img, path) -> None:
    """Binary P5, pixels quantized by round-half-up to 0..255."""
    arr = require_pgm_image(img)
    q = np.floor(arr * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes(order="C"))


def require_pgm_image(img) -> np.ndarray:
    arr = np.ascontiguousarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"expected non-empty 2-D image, got shape {np.shape(img)}")
    return arr


class _PgmScanner:
    """Byte-level tokenizer for the PGM header ('#' comments allowed)."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_separators(self):
        while self.pos < len(self.data):
            c = self.data[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                while self.pos < len(self.data) and self.data[self.pos : self.pos + 1] not in (b"\n", b""):
                    self.pos += 1
            else:
                return

    def token(self) -> bytes:
        self.skip_separators()
        start = self.pos
        while self.pos < len(self.data) and not self.data[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if self.pos == start:
            raise PgmParseError("unexpected end of header", start)
        return self.data[start : self.pos]

    def int_token(self, what: str) -> int:
        start = self.pos
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            raise PgmParseError(f"bad {what} {tok!r}", start) from None


def load_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM with maxval 255 into a [0, 1] float image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2:
        raise PgmParseError("file too short for a PGM magic", 0)
    if data[:2] != b"P5":
        raise PgmParseError(f"bad magic {data[:2]!r}, expected P5", 0)
    sc = _PgmScanner(data)
    sc.pos = 2
    width = sc.int_token("width")
    height = sc.int_token("height")
    maxval = sc.int_token("maxval")
    if width <= 0 or height <= 0:
        raise PgmParseError(f"non-positive dimensions {width}x{height}", sc.pos)
    if maxval != 255:
        raise PgmUnsupportedError(f"only maxval 255 is supported, got {maxval}")
    sc.pos += 1  # exactly one whitespace byte separates header from raster
    expected = width * height
    raster = data[sc.pos : sc.pos + expected]
    if len(raster) != expected:
        raise PgmParseError(
            f"raster truncated: expected {expected} bytes, found {len(raster)}", sc.pos
        )
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / 255.0


# --- corpus manifest ---------------------------------------------------------

MANIFEST_HEADER = ["category", "seed", "split", "hr_path", "lr_path"]


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write hr/lr PGMs plus manifest.csv; returns the manifest path."""
    out = Path(out_dir)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    (out / "lr").mkdir(parents=True, exist_ok=True)
    test_ids = {id(p) for p in corpus.test}
    rows = []
    counters: dict[SceneCategory, int] = {}
    for pair in corpus.pairs:
        idx = counters.get(pair.category, 0)
        counters[pair.category] = idx + 1
        stem = f"{pair.category.value}_{idx:03d}"
        hr_rel = f"hr/{stem}.pgm"
        lr_rel = f"lr/{stem}.pgm"
        save_pgm(pair.hr, out / hr_rel)
        save_pgm(pair.lr, out / lr_rel)
        split = "test" if id(pair) in test_ids else "train"
        rows.append([pair.category.value, str(pair.seed), split, hr_rel, lr_rel])
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return manifest


def load_corpus(manifest_path, side=32, factor=4, noise_sigma=0.02) -> Corpus:
    """Regenerate a corpus from its manifest's (category, seed, split) rows.

    Scenes are rebuilt from seeds rather than decoded from the PGMs, so the
    loaded pairs are bit-identical to the originals (no quantization).
    """
    path = Path(manifest_path)
    if not path.exists():
        raise ConfigurationError(f"corpus manifest not found: {path}")
    by_value = {c.value: c for c in SceneCategory}
    pairs, train, test = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ConfigurationError(f"{path}: unexpected manifest header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_HEADER):
                raise ConfigurationError(f"{path}:{lineno}: malformed row {row}")
            cat_value, seed_text, split = row[0], row[1], row[2]
            if cat_value not in by_value:
                raise ConfigurationError(f"{path}:{lineno}: unknown category {cat_value!r}")
            if split not in ("train", "test"):
                raise ConfigurationError(f"{path}:{lineno}: unknown split {split!r}")
            pair = make_pair(by_value[cat_value], int(seed_text), side, factor, noise_sigma)
            pairs.append(pair)
            (train if split == "train" else test).append(pair)
    if not pairs:
        raise ConfigurationError(f"{path}: manifest lists no scenes")
    return Corpus(pairs=pairs, train=train, test=test)
