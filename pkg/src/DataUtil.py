import gzip
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from Util import setup_logger

logger = setup_logger('DataUtil')

IDX_IMAGE_MAGIC = 0x00000803  # unsigned byte, 3 dimensions
IDX_HEADER_BYTES = 16
support_synthetic_family = ['stripes', 'checker_texture', 'discs', 'gaussian_noise']


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Uniform-shape (N, C, H, W) float32 images in [-1, 1]."""
    images: np.ndarray
    source: str = ''
    normalization: dict = field(default_factory=lambda: {'scheme': 'x/127.5-1', 'range': [-1.0, 1.0]})

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"dataset images must be (N, C, H, W), got shape {self.images.shape}")
        if self.images.size and (self.images.min() < -1.0 or self.images.max() > 1.0):
            raise ValueError(f"dataset {self.source}: values outside [-1, 1]")

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, limit: Optional[int], rng: np.random.Generator) -> 'Dataset':
        """Seeded random subset of at most `limit` images, kept in their original order."""
        if limit is None or limit >= len(self):
            return self
        chosen = np.sort(rng.choice(len(self), size=limit, replace=False))
        return Dataset(self.images[chosen], source=f"{self.source}[subset {limit}]", normalization=self.normalization)


def normalize_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize_bytes(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((images.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def parse_idx(buffer: bytes) -> np.ndarray:
    """Parse an IDX image file into an (N, rows, cols) uint8 array."""
    if len(buffer) < 4:
        raise IdxFormatError(f"IDX file too short for a magic number: {len(buffer)} bytes")
    (magic,) = struct.unpack('>I', buffer[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"IDX magic 0x{magic:08x} is not an unsigned-byte 3-D image file (0x{IDX_IMAGE_MAGIC:08x})")
    if len(buffer) < IDX_HEADER_BYTES:
        raise IdxFormatError(f"IDX header truncated: expected {IDX_HEADER_BYTES} bytes, got {len(buffer)}")
    count, rows, cols = struct.unpack('>III', buffer[4:IDX_HEADER_BYTES])
    if count == 0 or rows == 0 or cols == 0:
        raise IdxFormatError(f"IDX dimensions must be positive, got {count}x{rows}x{cols}")
    expected = count * rows * cols
    actual = len(buffer) - IDX_HEADER_BYTES
    if actual != expected:
        raise IdxFormatError(f"IDX payload has {actual} bytes, expected {expected} for {count}x{rows}x{cols}")
    return np.frombuffer(buffer, dtype=np.uint8, offset=IDX_HEADER_BYTES).reshape(count, rows, cols)


def _open(path, mode):
    return gzip.open(path, mode) if str(path).endswith('.gz') else open(path, mode)


def read_idx(path) -> Dataset:
    try:
        with _open(path, 'rb') as f:
            buffer = f.read()
    except (EOFError, zlib.error, gzip.BadGzipFile) as ex:
        raise IdxFormatError(f"{path}: corrupt gzip stream ({ex})") from ex
    raw = parse_idx(buffer)
    count, rows, cols = raw.shape
    logger.info(f"read_idx. path: {path}, count: {count}, rows: {rows}, cols: {cols}")
    return Dataset(normalize_bytes(raw)[:, None, :, :], source=str(path),
                   normalization={'scheme': 'x/127.5-1', 'range': [-1.0, 1.0], 'count': count, 'rows': rows, 'cols': cols})


def encode_idx(raw: np.ndarray) -> bytes:
    count, rows, cols = raw.shape
    return struct.pack('>IIII', IDX_IMAGE_MAGIC, count, rows, cols) + raw.astype(np.uint8).tobytes()


def write_idx(dataset: Dataset, path):
    if dataset.images.shape[1] != 1:
        raise IdxFormatError(f"IDX images are single-channel, got {dataset.images.shape[1]} channels")
    with _open(path, 'wb') as f:
        f.write(encode_idx(denormalize_bytes(dataset.images[:, 0])))


@dataclass
class SyntheticSpec:
    """
    Synthetic image families, all single-channel on a side×side grid:

    - stripes: ±1 bands of width period/2 along rows (horizontal) or columns (vertical), random phase;
      orientation 'random' picks one per image
    - checker_texture: ±1 checkerboard of `cell`-pixel squares with a random phase on each axis
    - discs: `disc_count` +1 discs with radius uniform in `radius_range` on a -1 background
    - gaussian_noise: N(0, noise_std²) per pixel, clamped to [-1, 1]
    """
    family: str = 'stripes'
    side: int = 16
    count: int = 200
    seed: int = 0
    orientation: str = 'random'
    period: int = 4
    cell: int = 2
    disc_count: int = 2
    radius_range: Sequence[float] = (2.0, 4.0)
    noise_std: float = 0.5

    def validate(self):
        if self.family not in support_synthetic_family:
            raise NotImplementedError(f"Synthetic family - {self.family} - is not supported. Valid families: {support_synthetic_family}")
        if self.side < 8 or self.count < 1:
            raise ValueError(f"synthetic spec needs side >= 8 and count >= 1, got side {self.side}, count {self.count}")
        if self.orientation not in ('horizontal', 'vertical', 'random'):
            raise ValueError(f"stripes orientation must be horizontal, vertical or random, got {self.orientation}")
        if self.period < 2 or self.cell < 1 or self.disc_count < 1 or self.noise_std <= 0:
            raise ValueError(f"synthetic spec parameters out of range: {self}")


def _stripes(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    orientation = spec.orientation
    if orientation == 'random':
        orientation = 'horizontal' if rng.integers(2) == 0 else 'vertical'
    phase = rng.integers(spec.period)
    coord = np.arange(spec.side)
    band = np.where((coord + phase) % spec.period < spec.period / 2, 1.0, -1.0)
    image = np.repeat(band[:, None], spec.side, axis=1)
    return image if orientation == 'horizontal' else image.T


def _checker_texture(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    phase_r, phase_c = rng.integers(2 * spec.cell, size=2)
    coord = np.arange(spec.side)
    rows = (coord + phase_r) // spec.cell
    cols = (coord + phase_c) // spec.cell
    return np.where((rows[:, None] + cols[None, :]) % 2 == 0, 1.0, -1.0)


def _discs(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    image = -np.ones((spec.side, spec.side))
    yy, xx = np.mgrid[0:spec.side, 0:spec.side]
    low, high = spec.radius_range
    for _ in range(spec.disc_count):
        radius = rng.uniform(low, high)
        cy, cx = rng.uniform(0, spec.side, size=2)
        image[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = 1.0
    return image


def _gaussian_noise(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    return np.clip(rng.normal(0.0, spec.noise_std, size=(spec.side, spec.side)), -1.0, 1.0)


synthetic_family_map = {
    'stripes': _stripes,
    'checker_texture': _checker_texture,
    'discs': _discs,
    'gaussian_noise': _gaussian_noise,
}


def generate(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    make = synthetic_family_map[spec.family]
    images = np.stack([make(spec, rng) for _ in range(spec.count)]).astype(np.float32)[:, None, :, :]
    return Dataset(images, source=f"synthetic:{spec.family}(side={spec.side}, count={spec.count}, seed={spec.seed})",
                   normalization={'scheme': 'synthetic', 'range': [-1.0, 1.0]})


def to_pgm_bytes(images: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to 0..255 by (x + 1)·127.5 rounded half-up."""
    return np.clip(np.floor((images.astype(np.float64) + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def write_pgm_grid(images, columns: int, path):
    """Tile single-channel images row-major into one P5 PGM with 1-pixel white separators."""
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[1] != 1:
            raise ValueError(f"write_pgm_grid is grayscale only, got {images.shape[1]} channels")
        images = images[:, 0]
    if images.ndim != 3 or images.shape[0] == 0:
        raise ValueError(f"write_pgm_grid needs a non-empty stack of (H, W) images, got shape {images.shape}")
    if columns < 1:
        raise ValueError(f"write_pgm_grid needs at least one column, got {columns}")

    count, height, width = images.shape
    columns = min(columns, count)
    rows = math.ceil(count / columns)
    canvas = np.full((rows * height + rows - 1, columns * width + columns - 1), 255, dtype=np.uint8)
    pixels = to_pgm_bytes(images)
    for index in range(count):
        r, c = divmod(index, columns)
        top, left = r * (height + 1), c * (width + 1)
        canvas[top:top + height, left:left + width] = pixels[index]

    with open(path, 'wb') as f:
        f.write(f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode('ascii'))
        f.write(canvas.tobytes())
    logger.info(f"write_pgm_grid. path: {path}, images: {count}, dims: {canvas.shape[1]}x{canvas.shape[0]}")
