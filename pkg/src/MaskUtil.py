from dataclasses import dataclass
from typing import Optional

import numpy as np

from Util import setup_logger
from masking import mask_svc_map, support_mask_variant
from masking.abc_mask import AbstractMaskSvc

logger = setup_logger('MaskUtil')

DEFAULT_COVER = {'center': 0.25, 'random_patch': 0.5, 'alternating_checkerboard': 0.5, 'fixed_checkerboard': 0.5}
GRID_VARIANTS = ('alternating_checkerboard', 'fixed_checkerboard', 'random_patch')


class MaskError(ValueError):
    pass


@dataclass
class MaskSpec:
    variant: str = 'alternating_checkerboard'
    grid_size: int = 8
    cover_fraction: Optional[float] = None

    def __post_init__(self):
        if self.variant not in support_mask_variant:
            raise NotImplementedError(f"Mask - {self.variant} - is not supported. Valid variants: {support_mask_variant}")
        if self.cover_fraction is None:
            self.cover_fraction = DEFAULT_COVER[self.variant]
        if self.grid_size < 1:
            raise MaskError(f"mask grid size must be >= 1, got {self.grid_size}")
        if not 0.0 < self.cover_fraction < 1.0:
            raise MaskError(f"mask cover fraction must lie in (0, 1), got {self.cover_fraction}")

    @property
    def label(self) -> str:
        if self.variant in GRID_VARIANTS:
            return f"{self.variant}_{self.grid_size}x{self.grid_size}"
        return self.variant


def get_mask(spec: MaskSpec, attempt_index: int, height: int, width: int,
             rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Lift mask for one attempt: (height, width) uint8, 1 = keep, 0 = inpaint."""
    if attempt_index < 0:
        raise MaskError(f"attempt index must be >= 0, got {attempt_index}")
    if height <= 0 or width <= 0:
        raise MaskError(f"mask dims must be positive, got {height}x{width}")
    if spec.variant in GRID_VARIANTS and spec.grid_size > min(height, width):
        raise MaskError(f"mask grid {spec.grid_size}x{spec.grid_size} does not fit a {height}x{width} image")
    if rng is None:
        rng = np.random.default_rng(0)

    mask_svc: AbstractMaskSvc = mask_svc_map[spec.variant]
    mask = mask_svc.build_mask(spec, attempt_index, height, width, rng)
    if mask.all() or not mask.any():
        raise MaskError(f"{spec.label} mask on {height}x{width} is degenerate (keeps everything or nothing)")
    return mask


def coverage_union(spec: MaskSpec, attempts: int, height: int, width: int,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Fraction of pixels inpainted by at least one of the first `attempts` masks."""
    if attempts < 1:
        raise MaskError(f"coverage needs at least one attempt, got {attempts}")
    if rng is None:
        rng = np.random.default_rng(0)
    covered = np.zeros((height, width), dtype=bool)
    for attempt_index in range(attempts):
        covered |= get_mask(spec, attempt_index, height, width, rng) == 0
    return float(covered.mean())


def write_mask_pgm(mask: np.ndarray, path):
    """Binary PGM (P5, maxval 255) with 0 -> 0 and 1 -> 255."""
    if mask.ndim != 2:
        raise MaskError(f"write_mask_pgm needs an (H, W) mask, got shape {mask.shape}")
    height, width = mask.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n255\n".encode('ascii'))
        f.write((mask.astype(np.uint8) * 255).tobytes())
    logger.info(f"write_mask_pgm. path: {path}, dims: {height}x{width}")
