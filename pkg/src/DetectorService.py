import concurrent.futures
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from DiffusionUtil import NoiseSchedule, denoise_from, diffuse_to, inpaint_batch, standard_normal
from EpsilonModel import EpsilonModel
from MaskUtil import MaskSpec, get_mask
from Util import setup_logger, derive_rng
from metrics import AbstractDistanceSvc, DistanceFactory, roc_auc

logger = setup_logger('DetectorService')

LIFT_MODES = ('mask_inpaint', 'diffuse_denoise')
AGGREGATIONS = ('median',)
LABELS = ('in', 'out', 'unknown')


class AttemptError(RuntimeError):
    def __init__(self, attempt: str, cause: Exception):
        super().__init__(f"attempt {attempt}: {cause}")
        self.attempt = attempt
        self.cause = cause


@dataclass
class DetectorConfig:
    attempts: int = 10
    mask: MaskSpec = field(default_factory=MaskSpec)
    metric: str = 'feature_distance'
    metric_params: dict = field(default_factory=dict)
    aggregation: str = 'median'
    lift: str = 'mask_inpaint'
    lift_step: Optional[int] = None  # t* for diffuse_denoise; None means T // 2
    workers: int = 1

    def validate(self, T: int):
        if self.attempts < 1:
            raise ValueError(f"detector.attempts must be >= 1, got {self.attempts}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"detector.aggregation must be one of {AGGREGATIONS}, got {self.aggregation}")
        if self.lift not in LIFT_MODES:
            raise ValueError(f"detector.lift must be one of {LIFT_MODES}, got {self.lift}")
        if self.lift_step is not None and not 1 <= self.lift_step <= T:
            raise ValueError(f"detector.lift_step must lie in [1, {T}], got {self.lift_step}")
        if self.workers < 1:
            raise ValueError(f"runtime.workers must be >= 1, got {self.workers}")


@dataclass
class Reconstruction:
    """Per-attempt lifted and mapped images of one (C, H, W) original; masks only for mask_inpaint."""
    lifted: np.ndarray
    mapped: np.ndarray
    masks: Optional[np.ndarray] = None


@dataclass
class ScoreReport:
    image_id: int
    label: str
    distances: List[float]
    score: float
    reconstruction: Optional[Reconstruction] = None

    def truncated(self, attempts: int) -> 'ScoreReport':
        """The report the first `attempts` attempts alone would have produced."""
        distances = self.distances[:attempts]
        return replace(self, distances=distances, score=aggregate(distances), reconstruction=None)


def aggregate(distances: Sequence[float]) -> float:
    # even counts average the two middle order statistics
    return float(np.median(np.asarray(distances, dtype=np.float64)))


class LMDDetector:
    """
    Lift, map, detect: lift an image off its manifold r times, map each lift back with the in-domain
    diffusion model, and score the image by the median distance between original and mapped images.
    """

    def __init__(self, model: EpsilonModel, schedule: NoiseSchedule, config: DetectorConfig,
                 distance_svc: Optional[AbstractDistanceSvc] = None):
        config.validate(schedule.T)
        self.model = model
        self.schedule = schedule
        self.config = config
        self.distance_svc = distance_svc or DistanceFactory.create_distance(
            config.metric, config.metric_params, channels=model.architecture.channels)

    @property
    def lift_step(self) -> int:
        return self.config.lift_step if self.config.lift_step is not None else self.schedule.T // 2

    def _check_image(self, x: np.ndarray):
        if x.shape != self.model.architecture.image_shape:
            raise ValueError(f"image shape {x.shape} does not match model shape {self.model.architecture.image_shape}")

    def _attempt_label(self) -> str:
        return f"1-{self.config.attempts}" if self.config.attempts > 1 else "1"

    def lift_and_inpaint(self, x: np.ndarray, rng: np.random.Generator) -> Reconstruction:
        self._check_image(x)
        r = self.config.attempts
        _, height, width = x.shape
        attempt_rngs = rng.spawn(r)
        masks = []
        for i, attempt_rng in enumerate(attempt_rngs):
            try:
                masks.append(get_mask(self.config.mask, i, height, width, attempt_rng))
            except Exception as ex:
                raise AttemptError(str(i + 1), ex) from ex
        masks = np.stack(masks)
        originals = np.repeat(x[None], r, axis=0)
        try:
            mapped = inpaint_batch(originals, masks, self.model, self.schedule, attempt_rngs)
        except Exception as ex:
            raise AttemptError(self._attempt_label(), ex) from ex
        # masked pixels shown as mid-gray (0.0)
        lifted = np.where(masks[:, None].astype(bool), originals, np.float32(0.0))
        return Reconstruction(lifted=lifted, mapped=mapped, masks=masks)

    def diffuse_and_denoise(self, x: np.ndarray, rng: np.random.Generator) -> Reconstruction:
        self._check_image(x)
        t_star = self.lift_step
        if not 1 <= t_star <= self.schedule.T:
            raise ValueError(f"diffuse_denoise needs a lift step in [1, {self.schedule.T}], got {t_star}")
        r = self.config.attempts
        attempt_rngs = rng.spawn(r)
        originals = np.repeat(x[None], r, axis=0)
        try:
            lifted = diffuse_to(originals, t_star, standard_normal(attempt_rngs, originals.shape), self.schedule)
            mapped = denoise_from(lifted, t_star, self.model, self.schedule, attempt_rngs)
        except Exception as ex:
            raise AttemptError(self._attempt_label(), ex) from ex
        return Reconstruction(lifted=np.clip(lifted, -1.0, 1.0), mapped=mapped)

    def reconstruct(self, x: np.ndarray, rng: np.random.Generator) -> Reconstruction:
        if self.config.lift == 'diffuse_denoise':
            return self.diffuse_and_denoise(x, rng)
        return self.lift_and_inpaint(x, rng)

    def distances(self, x: np.ndarray, reconstruction: Reconstruction,
                  distance_svc: Optional[AbstractDistanceSvc] = None) -> List[float]:
        distance_svc = distance_svc or self.distance_svc
        result = []
        for i, mapped in enumerate(reconstruction.mapped):
            try:
                result.append(distance_svc.distance(x, mapped))
            except Exception as ex:
                raise AttemptError(str(i + 1), ex) from ex
        return result

    def _report(self, x, reconstruction, image_id, label, keep) -> ScoreReport:
        distances = self.distances(x, reconstruction)
        return ScoreReport(image_id=image_id, label=label, distances=distances, score=aggregate(distances),
                           reconstruction=reconstruction if keep else None)

    def ood_score(self, x: np.ndarray, rng: np.random.Generator, image_id: int = 0, label: str = 'unknown',
                  keep: bool = False) -> ScoreReport:
        """Mask-and-inpaint score: median distance over r attempts, attempt i using mask get_mask(spec, i)."""
        return self._report(x, self.lift_and_inpaint(x, rng), image_id, label, keep)

    def denoise_lift_score(self, x: np.ndarray, rng: np.random.Generator, image_id: int = 0,
                           label: str = 'unknown', keep: bool = False) -> ScoreReport:
        """Diffuse-to-t*-and-denoise score, the alternative lift."""
        if self.config.lift != 'diffuse_denoise':
            raise ValueError(f"denoise_lift_score needs detector.lift = diffuse_denoise, got {self.config.lift}")
        return self._report(x, self.diffuse_and_denoise(x, rng), image_id, label, keep)

    def score(self, x: np.ndarray, rng: np.random.Generator, image_id: int = 0, label: str = 'unknown',
              keep: bool = False) -> ScoreReport:
        if self.config.lift == 'diffuse_denoise':
            return self.denoise_lift_score(x, rng, image_id, label, keep)
        return self.ood_score(x, rng, image_id, label, keep)

    def score_dataset(self, images: np.ndarray, labels: Sequence[str], seed: int,
                      image_seeds: Optional[Sequence[int]] = None,
                      keep_reconstructions: int = 0) -> Tuple[List[ScoreReport], Optional[float]]:
        """
        Score every image; image i draws from the stream derived from (seed, image_seeds[i] or i).
        Reports come back in input order whatever the worker count.
        """
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[0] == 0:
            raise ValueError(f"score_dataset needs a non-empty (N, C, H, W) stack, got shape {images.shape}")
        if len(labels) != images.shape[0]:
            raise ValueError(f"{len(labels)} labels for {images.shape[0]} images")
        unknown = set(labels) - set(LABELS)
        if unknown:
            raise ValueError(f"labels must be among {LABELS}, got {sorted(unknown)}")
        keys = list(image_seeds) if image_seeds is not None else list(range(images.shape[0]))

        def score_one(index: int) -> ScoreReport:
            report = self.score(images[index], derive_rng(seed, keys[index]), image_id=index,
                                label=labels[index], keep=index < keep_reconstructions)
            if (index + 1) % 50 == 0:
                logger.info(f"score_dataset. scored {index + 1}/{images.shape[0]}")
            return report

        logger.info(f"score_dataset. images: {images.shape[0]}, attempts: {self.config.attempts}, "
                    f"lift: {self.config.lift}, mask: {self.config.mask.label}, metric: {self.distance_svc.kind}, "
                    f"workers: {self.config.workers}")
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            reports = list(executor.map(score_one, range(images.shape[0])))
        return reports, reports_auc(reports)

    def rescore(self, reports: Sequence[ScoreReport], images: np.ndarray,
                distance_svc: AbstractDistanceSvc) -> List[ScoreReport]:
        """Re-measure kept reconstructions under another metric without lifting or mapping again."""
        rescored = []
        for report in reports:
            if report.reconstruction is None:
                raise ValueError(f"image {report.image_id}: no kept reconstruction to rescore")
            distances = self.distances(images[report.image_id], report.reconstruction, distance_svc)
            rescored.append(replace(report, distances=distances, score=aggregate(distances)))
        return rescored


def reports_auc(reports: Sequence[ScoreReport]) -> Optional[float]:
    scores_in = [r.score for r in reports if r.label == 'in']
    scores_out = [r.score for r in reports if r.label == 'out']
    if not scores_in or not scores_out:
        logger.warning(f"ROC-AUC omitted: needs both labels, got {len(scores_in)} in-domain and "
                       f"{len(scores_out)} out-of-domain reports")
        return None
    return roc_auc(scores_in, scores_out)


def reports_to_frame(reports: Sequence[ScoreReport]) -> pd.DataFrame:
    attempts = max((len(r.distances) for r in reports), default=0)
    rows = []
    for r in reports:
        row = {'image_index': r.image_id, 'label': r.label, 'score': r.score}
        row.update({f'd_{i + 1}': d for i, d in enumerate(r.distances)})
        rows.append(row)
    columns = ['image_index', 'label', 'score'] + [f'd_{i + 1}' for i in range(attempts)]
    return pd.DataFrame(rows, columns=columns)


def write_reports_csv(reports: Sequence[ScoreReport], path):
    reports_to_frame(reports).to_csv(path, index=False, float_format='%.6g')
    logger.info(f"write_reports_csv. path: {path}, rows: {len(reports)}")


def read_scores_csv(path) -> np.ndarray:
    """Scores column of a report CSV; malformed input raises ValueError naming the line."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: line 1: empty file")
    except pd.errors.ParserError as ex:
        raise ValueError(f"{path}: {ex}")
    if 'score' not in frame.columns:
        raise ValueError(f"{path}: line 1: header has no 'score' column")
    scores = pd.to_numeric(frame['score'], errors='coerce')
    bad = scores.isna() | ~np.isfinite(scores.fillna(0.0))
    if bad.any():
        # header is line 1, first data row is line 2
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
        raise ValueError(f"{path}: line {line}: score '{frame['score'].iloc[line - 2]}' is not a finite number")
    if len(scores) == 0:
        raise ValueError(f"{path}: line 2: no score rows")
    return scores.to_numpy(dtype=np.float64)
