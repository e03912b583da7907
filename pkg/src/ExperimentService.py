import json
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from DataUtil import Dataset, SyntheticSpec, generate, read_idx, write_pgm_grid
from DetectorService import DetectorConfig, LMDDetector, ScoreReport, read_scores_csv, reports_auc, write_reports_csv
from DiffusionUtil import TrainConfig, make_linear_schedule, sample_batch, train
from EpsilonModel import EpsilonModel, ModelArchitecture, load_checkpoint, save_checkpoint
from MaskUtil import MaskSpec
from Util import setup_logger, load_default_config, load_yaml, deep_merge, derive_rng, derive_seed, ensure_dir, set_log_level
from metrics import DistanceFactory, roc_auc, support_metric_kind

logger = setup_logger('ExperimentService')

# stream keys under the global seed
STREAM_TRAIN_DATA, STREAM_TEST_IN, STREAM_TEST_OUT, STREAM_SCORE, STREAM_SAMPLE, STREAM_SUBSET = 1, 2, 3, 4, 5, 6
STREAM_MODEL_INIT, STREAM_TRAINING = 7, 8

ABLATION_AXES = ['mask', 'metric', 'attempts']
ABLATION_MASKS = [
    MaskSpec('alternating_checkerboard', 4),
    MaskSpec('alternating_checkerboard', 8),
    MaskSpec('alternating_checkerboard', 16),
    MaskSpec('fixed_checkerboard', 8),
    MaskSpec('center'),
    MaskSpec('random_patch', 8),
]
LIFT_FLAGS = {'inpaint': 'mask_inpaint', 'denoise': 'diffuse_denoise'}
REPLAY_KEYS = {'command', 'in_csv', 'out_csv'}
SYNTHETIC_FIELDS = ('family', 'side', 'orientation', 'period', 'cell', 'disc_count', 'radius_range', 'noise_std')
CHECKPOINT_NAME = 'checkpoint.lmd'


class ConfigError(ValueError):
    pass


class ExperimentService:
    """
    Experiment runs: train / score / eval / ablate / sample.

    Config resolution follows defaults (src/config/config.yaml) < user config file (JSON or YAML) < flags.
    Every command writes the resolved config to run.json under the output directory.
    """

    def __init__(self, user_config_path=None, flag_overrides: Optional[dict] = None):
        self.config = load_default_config()
        if user_config_path is not None:
            self.merge_user_config(load_yaml(user_config_path))
        self.override_config_by_flags(flag_overrides)
        self.validate_config()
        set_log_level(self.config['runtime']['log_level'])

    def merge_user_config(self, user_config: dict):
        unknown = set(user_config) - set(self.config) - REPLAY_KEYS
        if unknown:
            logger.warning(f"ignoring unknown config keys: {sorted(unknown)}")
        known = {k: v for k, v in user_config.items() if k in self.config}
        self.config = deep_merge(self.config, known)

    # command-line flags are flat while config.yaml is nested
    def override_config_by_flags(self, flag_overrides: Optional[dict]):
        if flag_overrides is None:
            return
        for key, value in flag_overrides.items():
            if value is None:
                continue
            if key == 'seed':
                self.config['seed'] = int(value)
            elif key == 'checkpoint':
                self.config['checkpoint'] = str(value)
            elif key == 'attempts':
                self.config['detector']['attempts'] = int(value)
            elif key == 'mask':
                self.config['detector']['mask']['variant'] = value
            elif key == 'grid_size':
                self.config['detector']['mask']['grid_size'] = int(value)
            elif key == 'metric':
                self.config['detector']['metric'] = value
            elif key == 'lift':
                self.config['detector']['lift'] = LIFT_FLAGS.get(value, value)
            elif key == 'axis':
                self.config['ablate']['axis'] = value
            elif key == 'workers':
                self.config['runtime']['workers'] = int(value)
            elif key == 'epochs':
                self.config['train']['epochs'] = int(value)
            else:
                raise ConfigError(f"flag --{key} does not map to a config field")

    def validate_config(self):
        try:
            if int(self.config['seed']) < 0:
                raise ConfigError(f"seed must be a non-negative integer, got {self.config['seed']}")
            train_config = self.train_config()
            train_config.validate()
            make_linear_schedule(train_config.T, train_config.beta_start, train_config.beta_end)
            self.detector_config().validate(train_config.T)
            if self.config['detector']['metric'] not in support_metric_kind:
                raise ConfigError(f"detector.metric must be one of {support_metric_kind}, got {self.config['detector']['metric']}")
            if self.config['ablate']['axis'] not in ABLATION_AXES:
                raise ConfigError(f"ablate.axis must be one of {ABLATION_AXES}, got {self.config['ablate']['axis']}")
            for name in ('in_domain', 'out_domain'):
                self.source_config(name)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError, NotImplementedError) as ex:
            raise ConfigError(f"invalid config: {ex}") from ex

    def source_config(self, name: str) -> dict:
        source = self.config['data'][name]
        kind = source.get('kind')
        if kind == 'synthetic':
            self._synthetic_spec(source, 1, 0).validate()
        elif kind == 'idx':
            required = ['train_path', 'test_path'] if name == 'in_domain' else ['test_path']
            missing = [key for key in required if not source.get(key)]
            if missing:
                raise ConfigError(f"data.{name}: idx source needs {missing}")
        else:
            raise ConfigError(f"data.{name}.kind must be synthetic or idx, got {kind}")
        return source

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=derive_seed(self.seed, STREAM_TRAINING), **self.config['train'])

    def detector_config(self) -> DetectorConfig:
        detector = self.config['detector']
        return DetectorConfig(attempts=int(detector['attempts']),
                              mask=MaskSpec(**detector['mask']),
                              metric=detector['metric'],
                              metric_params=detector.get('metric_params') or {},
                              aggregation=detector['aggregation'],
                              lift=detector['lift'],
                              lift_step=detector.get('lift_step'),
                              workers=int(self.config['runtime']['workers']))

    @property
    def seed(self) -> int:
        return int(self.config['seed'])

    # ---------------------------------------------------------------- data

    @staticmethod
    def _synthetic_spec(source: dict, count: int, seed: int) -> SyntheticSpec:
        fields = {key: source[key] for key in SYNTHETIC_FIELDS if key in source}
        return SyntheticSpec(count=count, seed=seed, **fields)

    def load_train_dataset(self) -> Dataset:
        source = self.config['data']['in_domain']
        if source['kind'] == 'synthetic':
            return generate(self._synthetic_spec(source, int(source['train_count']), derive_seed(self.seed, STREAM_TRAIN_DATA)))
        return read_idx(source['train_path'])

    def load_test_dataset(self, name: str) -> Dataset:
        source = self.config['data'][name]
        stream = STREAM_TEST_IN if name == 'in_domain' else STREAM_TEST_OUT
        if source['kind'] == 'synthetic':
            return generate(self._synthetic_spec(source, int(source['test_count']), derive_seed(self.seed, stream)))
        return read_idx(source['test_path']).subset(source.get('limit'), derive_rng(self.seed, STREAM_SUBSET, stream))

    def load_test_sets(self) -> Tuple[np.ndarray, List[str]]:
        in_set, out_set = self.load_test_dataset('in_domain'), self.load_test_dataset('out_domain')
        if in_set.image_shape != out_set.image_shape:
            raise ValueError(f"in-domain images {in_set.image_shape} and out-of-domain images {out_set.image_shape} differ in shape")
        labels = ['in'] * len(in_set) + ['out'] * len(out_set)
        return np.concatenate([in_set.images, out_set.images]), labels

    # ---------------------------------------------------------------- artifacts

    def write_run_json(self, out_dir: Path, command: str, **inputs):
        echo = dict(self.config, command=command, **inputs)
        with open(out_dir / 'run.json', 'w', encoding='utf-8') as f:
            json.dump(echo, f, indent=2, sort_keys=True)
            f.write('\n')

    def load_model(self, checkpoint: Optional[str] = None):
        checkpoint = checkpoint or self.config.get('checkpoint')
        if not checkpoint:
            raise ConfigError("a checkpoint is required: pass --checkpoint or set 'checkpoint' in the config")
        model, header = load_checkpoint(checkpoint)
        schedule = make_linear_schedule(header['T'], header['beta_start'], header['beta_end'])
        if header['T'] != self.config['train']['T']:
            logger.info(f"using the checkpoint's schedule (T = {header['T']}) over train.T = {self.config['train']['T']}")
        return model, schedule

    @staticmethod
    def check_model_shape(model: EpsilonModel, images: np.ndarray):
        if tuple(images.shape[1:]) != model.architecture.image_shape:
            raise ValueError(f"checkpoint image shape {model.architecture.image_shape} does not match data shape {tuple(images.shape[1:])}")

    # ---------------------------------------------------------------- commands

    def cmd_train(self, out_dir) -> Path:
        out_dir = ensure_dir(out_dir)
        self.write_run_json(out_dir, 'train')
        dataset = self.load_train_dataset()
        channels, height, width = dataset.image_shape
        architecture = ModelArchitecture(channels=channels, height=height, width=width,
                                         widths=list(self.config['model']['widths']),
                                         time_dim=int(self.config['model']['time_dim']))
        model = EpsilonModel(architecture, seed=derive_seed(self.seed, STREAM_MODEL_INIT))
        train_config = self.train_config()
        model, losses = train(model, dataset.images, train_config)

        checkpoint_path = out_dir / CHECKPOINT_NAME
        save_checkpoint(model, checkpoint_path, train_config.T, train_config.beta_start, train_config.beta_end)
        loss_df = pd.DataFrame({'epoch': range(1, len(losses) + 1), 'loss': losses}, columns=['epoch', 'loss'])
        loss_df.to_csv(out_dir / 'loss.csv', index=False, float_format='%.6g')
        logger.info(f"cmd_train. checkpoint: {checkpoint_path}, epochs: {len(losses)}")
        return checkpoint_path

    def _detector(self, model, schedule, **changes) -> LMDDetector:
        config = replace(self.detector_config(), **changes)
        return LMDDetector(model, schedule, config)

    def cmd_score(self, out_dir, checkpoint: Optional[str] = None) -> Optional[float]:
        out_dir = ensure_dir(out_dir)
        self.write_run_json(out_dir, 'score')
        model, schedule = self.load_model(checkpoint)
        images, labels = self.load_test_sets()
        self.check_model_shape(model, images)

        detector = self._detector(model, schedule)
        k = int(self.config['output']['grid_images'])
        reports, auc = detector.score_dataset(images, labels, derive_seed(self.seed, STREAM_SCORE), keep_reconstructions=k)

        write_reports_csv(reports, out_dir / 'scores.csv')
        write_reports_csv([r for r in reports if r.label == 'in'], out_dir / 'scores_in.csv')
        write_reports_csv([r for r in reports if r.label == 'out'], out_dir / 'scores_out.csv')
        self.write_reconstruction_grid(reports, images, out_dir / 'reconstructions.pgm')
        if auc is not None:
            self.write_auc(out_dir, auc)
        return auc

    @staticmethod
    def write_reconstruction_grid(reports: List[ScoreReport], images: np.ndarray, path):
        """One row per kept image: original, lifted (masked pixels mid-gray), mapped; first attempt."""
        tiles = []
        for report in reports:
            if report.reconstruction is None:
                continue
            tiles.extend([images[report.image_id], report.reconstruction.lifted[0], report.reconstruction.mapped[0]])
        if tiles and images.shape[1] == 1:
            write_pgm_grid(np.stack(tiles), 3, path)

    @staticmethod
    def write_auc(out_dir: Path, auc: float):
        text = f"{auc:.3f}"
        print(f"ROC-AUC: {text}")
        with open(out_dir / 'auc.txt', 'w', encoding='utf-8') as f:
            f.write(text + '\n')
        logger.info(f"ROC-AUC: {text}")

    def cmd_eval(self, in_csv, out_csv, out_dir) -> float:
        out_dir = ensure_dir(out_dir)
        auc = roc_auc(read_scores_csv(in_csv), read_scores_csv(out_csv))
        self.write_auc(out_dir, auc)
        self.write_run_json(out_dir, 'eval', in_csv=str(in_csv), out_csv=str(out_csv))
        return auc

    def cmd_ablate(self, out_dir, checkpoint: Optional[str] = None) -> pd.DataFrame:
        out_dir = ensure_dir(out_dir)
        axis = self.config['ablate']['axis']
        checkpoint = checkpoint or self.config.get('checkpoint')
        if not checkpoint:
            logger.info("cmd_ablate. no checkpoint given, training one first")
            checkpoint = str(self.cmd_train(out_dir))
            self.config['checkpoint'] = checkpoint
        self.write_run_json(out_dir, 'ablate')

        model, schedule = self.load_model(checkpoint)
        images, labels = self.load_test_sets()
        self.check_model_shape(model, images)
        score_seed = derive_seed(self.seed, STREAM_SCORE)

        rows = []
        if axis == 'mask':
            for mask in ABLATION_MASKS:
                _, auc = self._detector(model, schedule, mask=mask).score_dataset(images, labels, score_seed)
                rows.append({'axis': axis, 'setting': mask.label, 'auc': auc})
        elif axis == 'metric':
            detector = self._detector(model, schedule)
            reports, _ = detector.score_dataset(images, labels, score_seed, keep_reconstructions=len(labels))
            params = self.config['detector'].get('metric_params') or {}
            for kind in support_metric_kind:
                distance_svc = DistanceFactory.create_distance(kind, params, channels=model.architecture.channels)
                rows.append({'axis': axis, 'setting': distance_svc.label,
                             'auc': reports_auc(detector.rescore(reports, images, distance_svc))})
        elif axis == 'attempts':
            reports, _ = self._detector(model, schedule).score_dataset(images, labels, score_seed)
            for attempts in range(1, self.detector_config().attempts + 1):
                rows.append({'axis': axis, 'setting': attempts,
                             'auc': reports_auc([r.truncated(attempts) for r in reports])})
        else:
            raise ConfigError(f"unknown ablation axis {axis}; valid axes: {ABLATION_AXES}")

        table = pd.DataFrame(rows, columns=['axis', 'setting', 'auc'])
        table.to_csv(out_dir / f'ablation_{axis}.csv', index=False, float_format='%.6g')
        logger.info(f"cmd_ablate. axis: {axis}\n{table.to_string(index=False)}")
        return table

    def cmd_sample(self, out_dir, checkpoint: Optional[str] = None) -> np.ndarray:
        out_dir = ensure_dir(out_dir)
        self.write_run_json(out_dir, 'sample')
        model, schedule = self.load_model(checkpoint)
        count = int(self.config['output']['sample_count'])
        rngs = [derive_rng(self.seed, STREAM_SAMPLE, i) for i in range(count)]
        samples = sample_batch(model, schedule, (count, *model.architecture.image_shape), rngs)
        if model.architecture.channels == 1:
            write_pgm_grid(samples, int(np.ceil(np.sqrt(count))), out_dir / 'samples.pgm')
        np.save(out_dir / 'samples.npy', samples)
        return samples
