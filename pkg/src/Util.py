import logging
import os
from copy import deepcopy
from pathlib import Path

import numpy as np
import yaml


def get_project_root() -> Path:
    return Path(__file__).parent.parent


def setup_logger(tag, level=logging.DEBUG):
    logger = logging.getLogger(tag)
    logger.setLevel(level)

    # setup_logger is called once per module, but tests re-import freely
    if not logger.handlers:
        handler: logging.StreamHandler = logging.StreamHandler()
        formatter: logging.Formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    return logger


def set_log_level(level: str):
    """Apply runtime.log_level to every logger created through setup_logger."""
    for name, logger in logging.Logger.manager.loggerDict.items():
        if isinstance(logger, logging.Logger) and logger.handlers:
            logger.setLevel(level.upper())


def load_yaml(path) -> dict:
    # JSON documents are valid YAML, so run.json files load through here as well
    with open(path, encoding='utf-8') as f:
        loaded = yaml.load(f, Loader=yaml.FullLoader)
    return loaded if loaded is not None else {}


def load_default_config() -> dict:
    return load_yaml(os.path.join(get_project_root(), 'src/config/config.yaml'))


def deep_merge(base: dict, override: dict) -> dict:
    """Return a copy of base with override merged in; nested dicts merge, everything else replaces."""
    merged = deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = deepcopy(value)
    return merged


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, *keys); the same key path always yields the same draws."""
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit child seed for (seed, *keys)."""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])
