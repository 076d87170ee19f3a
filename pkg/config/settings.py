"""
Configuration settings for the Measuring the Data pipeline.

Settings are layered: built-in defaults < JSON config file < MEASURING_* environment
variables < explicit overrides (CLI flags).
"""
import os
import json
import logging
from pathlib import Path

# Base directories
ROOT_DIR = Path(__file__).parent.parent
CONFIG_DIR = ROOT_DIR / 'config'
TEMPLATES_DIR = ROOT_DIR / 'templates'
LOGS_DIR = ROOT_DIR / 'logs'

DEFAULT_CONFIG_FILE = CONFIG_DIR / 'pipeline.json'
CHECKPOINT_SCHEMA_FILE = TEMPLATES_DIR / 'checkpoint_schema.json'
ENV_PREFIX = 'MEASURING_'

logger = logging.getLogger(__name__)


def load_config_file(config_file=None):
    """
    Load a flat key/value JSON config file.

    Args:
        config_file (str or Path, optional): Path to the file; defaults to config/pipeline.json

    Returns:
        dict: Key/value settings (empty when the default file is absent)
    """
    path = Path(config_file) if config_file else DEFAULT_CONFIG_FILE
    if not path.exists():
        if config_file:
            raise FileNotFoundError(f"Config file not found: {path}")
        logger.debug(f"No config file at {path}, using built-in defaults")
        return {}

    with open(path, 'r', encoding='utf-8') as f:
        settings = json.load(f)

    if not isinstance(settings, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    logger.info(f"Loaded {len(settings)} settings from {path}")
    return settings


def load_environment(keys):
    """
    Read MEASURING_<KEY> environment variables for the given keys.

    Values are parsed as JSON when possible (numbers, lists, null) and kept as strings otherwise.
    """
    settings = {}
    for key in keys:
        raw = os.environ.get(f"{ENV_PREFIX}{key.upper()}")
        if raw is None:
            continue
        try:
            settings[key] = json.loads(raw)
        except json.JSONDecodeError:
            settings[key] = raw
    return settings


def resolve_settings(config_file=None, overrides=None):
    """
    Merge config file, environment and overrides into a single settings dict.

    Args:
        config_file (str or Path, optional): JSON config file
        overrides (dict, optional): Values that win over everything else; None values are ignored

    Returns:
        dict: Merged settings, ready for PipelineConfig(**settings)
    """
    from models.pipeline import PipelineConfig

    settings = dict(load_config_file(config_file))
    settings.update(load_environment(PipelineConfig.model_fields.keys()))
    for key, value in (overrides or {}).items():
        if value is not None:
            settings[key] = value
    return settings
