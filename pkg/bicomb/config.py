"""
The :mod:`~bicomb.config` module reads run configurations.

A run is described by one YAML file with top-level ``pipeline``, ``seed``
and ``output_dir`` keys and the sections ``comb``, ``detector``,
``sagnac``, ``fit``, ``tomography``, ``regime`` and ``table_s1``; see
``bicomb/resources/example-run.yaml``.  Only the sections used by the
chosen pipeline are required.
"""

import enum
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .combmodel import CombSpec
from .histogram import DetectorSpec
from .sagnac import SagnacSpec

#: Environment variable naming the default output directory.
OUTPUT_DIR_ENV = 'BICOMB_OUTPUT_DIR'
DEFAULT_OUTPUT_DIR = 'bicomb-output'

POSITIVE, NONNEGATIVE = 'positive', 'nonnegative'

#: Known keys of every section: expected type and sign constraint.
SCHEMA = {
    'comb': {
        'fsr_hz': (float, POSITIVE),
        'fwhm_signal_hz': (float, POSITIVE),
        'fwhm_idler_hz': (float, POSITIVE),
        'idler_unconfined': (bool, None),
        'center_nm': (float, POSITIVE),
        'mode_count': (int, POSITIVE),
        'pump_nm': (float, POSITIVE),
    },
    'detector': {
        'jitter_sigma_s': (float, POSITIVE),
        'bin_width_s': (float, POSITIVE),
        'window_s': (list, None),
        'accidental_rate': (float, NONNEGATIVE),
        'total_counts': (float, NONNEGATIVE),
    },
    'fit': {
        'model': (str, None),
        'purity': (float, NONNEGATIVE),
        'singly_resonant': (bool, None),
        'wavelength_nm': (float, POSITIVE),
        'bootstrap': (int, NONNEGATIVE),
        'bounds': (dict, None),
    },
    'sagnac': {
        'reflectance': (float, NONNEGATIVE),
        'eta_sl': (float, POSITIVE),
        'eta_sr': (float, POSITIVE),
        'eta_il': (float, POSITIVE),
        'eta_ir': (float, POSITIVE),
        'delta_tau_s': (float, NONNEGATIVE),
        'gamma': (float, POSITIVE),
        'phase_phi': (float, None),
        'delta_theta': (float, None),
    },
    'tomography': {
        'scale': (float, POSITIVE),
        'bootstrap': (int, NONNEGATIVE),
    },
    'regime': {
        'threshold': (float, POSITIVE),
        'zeta_abs2': (list, None),
    },
    'table_s1': {
        'datafile': (str, None),
    },
}

TOP_LEVEL = ('pipeline', 'seed', 'output_dir')


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


class Pipeline(enum.Enum):
    CROSS_FIT = 'CrossFit'
    AUTO_MODE_COUNT = 'AutoModeCount'
    TOMOGRAPHY = 'Tomography'
    REGIME_REPORT = 'RegimeReport'
    TABLE_S1 = 'TableS1'

    @classmethod
    def parse(cls, name):
        """Accept ``'CrossFit'``, ``'cross-fit'`` or ``'cross_fit'``."""
        key = str(name).replace('-', '').replace('_', '').lower()
        for pipeline in cls:
            if pipeline.value.lower() == key:
                return pipeline
        valid = ', '.join(p.value for p in cls)
        raise ConfigError(f"pipeline: must be one of {valid}, not {name!r}")


REQUIRED_SECTIONS = {
    Pipeline.CROSS_FIT: ('comb', 'detector'),
    Pipeline.AUTO_MODE_COUNT: ('comb', 'detector'),
    Pipeline.TOMOGRAPHY: ('sagnac',),
    Pipeline.REGIME_REPORT: ('comb',),
    Pipeline.TABLE_S1: (),
}


@dataclass
class RunConfig:
    """A validated run configuration.

    `sections` holds the normalized content of every section, from which
    :func:`config_hash` is computed; the specs are built from it.
    """

    pipeline: Pipeline
    seed: Optional[int]
    output_dir: Path
    sections: dict = field(default_factory=dict)
    comb: Optional[CombSpec] = None
    detector: Optional[DetectorSpec] = None
    sagnac: Optional[SagnacSpec] = None

    def section(self, name):
        return self.sections.get(name) or {}

    @property
    def config_hash(self):
        return config_hash(self.pipeline, self.seed, self.sections)


def config_hash(pipeline, seed, sections):
    """SHA-256 of the canonical JSON of a configuration.

    The output directory is not part of it: moving a run does not change
    what it computes.
    """
    canonical = json.dumps(
        {'pipeline': pipeline.value, 'seed': seed, **sections},
        sort_keys=True, separators=(',', ':'),
    )
    return hashlib.sha256(canonical.encode()).hexdigest()


def _number(value, kind, where):
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, not {value!r}")
    try:
        # PyYAML reads 1e5 and 3.5e9 as strings
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, not {value!r}")
    if kind is int:
        if number != int(number):
            raise ConfigError(f"{where}: expected an integer, not {value!r}")
        return int(number)
    return number


def _bounds(value, where):
    """``{name: [lower, upper]}`` with finite or infinite floats."""
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping")
    bounds = {}
    for name, pair in value.items():
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"{where}.{name}: expected [lower, upper]")
        lower, upper = (_number(v, float, f"{where}.{name}") for v in pair)
        if not lower < upper:
            raise ConfigError(f"{where}.{name}: lower must be below upper")
        bounds[str(name)] = [lower, upper]
    return bounds


def _check_sign(value, constraint, where):
    if constraint == POSITIVE and not value > 0:
        raise ConfigError(f"{where}: must be > 0")
    if constraint == NONNEGATIVE and not value >= 0:
        raise ConfigError(f"{where}: must be >= 0")


def _normalize_section(name, content):
    if content is None:
        return None
    if not isinstance(content, dict):
        raise ConfigError(f"{name}: expected a mapping")
    schema = SCHEMA[name]
    normalized = {}
    for key, value in content.items():
        where = f"{name}.{key}"
        if key not in schema:
            raise ConfigError(f"{where}: unknown key")
        kind, constraint = schema[key]
        if value is None:
            normalized[key] = None
        elif kind in (float, int):
            number = _number(value, kind, where)
            _check_sign(number, constraint, where)
            normalized[key] = number
        elif kind is list:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}: expected a list")
            normalized[key] = [
                _number(item, float, f"{where}[{i}]")
                for i, item in enumerate(value)
            ]
        elif kind is dict:
            normalized[key] = _bounds(value, where)
        elif kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{where}: expected true or false")
            normalized[key] = value
        else:
            normalized[key] = str(value)
    return normalized


def _build(spec_class, name, section):
    try:
        return spec_class.from_config(section)
    except KeyError as error:
        raise ConfigError(f"{name}: {error.args[0]}")
    except ValueError as error:
        raise ConfigError(f"{name}: {error}")


def from_dict(content, seed=None, output_dir=None, source='<config>'):
    """Validate a parsed configuration.

    Parameters
    ----------
    content : dict
        Parsed YAML document.
    seed : int, optional
        Overrides the ``seed`` of `content`.
    output_dir : path-like, optional
        Overrides ``output_dir``; otherwise the file value, then the
        ``BICOMB_OUTPUT_DIR`` environment variable, then ``bicomb-output``.
    source : str
        Name used in error messages.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError

    """
    if not content:
        raise ConfigError(f"{source}: empty configuration")
    if not isinstance(content, dict):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    unknown = set(content) - set(TOP_LEVEL) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    if 'pipeline' not in content:
        raise ConfigError("pipeline: missing")
    pipeline = Pipeline.parse(content['pipeline'])
    if seed is None and content.get('seed') is not None:
        seed = _number(content['seed'], int, 'seed')
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError("seed: must be a 64-bit unsigned integer")
    output_dir = Path(
        output_dir or content.get('output_dir')
        or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR
    )
    sections = {
        name: _normalize_section(name, content[name])
        for name in SCHEMA if name in content
    }
    for name in REQUIRED_SECTIONS[pipeline]:
        if not sections.get(name):
            raise ConfigError(f"{name}: section required by {pipeline.value}")
    config = RunConfig(pipeline, seed, output_dir, sections)
    if sections.get('comb'):
        config.comb = _build(CombSpec, 'comb', sections['comb'])
    if sections.get('detector'):
        config.detector = _build(DetectorSpec, 'detector', sections['detector'])
    if sections.get('sagnac'):
        config.sagnac = _build(SagnacSpec, 'sagnac', sections['sagnac'])
    threshold = config.section('regime').get('threshold')
    if threshold is not None and not threshold < 1:
        raise ConfigError("regime.threshold: must be < 1")
    zetas = config.section('regime').get('zeta_abs2') or []
    if any(not np.isfinite(z) or z < 0 for z in zetas):
        raise ConfigError("regime.zeta_abs2: values must be >= 0")
    return config


def load_config(path, seed=None, output_dir=None):
    """Read and validate a YAML run configuration.

    Syntax errors are reported with their line and column.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ConfigError(f"{path}: {error.strerror}")
    try:
        content = yaml.safe_load(text)
    except yaml.YAMLError as error:
        mark = getattr(error, 'problem_mark', None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else path
        problem = getattr(error, 'problem', None) or str(error)
        raise ConfigError(f"{where}: {problem}")
    return from_dict(content, seed, output_dir, source=str(path))
