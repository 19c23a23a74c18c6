"""
The :mod:`~bicomb.cli` module is the ``bicomb`` command.

Each pipeline reads a YAML run configuration (see :mod:`bicomb.config`),
writes its artifacts to the output directory and finishes with
``summary.json`` and ``manifest.json``.  The summary payload (seed, config
hash, package versions, results, artifact names) is hashed; the timestamp
lives outside of it, so identical configurations give identical payloads.
Every artifact records the config hash, which ``bicomb verify`` checks
together with the manifest checksums.
"""

import argparse
import hashlib
import json
import logging
import platform
import sys
import traceback
from dataclasses import replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import yaml

from . import __version__
from .combmodel import (
    PumpRegime, classify_regime, frequency_to_wavelength, regime_boundaries
)
from .config import (
    REQUIRED_SECTIONS, ConfigError, Pipeline, from_dict, load_config
)
from .correlation import delta_g2_closed_form
from .defaults import REGIME_THRESHOLD
from .fitting import (
    FitProblem, FitResult, bootstrap_errors, derive_cavity_report, fit,
    model_counts
)
from .histogram import Histogram, mode_count, synthesize_auto, synthesize_cross
from .sagnac import (
    BASIS, DensityMatrix, balanced_fidelity_bound, beta_factors,
    contamination_weight, corrected_fidelity, fidelity_max_theta,
    postselected_state
)
from .tables import build_table_s1, cavity_table
from .tomography import (
    fidelity_errors, linear_inversion, mle_reconstruct, simulate_counts
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SUMMARY, MANIFEST = 'summary.json', 'manifest.json'
PLOT_KINDS = ('histogram', 'fit-overlay', 'density-matrix')


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _plain(value):
    """JSON-ready copy: builtin scalars, non-finite floats as strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else repr(value)
    return value


def _hash_line(config_hash):
    return f"# config_hash={config_hash}\n"


def emit_plotdata(artifact, kind, path, config_hash='', histogram=None):
    """Write plot-ready ``x,y[,yerr]`` columns.

    Parameters
    ----------
    artifact : Histogram, FitResult or DensityMatrix
    kind : {'histogram', 'fit-overlay', 'density-matrix'}
        ``histogram`` gives ``tau_s,counts,counts_err`` at the bin centres,
        ``fit-overlay`` gives ``tau_s,model_value`` on the grid of
        `histogram`, ``density-matrix`` gives 16 ``basis,re,im`` rows.
    path : path-like
    config_hash : str, optional
        Recorded in the header.
    histogram : Histogram, optional
        Grid of the ``fit-overlay`` kind.

    """
    if kind not in PLOT_KINDS:
        valid = ', '.join(f"'{k}'" for k in PLOT_KINDS)
        raise ValueError(f"'kind' must be one of {valid}, not {kind!r}.")
    if kind == 'histogram':
        if not isinstance(artifact, Histogram):
            raise TypeError("'histogram' plot data needs a Histogram.")
        table = pd.DataFrame({
            'tau_s': artifact.centers,
            'counts': artifact.counts,
            'counts_err': np.sqrt(artifact.counts),
        })
        doc = "tau_s: bin centre (s); counts; counts_err: Poisson error"
    elif kind == 'fit-overlay':
        if not isinstance(artifact, FitResult) or histogram is None:
            raise TypeError(
                "'fit-overlay' plot data needs a FitResult and its Histogram."
            )
        table = pd.DataFrame({
            'tau_s': histogram.centers,
            'model_value': model_counts(
                artifact.model, artifact.estimates, histogram.bin_edges
            ),
        })
        doc = "tau_s: bin centre (s); model_value: fitted counts per bin"
    else:
        if not isinstance(artifact, DensityMatrix):
            raise TypeError("'density-matrix' plot data needs a DensityMatrix.")
        labels = [f"{row}-{col}" for row in BASIS for col in BASIS]
        table = pd.DataFrame({
            'basis': labels,
            're': artifact.matrix.real.ravel(),
            'im': artifact.matrix.imag.ravel(),
        })
        doc = "basis: row-column element; re, im: real and imaginary parts"
    with open(path, 'w', newline='') as file:
        file.write(_hash_line(config_hash))
        file.write(f"# columns: {doc}\n")
        table.to_csv(file, index=False, float_format='%.17g')
    return Path(path)


class _Run:
    """Artifacts of one run, all named after the config hash."""

    def __init__(self, output_dir, config_hash):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.artifacts = []
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        self.artifacts.append(name)
        return self.output_dir / name

    def table(self, table, name, index=True):
        with open(self.path(name), 'w', newline='') as file:
            file.write(_hash_line(self.config_hash))
            table.to_csv(file, index=index, float_format='%.17g')

    def density_matrix(self, rho, name):
        self.path(name).write_text(
            _hash_line(self.config_hash) + rho.to_text()
        )

    def plot(self, artifact, kind, name, histogram=None):
        emit_plotdata(artifact, kind, self.path(name), self.config_hash,
                      histogram)

    def finish(self, pipeline, seed, results):
        """Write the summary and the manifest; return the summary."""
        payload = _plain({
            'schema_version': SCHEMA_VERSION,
            'pipeline': pipeline,
            'seed': seed,
            'config_hash': self.config_hash,
            'versions': {
                'bicomb': __version__,
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__,
                'pandas': pd.__version__,
            },
            'results': results,
            'artifacts': sorted(self.artifacts),
        })
        canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
        summary = {
            'payload': payload,
            'payload_sha256': hashlib.sha256(canonical.encode()).hexdigest(),
            'generated_at': datetime.now(timezone.utc).isoformat(),
        }
        summary_path = self.output_dir / SUMMARY
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
        files = {
            name: _sha256(self.output_dir / name)
            for name in sorted(self.artifacts) + [SUMMARY]
        }
        manifest = {'config_hash': self.config_hash, 'files': files}
        (self.output_dir / MANIFEST).write_text(
            json.dumps(manifest, indent=2, sort_keys=True)
        )
        logger.info("wrote %d artifacts to %s", len(files), self.output_dir)
        return summary


def _synthesize(config, run, kind):
    if kind == 'cross':
        purity = config.section('fit').get('purity', 1.0)
        histogram = synthesize_cross(
            config.comb, config.detector, purity, seed=config.seed
        )
    else:
        histogram = synthesize_auto(config.comb, config.detector,
                                    seed=config.seed)
    histogram.metadata['config_hash'] = run.config_hash
    histogram.to_csv(run.path(f"histogram-{kind}.csv"))
    run.plot(histogram, 'histogram', f"plot-histogram-{kind}.csv")
    return histogram


def _signal_wavelength(config):
    wavelength = config.section('fit').get('wavelength_nm')
    if wavelength is None and config.comb.center_freq > 0:
        wavelength = float(frequency_to_wavelength(config.comb.center_freq))
    return wavelength


def _fit_histogram(run, histogram, model, singly_resonant, bootstrap, seed,
                   wavelength=None, fsr=None, bounds=None):
    problem = FitProblem.from_histogram(
        histogram, model, singly_resonant=singly_resonant, bounds=bounds
    )
    result = fit(problem)
    result.provenance['config_hash'] = run.config_hash
    result.write(run.path('fit-report.yaml'))
    run.plot(result, 'fit-overlay', 'plot-fit-overlay.csv', histogram)
    results = {
        'model': result.model,
        'converged': result.converged,
        'singly_resonant': result.singly_resonant,
        'reduced_chi2': result.reduced_chi2,
        'estimates': result.estimates,
        'errors': result.errors,
    }
    if bootstrap:
        results['bootstrap_errors'] = bootstrap_errors(
            problem, n_resamples=bootstrap, seed=seed
        )
    if wavelength is not None and result.converged:
        if 't0' not in result.estimates and fsr is None:
            logger.warning("no round-trip time fitted, cavity report skipped")
            return results
        report = derive_cavity_report(
            result, wavelength, None if 't0' in result.estimates else fsr
        )
        cavity = {
            'wavelength_nm': report.wavelength,
            'fsr_hz': report.fsr,
            'fwhm_hz': report.fwhm,
            'finesse': report.finesse,
            'q_factor': report.q_factor,
        }
        run.table(pd.DataFrame([cavity]), 'cavity-report.csv', index=False)
        results['cavity'] = cavity
    return results


def _cross_fit(config, run):
    histogram = _synthesize(config, run, 'cross')
    section = config.section('fit')
    comb = config.comb
    results = _fit_histogram(
        run, histogram,
        model=section.get('model', 'cross_sum'),
        singly_resonant=section.get('singly_resonant', comb.idler_unconfined),
        bootstrap=section.get('bootstrap', 0),
        seed=config.seed,
        wavelength=_signal_wavelength(config),
        fsr=comb.fsr,
        bounds=section.get('bounds'),
    )
    results['truth'] = {
        'gamma_s': comb.gamma_s,
        'gamma_i': comb.gamma_idler,
        'sigma': config.detector.jitter_sigma,
        't0': comb.round_trip_time,
        'purity': section.get('purity', 1.0),
    }
    return results


def _auto_mode_count(config, run):
    histogram = _synthesize(config, run, 'auto')
    estimate = mode_count(histogram, config.comb)
    return {
        'delta_g2_s': estimate.delta_g2,
        'delta_g2_error_s': estimate.std_error,
        'mode_estimate': estimate.mode_estimate,
        'mode_error': estimate.mode_error,
        'mode_count_true': config.comb.mode_count,
        'delta_g2_closed_form_s': delta_g2_closed_form(config.comb),
        'window_too_narrow': histogram.metadata['window_too_narrow'],
    }


def _tomography(config, run):
    spec = config.sagnac
    section = config.section('tomography')
    truth = postselected_state(spec)
    record = simulate_counts(truth, section.get('scale', 1e4), config.seed)
    record.to_csv(run.path('tomography-record.csv'),
                  {'config_hash': run.config_hash})
    linear = linear_inversion(record)
    rho, info = mle_reconstruct(record, full_output=True)
    for name, state in (('true', truth), ('linear', linear), ('mle', rho)):
        run.density_matrix(state, f"rho-{name}.txt")
    run.plot(rho, 'density-matrix', 'plot-density-matrix.csv')
    fidelity, theta = fidelity_max_theta(rho)
    corrected, clamped = corrected_fidelity(fidelity, spec)
    results = {
        'fidelity': fidelity,
        'theta': theta,
        'fidelity_true': fidelity_max_theta(truth)[0],
        'corrected_fidelity': corrected,
        'corrected_clamped': clamped,
        'contamination_weight': contamination_weight(spec),
        'beta_h_abs': abs(beta_factors(spec)[0]),
        'balanced_fidelity_bound': balanced_fidelity_bound(
            replace(spec, delta_tau=0.0)
        ),
        'linear_min_eigenvalue': linear.eigenvalues.min(),
        'mle_converged': info['converged'],
        'concurrence': rho.concurrence,
    }
    n_resamples = section.get('bootstrap', 100)
    if n_resamples >= 2:
        _, results['fidelity_std'] = fidelity_errors(
            record, n_resamples, seed=config.seed
        )
    return results


def _regime_report(config, run):
    section = config.section('regime')
    threshold = section.get('threshold', REGIME_THRESHOLD)
    modes = config.comb.mode_count
    rows = []
    for zeta_abs2 in section.get('zeta_abs2') or []:
        regime = classify_regime(
            PumpRegime(np.sqrt(zeta_abs2), modes), threshold
        )
        rows.append({
            'zeta_abs2': zeta_abs2,
            'two_m_zeta_abs2': 2 * modes * zeta_abs2,
            'two_zeta_abs2': 2 * zeta_abs2,
            'regime': regime.value,
        })
    table = pd.DataFrame(
        rows, columns=['zeta_abs2', 'two_m_zeta_abs2', 'two_zeta_abs2',
                       'regime']
    )
    run.table(table, 'regime.csv', index=False)
    boundaries = regime_boundaries(modes, threshold)
    return {
        'mode_count': modes,
        'threshold': threshold,
        'boundaries': {k.value: v for k, v in boundaries.items()},
        'rows': rows,
    }


def _table_s1(config, run):
    table = cavity_table(build_table_s1(config.section('table_s1')
                                        .get('datafile')))
    run.table(table, 'table-s1.csv')
    return {
        int(wavelength): {
            'finesse': row['finesse'],
            'q_factor': row['q_factor'],
            'idler_finesse': row['idler_finesse'],
            'idler_q_factor': row['idler_q_factor'],
        }
        for wavelength, row in table.iterrows()
    }


PIPELINES = {
    Pipeline.CROSS_FIT: _cross_fit,
    Pipeline.AUTO_MODE_COUNT: _auto_mode_count,
    Pipeline.TOMOGRAPHY: _tomography,
    Pipeline.REGIME_REPORT: _regime_report,
    Pipeline.TABLE_S1: _table_s1,
}


def _seeded(config):
    if config.seed is None:
        config.seed = int(np.random.SeedSequence().entropy % 2**64)
        logger.warning("no seed given, drew %d", config.seed)
    return config


def run(config, pipeline=None):
    """Execute a pipeline and write its artifacts.

    Parameters
    ----------
    config : :class:`~bicomb.config.RunConfig`
    pipeline : :class:`~bicomb.config.Pipeline`, optional
        Defaults to ``config.pipeline``.

    Returns
    -------
    dict
        The summary written to ``summary.json``.

    """
    config = _seeded(config)
    if pipeline is not None:
        config.pipeline = pipeline
    pipeline = config.pipeline
    for name in REQUIRED_SECTIONS[pipeline]:
        if not config.sections.get(name):
            raise ConfigError(f"{name}: section required by {pipeline.value}")
    run_ = _Run(config.output_dir, config.config_hash)
    logger.info("running %s, config hash %s", pipeline.value, run_.config_hash)
    results = PIPELINES[pipeline](config, run_)
    return run_.finish(pipeline, config.seed, results)


def synthesize(config, kind):
    """Write a synthesized histogram (``kind`` is 'cross' or 'auto')."""
    config = _seeded(config)
    for name in ('comb', 'detector'):
        if getattr(config, name) is None:
            raise ConfigError(f"{name}: section required to synthesize")
    run_ = _Run(config.output_dir, config.config_hash)
    histogram = _synthesize(config, run_, kind)
    results = {
        'total_counts': histogram.total,
        'window_mass': histogram.metadata['window_mass'],
        'window_too_narrow': histogram.metadata['window_too_narrow'],
    }
    return run_.finish(f"synth-{kind}", config.seed, results)


def fit_file(path, model, output_dir, singly_resonant=False, wavelength=None,
             fsr=None, bootstrap=0, seed=None, bounds=None):
    """Fit a histogram file and write the report next to its plot data."""
    histogram = Histogram.read_csv(path)
    settings = {
        'histogram_sha256': _sha256(path),
        'model': model,
        'singly_resonant': singly_resonant,
        'wavelength_nm': wavelength,
        'fsr_hz': fsr,
        'bootstrap': bootstrap,
        'bounds': bounds,
    }
    digest = hashlib.sha256(
        json.dumps(settings, sort_keys=True).encode()
    ).hexdigest()
    run_ = _Run(output_dir, digest)
    results = _fit_histogram(
        run_, histogram, model, singly_resonant, bootstrap, seed,
        wavelength, fsr, bounds
    )
    return run_.finish('fit', seed, results)


def _header_hash(path):
    """Config hash recorded in an artifact, or None."""
    if path.suffix == '.yaml':
        report = yaml.safe_load(path.read_text()) or {}
        return (report.get('provenance') or {}).get('config_hash')
    with open(path) as file:
        for line in file:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].strip().partition('=')
            if key == 'config_hash':
                return value.strip('"')
    return None


def verify(output_dir):
    """Check an output directory against its manifest.

    Returns
    -------
    list of str
        Problems found; empty when every checksum matches and every
        artifact records the manifest's config hash.

    """
    output_dir = Path(output_dir)
    manifest_path = output_dir / MANIFEST
    if not manifest_path.exists():
        return [f"{manifest_path}: missing"]
    manifest = json.loads(manifest_path.read_text())
    expected_hash = manifest.get('config_hash')
    problems = []
    for name, checksum in manifest.get('files', {}).items():
        path = output_dir / name
        if not path.exists():
            problems.append(f"{name}: missing")
            continue
        if _sha256(path) != checksum:
            problems.append(f"{name}: checksum mismatch")
        if name == SUMMARY:
            summary = json.loads(path.read_text())
            payload = summary.get('payload', {})
            canonical = json.dumps(
                payload, sort_keys=True, separators=(',', ':')
            )
            digest = hashlib.sha256(canonical.encode()).hexdigest()
            if digest != summary.get('payload_sha256'):
                problems.append(f"{name}: payload hash mismatch")
            recorded = payload.get('config_hash')
        else:
            recorded = _header_hash(path)
        if recorded != expected_hash:
            problems.append(f"{name}: config hash {recorded!r} does not match")
    return problems


def _origin(error):
    """Name of the innermost package module the error went through."""
    package = Path(__file__).parent
    for frame in reversed(traceback.extract_tb(error.__traceback__)):
        path = Path(frame.filename)
        if path.parent == package:
            return path.stem
    return 'cli'


def _parser():
    parser = argparse.ArgumentParser(
        prog='bicomb',
        description="Model, synthesize and fit biphoton frequency comb data.",
    )
    parser.add_argument(
        '-v', '--verbose', action='count', default=0,
        help="log progress (-v) or debugging details (-vv)",
    )
    commands = parser.add_subparsers(dest='command', required=True)

    def with_config(name, help_text, optional=False):
        command = commands.add_parser(name, help=help_text)
        command.add_argument(
            'config', nargs='?' if optional else None,
            help="YAML run configuration",
        )
        command.add_argument('--seed', type=int, help="override the seed")
        command.add_argument(
            '--output-dir', help="override the output directory"
        )
        return command

    with_config('run', "run the pipeline named in the configuration")
    with_config('synth-cross', "synthesize a cross-correlation histogram")
    with_config('synth-auto', "synthesize an autocorrelation histogram")
    with_config('mode-count', "estimate the mode number (AutoModeCount)")
    with_config('tomo', "simulate tomography and reconstruct (Tomography)")
    with_config('regime', "classify pump regimes (RegimeReport)")
    table = with_config('table-s1', "cavity properties table (TableS1)",
                        optional=True)
    table.add_argument('--datafile', help="comb parameter table")

    fit_command = commands.add_parser('fit', help="fit a histogram file")
    fit_command.add_argument('histogram', help="histogram CSV file")
    fit_command.add_argument(
        '--config', help="run configuration whose fit section supplies "
        "defaults for the options below, bounds and the seed"
    )
    fit_command.add_argument('--model', help="fit model (cross_sum)")
    fit_command.add_argument('--singly-resonant', action='store_true',
                             default=None, help="hold gamma_i at infinity")
    fit_command.add_argument('--wavelength', type=float,
                             help="signal wavelength (nm) for the cavity report")
    fit_command.add_argument('--fsr', type=float,
                             help="free spectral range (Hz) if not fitted")
    fit_command.add_argument('--bootstrap', type=int,
                             help="number of bootstrap resamples")
    fit_command.add_argument('--seed', type=int)
    fit_command.add_argument('--output-dir', default='.')

    verify_command = commands.add_parser(
        'verify', help="check an output directory against its manifest"
    )
    verify_command.add_argument('output_dir')

    plot_command = commands.add_parser('plotdata',
                                       help="write plot-ready CSV data")
    plot_command.add_argument('artifact', help="histogram, fit report or "
                              "density matrix file")
    plot_command.add_argument('--kind', required=True,
                              help=f"one of {', '.join(PLOT_KINDS)}")
    plot_command.add_argument('--histogram',
                              help="histogram file of a fit-overlay")
    plot_command.add_argument('--output', required=True)
    return parser


_SUBCOMMAND_PIPELINES = {
    'mode-count': Pipeline.AUTO_MODE_COUNT,
    'tomo': Pipeline.TOMOGRAPHY,
    'regime': Pipeline.REGIME_REPORT,
    'table-s1': Pipeline.TABLE_S1,
}


def _load(args):
    if args.command == 'table-s1' and args.config is None:
        content = {'pipeline': 'TableS1',
                   'table_s1': {'datafile': args.datafile}}
        return from_dict(content, args.seed, args.output_dir)
    config = load_config(args.config, args.seed, args.output_dir)
    if args.command == 'table-s1' and args.datafile:
        config.sections['table_s1'] = {'datafile': args.datafile}
    return config


def _plotdata(args):
    kind, path = args.kind, Path(args.artifact)
    artifact, histogram = None, None
    if kind == 'histogram':
        artifact = Histogram.read_csv(path)
    elif kind == 'fit-overlay':
        if args.histogram is None:
            raise ValueError("'fit-overlay' needs --histogram.")
        artifact = FitResult.read(path)
        histogram = Histogram.read_csv(args.histogram)
    elif kind == 'density-matrix':
        artifact = DensityMatrix.read(path, False)
    emit_plotdata(artifact, kind, args.output, _header_hash(path) or '',
                  histogram)


def _fit(args):
    """Fit with the flags, falling back on the ``fit`` section of --config."""
    section, seed, fsr = {}, args.seed, args.fsr
    singly_resonant, wavelength = False, None
    if args.config is not None:
        config = load_config(args.config, seed=args.seed)
        section, seed = config.section('fit'), config.seed
        wavelength = _signal_wavelength(config)
        if config.comb is not None:
            singly_resonant = config.comb.idler_unconfined
            if fsr is None:
                fsr = config.comb.fsr

    def option(flag, key, default):
        if flag is not None:
            return flag
        value = section.get(key)
        return default if value is None else value

    fit_file(
        args.histogram, option(args.model, 'model', 'cross_sum'),
        args.output_dir,
        singly_resonant=option(args.singly_resonant, 'singly_resonant',
                               singly_resonant),
        wavelength=option(args.wavelength, 'wavelength_nm', wavelength),
        fsr=fsr,
        bootstrap=option(args.bootstrap, 'bootstrap', 0),
        seed=seed,
        bounds=section.get('bounds'),
    )


def _dispatch(args):
    if args.command == 'verify':
        problems = verify(args.output_dir)
        for problem in problems:
            print(f"verify: {problem}", file=sys.stderr)
        return 1 if problems else 0
    if args.command == 'plotdata':
        _plotdata(args)
        return 0
    if args.command == 'fit':
        _fit(args)
        return 0
    config = _load(args)
    if args.command in ('synth-cross', 'synth-auto'):
        synthesize(config, args.command.split('-')[1])
    else:
        run(config, _SUBCOMMAND_PIPELINES.get(args.command))
    print(config.output_dir)
    return 0


def main(argv=None):
    """Entry point of the ``bicomb`` command; returns the exit status."""
    args = _parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose,
                                                      logging.DEBUG)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except Exception as error:
        print(f"error [{_origin(error)}]: {error}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
