"""
The :mod:`~bicomb.histogram` module synthesizes delayed-coincidence
histograms such as those recorded by a time-correlated single photon
counting module, and estimates the time-integrated bunching of
autocorrelation histograms.

Expected counts are integrated over each bin with a Gauss-Legendre rule, a
flat accidental level is added and, unless the noiseless expectation is
asked for, every bin is drawn from a Poisson distribution.
"""

import enum
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .combmodel import CombSpec
from .correlation import (
    AutoCorrelationResult, auto_convolved, cross_sum_shape,
    delta_g2_closed_form
)
from .defaults import (
    BASELINE_EDGE_FRACTION, BASELINE_TOLERANCE, GAUSS_LEGENDRE_ORDER,
    WINDOW_MASS_FLOOR
)

logger = logging.getLogger(__name__)


class BaselineError(RuntimeError):
    """The histogram does not reach its baseline at one of its edges."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class HistogramKind(enum.Enum):
    CROSS = 'cross'
    AUTO = 'auto'


@dataclass(frozen=True)
class DetectorSpec:
    """Timing resolution and binning of the coincidence measurement.

    Parameters
    ----------
    jitter_sigma : float
        Gaussian timing jitter of each detector (s).
    bin_width : float
        Width of the histogram bins (s).
    window : tuple of float
        ``(tau_min, tau_max)`` delay window (s).
    accidental_rate : float, default 0
        Mean accidental coincidences per bin.
    total_counts : float, default 0
        Mean number of true coincidences (cross-correlation) or of baseline
        coincidences (autocorrelation) in the window.

    """

    jitter_sigma: float
    bin_width: float
    window: tuple
    accidental_rate: float = 0.0
    total_counts: float = 0.0

    def __post_init__(self):
        if not self.jitter_sigma > 0:
            raise ValueError("'jitter_sigma' must be positive.")
        if not self.bin_width > 0:
            raise ValueError("'bin_width' must be positive.")
        if len(self.window) != 2:
            raise ValueError("'window' must be a (tau_min, tau_max) pair.")
        tau_min, tau_max = map(float, self.window)
        if not tau_min < tau_max:
            raise ValueError("'window' must satisfy tau_min < tau_max.")
        if self.bin_width > tau_max - tau_min:
            raise ValueError("'bin_width' cannot exceed the window length.")
        if self.accidental_rate < 0 or self.total_counts < 0:
            raise ValueError("counts cannot be negative.")
        object.__setattr__(self, 'window', (tau_min, tau_max))

    @property
    def edges(self):
        """Bin edges tiling the window; the last bin may overhang it."""
        tau_min, tau_max = self.window
        n_bins = int(np.ceil((tau_max - tau_min) / self.bin_width - 1e-9))
        return tau_min + self.bin_width * np.arange(n_bins + 1)

    @classmethod
    def from_config(cls, section):
        """Build from the ``detector`` section of a run configuration."""
        required = ('jitter_sigma_s', 'bin_width_s', 'window_s')
        missing = [key for key in required if key not in section]
        if missing:
            raise KeyError(f"missing detector key(s): {', '.join(missing)}")
        return cls(
            jitter_sigma=float(section['jitter_sigma_s']),
            bin_width=float(section['bin_width_s']),
            window=tuple(section['window_s']),
            accidental_rate=float(section.get('accidental_rate', 0.0)),
            total_counts=float(section.get('total_counts', 0.0)),
        )

    def to_config(self):
        return {
            'jitter_sigma_s': self.jitter_sigma,
            'bin_width_s': self.bin_width,
            'window_s': list(self.window),
            'accidental_rate': self.accidental_rate,
            'total_counts': self.total_counts,
        }


@dataclass(eq=False)
class Histogram:
    """Coincidence counts binned in delay.

    `counts` holds integers for synthesized or measured data, and floats for
    noiseless expectations.  `metadata` records how the histogram was made
    (comb, detector, seed and generator); it must be JSON serializable.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    kind: HistogramKind
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts)
        self.kind = HistogramKind(self.kind)
        if self.bin_edges.ndim != 1 or self.counts.ndim != 1:
            raise ValueError("'bin_edges' and 'counts' must be 1D.")
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("'counts' must have one entry less than edges.")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("'bin_edges' must be strictly increasing.")
        if np.any(self.counts < 0):
            raise ValueError("'counts' cannot be negative.")

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    @property
    def total(self):
        return self.counts.sum()

    def normalized(self, edge_fraction=BASELINE_EDGE_FRACTION):
        """Counts divided by the baseline read on the outer bins."""
        baseline, _ = estimate_baseline(self, edge_fraction)
        return self.counts / baseline

    def to_csv(self, path, extra=None):
        """Write as ``# key=value`` metadata lines and ``tau_s,counts`` rows.

        `tau_s` is the lower edge of each bin; the upper edge of the last
        bin is the ``tau_max`` metadata entry.  Floats are written with 17
        significant digits, so reading the file back is exact.
        """
        metadata = {
            'kind': self.kind.value,
            'tau_max': float(self.bin_edges[-1]),
            **self.metadata,
            **(extra or {}),
        }
        lines = [f"# {key}={json.dumps(value)}" for key, value in
                 metadata.items()]
        table = pd.DataFrame(
            {'tau_s': self.bin_edges[:-1], 'counts': self.counts}
        )
        with open(path, 'w', newline='') as file:
            file.write('\n'.join(lines) + '\n')
            table.to_csv(file, index=False, float_format='%.17g')
        return Path(path)

    @classmethod
    def read_csv(cls, path):
        """Read a histogram written by :meth:`to_csv`."""
        metadata = {}
        with open(path) as file:
            for line in file:
                if not line.startswith('#'):
                    break
                key, _, value = line[1:].strip().partition('=')
                metadata[key] = json.loads(value)
        for key in ('kind', 'tau_max'):
            if key not in metadata:
                raise ValueError(f"missing '{key}' header in {path}.")
        table = pd.read_csv(path, comment='#', float_precision='round_trip')
        if list(table.columns) != ['tau_s', 'counts']:
            raise ValueError(f"expected columns 'tau_s,counts' in {path}.")
        kind = metadata.pop('kind')
        edges = np.append(table['tau_s'].to_numpy(), metadata.pop('tau_max'))
        return cls(edges, table['counts'].to_numpy(), kind, metadata)


def quadrature_nodes(edges, order=GAUSS_LEGENDRE_ORDER):
    """Gauss-Legendre nodes of every bin and the matching weights.

    Returns
    -------
    tau : :class:`numpy.ndarray`
        Nodes, shape ``(n_bins, order)``.
    weights : :class:`numpy.ndarray`
        Weights, shape ``(n_bins, order)``, already scaled to the bin widths.

    """
    edges = np.asarray(edges, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)[:, np.newaxis]
    middle = 0.5 * (edges[1:] + edges[:-1])[:, np.newaxis]
    return middle + half * nodes, half * weights


def bin_integrals(func, edges, order=GAUSS_LEGENDRE_ORDER):
    """Integral of `func` over each bin by Gauss-Legendre quadrature."""
    tau, weights = quadrature_nodes(edges, order)
    values = func(tau.ravel()).reshape(tau.shape)
    return np.sum(values * weights, axis=1)


def _check_window(mass, label):
    too_narrow = bool(mass < WINDOW_MASS_FLOOR)
    if too_narrow:
        warnings.warn(
            f"the window holds only {mass:.3f} of the {label} model mass."
        )
    return too_narrow


def _metadata(comb, det, **extra):
    return {
        'comb': comb.to_config(),
        'detector': det.to_config(),
        **extra,
    }


def expected_cross(comb, det, purity):
    """Noiseless cross-correlation histogram.

    Parameters
    ----------
    comb : :class:`~bicomb.combmodel.CombSpec`
    det : DetectorSpec
    purity : float
        Weight of the coherent multi-tooth component, in [0, 1].

    Returns
    -------
    Histogram
        Float counts ``total_counts * int_bin C / int_window C
        + accidental_rate``.

    """
    if not 0 <= purity <= 1:
        raise ValueError("'purity' must be in [0, 1].")
    edges = det.edges

    def shape(tau):
        return cross_sum_shape(
            tau, comb.gamma_s, comb.gamma_idler, det.jitter_sigma,
            comb.round_trip_time, purity
        )

    mass = bin_integrals(shape, edges)
    window_mass = mass.sum()
    counts = det.total_counts * mass / window_mass + det.accidental_rate
    metadata = _metadata(
        comb, det, purity=purity, window_mass=float(window_mass),
        window_too_narrow=_check_window(window_mass, 'cross-correlation'),
        expected=True,
    )
    return Histogram(edges, counts, HistogramKind.CROSS, metadata)


def expected_auto(comb, det):
    """Noiseless autocorrelation histogram.

    The baseline per bin is ``total_counts`` spread evenly over the window,
    plus the accidentals; it is multiplied by the jitter-convolved ``g2``.
    """
    edges = det.edges

    def excess(tau):
        return auto_convolved(comb, det.jitter_sigma, tau)

    bunching = bin_integrals(excess, edges)
    widths = np.diff(edges)
    baseline = det.total_counts * widths / (edges[-1] - edges[0])
    counts = baseline * (1 + bunching / widths) + det.accidental_rate
    window_mass = bunching.sum() / delta_g2_closed_form(comb)
    metadata = _metadata(
        comb, det, window_mass=float(window_mass),
        window_too_narrow=_check_window(window_mass, 'autocorrelation'),
        expected=True,
    )
    return Histogram(edges, counts, HistogramKind.AUTO, metadata)


def _draw(expected, seed):
    if seed is None:
        seed = np.random.SeedSequence().entropy
    rng = np.random.default_rng(seed)
    counts = rng.poisson(expected.counts)
    metadata = {
        **expected.metadata,
        'expected': False,
        'seed': int(seed),
        'rng': type(rng.bit_generator).__name__,
    }
    logger.debug(
        "drew %s histogram: %d bins, %d counts, seed %d",
        expected.kind.value, len(counts), counts.sum(), seed
    )
    return Histogram(expected.bin_edges, counts, expected.kind, metadata)


def synthesize_cross(comb, det, purity, seed=None):
    """Cross-correlation histogram with Poisson noise.

    Parameters
    ----------
    comb : :class:`~bicomb.combmodel.CombSpec`
    det : DetectorSpec
    purity : float
        Weight of the coherent multi-tooth component.
    seed : int, optional
        Seed of the PCG64 generator; drawn from OS entropy (and recorded in
        the metadata) when omitted.

    Returns
    -------
    Histogram
        Identical, bin for bin, for identical inputs and seed.

    Warns
    -----
    UserWarning
        If the window holds less than 99% of the model mass; the
        ``window_too_narrow`` metadata flag is set as well.

    """
    return _draw(expected_cross(comb, det, purity), seed)


def synthesize_auto(comb, det, seed=None):
    """Autocorrelation histogram with Poisson noise.

    See :func:`synthesize_cross` for the parameters.
    """
    return _draw(expected_auto(comb, det), seed)


def estimate_baseline(histogram, edge_fraction=BASELINE_EDGE_FRACTION):
    """Mean counts per bin on the outer bins.

    Returns
    -------
    baseline : float
    edge_bins : int
        Number of bins used at each end.

    """
    if not 0 < edge_fraction <= 0.5:
        raise ValueError("'edge_fraction' must be in (0, 0.5].")
    n_edge = max(int(round(edge_fraction * len(histogram.counts))), 1)
    counts = histogram.counts
    baseline = 0.5 * (counts[:n_edge].mean() + counts[-n_edge:].mean())
    if not baseline > 0:
        raise BaselineError("the histogram baseline is zero.")
    return baseline, n_edge


def integrate_delta_g2(
    histogram, edge_fraction=BASELINE_EDGE_FRACTION,
    tolerance=BASELINE_TOLERANCE, full_output=False
):
    """Time-integrated bunching of an autocorrelation histogram.

    The baseline is the mean of the outer `edge_fraction` of the bins at
    both ends; ``Delta g2`` is then ``sum (counts / baseline - 1) width``.
    The estimate does not depend on the detector jitter, which only
    redistributes the excess between bins.

    Parameters
    ----------
    histogram : Histogram
        Autocorrelation histogram with equal-width bins.
    edge_fraction : float, default 0.1
        Fraction of the bins used, at each end, for the baseline.
    tolerance : float, default 2
        Largest deviation of either edge mean from the baseline, in Poisson
        standard errors of the edge mean.
    full_output : bool, default False
        Also return the standard error.

    Returns
    -------
    delta_g2 : float
        Time-integrated bunching (s).
    std_error : float
        Only if `full_output` is ``True``.

    Raises
    ------
    BaselineError
        If an edge of the window is still above or below the baseline.

    """
    if histogram.kind is not HistogramKind.AUTO:
        raise ValueError("'histogram' must be an autocorrelation histogram.")
    baseline, n_edge = estimate_baseline(histogram, edge_fraction)
    counts = histogram.counts
    edge_error = np.sqrt(baseline / n_edge)
    sides = (('left', counts[:n_edge]), ('right', counts[-n_edge:]))
    for edge, values in sides:
        deviation = abs(values.mean() - baseline)
        if deviation > tolerance * edge_error:
            raise BaselineError(
                f"baseline not reached at the {edge} edge of the window "
                f"({deviation / edge_error:.1f} standard errors off).",
                edge=edge,
            )
    widths = histogram.widths
    delta_g2 = np.sum((counts / baseline - 1) * widths)
    logger.debug(
        "baseline %.6g counts/bin from %d edge bins, Delta g2 = %.4g s",
        baseline, 2 * n_edge, delta_g2
    )
    if not full_output:
        return delta_g2
    # bin noise, plus the common baseline error scaling the whole sum
    baseline_var = baseline / (2 * n_edge)
    variance = (
        np.sum(widths**2 * counts) / baseline**2
        + (np.sum(counts * widths) / baseline**2)**2 * baseline_var
    )
    return delta_g2, np.sqrt(variance)


def mode_count(histogram, comb, **kwargs):
    """Estimate the number of modes behind an autocorrelation histogram.

    Keyword arguments are passed to :func:`integrate_delta_g2`.  Only the
    linewidths of `comb` are used.

    Returns
    -------
    :class:`~bicomb.correlation.AutoCorrelationResult`

    """
    delta_g2, std_error = integrate_delta_g2(
        histogram, full_output=True, **kwargs
    )
    return AutoCorrelationResult.from_delta_g2(delta_g2, comb, std_error)


def histogram_comb(histogram):
    """Comb recorded in the metadata of a synthesized histogram."""
    try:
        return CombSpec.from_config(histogram.metadata['comb'])
    except KeyError as error:
        raise ValueError(f"no usable comb in histogram metadata: {error}")
