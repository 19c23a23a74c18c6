"""
The :mod:`~bicomb.fitting` module fits coincidence histograms with the
correlation models of :mod:`bicomb.correlation` and derives the cavity
properties (linewidth, free spectral range, finesse, Q factor) from the
estimates.

Four models are available, see :data:`bicomb.defaults.MODEL_PARAMETERS`
for their parameters:

* ``cross_single``, ``cross_multi`` and ``cross_sum``: expected counts per
  bin ``amplitude * int_bin C(tau) dtau + background``, where ``C`` is the
  unit-integral single-tooth, multi-tooth or mixed cross-correlation;
* ``auto_single``: ``amplitude * int_bin g2(tau) dtau`` with the
  jitter-convolved single-mode autocorrelation.

The fit minimizes the weighted sum of squares with Poisson weights
``1 / max(counts, 1)`` with a bounded trust-region method.  The Jacobian is
analytic for the cross-correlation models.

Examples
--------
>>> from bicomb.combmodel import CombSpec
>>> from bicomb.histogram import DetectorSpec, synthesize_cross
>>> comb = CombSpec(fsr=3.5e9, gamma_s=np.pi * 126e6, idler_unconfined=True)
>>> det = DetectorSpec(jitter_sigma=30e-12, bin_width=4e-12,
...                    window=(-8e-9, 2e-9), total_counts=1e5)
>>> histogram = synthesize_cross(comb, det, purity=0.95, seed=1)
>>> problem = FitProblem.from_histogram(histogram, 'cross_sum',
...                                     singly_resonant=True)
>>> result = fit(problem)
>>> report = derive_cavity_report(result, wavelength=1580)

"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import joblib
import numpy as np
import yaml
from scipy import optimize, signal

from .correlation import (
    SQRT2, auto_single_convolved, exp_gauss, side_peak_count
)
from .defaults import (
    FIT_FTOL, FIT_MAX_ITER, FIT_XTOL, GAMMA_I_BOUND_TOL, MODEL_PARAMETERS,
    SPEED_OF_LIGHT, default_bounds, model_name
)
from .histogram import Histogram, HistogramKind, quadrature_nodes

logger = logging.getLogger(__name__)

#: Singular value ratio of the scaled Jacobian below which parameters are
#: taken as degenerate.
DEGENERACY_RCOND = 1e-10


class DegenerateFitError(RuntimeError):
    """The data do not constrain a combination of parameters."""

    def __init__(self, names):
        pair = ' and '.join(f"'{name}'" for name in names)
        super().__init__(f"singular Jacobian: parameters {pair} are degenerate.")
        self.names = tuple(names)


class BootstrapError(RuntimeError):
    """Too many bootstrap refits failed."""


def _window_side_peaks(params, tau):
    """Side peaks reaching the delays `tau`, capped by the tail bound."""
    reach = np.max(np.abs(tau)) + 10 * params['sigma']
    in_window = int(np.ceil(reach / params['t0'])) + 1
    tail = side_peak_count(params['gamma_s'], params['gamma_i'], params['t0'])
    return max(min(in_window, tail), 1)


def _single_terms(params, tau, names):
    """Unit-integral single-tooth shape and its derivatives."""
    gamma_s, gamma_i, sigma = (
        params['gamma_s'], params['gamma_i'], params['sigma']
    )
    s = SQRT2 * sigma
    e_i, e_i_dk, e_i_ds = exp_gauss(2 * gamma_i, s, tau, derivatives=True)
    e_s, e_s_dk, e_s_ds = exp_gauss(2 * gamma_s, s, -tau, derivatives=True)
    shape = e_i + e_s
    if np.isinf(gamma_i):
        weight, weight_ds, weight_di = 2 * gamma_s, 2.0, 0.0
    else:
        total = gamma_i + gamma_s
        weight = 2 * gamma_i * gamma_s / total
        weight_ds = 2 * gamma_i**2 / total**2
        weight_di = 2 * gamma_s**2 / total**2
    derivatives = {}
    if 'gamma_s' in names:
        derivatives['gamma_s'] = weight_ds * shape + weight * 2 * e_s_dk
    if 'gamma_i' in names:
        derivatives['gamma_i'] = weight_di * shape + weight * 2 * e_i_dk
    if 'sigma' in names:
        derivatives['sigma'] = weight * SQRT2 * (e_i_ds + e_s_ds)
    return weight * shape, derivatives


def _multi_terms(params, tau, names, j_max):
    """Unit-integral comb of Gaussians and its derivatives."""
    gamma_s, gamma_i, sigma, t0 = (
        params['gamma_s'], params['gamma_i'], params['sigma'], params['t0']
    )
    unconfined = np.isinf(gamma_i)
    scale = 1 / (2 * np.sqrt(np.pi) * sigma)
    j = np.arange(1, j_max + 1)
    q_s = np.exp(-2 * gamma_s * t0)
    q_i = 0.0 if unconfined else np.exp(-2 * gamma_i * t0)
    tau = tau[..., np.newaxis]
    # side peak offsets u and weights w; later peaks first, then earlier
    later_u, earlier_u = j * t0 - tau, j * t0 + tau
    later_w = np.exp(-2 * gamma_i * j * t0) if not unconfined else 0 * j
    earlier_w = np.exp(-2 * gamma_s * j * t0)
    central = np.exp(-tau[..., 0]**2 / (4 * sigma**2))
    later = later_w * np.exp(-later_u**2 / (4 * sigma**2))
    earlier = earlier_w * np.exp(-earlier_u**2 / (4 * sigma**2))
    comb = scale * (central + later.sum(-1) + earlier.sum(-1))

    weight = (1 - q_i) * (1 - q_s) / (1 - q_i * q_s)
    dlog_qs = -1 / (1 - q_s) + q_i / (1 - q_i * q_s)
    dlog_qi = -1 / (1 - q_i) + q_s / (1 - q_i * q_s)
    weight_d = {
        'gamma_s': weight * dlog_qs * (-2 * t0 * q_s),
        'gamma_i': weight * dlog_qi * (-2 * t0 * q_i),
        't0': weight * (
            dlog_qs * (-2 * gamma_s * q_s)
            + (0.0 if unconfined else dlog_qi * (-2 * gamma_i * q_i))
        ),
    }
    comb_d = {}
    if 'gamma_s' in names:
        comb_d['gamma_s'] = scale * np.sum(-2 * j * t0 * earlier, axis=-1)
    if 'gamma_i' in names:
        comb_d['gamma_i'] = scale * np.sum(-2 * j * t0 * later, axis=-1)
    if 't0' in names:
        d_earlier = earlier * (
            -2 * gamma_s * j - j * earlier_u / (2 * sigma**2)
        )
        d_later = np.zeros_like(later) if unconfined else later * (
            -2 * gamma_i * j - j * later_u / (2 * sigma**2)
        )
        comb_d['t0'] = scale * (np.sum(d_earlier, -1) + np.sum(d_later, -1))
    if 'sigma' in names:
        def widen(peaks, u):
            return peaks * (u**2 / (2 * sigma**3) - 1 / sigma)

        comb_d['sigma'] = scale * (
            widen(central, tau[..., 0])
            + widen(later, later_u).sum(-1)
            + widen(earlier, earlier_u).sum(-1)
        )
    derivatives = {
        name: weight_d.get(name, 0.0) * comb + weight * value
        for name, value in comb_d.items()
    }
    return weight * comb, derivatives


def _cross_terms(model, params, tau, names):
    if model == 'cross_single':
        return _single_terms(params, tau, names)
    j_max = _window_side_peaks(params, tau)
    if model == 'cross_multi':
        return _multi_terms(params, tau, names, j_max)
    p = params['purity']
    multi, multi_d = _multi_terms(params, tau, names, j_max)
    single, single_d = _single_terms(params, tau, names)
    derivatives = {
        name: p * multi_d.get(name, 0.0) + (1 - p) * single_d.get(name, 0.0)
        for name in names if name in multi_d or name in single_d
    }
    if 'purity' in names:
        derivatives['purity'] = multi - single
    return p * multi + (1 - p) * single, derivatives


def _auto_counts(params, tau, weights):
    excess = auto_single_convolved(
        tau.ravel(), params['gamma_s'], params['gamma_i'], params['sigma']
    ).reshape(tau.shape)
    return np.sum((1 + excess) * weights, axis=1)


def model_counts(model, params, edges):
    """Expected counts per bin of a fit model.

    Parameters
    ----------
    model : str
        Fit model name.
    params : dict
        Values of all the parameters of `model`.
    edges : array_like
        Bin edges (s).

    Returns
    -------
    :class:`numpy.ndarray`

    """
    model = model_name(model)
    tau, weights = quadrature_nodes(edges)
    if model == 'auto_single':
        return params['amplitude'] * _auto_counts(params, tau, weights)
    shape, _ = _cross_terms(model, params, tau.ravel(), ())
    integral = np.sum(shape.reshape(tau.shape) * weights, axis=1)
    return params['amplitude'] * integral + params['background']


def model_jacobian(model, params, edges, names):
    """Derivatives of :func:`model_counts` with respect to `names`.

    Analytic for the cross-correlation models, central finite differences
    for the autocorrelation rates and jitter.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(n_bins, len(names))``.

    """
    model = model_name(model)
    tau, weights = quadrature_nodes(edges)
    columns = []
    if model == 'auto_single':
        for name in names:
            if name == 'amplitude':
                columns.append(_auto_counts(params, tau, weights))
                continue
            step = 1e-6 * abs(params[name])
            up = _auto_counts({**params, name: params[name] + step}, tau,
                              weights)
            down = _auto_counts({**params, name: params[name] - step}, tau,
                                weights)
            columns.append(params['amplitude'] * (up - down) / (2 * step))
        return np.column_stack(columns)

    def integrate(values):
        return np.sum(values.reshape(tau.shape) * weights, axis=1)

    shape, derivatives = _cross_terms(model, params, tau.ravel(), names)
    for name in names:
        if name == 'amplitude':
            columns.append(integrate(shape))
        elif name == 'background':
            columns.append(np.ones(len(weights)))
        else:
            columns.append(params['amplitude'] * integrate(derivatives[name]))
    return np.column_stack(columns)


def _half_width(counts, peak, level):
    """Bins from `peak` to the first bin below `level`, on each side."""
    below = np.flatnonzero(counts[:peak] < level)
    left = peak - below[-1] if len(below) else peak
    below = np.flatnonzero(counts[peak:] < level)
    right = below[0] if len(below) else len(counts) - peak
    return left, right


def _log_slope(tau, values):
    usable = values > 0
    if usable.sum() < 3:
        return None
    slope, _ = np.polyfit(tau[usable], np.log(values[usable]), 1)
    return slope


def _beat_period(centers, counts):
    """Round-trip time from the strongest beat line of the histogram.

    The first difference of the counts is transformed, so the slow decay
    envelope does not outweigh the comb line.
    """
    width = centers[1] - centers[0]
    n_fft = 8 * len(counts)
    spectrum = np.abs(np.fft.rfft(np.diff(counts), n_fft))
    freqs = np.fft.rfftfreq(n_fft, width)
    peaks, _ = signal.find_peaks(spectrum)
    # skip the sidelobes of the window itself
    peaks = peaks[freqs[peaks] > 2 / (centers[-1] - centers[0])]
    if not len(peaks):
        return None
    return 1 / freqs[peaks[np.argmax(spectrum[peaks])]]


def initial_guess(histogram, model, singly_resonant=False):
    """Heuristic starting point of a fit.

    The round-trip time is read from the strongest peak of the histogram
    Fourier spectrum, the signal rate from the log-slope of the ``tau < 0``
    tail smoothed over one round trip, the jitter from the half width of the
    highest peak.  Any of them can be overridden in :class:`FitProblem`.

    Parameters
    ----------
    histogram : :class:`~bicomb.histogram.Histogram`
    model : str
        Fit model name.
    singly_resonant : bool, default False
        Set ``gamma_i`` to ``inf``.

    Returns
    -------
    dict
        A value for every parameter of `model`.

    """
    model = model_name(model)
    counts = histogram.counts.astype(float)
    centers = histogram.centers
    width = histogram.widths.mean()
    guess = {}
    if model == 'auto_single':
        n_edge = max(len(counts) // 10, 1)
        baseline = 0.5 * (counts[:n_edge].mean() + counts[-n_edge:].mean())
        baseline = max(baseline, 1.0)
        guess['amplitude'] = baseline / width
        excess = counts / baseline - 1
        peak = np.argmax(excess)
        left, right = _half_width(excess, peak, 0.5 * excess[peak])
        decay = max(left + right, 2) * width / 2
        side = np.abs(centers - centers[peak]) > decay
        slope = _log_slope(np.abs(centers[side]), excess[side])
        guess['gamma_s'] = (
            -slope / 2 if slope is not None and slope < 0
            else np.log(2) / (2 * decay)
        )
        guess['sigma'] = max(width, decay / 10)
        guess['gamma_i'] = np.inf if singly_resonant else 2 * guess['gamma_s']
        return guess

    order = np.sort(counts)
    background = max(order[:max(len(counts) // 10, 1)].mean(), 0.0)
    peak = np.argmax(counts)
    left, right = _half_width(counts, peak, 0.5 * (counts[peak] + background))
    sigma = max(min(left, right) * width / (np.sqrt(2 * np.log(2)) * SQRT2),
                width / 2)
    t0 = _beat_period(centers, counts)
    if t0 is None and model != 'cross_single':
        raise ValueError("no beat found in the histogram; give a 't0' guess.")
    # smooth the comb of peaks over one round trip before the log-slope
    span = max(int(round((t0 or 4 * sigma) / width)), 1)
    smooth = np.convolve(counts - background, np.ones(span) / span, 'same')
    margin = span * width / 2 + 3 * SQRT2 * sigma
    tail = (centers < centers[peak] - margin) & (centers > centers[0] + margin)
    slope = _log_slope(centers[tail], smooth[tail])
    if slope is None or slope <= 0:
        slope = 2 / (centers[-1] - centers[0])
    guess['gamma_s'] = slope / 2
    if singly_resonant:
        guess['gamma_i'] = np.inf
    else:
        tail = (
            (centers > centers[peak] + margin)
            & (centers < centers[-1] - margin)
        )
        slope = _log_slope(centers[tail], smooth[tail])
        guess['gamma_i'] = (
            -slope / 2 if slope is not None and slope < 0
            else 10 * guess['gamma_s']
        )
    guess['amplitude'] = max(np.sum(counts - background), 1.0)
    guess['background'] = background
    guess['sigma'] = sigma
    if model != 'cross_single':
        guess['t0'] = t0
    if model == 'cross_sum':
        guess['purity'] = 0.5
    return guess


@dataclass
class FitProblem:
    """A histogram, a model and the starting point of the fit.

    Parameters
    ----------
    histogram : :class:`~bicomb.histogram.Histogram`
    model : str
        Fit model name, see :func:`bicomb.defaults.model_name`.
    free_params : dict
        Initial guesses of the fitted parameters.
    fixed_params : dict
        Values of the other parameters; an unconfined idler is
        ``{'gamma_i': inf}``.
    bounds : dict, optional
        ``{name: (lower, upper)}``, defaulting to
        :func:`bicomb.defaults.default_bounds`.
    max_iter : int, default 500

    """

    histogram: Histogram
    model: str
    free_params: dict
    fixed_params: dict = field(default_factory=dict)
    bounds: dict = None
    max_iter: int = FIT_MAX_ITER

    def __post_init__(self):
        self.model = model_name(self.model)
        expected_kind = (
            HistogramKind.AUTO if self.model == 'auto_single'
            else HistogramKind.CROSS
        )
        if self.histogram.kind is not expected_kind:
            raise ValueError(
                f"'{self.model}' needs a {expected_kind.value} histogram."
            )
        free, fixed = set(self.free_params), set(self.fixed_params)
        if free & fixed:
            raise ValueError(
                f"parameters both free and fixed: {sorted(free & fixed)}."
            )
        missing = set(MODEL_PARAMETERS[self.model]) - free - fixed
        extra = (free | fixed) - set(MODEL_PARAMETERS[self.model])
        if missing or extra:
            raise ValueError(
                f"parameters of '{self.model}' do not match: missing "
                f"{sorted(missing)}, unknown {sorted(extra)}."
            )
        unknown = set(self.bounds or {}) - set(MODEL_PARAMETERS[self.model])
        if unknown:
            raise ValueError(
                f"bounds of unknown parameters: {sorted(unknown)}."
            )
        if len(self.histogram.counts) < 5 * len(self.free_params):
            raise ValueError("need at least 5 bins per free parameter.")
        defaults = default_bounds(self.model, self.free_params)
        self.bounds = {**defaults, **(self.bounds or {})}
        for name, value in self.free_params.items():
            lower, upper = self.bounds[name]
            if not lower <= value <= upper:
                raise ValueError(
                    f"initial guess of '{name}' is outside its bounds."
                )

    @property
    def free_names(self):
        """Free parameters in model order."""
        return tuple(
            name for name in MODEL_PARAMETERS[self.model]
            if name in self.free_params
        )

    @classmethod
    def from_histogram(cls, histogram, model, guess=None, fixed=None,
                       singly_resonant=False, **kwargs):
        """Build a problem from :func:`initial_guess`.

        Parameters
        ----------
        histogram : :class:`~bicomb.histogram.Histogram`
        model : str
        guess : dict, optional
            Overrides of the heuristic initial guesses.
        fixed : dict, optional
            Parameters to hold at the given values.
        singly_resonant : bool, default False
            Hold ``gamma_i`` at ``inf``.
        **kwargs
            Passed to :class:`FitProblem`; guesses outside the given
            ``bounds`` are moved onto them.

        """
        model = model_name(model)
        start = {**initial_guess(histogram, model, singly_resonant),
                 **(guess or {})}
        fixed = dict(fixed or {})
        for name, value in start.items():
            if np.isinf(value):
                fixed.setdefault(name, value)
        free = {
            name: value for name, value in start.items() if name not in fixed
        }
        for name, (lower, upper) in (kwargs.get('bounds') or {}).items():
            if name in free:
                free[name] = float(np.clip(free[name], lower, upper))
        return cls(histogram, model, free, fixed, **kwargs)


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    `estimates` holds every model parameter (fixed ones included);
    `covariance` is over `free_names` only.
    """

    model: str
    estimates: dict
    free_names: tuple
    covariance: np.ndarray
    reduced_chi2: float
    iterations: int
    converged: bool
    message: str = ''
    singly_resonant: bool = False
    provenance: dict = field(default_factory=dict)

    @property
    def errors(self):
        """Standard errors of the free parameters."""
        sigma = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        return dict(zip(self.free_names, sigma))

    def to_yaml(self):
        """Fit report as a YAML document."""
        report = {
            'model': self.model,
            'converged': bool(self.converged),
            'message': self.message,
            'iterations': int(self.iterations),
            'reduced_chi2': float(self.reduced_chi2),
            'singly_resonant': bool(self.singly_resonant),
            'estimates': {k: float(v) for k, v in self.estimates.items()},
            'errors': {k: float(v) for k, v in self.errors.items()},
            'covariance': {
                'parameters': list(self.free_names),
                'matrix': self.covariance.tolist(),
            },
            'provenance': self.provenance,
        }
        return yaml.safe_dump(report, sort_keys=False)

    def write(self, path):
        Path(path).write_text(self.to_yaml())
        return Path(path)

    @classmethod
    def read(cls, path):
        """Read a fit report written by :meth:`write`."""
        report = yaml.safe_load(Path(path).read_text())
        return cls(
            model=report['model'],
            estimates=report['estimates'],
            free_names=tuple(report['covariance']['parameters']),
            covariance=np.array(report['covariance']['matrix'], dtype=float)
            .reshape(len(report['covariance']['parameters']), -1),
            reduced_chi2=report['reduced_chi2'],
            iterations=report['iterations'],
            converged=report['converged'],
            message=report.get('message', ''),
            singly_resonant=report.get('singly_resonant', False),
            provenance=report.get('provenance', {}),
        )


def _degenerate_pair(jacobian, names):
    _, singular, vh = np.linalg.svd(jacobian, full_matrices=False)
    if singular[-1] > DEGENERACY_RCOND * singular[0]:
        return None
    null = np.abs(vh[-1])
    order = np.argsort(null)[::-1]
    return [names[i] for i in order[:2]]


def _covariance(jacobian, scale):
    """Pseudo-inverse of the normal matrix, in unscaled parameters."""
    _, singular, vh = np.linalg.svd(jacobian, full_matrices=False)
    keep = singular > DEGENERACY_RCOND * singular[0]
    inverse = (vh[keep].T / singular[keep]**2) @ vh[keep]
    covariance = scale[:, np.newaxis] * inverse * scale
    return 0.5 * (covariance + covariance.T)


def _least_squares(problem):
    names = problem.free_names
    edges = problem.histogram.bin_edges
    data = problem.histogram.counts.astype(float)
    root_weights = 1 / np.sqrt(np.maximum(data, 1))
    x0 = np.array([problem.free_params[name] for name in names], dtype=float)
    lower = np.array([problem.bounds[name][0] for name in names], dtype=float)
    upper = np.array([problem.bounds[name][1] for name in names], dtype=float)
    x_scale = np.where(x0 != 0, np.abs(x0), 1.0)

    def params(x):
        return {**problem.fixed_params, **dict(zip(names, x))}

    def residuals(x):
        counts = model_counts(problem.model, params(x), edges)
        return (counts - data) * root_weights

    def jacobian(x):
        columns = model_jacobian(problem.model, params(x), edges, names)
        return columns * root_weights[:, np.newaxis]

    result = optimize.least_squares(
        residuals, x0, jac=jacobian, bounds=(lower, upper), method='trf',
        x_scale=x_scale, xtol=FIT_XTOL, ftol=FIT_FTOL,
        max_nfev=problem.max_iter,
    )
    logger.debug(
        "%s: %d evaluations, cost %.6g, status %d (%s)",
        problem.model, result.nfev, result.cost, result.status, result.message
    )
    return result, params(result.x)


def fit(problem):
    """Fit a histogram.

    Parameters
    ----------
    problem : FitProblem

    Returns
    -------
    FitResult
        With ``converged=False`` and the best parameters found when the
        iteration limit is reached.

    Raises
    ------
    DegenerateFitError
        If the Jacobian at the optimum is singular; the message names the
        two parameters dominating the unconstrained direction.

    Notes
    -----
    When ``gamma_i`` ends at its upper bound the idler is unconfined as far
    as the data can tell: the problem is refitted with ``gamma_i = inf`` and
    the result is flagged `singly_resonant`.

    """
    result, estimates = _least_squares(problem)
    singly_resonant = np.isinf(problem.fixed_params.get('gamma_i', 0.0))
    if 'gamma_i' in problem.free_params:
        upper = problem.bounds['gamma_i'][1]
        if estimates['gamma_i'] >= upper * (1 - GAMMA_I_BOUND_TOL):
            logger.info(
                "'gamma_i' reached its upper bound, refitting with an "
                "unconfined idler"
            )
            free = dict(problem.free_params)
            free.pop('gamma_i')
            bounds = dict(problem.bounds)
            bounds.pop('gamma_i')
            problem = replace(
                problem, free_params=free, bounds=bounds,
                fixed_params={**problem.fixed_params, 'gamma_i': np.inf},
            )
            result, estimates = _least_squares(problem)
            singly_resonant = True
    names = problem.free_names
    x = np.array([estimates[name] for name in names])
    scale = np.where(x != 0, np.abs(x), 1.0)
    scaled = result.jac * scale
    pair = _degenerate_pair(scaled, names)
    if pair is not None:
        raise DegenerateFitError(pair)
    dof = max(len(problem.histogram.counts) - len(names), 1)
    fit_result = FitResult(
        model=problem.model,
        estimates={name: float(value) for name, value in estimates.items()},
        free_names=names,
        covariance=_covariance(scaled, scale),
        reduced_chi2=2 * result.cost / dof,
        iterations=result.nfev,
        converged=result.status > 0,
        message=result.message,
        singly_resonant=bool(singly_resonant),
        provenance={
            key: problem.histogram.metadata[key]
            for key in ('seed', 'rng', 'config_hash')
            if key in problem.histogram.metadata
        },
    )
    logger.info(
        "fitted %s: reduced chi2 %.3f after %d evaluations",
        problem.model, fit_result.reduced_chi2, fit_result.iterations
    )
    return fit_result


def _refit(problem, start, seed):
    rng = np.random.default_rng(seed)
    histogram = problem.histogram
    resampled = Histogram(
        histogram.bin_edges, rng.poisson(histogram.counts), histogram.kind,
        histogram.metadata,
    )
    free = {
        name: float(np.clip(start[name], *problem.bounds[name]))
        for name in problem.free_params
    }
    try:
        result = fit(replace(problem, histogram=resampled, free_params=free))
    except (DegenerateFitError, ValueError) as error:
        logger.debug("bootstrap refit failed: %s", error)
        return None
    return result.estimates if result.converged else None


def bootstrap_errors(problem, n_resamples=100, seed=None, n_jobs=None):
    """Poisson bootstrap standard deviations of the fitted parameters.

    Every bin is redrawn from a Poisson distribution around the observed
    counts and the histogram refitted, starting from the best fit of the
    original data.

    Parameters
    ----------
    problem : FitProblem
    n_resamples : int, default 100
        At least 50.
    seed : int, optional
        Root seed; each resample gets its own spawned stream, so the result
        does not depend on `n_jobs`.
    n_jobs : int, optional
        Number of :mod:`joblib` workers.

    Returns
    -------
    dict
        Sample standard deviation of every free parameter.

    Raises
    ------
    BootstrapError
        If more than 20% of the refits fail to converge.

    """
    if n_resamples < 50:
        raise ValueError("'n_resamples' must be at least 50.")
    best = fit(problem)
    if best.singly_resonant and 'gamma_i' in problem.free_params:
        free = dict(problem.free_params)
        free.pop('gamma_i')
        problem = replace(
            problem, free_params=free,
            bounds={k: v for k, v in problem.bounds.items() if k != 'gamma_i'},
            fixed_params={**problem.fixed_params, 'gamma_i': np.inf},
        )
    seeds = np.random.SeedSequence(seed).spawn(n_resamples)
    refits = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_refit)(problem, best.estimates, child)
        for child in seeds
    )
    estimates = [estimate for estimate in refits if estimate is not None]
    failed = n_resamples - len(estimates)
    logger.info("bootstrap: %d of %d refits failed", failed, n_resamples)
    if failed > 0.2 * n_resamples:
        raise BootstrapError(
            f"{failed} of {n_resamples} bootstrap refits did not converge."
        )
    return {
        name: float(np.std([e[name] for e in estimates], ddof=1))
        for name in problem.free_names
    }


@dataclass(frozen=True)
class CavityReport:
    """Cavity properties derived from the fitted comb.

    Parameters
    ----------
    fwhm : float
        Signal linewidth (Hz).
    fsr : float
        Free spectral range (Hz).
    finesse : float
    q_factor : float
    wavelength : float
        Vacuum wavelength (nm).

    """

    fwhm: float
    fsr: float
    finesse: float
    q_factor: float
    wavelength: float

    def __post_init__(self):
        for name in ('fwhm', 'fsr', 'finesse', 'q_factor', 'wavelength'):
            if not getattr(self, name) > 0:
                raise ValueError(f"'{name}' must be positive.")

    @classmethod
    def from_values(cls, fwhm, fsr, wavelength):
        """Compute finesse and Q from the linewidth and FSR.

        Examples
        --------
        >>> report = CavityReport.from_values(126e6, 3.5e9, 1580)
        >>> round(report.finesse), f"{report.q_factor:.1e}"
        (28, '1.5e+06')

        """
        optical = SPEED_OF_LIGHT / (wavelength * 1e-9)
        return cls(fwhm, fsr, fsr / fwhm, optical / fwhm, wavelength)


def derive_cavity_report(fit_result, wavelength, fsr=None):
    """Cavity properties of a fitted cross-correlation.

    Parameters
    ----------
    fit_result : FitResult
        Converged fit; its ``gamma_s`` gives ``fwhm = gamma_s / pi`` and its
        ``t0``, if any, ``fsr = 1 / t0``.
    wavelength : float
        Signal wavelength (nm).
    fsr : float, optional
        Free spectral range (Hz), for models without ``t0``.

    Raises
    ------
    KeyError
        If a needed estimate is missing.

    """
    if not fit_result.converged:
        raise ValueError("the fit did not converge.")
    estimates = fit_result.estimates
    if 'gamma_s' not in estimates:
        raise KeyError("'gamma_s' is missing from the fit estimates.")
    if fsr is None:
        if 't0' not in estimates:
            raise KeyError("'t0' is missing from the fit estimates.")
        fsr = 1 / estimates['t0']
    return CavityReport.from_values(
        estimates['gamma_s'] / np.pi, fsr, wavelength
    )
