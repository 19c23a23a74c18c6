"""
The :mod:`~bicomb.correlation` module gathers the closed-form second-order
correlation functions of a biphoton frequency comb.

Cross-correlations (signal-idler coincidences) are given as seen through
detectors with Gaussian timing jitter ``sigma`` each, that is convolved with
a Gaussian of standard deviation ``sqrt(2) sigma``.  Three models are
provided: a single tooth (:func:`cross_single`), many coherent teeth whose
beating gives a comb of peaks spaced by the round-trip time
(:func:`cross_multi`) and their mixture (:func:`cross_sum`), whose weight
``p`` measures how coherent the superposition of frequency modes is.

The autocorrelation of one photon of the pair gives access to the number of
modes: the time-integrated bunching ``Delta g2`` is inversely proportional
to ``M`` and does not depend on the detector resolution.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal, special

from .combmodel import CombSpec, band_integral, jsa_detuned
from .defaults import DEGENERACY_TOL, TAIL_BOUND

SQRT2 = np.sqrt(2)


def _gaussian(tau, s):
    return np.exp(-tau**2 / (2 * s**2)) / (np.sqrt(2 * np.pi) * s)


def exp_gauss(k, s, tau, derivatives=False):
    """One-sided exponential convolved with a normalized Gaussian.

    Evaluates ``E(tau) = int_0^inf exp(-k t) g_s(tau - t) dt``, i.e.
    ``1/2 exp(k^2 s^2/2 - k tau) erfc((k s^2 - tau) / (sqrt(2) s))``, without
    ever forming the overflowing ``exp(x^2) erfc(x)`` product: the scaled
    complementary error function is used where its argument is positive.

    Parameters
    ----------
    k : float
        Decay rate (1/s); ``inf`` gives zero.
    s : float
        Standard deviation of the Gaussian (s).
    tau : array_like
        Delays (s).
    derivatives : bool, default False
        Also return the partial derivatives with respect to `k` and `s`.

    Returns
    -------
    E : :class:`numpy.ndarray`
        The convolution, integrating to ``1/k`` over `tau`.
    dE_dk, dE_ds : :class:`numpy.ndarray`
        Only if `derivatives` is ``True``.

    """
    tau = np.asarray(tau, dtype=float)
    if np.isinf(k):
        zero = np.zeros_like(tau)
        return (zero, zero.copy(), zero.copy()) if derivatives else zero
    z = (k * s**2 - tau) / (SQRT2 * s)
    value = np.empty_like(z)
    scaled = z >= 0
    value[scaled] = (
        0.5 * np.exp(-tau[scaled]**2 / (2 * s**2)) * special.erfcx(z[scaled])
    )
    # z < 0 implies k tau > k^2 s^2, so the exponent stays below k^2 s^2 / 2
    direct = ~scaled
    value[direct] = 0.5 * np.exp(
        k**2 * s**2 / 2 - k * tau[direct]
    ) * special.erfc(z[direct])
    if not derivatives:
        return value
    gauss = _gaussian(tau, s)
    d_k = (k * s**2 - tau) * value - s**2 * gauss
    d_s = k**2 * s * value - (k * s + tau / s) * gauss
    return value, d_k, d_s


def cross_single_shape(tau, gamma_s, gamma_i, sigma):
    """Single-tooth cross-correlation from plain parameters.

    ``gamma_i = inf`` selects the singly resonant limit, where only the
    ``tau < 0`` exponential (idler detected first) survives.
    """
    s = SQRT2 * sigma
    tau = np.asarray(tau, dtype=float)
    return exp_gauss(2 * gamma_i, s, tau) + exp_gauss(2 * gamma_s, s, -tau)


def side_peak_count(gamma_s, gamma_i, t0, tail_bound=TAIL_BOUND):
    """Number of side peaks needed for a relative tail below `tail_bound`."""
    gamma_min = min(gamma_s, gamma_i)
    return max(int(np.ceil(-np.log(tail_bound) / (2 * gamma_min * t0))), 1)


def cross_multi_shape(tau, gamma_s, gamma_i, sigma, t0, j_max=None):
    """Comb of Gaussians of the multi-tooth cross-correlation.

    A central peak at zero delay and side peaks at ``+j t0`` (weights
    ``exp(-2 gamma_i j t0)``) and ``-j t0`` (weights
    ``exp(-2 gamma_s j t0)``), each a Gaussian of standard deviation
    ``sqrt(2) sigma``.
    """
    if j_max is None:
        j_max = side_peak_count(gamma_s, gamma_i, t0)
    if j_max <= 0:
        raise ValueError("'j_max' must be a positive integer.")
    tau = np.asarray(tau, dtype=float)
    j = np.arange(1, j_max + 1)
    delays = j * t0
    peaks = np.exp(-tau**2 / (4 * sigma**2))
    later = np.exp(-2 * gamma_i * delays) * np.exp(
        -(delays - tau[..., np.newaxis])**2 / (4 * sigma**2)
    )
    earlier = np.exp(-2 * gamma_s * delays) * np.exp(
        -(delays + tau[..., np.newaxis])**2 / (4 * sigma**2)
    )
    peaks = peaks + later.sum(axis=-1) + earlier.sum(axis=-1)
    return peaks / (2 * np.sqrt(np.pi) * sigma)


def multi_weight(gamma_s, gamma_i, t0):
    """Factor giving the comb of Gaussians a unit integral."""
    q_s = np.exp(-2 * gamma_s * t0)
    q_i = np.exp(-2 * gamma_i * t0)
    return (1 - q_i) * (1 - q_s) / (1 - q_i * q_s)


def single_weight(gamma_s, gamma_i):
    """Factor giving the single-tooth cross-correlation a unit integral."""
    if np.isinf(gamma_i):
        return 2 * gamma_s
    return 2 * gamma_i * gamma_s / (gamma_i + gamma_s)


def cross_sum_shape(tau, gamma_s, gamma_i, sigma, t0, purity, j_max=None):
    """Unit-integral mixture of the multi- and single-tooth models."""
    multi = multi_weight(gamma_s, gamma_i, t0) * cross_multi_shape(
        tau, gamma_s, gamma_i, sigma, t0, j_max
    )
    single = single_weight(gamma_s, gamma_i) * cross_single_shape(
        tau, gamma_s, gamma_i, sigma
    )
    return purity * multi + (1 - purity) * single


@dataclass(frozen=True)
class CrossCorrelationModel:
    """Signal-idler coincidence model of a comb seen by jittery detectors.

    Parameters
    ----------
    comb : :class:`~bicomb.combmodel.CombSpec`
    sigma : float
        Timing jitter of each detector (s).
    purity : float
        Weight ``p`` of the coherent (multi-tooth) component, in [0, 1].
    amplitude : float, default 1
        Integrated coincidences of the correlated component.
    background : float, default 0
        Flat accidental level, per unit of the returned intensity.

    """

    comb: CombSpec
    sigma: float
    purity: float = 1.0
    amplitude: float = 1.0
    background: float = 0.0

    def __post_init__(self):
        if not 0 <= self.purity <= 1:
            raise ValueError("'purity' must be in [0, 1].")
        if not self.sigma > 0:
            raise ValueError("'sigma' must be positive.")
        if not self.amplitude > 0:
            raise ValueError("'amplitude' must be positive.")
        if self.background < 0:
            raise ValueError("'background' cannot be negative.")

    def parameters(self):
        """Plain parameters, as used by the fitting module."""
        return {
            'amplitude': self.amplitude,
            'background': self.background,
            'gamma_s': self.comb.gamma_s,
            'gamma_i': self.comb.gamma_idler,
            'sigma': self.sigma,
            't0': self.comb.round_trip_time,
            'purity': self.purity,
        }


def cross_single(comb, sigma, tau):
    """Cross-correlation of a single tooth.

    ``1/2 exp((2 gamma_i sigma)^2 - 2 gamma_i tau) erfc(-tau/(2 sigma)
    + 2 gamma_i sigma) + 1/2 exp((2 gamma_s sigma)^2 + 2 gamma_s tau)
    erfc(tau/(2 sigma) + 2 gamma_s sigma)``, stable for every finite delay.

    Parameters
    ----------
    comb : :class:`~bicomb.combmodel.CombSpec`
    sigma : float
        Timing jitter of each detector (s).
    tau : array_like
        Delay of the idler detection relative to the signal (s).

    """
    if not sigma > 0:
        raise ValueError("'sigma' must be positive.")
    return cross_single_shape(tau, comb.gamma_s, comb.gamma_idler, sigma)


def cross_multi(comb, sigma, tau, j_max=None):
    """Cross-correlation of many coherent teeth (comb of Gaussians).

    The side peaks sit at multiples of the round-trip time ``1/fsr``.  By
    default enough of them are kept for the first dropped one to weigh less
    than ``1e-12`` of the central peak.
    """
    if not sigma > 0:
        raise ValueError("'sigma' must be positive.")
    return cross_multi_shape(
        tau, comb.gamma_s, comb.gamma_idler, sigma, comb.round_trip_time,
        j_max
    )


def cross_sum(model, tau, j_max=None):
    """Coincidence intensity of a :class:`CrossCorrelationModel`.

    Both components are scaled to a unit integral before being mixed, so
    the integral of the correlated part is `model.amplitude` whatever the
    purity.
    """
    comb = model.comb
    shape = cross_sum_shape(
        tau, comb.gamma_s, comb.gamma_idler, model.sigma,
        comb.round_trip_time, model.purity, j_max
    )
    return model.amplitude * shape + model.background


def _degenerate(gamma_s, gamma_i):
    return (
        not np.isinf(gamma_i)
        and abs(gamma_i - gamma_s) / gamma_s < DEGENERACY_TOL
    )


def auto_excess_single(tau, gamma_s, gamma_i):
    """Single-mode bunching ``g2(tau) - 1`` from plain parameters."""
    tau = np.abs(np.asarray(tau, dtype=float))
    if np.isinf(gamma_i):
        return np.exp(-2 * gamma_s * tau)
    if _degenerate(gamma_s, gamma_i):
        return (1 + gamma_s * tau)**2 * np.exp(-2 * gamma_s * tau)
    envelope = (
        gamma_i * np.exp(-gamma_s * tau) - gamma_s * np.exp(-gamma_i * tau)
    ) / (gamma_i - gamma_s)
    return envelope**2


def g2_auto_single(comb, tau):
    """Autocorrelation of one photon of a single-tooth comb.

    ``1 + |(gamma_i exp(-gamma_s|tau|) - gamma_s exp(-gamma_i|tau|))
    / (gamma_i - gamma_s)|^2``, equal to 2 at zero delay whatever the
    linewidths.  Equal linewidths use the analytic limit
    ``1 + (1 + gamma|tau|)^2 exp(-2 gamma|tau|)``.
    """
    return 1 + auto_excess_single(tau, comb.gamma_s, comb.gamma_idler)


def comb_beat(comb, tau):
    """Normalized beat ``|sum_m exp(i 2 pi m fsr tau)|^2 / M^2`` of the teeth."""
    x = comb.fsr * np.asarray(tau, dtype=float)
    m = comb.mode_count
    denominator = np.sin(np.pi * x)
    with np.errstate(divide='ignore', invalid='ignore'):
        beat = (np.sin(m * np.pi * x) / (m * denominator))**2
    return np.where(np.abs(denominator) < 1e-12, 1.0, beat)


def g2_auto(comb, tau):
    """Autocorrelation of one photon of an ``M``-tooth comb.

    The teeth are taken as well separated and equally weighted: the
    single-mode bunching is modulated by the beat of the teeth, whose
    average over a round trip is ``1/M``.
    """
    excess = auto_excess_single(tau, comb.gamma_s, comb.gamma_idler)
    if comb.mode_count > 1:
        excess = excess * comb_beat(comb, tau)
    return 1 + excess


def auto_single_convolved(tau, gamma_s, gamma_i, sigma):
    """Single-mode bunching convolved with the ``sqrt(2) sigma`` jitter.

    Returns the convolved ``g2 - 1``; the squared envelope is a sum of
    two-sided exponentials, each convolved in closed form.
    """
    tau = np.asarray(tau, dtype=float)
    s = SQRT2 * sigma

    def two_sided(k):
        return exp_gauss(k, s, tau) + exp_gauss(k, s, -tau)

    if np.isinf(gamma_i):
        return two_sided(2 * gamma_s)
    if _degenerate(gamma_s, gamma_i):
        # (1 + gamma t)^2 exp(-2 gamma t): powers of t are k-derivatives
        gamma = 0.5 * (gamma_s + gamma_i)
        k = 2 * gamma
        total = np.zeros_like(tau)
        for side in (tau, -tau):
            value, d_k, _ = exp_gauss(k, s, side, derivatives=True)
            d_kk = s**2 * value + (k * s**2 - side) * d_k
            total += value - 2 * gamma * d_k + gamma**2 * d_kk
        return total
    return (
        gamma_i**2 * two_sided(2 * gamma_s)
        - 2 * gamma_i * gamma_s * two_sided(gamma_i + gamma_s)
        + gamma_s**2 * two_sided(2 * gamma_i)
    ) / (gamma_i - gamma_s)**2


def auto_convolved(comb, sigma, tau):
    """Jitter-convolved ``g2 - 1`` of an ``M``-tooth comb.

    A single tooth is convolved in closed form.  Otherwise the beat of the
    teeth is sampled finely enough to resolve peaks of width ``1/(M fsr)``
    and convolved numerically.
    """
    tau = np.asarray(tau, dtype=float)
    if not sigma > 0:
        raise ValueError("'sigma' must be positive.")
    if comb.mode_count == 1:
        return auto_single_convolved(
            tau, comb.gamma_s, comb.gamma_idler, sigma
        )
    s = SQRT2 * sigma
    step = min(s / 8, comb.round_trip_time / (8 * comb.mode_count))
    half_kernel = int(np.ceil(8 * s / step))
    offsets = step * np.arange(-half_kernel, half_kernel + 1)
    start, stop = tau.min() - 8 * s, tau.max() + 8 * s
    grid = start + step * np.arange(int(np.ceil((stop - start) / step)) + 1)
    excess = g2_auto(comb, grid) - 1
    kernel = _gaussian(offsets, s) * step
    smoothed = signal.fftconvolve(excess, kernel, mode='same')
    return np.interp(tau, grid, smoothed)


def per_mode_delta_g2(gamma_s, gamma_i):
    """Time-integrated bunching of a single tooth (s)."""
    if np.isinf(gamma_i):
        return 1 / gamma_s
    return (gamma_i**2 + 3 * gamma_i * gamma_s + gamma_s**2) / (
        gamma_i * gamma_s * (gamma_i + gamma_s)
    )


def delta_g2_closed_form(comb, mode_count=None):
    """Time-integrated bunching ``Delta g2 = int (g2(tau) - 1) dtau``.

    ``(1/M) (gamma_i^2 + 3 gamma_i gamma_s + gamma_s^2)
    / (gamma_i gamma_s (gamma_i + gamma_s))``, which reduces to
    ``5 / (2 gamma_s M)`` for equal linewidths and ``1 / (gamma_s M)`` for
    an unconfined idler.

    Parameters
    ----------
    comb : :class:`~bicomb.combmodel.CombSpec`
    mode_count : float, optional
        Effective (possibly non-integer) mode count replacing
        ``comb.mode_count``.

    Examples
    --------
    >>> comb = CombSpec(fsr=3.5e9, gamma_s=np.pi * 126e6,
    ...                 idler_unconfined=True)
    >>> round(delta_g2_closed_form(comb, mode_count=1.2) * 1e9, 2)
    2.1

    """
    m = comb.mode_count if mode_count is None else mode_count
    if not m > 0:
        raise ValueError("'mode_count' must be positive.")
    return per_mode_delta_g2(comb.gamma_s, comb.gamma_idler) / m


def estimate_mode_count(delta_g2, comb):
    """Number of modes giving the measured ``Delta g2``.

    Inverts :func:`delta_g2_closed_form`; the mode count of `comb` is
    ignored, only its linewidths are used.
    """
    if not delta_g2 > 0:
        raise ValueError("'delta_g2' must be positive.")
    return per_mode_delta_g2(comb.gamma_s, comb.gamma_idler) / delta_g2


@dataclass(frozen=True)
class AutoCorrelationResult:
    """Time-integrated bunching and the mode count it implies.

    Parameters
    ----------
    delta_g2 : float
        ``Delta g2`` (s).
    mode_estimate : float
        Estimated number of modes ``M``.
    std_error : float, optional
        Standard error of `delta_g2` (s).

    """

    delta_g2: float
    mode_estimate: float
    std_error: float = np.nan

    def __post_init__(self):
        if not self.delta_g2 > 0:
            raise ValueError("'delta_g2' must be positive.")
        if not self.mode_estimate > 0:
            raise ValueError("'mode_estimate' must be positive.")

    @property
    def mode_error(self):
        """Standard error of the mode count, propagated from `std_error`."""
        return self.mode_estimate * self.std_error / self.delta_g2

    @classmethod
    def from_delta_g2(cls, delta_g2, comb, std_error=np.nan):
        return cls(delta_g2, estimate_mode_count(delta_g2, comb), std_error)


def delta_g2_spectral(comb, epsrel=1e-10, tolerance=1e-8):
    """``Delta g2`` as ``2 pi int |f(omega_i)|^4 domega_i`` by quadrature.

    Independent of the closed form: it uses the full normalized JSA,
    including the overlap of neighbouring teeth.

    Raises
    ------
    ~bicomb.combmodel.QuadratureError
        If the quadrature misses `tolerance`.

    """
    def intensity_squared(detuning):
        return np.abs(jsa_detuned(comb, detuning))**4

    return 2 * np.pi * band_integral(
        comb, intensity_squared, epsrel=epsrel, tolerance=tolerance
    )
