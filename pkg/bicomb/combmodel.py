"""
The :mod:`~bicomb.combmodel` module describes the spectrum of a
cavity-enhanced photon-pair source: Lorentzian cavity teeth on a free
spectral range (FSR) grid and the joint spectral amplitude (JSA) of the
signal and idler photons.

Phase matching and dispersion are neglected (unit envelope, constant
refractive index) and the pump is monochromatic, so the JSA reduces to a
function of the idler frequency alone, the signal being fixed at
``pump_freq - omega_i``.
"""

import enum
import functools
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .defaults import REGIME_THRESHOLD, SPEED_OF_LIGHT


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved relative error {achieved:.1e})")
        self.achieved = achieved


def wavelength_to_frequency(wavelength_nm):
    """Optical frequency (Hz) of a vacuum wavelength given in nm."""
    return SPEED_OF_LIGHT / (np.asarray(wavelength_nm) * 1e-9)


def frequency_to_wavelength(frequency):
    """Vacuum wavelength (nm) of an optical frequency given in Hz."""
    return SPEED_OF_LIGHT / np.asarray(frequency) * 1e9


@dataclass(frozen=True)
class CombSpec:
    """Physical parameters of a biphoton frequency comb.

    Parameters
    ----------
    fsr : float
        Free spectral range (Hz).
    gamma_s : float
        Angular half width at half maximum of the signal teeth (rad/s).
    gamma_i : float, optional
        Angular HWHM of the idler teeth (rad/s).  Must be omitted when
        `idler_unconfined` is set.
    center_freq : float
        Optical frequency of the tooth with index 0 (Hz).
    mode_count : int
        Number of teeth inside the filter window, ``M``.
    pump_freq : float, optional
        Angular frequency of the pump (rad/s).
    idler_unconfined : bool, default False
        Singly resonant cavity: only the signal is confined and the idler
        linewidth is infinite.

    Notes
    -----
    The FWHM of a tooth is ``gamma / pi`` and the round-trip time is
    ``1 / fsr``.

    """

    fsr: float
    gamma_s: float
    gamma_i: Optional[float] = None
    center_freq: float = 0.0
    mode_count: int = 1
    pump_freq: Optional[float] = None
    idler_unconfined: bool = False

    def __post_init__(self):
        if not self.fsr > 0:
            raise ValueError("'fsr' must be positive.")
        if not self.gamma_s > 0:
            raise ValueError("'gamma_s' must be positive.")
        if self.idler_unconfined:
            if self.gamma_i is not None:
                raise ValueError(
                    "'gamma_i' cannot be set for an unconfined idler."
                )
        elif self.gamma_i is None or not 0 < self.gamma_i < np.inf:
            raise ValueError(
                "'gamma_i' must be positive and finite, or 'idler_unconfined' "
                "must be set."
            )
        if int(self.mode_count) != self.mode_count or self.mode_count < 1:
            raise ValueError("'mode_count' must be a positive integer.")
        object.__setattr__(self, 'mode_count', int(self.mode_count))

    @property
    def round_trip_time(self):
        """Cavity round-trip time ``T0 = 1 / fsr`` (s)."""
        return 1 / self.fsr

    @property
    def gamma_idler(self):
        """Idler decay rate, ``inf`` for an unconfined idler."""
        return np.inf if self.idler_unconfined else self.gamma_i

    @property
    def fwhm_signal(self):
        return self.gamma_s / np.pi

    @property
    def fwhm_idler(self):
        return self.gamma_idler / np.pi

    @property
    def finesse(self):
        """Signal finesse, FSR over FWHM."""
        return self.fsr / self.fwhm_signal

    @property
    def center_omega(self):
        return 2 * np.pi * self.center_freq

    def replace(self, **changes):
        """Return a copy with some fields replaced."""
        fields = {
            name: getattr(self, name) for name in self.__dataclass_fields__
        }
        fields.update(changes)
        if changes.get('idler_unconfined'):
            fields['gamma_i'] = None
        return type(self)(**fields)

    @classmethod
    def from_config(cls, section):
        """Build a comb from the ``comb`` section of a run configuration.

        Parameters
        ----------
        section : dict
            Keys ``fsr_hz``, ``fwhm_signal_hz``, ``fwhm_idler_hz`` (or
            ``idler_unconfined: true``) and ``mode_count``, optionally
            ``center_nm`` and ``pump_nm``.

        """
        required = ('fsr_hz', 'fwhm_signal_hz', 'mode_count')
        missing = [key for key in required if key not in section]
        if missing:
            raise KeyError(f"missing comb key(s): {', '.join(missing)}")
        unconfined = bool(section.get('idler_unconfined', False))
        if not unconfined and 'fwhm_idler_hz' not in section:
            raise KeyError(
                "missing comb key: 'fwhm_idler_hz' (or 'idler_unconfined')"
            )
        pump_nm = section.get('pump_nm')
        center_nm = section.get('center_nm')
        return cls(
            fsr=float(section['fsr_hz']),
            gamma_s=np.pi * float(section['fwhm_signal_hz']),
            gamma_i=(
                None if unconfined else np.pi * float(section['fwhm_idler_hz'])
            ),
            center_freq=(
                0.0 if center_nm is None
                else float(wavelength_to_frequency(center_nm))
            ),
            mode_count=section['mode_count'],
            pump_freq=(
                None if pump_nm is None
                else 2 * np.pi * float(wavelength_to_frequency(pump_nm))
            ),
            idler_unconfined=unconfined,
        )

    def to_config(self):
        """Inverse of :meth:`from_config`."""
        section = {
            'fsr_hz': self.fsr,
            'fwhm_signal_hz': self.fwhm_signal,
            'mode_count': self.mode_count,
        }
        if self.center_freq > 0:
            section['center_nm'] = float(
                frequency_to_wavelength(self.center_freq)
            )
        if self.idler_unconfined:
            section['idler_unconfined'] = True
        else:
            section['fwhm_idler_hz'] = self.fwhm_idler
        if self.pump_freq is not None:
            pump = self.pump_freq / (2 * np.pi)
            section['pump_nm'] = float(frequency_to_wavelength(pump))
        return section


class Regime(enum.Enum):
    """Photon-pair regimes reachable by tuning the pump power."""

    HYPERENTANGLED = 'Hyperentangled'
    MULTIPLEXED = 'Multiplexed'
    NEITHER = 'Neither'


@dataclass(frozen=True)
class PumpRegime:
    """Squeezing parameter ``zeta`` of the pair source and its mode count."""

    zeta: complex
    mode_count: int

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError("'mode_count' must be at least 1.")

    @property
    def zeta_abs2(self):
        return abs(self.zeta) ** 2


def classify_regime(regime, threshold=REGIME_THRESHOLD):
    """Classify the pair state generated at a given squeezing.

    The state is hyperentangled (polarization and frequency) when
    ``2 M |zeta|^2 < threshold``, a set of independent, frequency-multiplexed
    entangled pairs when only ``2 |zeta|^2 < threshold``, and neither
    otherwise.

    Parameters
    ----------
    regime : :class:`PumpRegime`
    threshold : float, default 0.1
        Stand-in for "much smaller than one", in (0, 1).

    Returns
    -------
    :class:`Regime`

    Examples
    --------
    >>> classify_regime(PumpRegime(zeta=np.sqrt(1e-5), mode_count=1400))
    <Regime.HYPERENTANGLED: 'Hyperentangled'>
    >>> classify_regime(PumpRegime(zeta=0.1, mode_count=1400))
    <Regime.MULTIPLEXED: 'Multiplexed'>

    """
    if not 0 < threshold < 1:
        raise ValueError("'threshold' must be in (0, 1).")
    if 2 * regime.mode_count * regime.zeta_abs2 < threshold:
        return Regime.HYPERENTANGLED
    if 2 * regime.zeta_abs2 < threshold:
        return Regime.MULTIPLEXED
    return Regime.NEITHER


def regime_boundaries(mode_count, threshold=REGIME_THRESHOLD):
    """Largest ``|zeta|^2`` keeping each regime, as a dict.

    Since ``zeta`` grows with the pump power, this tells how far the pump
    can be raised before the hyperentangled (resp. multiplexed) description
    breaks down.
    """
    if not 0 < threshold < 1:
        raise ValueError("'threshold' must be in (0, 1).")
    return {
        Regime.HYPERENTANGLED: threshold / (2 * mode_count),
        Regime.MULTIPLEXED: threshold / 2,
    }


def mode_indices(spec):
    """Signed indices of the ``M`` in-band teeth, centred on 0."""
    m = spec.mode_count
    return np.arange(m) - (m - 1) // 2


def mode_frequency(spec, m):
    """Angular frequency (rad/s) of the tooth with signed index `m`."""
    return spec.center_omega + 2 * np.pi * np.asarray(m) * spec.fsr


def _tooth_amplitude(spec, delta):
    """Unnormalized amplitude of a single tooth at detuning `delta`."""
    if spec.idler_unconfined:
        # the constant idler factor 1/gamma_i is absorbed by the norm
        return 1 / (spec.gamma_s + 1j * delta)
    return 1 / ((spec.gamma_i - 1j * delta) * (spec.gamma_s + 1j * delta))


def _tooth_overlap(spec, separation):
    """Overlap integral of a tooth with a copy shifted by `separation`.

    Closed form obtained by closing the contour in the upper half plane.
    """
    separation = np.asarray(separation, dtype=float)
    gs = spec.gamma_s
    if spec.idler_unconfined:
        return 2j * np.pi / (2j * gs - separation)
    gi = spec.gamma_i
    with np.errstate(divide='ignore', invalid='ignore'):
        upper_signal = 1 / (
            1j * (gs + gi)
            * (-separation + 1j * (gs - gi))
            * (-separation + 2j * gs)
        )
        upper_idler = 1 / (
            (separation + 2j * gi)
            * (separation + 1j * (gi - gs))
            * 1j * (gi + gs)
        )
        overlap = 2j * np.pi * (upper_signal + upper_idler)
    on_tooth = np.pi / (gi * gs * (gi + gs))
    return np.where(separation == 0, on_tooth, overlap)


@functools.lru_cache(maxsize=256)
def jsa_norm(spec):
    """Normalization constant of the idler marginal JSA.

    Includes the overlap between the Lorentzian tails of different teeth,
    so that the integral of ``|f|^2`` over the idler frequency is exactly
    one for any finesse.
    """
    m = spec.mode_count
    k = np.arange(1, m)
    separations = 2 * np.pi * spec.fsr * k
    total = (
        m * _tooth_overlap(spec, 0.0).real
        + 2 * np.sum((m - k) * _tooth_overlap(spec, separations).real)
    )
    return 1 / np.sqrt(total)


def jsa_detuned(spec, detuning):
    """Normalized marginal JSA as a function of ``omega_i - omega_0``."""
    detuning = np.asarray(detuning, dtype=float)
    if not np.all(np.isfinite(detuning)):
        raise ValueError("idler frequency must be finite.")
    centers = 2 * np.pi * spec.fsr * mode_indices(spec)
    delta = detuning[..., np.newaxis] - centers
    return jsa_norm(spec) * _tooth_amplitude(spec, delta).sum(axis=-1)


def jsa_marginal(spec, omega_i):
    """Normalized idler marginal of the joint spectral amplitude.

    ``f(omega_i) = N sum_m 1 / ([gamma_i - i(omega_i - omega_m)]
    [gamma_s + i(omega_i - omega_m)])`` over the ``M`` in-band teeth.  The
    signal photon is at ``pump_freq - omega_i``.

    Parameters
    ----------
    spec : :class:`CombSpec`
    omega_i : float or array_like
        Idler angular frequency (rad/s).

    Returns
    -------
    complex or :class:`numpy.ndarray`

    """
    omega_i = np.asarray(omega_i, dtype=float)
    if not np.all(np.isfinite(omega_i)):
        raise ValueError("'omega_i' must be finite.")
    return jsa_detuned(spec, omega_i - spec.center_omega)


def spectral_intensity(spec, omega_i):
    """Idler spectral intensity ``|f(omega_i)|^2``."""
    return np.abs(jsa_marginal(spec, omega_i)) ** 2


def band_integral(spec, integrand, epsrel=1e-10, tolerance=1e-8):
    """Integrate a function of the idler detuning over the whole real line.

    The line is split at the midpoints between teeth and, on each piece,
    the detuning is mapped through ``delta = gamma tan(u)`` around the tooth
    centre, which flattens the Lorentzian peaks and maps the outer tails to
    a finite interval.

    Parameters
    ----------
    spec : :class:`CombSpec`
    integrand : callable
        Function of the detuning ``omega_i - omega_0`` (rad/s).
    epsrel : float, default 1e-10
        Relative tolerance requested from each adaptive quadrature.
    tolerance : float, default 1e-8
        Relative error above which the result is rejected.

    Raises
    ------
    QuadratureError
        If the summed error estimate exceeds `tolerance`.

    """
    width = min(spec.gamma_s, spec.gamma_idler)
    spacing = 2 * np.pi * spec.fsr
    centers = spacing * mode_indices(spec)
    total, error = 0.0, 0.0
    for i, center in enumerate(centers):
        lo = -np.pi / 2 if i == 0 else np.arctan(-spacing / 2 / width)
        hi = (
            np.pi / 2 if i == len(centers) - 1
            else np.arctan(spacing / 2 / width)
        )

        def mapped(u, center=center):
            return integrand(center + width * np.tan(u)) * width / np.cos(u)**2

        with warnings.catch_warnings():
            warnings.simplefilter('ignore', integrate.IntegrationWarning)
            value, err = integrate.quad(
                mapped, lo, hi, epsabs=0, epsrel=epsrel, limit=200
            )
        total += value
        error += err
    if error > tolerance * abs(total):
        raise QuadratureError(
            "band integral did not converge", error / abs(total)
        )
    return total
