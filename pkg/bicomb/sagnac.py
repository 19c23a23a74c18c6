"""
The :mod:`~bicomb.sagnac` module models the polarization state produced by
pumping the cavity inside a Sagnac interferometer.

Both pump polarizations generate pairs, clockwise and counter-clockwise.  A
signal photon reflected by the resonator leaves through the wrong port and
mixes a ``|VH>`` component into the entangled state; selecting coincidences
in a window of length ``delta_tau`` keeps only the tail
``|beta_H|^2 exp(-2 gamma delta_tau)`` of it.

Two-photon states are 4x4 density matrices in the ``HH, HV, VH, VV`` basis,
idler first.
"""

import warnings
from dataclasses import InitVar, dataclass
from pathlib import Path

import numpy as np

#: Two-photon polarization basis, idler first.
BASIS = ('HH', 'HV', 'VH', 'VV')

_SIGMA_YY = np.kron([[0, -1j], [1j, 0]], [[0, -1j], [1j, 0]])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Two-photon polarization state.

    Parameters
    ----------
    matrix : array_like
        4x4 complex matrix in the :data:`BASIS` order.
    require_physical : bool, default True
        Reject matrices with eigenvalues below ``-1e-10``.  Linear inversion
        tomography switches it off.

    """

    matrix: np.ndarray
    require_physical: InitVar[bool] = True

    def __post_init__(self, require_physical):
        matrix = np.array(self.matrix, dtype=complex)
        if matrix.shape != (4, 4):
            raise ValueError("'matrix' must be 4x4.")
        if np.abs(matrix - matrix.conj().T).max() > 1e-12:
            raise ValueError("'matrix' must be Hermitian.")
        if abs(np.trace(matrix) - 1) > 1e-12:
            raise ValueError("'matrix' must have unit trace.")
        object.__setattr__(self, 'matrix', matrix)
        if require_physical and self.eigenvalues.min() < -1e-10:
            raise ValueError("'matrix' must be positive semidefinite.")

    @classmethod
    def from_pure(cls, state):
        """Projector on a (not necessarily normalized) state vector."""
        state = np.asarray(state, dtype=complex)
        state = state / np.linalg.norm(state)
        return cls(np.outer(state, state.conj()))

    @classmethod
    def maximally_mixed(cls):
        return cls(np.eye(4) / 4)

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    @property
    def is_physical(self):
        return self.eigenvalues.min() >= -1e-10

    @property
    def purity(self):
        """``Tr(rho^2)``."""
        return np.real(np.trace(self.matrix @ self.matrix))

    @property
    def concurrence(self):
        """Wootters concurrence, from 0 (separable) to 1 (Bell state)."""
        spin_flipped = _SIGMA_YY @ self.matrix.conj() @ _SIGMA_YY
        values = np.linalg.eigvals(self.matrix @ spin_flipped)
        roots = np.sort(np.sqrt(np.clip(values.real, 0, None)))[::-1]
        return max(0.0, roots[0] - roots[1:].sum())

    def expectation(self, operator):
        return np.real(np.trace(self.matrix @ operator))

    def trace_distance(self, other):
        """Half the trace norm of the difference with `other`."""
        difference = self.matrix - _matrix(other)
        return 0.5 * np.abs(np.linalg.eigvalsh(difference)).sum()

    def to_text(self):
        """Rows of ``re im`` pairs, row-major, 17 significant digits."""
        pairs = np.empty((4, 8))
        pairs[:, 0::2] = self.matrix.real
        pairs[:, 1::2] = self.matrix.imag
        lines = [f"# basis={' '.join(BASIS)}"]
        lines += [' '.join(f"{value:.17g}" for value in row) for row in pairs]
        return '\n'.join(lines) + '\n'

    def write(self, path):
        Path(path).write_text(self.to_text())
        return Path(path)

    @classmethod
    def read_text(cls, text, require_physical=True):
        """Parse the output of :meth:`to_text`."""
        rows = [
            line.split() for line in text.splitlines()
            if line.strip() and not line.startswith('#')
        ]
        pairs = np.array(rows, dtype=float)
        if pairs.shape != (4, 8):
            raise ValueError("expected 4 rows of 8 numbers.")
        return cls(pairs[:, 0::2] + 1j * pairs[:, 1::2], require_physical)

    @classmethod
    def read(cls, path, require_physical=True):
        return cls.read_text(Path(path).read_text(), require_physical)


def _matrix(state):
    return state.matrix if isinstance(state, DensityMatrix) else state


def bell_state(phase=0.0):
    """``(|HH> + exp(i phase) |VV>) / sqrt(2)`` as a state vector."""
    return np.array([1, 0, 0, np.exp(1j * phase)]) / np.sqrt(2)


@dataclass(frozen=True)
class SagnacSpec:
    """Resonator, losses and timing of the Sagnac source.

    Parameters
    ----------
    r_l, r_r, t_l, t_r : complex
        Reflection and transmission amplitudes of the resonator for light
        entering from the left and from the right.
    eta_sl, eta_sr, eta_il, eta_ir : float
        Amplitude transmissions of the optical paths of the signal (s) and
        idler (i) photons leaving on the left (l) or right (r), in (0, 1].
    delta_tau : float
        Arm delay ``tau_r - tau_l`` (s), also the postselection window.
    gamma : float
        Temporal decay rate of the pair (1/s).
    phase_phi : float, default 0
        Relative phase of the ``|VV>`` component.
    delta_theta : float, default 0
        Phase of the reflected components.
    g_h : complex, default 1
        Coupling of the H-polarized pump.
    g_v : complex, optional
        Coupling of the V-polarized pump; solved from the balance condition
        when omitted.

    """

    r_l: complex
    r_r: complex
    t_l: complex
    t_r: complex
    eta_sl: float = 1.0
    eta_sr: float = 1.0
    eta_il: float = 1.0
    eta_ir: float = 1.0
    delta_tau: float = 0.0
    gamma: float = 1.0
    phase_phi: float = 0.0
    delta_theta: float = 0.0
    g_h: complex = 1.0
    g_v: complex = None

    def __post_init__(self):
        for side in ('l', 'r'):
            r, t = getattr(self, f'r_{side}'), getattr(self, f't_{side}')
            if abs(abs(r)**2 + abs(t)**2 - 1) > 1e-9:
                raise ValueError(
                    f"|t_{side}|^2 + |r_{side}|^2 must equal 1."
                )
        for name in ('eta_sl', 'eta_sr', 'eta_il', 'eta_ir'):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"'{name}' must be in (0, 1].")
        if self.delta_tau < 0:
            raise ValueError("'delta_tau' cannot be negative.")
        if not self.gamma > 0:
            raise ValueError("'gamma' must be positive.")
        if self.g_h == 0:
            raise ValueError("'g_h' cannot be zero.")

    @classmethod
    def symmetric(cls, reflectance, **kwargs):
        """Reciprocal lossless resonator with power reflectance `reflectance`.

        ``t_l = t_r = sqrt(1 - R)``, ``r_l = -r_r = sqrt(R)``, which satisfies
        ``conj(r_l) t_r + conj(t_l) r_r = 0``.
        """
        if not 0 <= reflectance < 1:
            raise ValueError("'reflectance' must be in [0, 1).")
        r, t = np.sqrt(reflectance), np.sqrt(1 - reflectance)
        return cls(r_l=r, r_r=-r, t_l=t, t_r=t, **kwargs)

    @classmethod
    def from_config(cls, section):
        """Build from the ``sagnac`` section of a run configuration."""
        keys = {
            'eta_sl': 'eta_sl', 'eta_sr': 'eta_sr', 'eta_il': 'eta_il',
            'eta_ir': 'eta_ir', 'delta_tau_s': 'delta_tau', 'gamma': 'gamma',
            'phase_phi': 'phase_phi', 'delta_theta': 'delta_theta',
        }
        if 'reflectance' not in section:
            raise KeyError("missing sagnac key: 'reflectance'")
        unknown = set(section) - set(keys) - {'reflectance'}
        if unknown:
            raise KeyError(
                f"unknown sagnac key(s): {', '.join(sorted(unknown))}"
            )
        kwargs = {
            field: float(section[key]) for key, field in keys.items()
            if section.get(key) is not None
        }
        return cls.symmetric(float(section['reflectance']), **kwargs)

    def balanced_g_v(self):
        """V pump coupling fulfilling the balance condition
        ``g_H eta_ir t_l eta_sr = g_V eta_il t_r eta_sl``."""
        return (
            self.g_h * self.eta_ir * self.t_l * self.eta_sr
            / (self.eta_il * self.t_r * self.eta_sl)
        )


def beta_factors(spec):
    """Reflected-to-transmitted amplitude ratios.

    ``beta_H = r_l eta_sl / (t_l eta_sr)`` and
    ``beta_V = r_r eta_sr / (t_r eta_sl)``.

    Examples
    --------
    >>> spec = SagnacSpec.symmetric(0.5)
    >>> [round(abs(beta), 12) for beta in beta_factors(spec)]
    [1.0, 1.0]

    """
    if spec.t_l == 0 or spec.t_r == 0:
        raise ValueError("the resonator transmittance cannot be zero.")
    beta_h = spec.r_l * spec.eta_sl / (spec.t_l * spec.eta_sr)
    beta_v = spec.r_r * spec.eta_sr / (spec.t_r * spec.eta_sl)
    return complex(beta_h), complex(beta_v)


def contamination_weight(spec):
    """``|beta_H|^2 exp(-2 gamma delta_tau)``, twice the ``|VH>`` weight."""
    beta_h, _ = beta_factors(spec)
    return abs(beta_h)**2 * np.exp(-2 * spec.gamma * spec.delta_tau)


def _check_balance(spec, mode):
    if mode == 'solve':
        return
    if mode != 'assert':
        raise ValueError("'mode' must be either 'solve' or 'assert'.")
    if spec.g_v is None:
        raise ValueError("'g_v' must be given when the balance is asserted.")
    target = spec.balanced_g_v()
    if abs(spec.g_v - target) > 1e-9 * abs(target):
        raise ValueError(
            "the pump is not balanced: g_H eta_ir t_l eta_sr must equal "
            "g_V eta_il t_r eta_sl."
        )


def postselected_state(spec, mode='solve'):
    """State kept by the coincidence window of length ``delta_tau``.

    The maximally entangled ``|Phi> = (|HH> + exp(i phi)|VV>)/sqrt(2)`` is
    mixed with the dephased reflected component,
    ``rho ~ |Phi><Phi| + w/2 |VH><VH|`` with ``w`` the
    :func:`contamination_weight`.

    Parameters
    ----------
    spec : SagnacSpec
    mode : {'solve', 'assert'}, default 'solve'
        Impose the pump balance condition by solving for ``g_V``, or check
        that the given ``g_V`` satisfies it.

    Returns
    -------
    DensityMatrix

    """
    _check_balance(spec, mode)
    half_weight = 0.5 * contamination_weight(spec)
    matrix = DensityMatrix.from_pure(bell_state(spec.phase_phi)).matrix.copy()
    matrix[2, 2] += half_weight
    return DensityMatrix(matrix / (1 + half_weight))


def balanced_state(spec, mode='solve'):
    """Output state with equal arm lengths, using all four components.

    Without time selection the reflected photons stay in the state:
    ``|V>_i (|V> + beta_H exp(-i dtheta)|H>)_s + exp(i phi) |H>_i (|H>
    + beta_V exp(i dtheta)|V>)_s``, each branch normalized to equal weight.
    """
    _check_balance(spec, mode)
    beta_h, beta_v = beta_factors(spec)
    shift = np.exp(1j * spec.delta_theta)
    # signal states of the V-idler and H-idler branches, as (H, V) amplitudes
    v_branch = np.array([beta_h / shift, 1]) / np.sqrt(1 + abs(beta_h)**2)
    h_branch = np.array([1, beta_v * shift]) / np.sqrt(1 + abs(beta_v)**2)
    state = (
        np.exp(1j * spec.phase_phi) * np.kron([1, 0], h_branch)
        + np.kron([0, 1], v_branch)
    )
    return DensityMatrix.from_pure(state)


def fidelity_max_theta(rho):
    """Largest overlap with ``(|HH> + exp(i theta)|VV>)/sqrt(2)``.

    Returns
    -------
    fidelity : float
        ``(rho_HH,HH + rho_VV,VV)/2 + |rho_HH,VV|``.
    theta : float
        Maximizing phase, ``-arg(rho_HH,VV)``.

    Examples
    --------
    >>> fidelity_max_theta(DensityMatrix.maximally_mixed())
    (0.25, -0.0)

    """
    matrix = _matrix(rho)
    coherence = matrix[0, 3]
    fidelity = 0.5 * np.real(matrix[0, 0] + matrix[3, 3]) + abs(coherence)
    return float(fidelity), float(-np.angle(coherence))


def corrected_fidelity(measured, spec):
    """Fidelity expected without the reflected-signal contamination.

    Parameters
    ----------
    measured : float
        Measured fidelity, in (0, 1].
    spec : SagnacSpec

    Returns
    -------
    fidelity : float
        ``measured * (1 + w/2)``, at most 1.
    clamped : bool
        Whether the product exceeded 1.

    """
    if not 0 < measured <= 1:
        raise ValueError("'measured' must be in (0, 1].")
    value = measured * (1 + 0.5 * contamination_weight(spec))
    clamped = value > 1 + 1e-12
    if clamped:
        warnings.warn(f"corrected fidelity {value:.4f} clamped to 1.")
    return min(value, 1.0), clamped


def balanced_fidelity_bound(spec):
    """Lower bound of the fidelity of :func:`balanced_state`.

    ``1/2 [1 + |1 - beta_H beta_V| / sqrt((1 + |beta_H|^2)(1 + |beta_V|^2))]``,
    equal to 1 when the signal losses are symmetric.  Only meaningful for
    equal arm lengths; a nonzero `delta_tau` gives a warning.

    Examples
    --------
    >>> spec = SagnacSpec.symmetric(0.5, eta_sl=1.0, eta_sr=np.sqrt(0.5))
    >>> round(balanced_fidelity_bound(spec), 3)
    0.971

    """
    if spec.delta_tau != 0:
        warnings.warn(
            f"the bound assumes equal arm lengths, got delta_tau = "
            f"{spec.delta_tau!r} s."
        )
    beta_h, beta_v = beta_factors(spec)
    bound = 0.5 * (1 + abs(1 - beta_h * beta_v) / np.sqrt(
        (1 + abs(beta_h)**2) * (1 + abs(beta_v)**2)
    ))
    same_magnitudes = (
        np.isclose(abs(spec.r_l), abs(spec.r_r), rtol=0, atol=1e-12)
        and np.isclose(abs(spec.t_l), abs(spec.t_r), rtol=0, atol=1e-12)
    )
    reciprocal = np.isclose(
        abs(1 - spec.r_l * spec.r_r / (spec.t_l * spec.t_r)),
        1 / abs(spec.t_l)**2, rtol=1e-12, atol=0
    )
    if same_magnitudes and reciprocal:
        reflectance = abs(spec.r_l)**2
        ratio = (spec.eta_sl / spec.eta_sr)**2
        loss_form = 0.5 * (1 + (
            (1 + reflectance * (ratio - 1))
            * (1 + reflectance * (1 / ratio - 1))
        )**-0.5)
        if not np.isclose(bound, loss_form, rtol=1e-9, atol=0):
            raise RuntimeError(
                f"fidelity bound {bound!r} differs from its loss form "
                f"{loss_form!r}."
            )
    return float(bound)
