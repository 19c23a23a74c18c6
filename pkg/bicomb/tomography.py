"""
The :mod:`~bicomb.tomography` module simulates two-photon polarization
tomography and reconstructs density matrices from its counts.

A setting projects the idler on one of the six polarization states
``H, V, D, A, R, L`` and the signal on another; the canonical 16 settings
(:data:`~bicomb.defaults.JAMES_SETTINGS`) are informationally complete.  Two
reconstructions are provided: linear inversion, fast but possibly
unphysical, and maximum likelihood over Cholesky-parameterized states.

Examples
--------
>>> from bicomb.sagnac import DensityMatrix, bell_state, fidelity_max_theta
>>> rho = DensityMatrix.from_pure(bell_state())
>>> record = simulate_counts(rho, scale=1e4, seed=7)
>>> estimate = mle_reconstruct(record)
>>> fidelity, theta = fidelity_max_theta(estimate)

"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import joblib
import numpy as np
import pandas as pd
from scipy import optimize

from .defaults import FIT_MAX_ITER, JAMES_SETTINGS, MLE_GTOL
from .sagnac import DensityMatrix, fidelity_max_theta

logger = logging.getLogger(__name__)

_S = 1 / np.sqrt(2)

#: Single-photon polarization states, as (H, V) amplitudes.
PROJECTORS = {
    'H': np.array([1, 0], dtype=complex),
    'V': np.array([0, 1], dtype=complex),
    'D': np.array([_S, _S], dtype=complex),
    'A': np.array([_S, -_S], dtype=complex),
    'R': np.array([_S, 1j * _S]),
    'L': np.array([_S, -1j * _S]),
}

_PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]]),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_PAULI_PAIRS = [np.kron(a, b) for a in _PAULI for b in _PAULI]


@dataclass(frozen=True)
class MeasurementSetting:
    """Pair of projectors, idler (`projector_a`) then signal."""

    projector_a: str
    projector_b: str

    def __post_init__(self):
        for name in (self.projector_a, self.projector_b):
            if name not in PROJECTORS:
                valid = ', '.join(PROJECTORS)
                raise ValueError(
                    f"projector must be one of {valid}, not {name!r}."
                )

    @classmethod
    def from_label(cls, label):
        """``'HD'`` gives ``MeasurementSetting('H', 'D')``."""
        if len(label) != 2:
            raise ValueError(
                f"setting label must have 2 letters, not {label!r}."
            )
        return cls(label[0], label[1])

    @property
    def label(self):
        return self.projector_a + self.projector_b

    @property
    def state(self):
        a, b = PROJECTORS[self.projector_a], PROJECTORS[self.projector_b]
        return np.kron(a, b)

    @property
    def operator(self):
        state = self.state
        return np.outer(state, state.conj())


def _settings(settings):
    return tuple(
        s if isinstance(s, MeasurementSetting)
        else MeasurementSetting.from_label(s)
        for s in settings
    )


def design_matrix(settings=JAMES_SETTINGS):
    """Probabilities of each setting as a linear map of Pauli coefficients.

    Row ``k`` holds ``Tr(P_k sigma_mu x sigma_nu) / 4``, so that the
    probability of setting ``k`` is the row times the 16 coefficients
    ``r_mu,nu`` of ``rho = sum r_mu,nu sigma_mu x sigma_nu / 4``.

    Raises
    ------
    ValueError
        If the settings are not informationally complete.

    """
    settings = _settings(settings)
    matrix = np.array([
        [np.real(np.trace(s.operator @ pauli)) / 4 for pauli in _PAULI_PAIRS]
        for s in settings
    ])
    if np.linalg.matrix_rank(matrix) < 16:
        raise ValueError("the settings are not informationally complete.")
    return matrix


@dataclass
class TomographyRecord:
    """Counts of a tomography run.

    Parameters
    ----------
    settings : sequence
        :class:`MeasurementSetting` or two-letter labels.
    counts : array_like
        Non-negative counts, one per setting.
    acquisition_scale : float
        Expected counts of a setting with unit probability.

    """

    settings: tuple
    counts: np.ndarray
    acquisition_scale: float = np.nan
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.settings = _settings(self.settings)
        self.counts = np.asarray(self.counts)
        if len(self.settings) != 16 or self.counts.shape != (16,):
            raise ValueError("a record needs 16 settings and 16 counts.")
        if np.any(self.counts < 0):
            raise ValueError("'counts' cannot be negative.")

    @property
    def labels(self):
        return [s.label for s in self.settings]

    def to_csv(self, path, extra=None):
        """``setting,count`` rows after ``# key=value`` metadata lines.

        Metadata values are written as JSON, so their types survive
        :meth:`read_csv`.
        """
        metadata = {
            'acquisition_scale': float(self.acquisition_scale),
            **self.metadata,
            **(extra or {}),
        }
        table = pd.DataFrame({'setting': self.labels, 'count': self.counts})
        with open(path, 'w', newline='') as file:
            for key, value in metadata.items():
                file.write(f"# {key}={json.dumps(value)}\n")
            table.to_csv(file, index=False, float_format='%.17g')
        return Path(path)

    @classmethod
    def read_csv(cls, path):
        metadata = {}
        with open(path) as file:
            for line in file:
                if not line.startswith('#'):
                    break
                key, _, value = line[1:].strip().partition('=')
                metadata[key] = json.loads(value)
        table = pd.read_csv(path, comment='#', float_precision='round_trip')
        scale = float(metadata.pop('acquisition_scale', np.nan))
        return cls(
            tuple(table['setting']), table['count'].to_numpy(), scale, metadata
        )


def probabilities(rho, settings=JAMES_SETTINGS):
    """``Tr(rho P_k)`` for every setting."""
    matrix = rho.matrix if isinstance(rho, DensityMatrix) else rho
    return np.array([
        np.real(np.trace(matrix @ s.operator)) for s in _settings(settings)
    ])


def simulate_counts(rho, scale, seed=None, settings=JAMES_SETTINGS,
                    expected=False):
    """Poisson counts of a tomography run on `rho`.

    Parameters
    ----------
    rho : :class:`~bicomb.sagnac.DensityMatrix`
    scale : float
        Expected counts of a setting with unit probability.
    seed : int, optional
        Seed of the PCG64 generator.
    settings : sequence, default :data:`~bicomb.defaults.JAMES_SETTINGS`
    expected : bool, default False
        Return the noiseless expectations instead of Poisson draws.

    Returns
    -------
    TomographyRecord

    """
    if not scale > 0:
        raise ValueError("'scale' must be positive.")
    mean = scale * np.clip(probabilities(rho, settings), 0, None)
    if expected:
        return TomographyRecord(settings, mean, scale, {'expected': True})
    if seed is None:
        seed = np.random.SeedSequence().entropy
    rng = np.random.default_rng(seed)
    counts = rng.poisson(mean)
    return TomographyRecord(
        settings, counts, scale,
        {'seed': int(seed), 'rng': type(rng.bit_generator).__name__},
    )


def _pauli_matrix(coefficients):
    matrix = sum(c * pauli for c, pauli in zip(coefficients, _PAULI_PAIRS)) / 4
    return 0.5 * (matrix + matrix.conj().T)


def linear_inversion(record):
    """Density matrix solving the linear tomography equations.

    The overall count scale is solved for together with the state, so the
    acquisition scale of `record` is not used.  The result is Hermitian with
    unit trace but may have negative eigenvalues.

    Returns
    -------
    :class:`~bicomb.sagnac.DensityMatrix`
        Built with ``require_physical=False``.

    """
    design = design_matrix(record.settings)
    scaled = np.linalg.solve(design, record.counts.astype(float))
    if not scaled[0] > 0:
        raise ValueError("the record holds no counts in a complete basis.")
    return DensityMatrix(_pauli_matrix(scaled / scaled[0]),
                         require_physical=False)


_LOWER = np.tril_indices(4, -1)


def _cholesky_factor(x):
    factor = np.diag(x[:4]).astype(complex)
    factor[_LOWER] = x[4:10] + 1j * x[10:]
    return factor


def _cholesky_params(factor):
    return np.concatenate([
        np.real(np.diag(factor)), factor[_LOWER].real, factor[_LOWER].imag
    ])


def _start(record, operators):
    try:
        rho = linear_inversion(record).matrix
    except ValueError:
        rho = np.eye(4) / 4
    values, vectors = np.linalg.eigh(rho)
    values = np.clip(values, 1e-3, None)
    rho = (vectors * values) @ vectors.conj().T
    rho /= np.trace(rho).real
    # best overall scale for this state
    rho /= np.real(np.trace(rho @ operators.sum(axis=0)))
    return _cholesky_params(np.linalg.cholesky(rho))


def _negative_log_likelihood(x, fractions, observed, operators):
    """Poisson negative log-likelihood per count and its gradient in `x`."""
    factor = _cholesky_factor(x)
    rho = factor @ factor.conj().T
    mu = np.real(np.einsum('ij,kji->k', rho, operators))
    mu = np.maximum(mu, 1e-300)
    value = mu.sum() - np.sum(fractions[observed] * np.log(mu[observed]))
    weights = 1 - np.where(observed, fractions / mu, 0)
    gradient = 2 * np.tensordot(weights, operators, axes=1) @ factor
    grad = np.concatenate([
        np.real(np.diag(gradient)),
        gradient[_LOWER].real,
        gradient[_LOWER].imag,
    ])
    return value, grad


def mle_reconstruct(record, max_iter=FIT_MAX_ITER, gtol=MLE_GTOL,
                    full_output=False):
    """Maximum-likelihood density matrix.

    Minimizes the Poisson negative log-likelihood
    ``sum_k mu_k - n_k log mu_k`` over ``mu_k = N Tr(T T^+ P_k)``, with ``T``
    lower triangular (16 real parameters) and ``N`` the total count, by a
    quasi-Newton method with analytic gradient.  Settings without counts
    only enter through ``mu_k``, never through a logarithm.

    Parameters
    ----------
    record : TomographyRecord
    max_iter : int, default 500
    gtol : float, default 1e-8
        Gradient norm at convergence.
    full_output : bool, default False
        Also return a dict with ``converged``, ``iterations``,
        ``expected`` (fitted counts) and ``message``.

    Returns
    -------
    :class:`~bicomb.sagnac.DensityMatrix`
        Always physical; the maximally mixed state when there are no counts.

    Warns
    -----
    UserWarning
        If the optimizer stops before convergence.

    """
    settings = record.settings
    operators = np.array([s.operator for s in settings])
    counts = record.counts.astype(float)
    total = counts.sum()
    if total == 0:
        rho = DensityMatrix.maximally_mixed()
        info = {'converged': True, 'iterations': 0,
                'expected': np.zeros(len(counts)), 'message': 'no counts'}
        return (rho, info) if full_output else rho
    fractions = counts / total
    observed = fractions > 0
    result = optimize.minimize(
        _negative_log_likelihood, _start(record, operators), jac=True,
        args=(fractions, observed, operators),
        method='BFGS', options={'gtol': gtol, 'maxiter': max_iter},
    )
    factor = _cholesky_factor(result.x)
    unnormalized = factor @ factor.conj().T
    rho = unnormalized / np.real(np.trace(unnormalized))
    rho = DensityMatrix(0.5 * (rho + rho.conj().T))
    converged = bool(result.success)
    if not converged:
        warnings.warn(f"maximum likelihood did not converge: {result.message}")
    logger.debug(
        "mle: %d iterations, gradient norm %.2e, %s",
        result.nit, np.linalg.norm(result.jac), result.message
    )
    if not full_output:
        return rho
    mu = np.real(np.einsum('ij,kji->k', unnormalized, operators))
    info = {
        'converged': converged,
        'iterations': int(result.nit),
        'expected': total * mu,
        'message': str(result.message),
    }
    return rho, info


def _resampled_fidelity(record, expected, seed):
    rng = np.random.default_rng(seed)
    resampled = TomographyRecord(
        record.settings, rng.poisson(expected), record.acquisition_scale
    )
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        fidelity, _ = fidelity_max_theta(mle_reconstruct(resampled))
    return fidelity


def fidelity_errors(record, n_resamples=100, seed=None, n_jobs=None):
    """Bootstrap standard deviation of the maximal fidelity.

    Counts are redrawn from Poisson distributions around the counts expected
    from the maximum-likelihood state, and each resample is reconstructed
    again.

    Returns
    -------
    fidelity : float
        Fidelity of the reconstruction of `record`.
    std : float
        Standard deviation over the resamples.

    """
    if n_resamples < 2:
        raise ValueError("'n_resamples' must be at least 2.")
    rho, info = mle_reconstruct(record, full_output=True)
    seeds = np.random.SeedSequence(seed).spawn(n_resamples)
    fidelities = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_resampled_fidelity)(record, info['expected'], child)
        for child in seeds
    )
    fidelity, _ = fidelity_max_theta(rho)
    return fidelity, float(np.std(fidelities, ddof=1))
