import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bicomb.defaults import JAMES_SETTINGS
from bicomb.sagnac import (
    DensityMatrix, SagnacSpec, bell_state, fidelity_max_theta,
    postselected_state
)
from bicomb.tomography import (
    MeasurementSetting, TomographyRecord, _negative_log_likelihood,
    design_matrix, fidelity_errors, linear_inversion, mle_reconstruct,
    probabilities, simulate_counts
)


@pytest.fixture
def bell():
    return DensityMatrix.from_pure(bell_state())


@pytest.fixture
def mixed_state():
    """Full-rank state with coherences in every element."""
    rng = np.random.default_rng(4)
    factor = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    matrix = factor @ factor.conj().T
    return DensityMatrix(matrix / np.trace(matrix).real)


def contaminated(fidelity):
    """Postselected state of maximal fidelity `fidelity`."""
    weight = 2 * (1 / fidelity - 1)
    return postselected_state(SagnacSpec.symmetric(weight / (1 + weight)))


def test_measurement_setting():
    setting = MeasurementSetting.from_label('RD')
    assert setting.label == 'RD'
    assert_allclose(np.linalg.norm(setting.state), 1)
    assert_allclose(np.trace(setting.operator), 1)
    with pytest.raises(ValueError, match='2 letters'):
        MeasurementSetting.from_label('HDV')
    with pytest.raises(ValueError, match='must be one of'):
        MeasurementSetting('H', 'X')


def test_design_matrix():
    matrix = design_matrix()
    assert matrix.shape == (16, 16)
    assert np.linalg.matrix_rank(matrix) == 16
    with pytest.raises(ValueError, match='informationally complete'):
        design_matrix(['HH'] * 8 + ['VV'] * 8)


@pytest.mark.parametrize(
    "label, probability",
    [('HH', 0.5), ('HV', 0.0), ('DD', 0.5), ('DA', 0.0), ('RL', 0.5),
     ('RR', 0.0), ('HD', 0.25)]
)
def test_bell_probabilities(bell, label, probability):
    assert_allclose(probabilities(bell, [label]), [probability], atol=1e-15)


def test_simulate_counts(bell):
    record = simulate_counts(bell, scale=1e4, seed=7)
    again = simulate_counts(bell, scale=1e4, seed=7)
    assert_array_equal(record.counts, again.counts)
    assert record.labels == list(JAMES_SETTINGS)
    assert record.acquisition_scale == 1e4
    assert record.metadata == {'seed': 7, 'rng': 'PCG64'}
    expected = simulate_counts(bell, scale=1e4, expected=True)
    assert_allclose(expected.counts, 1e4 * probabilities(bell), atol=1e-9)
    with pytest.raises(ValueError):
        simulate_counts(bell, scale=0)


def test_record_rejects():
    with pytest.raises(ValueError, match='16'):
        TomographyRecord(JAMES_SETTINGS[:15], np.ones(15))
    with pytest.raises(ValueError, match='negative'):
        TomographyRecord(JAMES_SETTINGS, -np.ones(16))


def test_record_csv_round_trip(bell, tmp_path):
    record = simulate_counts(bell, scale=1e4, seed=7)
    path = record.to_csv(tmp_path / "record.csv", {'config_hash': 'abc'})
    back = TomographyRecord.read_csv(path)
    assert back.labels == record.labels
    assert_array_equal(back.counts, record.counts)
    assert back.acquisition_scale == 1e4
    assert back.metadata['config_hash'] == 'abc'
    assert back.metadata['rng'] == 'PCG64'
    assert back.metadata['seed'] == 7
    assert isinstance(back.metadata['seed'], int)


@pytest.mark.parametrize('scale', [1e3, 3e4])
def test_linear_inversion_of_expected_counts(mixed_state, scale):
    record = simulate_counts(mixed_state, scale, expected=True)
    record.acquisition_scale = np.nan
    estimate = linear_inversion(record)
    assert_allclose(estimate.matrix, mixed_state.matrix, atol=1e-12)


def test_linear_inversion_without_counts():
    with pytest.raises(ValueError, match='no counts'):
        linear_inversion(TomographyRecord(JAMES_SETTINGS, np.zeros(16)))


def test_mle_of_expected_counts(mixed_state):
    record = simulate_counts(mixed_state, 1e4, expected=True)
    estimate, info = mle_reconstruct(record, full_output=True)
    assert info['converged']
    assert estimate.trace_distance(mixed_state) < 1e-4
    assert_allclose(info['expected'], record.counts, rtol=1e-4)


@pytest.mark.parametrize('fidelity', [0.99, 0.9, 0.75])
def test_mle_recovers_contaminated_fidelity(fidelity):
    truth = contaminated(fidelity)
    assert_allclose(fidelity_max_theta(truth)[0], fidelity)
    record = simulate_counts(truth, 1e4, expected=True)
    estimate = mle_reconstruct(record)
    assert estimate.trace_distance(truth) < 2e-3
    assert_allclose(fidelity_max_theta(estimate)[0], fidelity, atol=2e-3)


def test_mle_is_physical_at_low_counts(bell):
    record = simulate_counts(bell, scale=20, seed=3)
    estimate = mle_reconstruct(record)
    assert estimate.is_physical
    assert_allclose(np.trace(estimate.matrix), 1)


def test_mle_without_counts():
    record = TomographyRecord(JAMES_SETTINGS, np.zeros(16))
    estimate, info = mle_reconstruct(record, full_output=True)
    assert_allclose(estimate.matrix, np.eye(4) / 4)
    assert info['iterations'] == 0


def test_mle_of_noisy_bell_state(bell):
    estimate = mle_reconstruct(simulate_counts(bell, scale=1e4, seed=7))
    fidelity, theta = fidelity_max_theta(estimate)
    assert fidelity > 0.98
    assert abs(theta) < 0.05


def test_fidelity_errors():
    record = simulate_counts(contaminated(0.9), scale=1e4, seed=11)
    fidelity, std = fidelity_errors(record, n_resamples=20, seed=5, n_jobs=1)
    again = fidelity_errors(record, n_resamples=20, seed=5, n_jobs=1)
    assert (fidelity, std) == again
    assert abs(fidelity - 0.9) < 5 * std + 0.01
    assert 0 < std < 0.02
    with pytest.raises(ValueError):
        fidelity_errors(record, n_resamples=1)


@pytest.mark.parametrize('index', range(16))
def test_mle_of_single_setting_counts(index):
    counts = np.zeros(16)
    counts[index] = 100
    record = TomographyRecord(JAMES_SETTINGS, counts)
    # the optimum lies on the boundary of the state space
    with pytest.warns(UserWarning, match='did not converge'):
        estimate = mle_reconstruct(record)
    assert estimate.eigenvalues.min() >= -1e-10
    assert_allclose(np.trace(estimate.matrix), 1, rtol=1e-12)


def test_mle_matches_linear_inversion(mixed_state):
    record = simulate_counts(mixed_state, 1e4, expected=True)
    estimate = mle_reconstruct(record)
    assert_allclose(estimate.matrix, linear_inversion(record).matrix,
                    atol=1e-6)


def test_negative_log_likelihood_gradient(mixed_state):
    record = simulate_counts(mixed_state, 1e3, seed=2)
    operators = np.array([s.operator for s in record.settings])
    fractions = record.counts / record.counts.sum()
    args = (fractions, fractions > 0, operators)
    rng = np.random.default_rng(8)
    x = 0.2 * rng.normal(size=16)
    x[:4] = 0.3 + 0.1 * rng.random(4)
    _, gradient = _negative_log_likelihood(x, *args)
    step = 1e-6
    numeric = np.array([
        (_negative_log_likelihood(x + step * unit, *args)[0]
         - _negative_log_likelihood(x - step * unit, *args)[0]) / (2 * step)
        for unit in np.eye(16)
    ])
    assert_allclose(gradient, numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.slow
@pytest.mark.parametrize('method', [linear_inversion, mle_reconstruct])
def test_reconstruction_is_consistent(bell, method):
    distances = [
        method(simulate_counts(bell, scale=1e6, seed=seed)).trace_distance(bell)
        for seed in range(50)
    ]
    assert np.median(distances) < 5e-3


@pytest.mark.slow
@pytest.mark.parametrize('fidelity', [0.7, 0.8, 0.9, 1.0])
def test_mle_fidelity_ensemble(bell, fidelity):
    truth = contaminated(fidelity) if fidelity < 1 else bell
    errors = []
    for seed in range(50):
        estimate = mle_reconstruct(simulate_counts(truth, 1e4, seed=seed))
        errors.append(abs(fidelity_max_theta(estimate)[0] - fidelity))
    assert np.median(errors) < 0.02
