from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bicomb.defaults import MODEL_PARAMETERS
from bicomb.fitting import (
    CavityReport, DegenerateFitError, FitProblem, FitResult,
    bootstrap_errors, derive_cavity_report, fit, initial_guess, model_counts,
    model_jacobian
)
from bicomb.histogram import (
    DetectorSpec, Histogram, expected_auto, expected_cross, synthesize_cross
)


def noiseless_cross(comb, purity, window):
    """Expected histogram and the parameters reproducing it exactly."""
    detector = DetectorSpec(
        jitter_sigma=30e-12, bin_width=10e-12, window=window,
        accidental_rate=1.0, total_counts=1e5,
    )
    histogram = expected_cross(comb, detector, purity)
    truth = {
        'amplitude': 1e5 / histogram.metadata['window_mass'],
        'background': 1.0,
        'gamma_s': comb.gamma_s,
        'gamma_i': comb.gamma_idler,
        'sigma': 30e-12,
        't0': comb.round_trip_time,
        'purity': purity,
    }
    return histogram, truth


def nudged(truth, names, factor=1.03):
    return {name: truth[name] * factor for name in names}


@pytest.mark.parametrize(
    "comb_name, window",
    [
        ('doubly_comb', (-12e-9, 4e-9)),
        ('singly_comb', (-12e-9, 2e-9)),
    ]
)
def test_model_counts_match_expected_histogram(request, comb_name, window):
    comb = request.getfixturevalue(comb_name)
    histogram, truth = noiseless_cross(comb, 0.3, window)
    counts = model_counts('cross_sum', truth, histogram.bin_edges)
    assert_allclose(counts, histogram.counts, rtol=1e-9)


def test_auto_model_counts_match_expected_histogram(doubly_comb,
                                                    auto_detector):
    histogram = expected_auto(doubly_comb, auto_detector)
    span = histogram.bin_edges[-1] - histogram.bin_edges[0]
    params = {
        'amplitude': auto_detector.total_counts / span,
        'gamma_s': doubly_comb.gamma_s,
        'gamma_i': doubly_comb.gamma_i,
        'sigma': auto_detector.jitter_sigma,
    }
    counts = model_counts('AutoSingle', params, histogram.bin_edges)
    assert_allclose(counts, histogram.counts, rtol=1e-10)


def finite_difference(model, params, edges, name):
    step = 1e-6 * params[name]
    up = model_counts(model, {**params, name: params[name] + step}, edges)
    down = model_counts(model, {**params, name: params[name] - step}, edges)
    return (up - down) / (2 * step)


@pytest.mark.parametrize("model", ['cross_single', 'cross_multi', 'cross_sum'])
@pytest.mark.parametrize("gamma_i", [np.pi * 300e6, np.inf])
def test_cross_jacobian_matches_finite_differences(model, gamma_i):
    params = {
        'amplitude': 1e5, 'background': 2.0, 'gamma_s': np.pi * 126e6,
        'gamma_i': gamma_i, 'sigma': 30e-12, 't0': 1 / 3.5e9, 'purity': 0.7,
    }
    names = [
        name for name in MODEL_PARAMETERS[model]
        if not np.isinf(params[name])
    ]
    edges = np.linspace(-3e-9, 2e-9, 251)
    jacobian = model_jacobian(model, params, edges, names)
    assert jacobian.shape == (250, len(names))
    for column, name in zip(jacobian.T, names):
        numeric = finite_difference(model, params, edges, name)
        assert_allclose(
            column, numeric, rtol=1e-4, atol=1e-6 * np.abs(numeric).max(),
            err_msg=name
        )


def test_auto_jacobian_amplitude_column(doubly_comb):
    params = {
        'amplitude': 3e4, 'gamma_s': doubly_comb.gamma_s,
        'gamma_i': doubly_comb.gamma_i, 'sigma': 30e-12,
    }
    edges = np.linspace(-5e-9, 5e-9, 201)
    jacobian = model_jacobian('auto_single', params, edges, ['amplitude'])
    assert_allclose(
        jacobian[:, 0], model_counts('auto_single', params, edges) / 3e4
    )


def test_fit_recovers_noiseless_single_tooth(doubly_comb):
    histogram, truth = noiseless_cross(doubly_comb, 0.0, (-12e-9, 4e-9))
    names = ('amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma')
    problem = FitProblem(histogram, 'cross_single', nudged(truth, names))
    result = fit(problem)
    assert result.converged
    assert not result.singly_resonant
    assert result.free_names == names
    for name in names:
        assert_allclose(result.estimates[name], truth[name], rtol=1e-5,
                        err_msg=name)
    assert result.reduced_chi2 < 1e-6


def test_fit_recovers_noiseless_mixture(doubly_comb):
    histogram, truth = noiseless_cross(doubly_comb, 0.8, (-12e-9, 4e-9))
    names = (
        'amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma', 't0',
        'purity'
    )
    start = nudged(truth, names, factor=1.02)
    start['t0'] = truth['t0'] * 1.001
    result = fit(FitProblem(histogram, 'CrossSum', start))
    assert result.converged
    for name in names:
        assert_allclose(result.estimates[name], truth[name], rtol=1e-4,
                        err_msg=name)
    assert set(result.errors) == set(names)


def test_fit_recovers_noiseless_autocorrelation(doubly_comb, auto_detector):
    histogram = expected_auto(doubly_comb, auto_detector)
    span = histogram.bin_edges[-1] - histogram.bin_edges[0]
    truth = {
        'amplitude': auto_detector.total_counts / span,
        'gamma_s': doubly_comb.gamma_s,
        'gamma_i': doubly_comb.gamma_i,
        'sigma': auto_detector.jitter_sigma,
    }
    result = fit(FitProblem(histogram, 'auto_single', nudged(truth, truth)))
    assert result.converged
    for name in ('amplitude', 'gamma_s', 'gamma_i'):
        assert_allclose(result.estimates[name], truth[name], rtol=1e-3,
                        err_msg=name)
    assert_allclose(result.estimates['sigma'], truth['sigma'], rtol=0.1)


def test_fit_falls_back_to_singly_resonant(singly_comb):
    histogram, truth = noiseless_cross(singly_comb, 0.0, (-12e-9, 2e-9))
    gamma_s = truth['gamma_s']
    free = nudged(truth, ('amplitude', 'background', 'gamma_s', 'sigma'))
    free['gamma_i'] = 2.5 * gamma_s
    problem = FitProblem(
        histogram, 'cross_single', free,
        bounds={'gamma_i': (gamma_s, 3 * gamma_s)},
    )
    result = fit(problem)
    assert result.singly_resonant
    assert np.isinf(result.estimates['gamma_i'])
    assert 'gamma_i' not in result.free_names
    assert_allclose(result.estimates['gamma_s'], gamma_s, rtol=1e-4)


def test_fit_reports_degenerate_parameters():
    rng = np.random.default_rng(0)
    edges = np.linspace(50e-9, 60e-9, 101)
    histogram = Histogram(edges, rng.poisson(10, 100), 'cross')
    problem = FitProblem(
        histogram, 'cross_single',
        {'amplitude': 1e4, 'background': 10.0, 'gamma_s': 4e8,
         'sigma': 3e-11},
        fixed_params={'gamma_i': np.inf},
    )
    with pytest.raises(DegenerateFitError, match='degenerate') as error:
        fit(problem)
    assert len(error.value.names) == 2
    assert set(error.value.names) <= {'amplitude', 'gamma_s', 'sigma'}


def test_fit_iteration_limit(doubly_comb):
    histogram, truth = noiseless_cross(doubly_comb, 0.0, (-12e-9, 4e-9))
    names = ('amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma')
    problem = FitProblem(
        histogram, 'cross_single', nudged(truth, names, 1.5), max_iter=1
    )
    result = fit(problem)
    assert not result.converged
    with pytest.raises(ValueError, match='converge'):
        derive_cavity_report(result, wavelength=1580)


def test_fit_problem_rejects(singly_comb):
    histogram, truth = noiseless_cross(singly_comb, 0.5, (-12e-9, 2e-9))
    free = nudged(truth, ('amplitude', 'background', 'gamma_s', 'sigma'))
    fixed = {'gamma_i': np.inf}
    with pytest.raises(ValueError, match='needs'):
        FitProblem(histogram, 'auto_single',
                   {'amplitude': 1e3, 'gamma_s': 4e8, 'sigma': 3e-11},
                   fixed)
    with pytest.raises(ValueError, match='both free and fixed'):
        FitProblem(histogram, 'cross_single', free,
                   {**fixed, 'sigma': 3e-11})
    with pytest.raises(ValueError, match='missing'):
        FitProblem(histogram, 'cross_multi', free, fixed)
    with pytest.raises(ValueError, match='outside its bounds'):
        FitProblem(histogram, 'cross_single', free, fixed,
                   bounds={'sigma': (1e-9, 2e-9)})
    with pytest.raises(ValueError, match='unknown parameters'):
        FitProblem(histogram, 'cross_single', free, fixed,
                   bounds={'t0': (0, 1e-9)})
    with pytest.raises(ValueError, match='must be one of'):
        FitProblem(histogram, 'cross_triple', free, fixed)


@pytest.fixture
def noisy_cross(singly_comb):
    detector = DetectorSpec(
        jitter_sigma=30e-12, bin_width=4e-12, window=(-8e-9, 2e-9),
        total_counts=1e5,
    )
    return synthesize_cross(singly_comb, detector, purity=0.95, seed=1)


def test_initial_guess_finds_round_trip(noisy_cross, singly_comb):
    guess = initial_guess(noisy_cross, 'cross_sum', singly_resonant=True)
    assert set(guess) == {
        'amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma', 't0',
        'purity'
    }
    assert np.isinf(guess['gamma_i'])
    assert_allclose(guess['t0'], singly_comb.round_trip_time, rtol=0.01)
    assert 15e-12 < guess['sigma'] < 60e-12


def test_from_histogram_holds_unconfined_idler(noisy_cross):
    problem = FitProblem.from_histogram(
        noisy_cross, 'cross_sum', guess={'purity': 0.9}, singly_resonant=True
    )
    assert problem.fixed_params == {'gamma_i': np.inf}
    assert 'gamma_i' not in problem.free_names
    assert problem.free_params['purity'] == 0.9


def test_from_histogram_clips_guess_into_bounds(noisy_cross):
    problem = FitProblem.from_histogram(
        noisy_cross, 'cross_sum', singly_resonant=True,
        bounds={'purity': (0.2, 0.3)},
    )
    assert 0.2 <= problem.free_params['purity'] <= 0.3
    assert problem.bounds['purity'] == (0.2, 0.3)


def test_fit_synthetic_cross_correlation(noisy_cross, singly_comb):
    problem = FitProblem.from_histogram(
        noisy_cross, 'cross_sum', singly_resonant=True
    )
    result = fit(problem)
    assert result.converged
    assert result.singly_resonant
    assert_allclose(result.estimates['gamma_s'], singly_comb.gamma_s,
                    rtol=0.1)
    assert_allclose(result.estimates['t0'], singly_comb.round_trip_time,
                    rtol=0.01)
    assert abs(result.estimates['purity'] - 0.95) < 0.1
    assert result.errors['gamma_s'] > 0
    assert result.provenance == {'seed': 1, 'rng': 'PCG64'}

    report = derive_cavity_report(result, wavelength=1580.48)
    assert_allclose(report.fwhm, 126e6, rtol=0.1)
    assert_allclose(report.fsr, 3.5e9, rtol=0.01)


def test_fit_result_round_trip(tmp_path):
    result = FitResult(
        model='cross_single',
        estimates={'amplitude': 1e5, 'background': 1.0, 'gamma_s': 4e8,
                   'gamma_i': np.inf, 'sigma': 3e-11},
        free_names=('amplitude', 'background', 'gamma_s', 'sigma'),
        covariance=np.diag([1.0, 2.0, 3.0, 4.0]),
        reduced_chi2=1.02,
        iterations=12,
        converged=True,
        message='ok',
        singly_resonant=True,
        provenance={'seed': 3, 'rng': 'PCG64'},
    )
    back = FitResult.read(result.write(tmp_path / "fit.yaml"))
    assert back.estimates == result.estimates
    assert back.free_names == result.free_names
    assert_allclose(back.covariance, result.covariance)
    assert back.errors['sigma'] == 2.0
    assert back.singly_resonant and back.converged
    assert back.provenance == result.provenance


def test_cavity_report():
    report = CavityReport.from_values(126e6, 3.5e9, 1580)
    assert_allclose(report.finesse, 3.5e9 / 126e6)
    assert_allclose(report.q_factor, 299_792_458 / 1580e-9 / 126e6)
    with pytest.raises(ValueError, match='fwhm'):
        CavityReport.from_values(0, 3.5e9, 1580)


def test_derive_cavity_report():
    result = FitResult(
        model='cross_multi',
        estimates={'gamma_s': np.pi * 126e6, 't0': 1 / 3.5e9},
        free_names=(), covariance=np.zeros((0, 0)), reduced_chi2=1.0,
        iterations=1, converged=True,
    )
    report = derive_cavity_report(result, wavelength=1580)
    assert_allclose(report.fwhm, 126e6)
    assert_allclose(report.fsr, 3.5e9)

    result.estimates.pop('t0')
    with pytest.raises(KeyError, match='t0'):
        derive_cavity_report(result, wavelength=1580)
    report = derive_cavity_report(result, wavelength=1580, fsr=3.5e9)
    assert_allclose(report.finesse, 3.5e9 / 126e6)


def test_bootstrap_needs_enough_resamples(noisy_cross):
    problem = FitProblem.from_histogram(
        noisy_cross, 'cross_sum', singly_resonant=True
    )
    with pytest.raises(ValueError, match='at least 50'):
        bootstrap_errors(problem, n_resamples=10)


@pytest.mark.slow
def test_bootstrap_errors(noisy_cross):
    problem = FitProblem.from_histogram(
        noisy_cross, 'cross_sum', singly_resonant=True
    )
    errors = bootstrap_errors(problem, n_resamples=50, seed=7, n_jobs=2)
    again = bootstrap_errors(problem, n_resamples=50, seed=7, n_jobs=1)
    assert set(errors) == set(problem.free_names)
    for name in errors:
        assert_allclose(errors[name], again[name], rtol=1e-9)
    covariance_errors = fit(problem).errors
    ratio = errors['gamma_s'] / covariance_errors['gamma_s']
    assert 0.5 < ratio < 2


@pytest.mark.slow
def test_fit_ensemble(singly_comb):
    detector = DetectorSpec(
        jitter_sigma=30e-12, bin_width=4e-12, window=(-8e-9, 2e-9),
        total_counts=1e5,
    )
    results = []
    for seed in range(100):
        histogram = synthesize_cross(singly_comb, detector, 0.95, seed=seed)
        results.append(fit(FitProblem.from_histogram(
            histogram, 'cross_sum', singly_resonant=True
        )))
    assert sum(result.converged for result in results) >= 95

    def median(name):
        return np.median([result.estimates[name] for result in results])

    assert_allclose(median('gamma_s'), singly_comb.gamma_s, rtol=0.02)
    assert_allclose(median('t0'), singly_comb.round_trip_time, rtol=0.005)
    assert abs(median('purity') - 0.95) < 0.03


@pytest.fixture
def ensemble_detector():
    return DetectorSpec(
        jitter_sigma=30e-12, bin_width=4e-12, window=(-8e-9, 2e-9),
        total_counts=1e5,
    )


class NoiselessGenerator:
    """Stands in for a numpy generator whose Poisson draws are the means."""

    def __init__(self, seed=None):
        self.seed = seed

    def poisson(self, lam):
        return np.asarray(lam, dtype=float)


@pytest.mark.slow
def test_bootstrap_without_resampling_noise(singly_comb, ensemble_detector,
                                            monkeypatch):
    histogram = expected_cross(singly_comb, ensemble_detector, 0.95)
    problem = FitProblem.from_histogram(
        histogram, 'cross_sum', singly_resonant=True
    )
    monkeypatch.setattr(np.random, 'default_rng', NoiselessGenerator)
    errors = bootstrap_errors(problem, n_resamples=50, seed=3, n_jobs=1)
    assert set(errors) == set(problem.free_names)
    for name, error in errors.items():
        assert error == 0, name


@pytest.mark.slow
def test_bootstrap_errors_scale_with_counts(singly_comb, ensemble_detector):
    errors = []
    for total in (1e5, 4e5):
        detector = replace(ensemble_detector, total_counts=total)
        histogram = expected_cross(singly_comb, detector, 0.95)
        problem = FitProblem.from_histogram(
            histogram, 'cross_sum', singly_resonant=True
        )
        errors.append(bootstrap_errors(problem, n_resamples=100, seed=9))
    for name in ('gamma_s', 't0'):
        ratio = errors[0][name] / errors[1][name]
        assert 1.6 < ratio < 2.5, name


def test_fit_recovers_unit_purity(singly_comb):
    histogram, truth = noiseless_cross(singly_comb, 1.0, (-12e-9, 2e-9))
    names = ('amplitude', 'background', 'gamma_s', 'sigma', 't0')
    start = nudged(truth, names, factor=1.02)
    start['t0'] = truth['t0'] * 1.001
    start['purity'] = 0.9
    result = fit(FitProblem(histogram, 'cross_sum', start,
                            {'gamma_i': np.inf}))
    assert result.converged
    assert_allclose(result.estimates['purity'], 1, atol=1e-4)
    assert_allclose(result.estimates['gamma_s'], truth['gamma_s'], rtol=1e-4)
