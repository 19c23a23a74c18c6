"""
The :mod:`~bicomb.defaults` module provides the default constants and
parameter tables used throughout the package.
"""

import numpy as np

#: Speed of light in vacuum (m/s), exact.
SPEED_OF_LIGHT = 299_792_458.0

#: Value below which ``2M|zeta|^2`` (resp. ``2|zeta|^2``) counts as "much
#: smaller than one" when classifying the pump regime.
REGIME_THRESHOLD = 0.1

#: Relative weight of the first side peak dropped from the comb of Gaussians.
TAIL_BOUND = 1e-12

#: Relative gap between the two decay rates below which they are treated as
#: equal (analytic-limit branch of the autocorrelation).
DEGENERACY_TOL = 1e-8

#: Number of Gauss-Legendre nodes per histogram bin.
GAUSS_LEGENDRE_ORDER = 5

#: Fraction of the histogram bins, at each end, used to estimate the baseline.
BASELINE_EDGE_FRACTION = 0.1

#: Largest deviation of an edge mean from the baseline, in Poisson standard
#: errors of that mean.
BASELINE_TOLERANCE = 2.0

#: Smallest fraction of the model mass a histogram window should hold.
WINDOW_MASS_FLOOR = 0.99

#: Fit convergence: relative parameter step, relative SSE change, max iterations.
FIT_XTOL = 1e-8
FIT_FTOL = 1e-10
FIT_MAX_ITER = 500

#: Relative distance to the upper bound of ``gamma_i`` at which the fit falls
#: back to the singly resonant model.
GAMMA_I_BOUND_TOL = 1e-3

#: Largest ratio ``gamma_i / gamma_s`` explored when ``gamma_i`` is free.
GAMMA_I_MAX_RATIO = 1e4

#: Canonical 16 two-photon projection settings of polarization tomography,
#: idler projector first, in measurement order.
JAMES_SETTINGS = (
    'HH', 'HV', 'VV', 'VH', 'RH', 'RV', 'DV', 'DH',
    'DR', 'DD', 'RD', 'HD', 'VD', 'VL', 'HL', 'RL',
)

#: Gradient norm at which the maximum-likelihood reconstruction stops.
MLE_GTOL = 1e-8

#: Free parameters of each fit model, in the order used by the optimizer.
MODEL_PARAMETERS = {
    'cross_single': ('amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma'),
    'cross_multi': (
        'amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma', 't0'
    ),
    'cross_sum': (
        'amplitude', 'background', 'gamma_s', 'gamma_i', 'sigma', 't0',
        'purity'
    ),
    'auto_single': ('amplitude', 'gamma_s', 'gamma_i', 'sigma'),
}


def model_name(model):
    """Return the canonical fit model name.

    Parameters
    ----------
    model : str
        Any of ``'cross_single'``, ``'cross_multi'``, ``'cross_sum'`` and
        ``'auto_single'``.  Case, dashes and the CamelCase spelling
        (e.g. ``'CrossSum'``) are accepted.

    Returns
    -------
    str
        The key of :data:`MODEL_PARAMETERS` for this model.

    Examples
    --------
    >>> model_name('CrossSum')
    'cross_sum'
    >>> model_name('auto-single')
    'auto_single'

    """
    if not isinstance(model, str):
        raise TypeError("'model' must be a string.")
    key = model.replace('-', '_')
    if '_' not in key:
        # CamelCase, e.g. CrossMulti
        key = ''.join(
            '_' + c.lower() if c.isupper() and i else c.lower()
            for i, c in enumerate(key)
        )
    key = key.lower()
    if key not in MODEL_PARAMETERS:
        valid = ', '.join(f"'{name}'" for name in MODEL_PARAMETERS)
        raise ValueError(f"'model' must be one of {valid}.")
    return key


def default_bounds(model, guess):
    """Return box bounds around an initial guess.

    The bounds are wide enough to contain any physically sensible value
    while keeping the rates, the jitter and the round-trip time positive.

    Parameters
    ----------
    model : str
        Fit model name, see :func:`model_name`.
    guess : dict
        Initial guesses of (at least) the free parameters of `model`.

    Returns
    -------
    bounds : dict
        ``{name: (lower, upper)}`` for each parameter present in `guess`.

    """
    model = model_name(model)
    bounds = {}
    for name, value in guess.items():
        if name not in MODEL_PARAMETERS[model]:
            raise ValueError(f"'{name}' is not a parameter of '{model}'.")
        if name == 'purity':
            bounds[name] = (0.0, 1.0)
        elif name == 'background':
            bounds[name] = (0.0, max(10 * abs(value), 10.0))
        elif name == 'gamma_i':
            if np.isinf(value):
                raise ValueError(
                    "an unconfined idler (gamma_i = inf) must be a fixed "
                    "parameter."
                )
            gamma_s = guess.get('gamma_s', value)
            upper = max(GAMMA_I_MAX_RATIO * gamma_s, 10 * value)
            bounds[name] = (value / 100, upper)
        elif name == 't0':
            bounds[name] = (0.5 * value, 1.5 * value)
        else:
            # amplitude, rates and jitter: positive, two decades around guess
            bounds[name] = (value / 100, value * 100)
    return bounds
