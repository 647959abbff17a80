import numpy as np
import pytest

from cbindex import make_dataset


def simulate_trial(
    coefficients,
    n,
    seed,
    theta=1.0,
    m=6,
    fixed_time=True,
):
    """Draw a two-arm NB trial from a log-link interaction model.

    ``coefficients`` is the [intercept, treatment, m mains, m
    interactions] layout applied to standard-normal covariates.
    """
    coefficients = np.asarray(coefficients, dtype=np.float64)
    assert coefficients.size == 2 * m + 2
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, m))
    a = rng.integers(0, 2, n)
    t = np.ones(n) if fixed_time else rng.uniform(0.5, 1.5, n)
    b0, ba = coefficients[0], coefficients[1]
    main, inter = coefficients[2 : 2 + m], coefficients[2 + m :]
    eta = b0 + ba * a + x @ main + (a[:, None] * x) @ inter + np.log(t)
    mu = np.exp(eta)
    y = rng.negative_binomial(theta, theta / (theta + mu))
    return make_dataset(a, y, t, x)


@pytest.fixture
def small_trial():
    """Mild two-covariate trial, quick to fit."""
    coefs = np.array([0.2, -0.4, 0.3, -0.2, 0.15, -0.1])
    return simulate_trial(coefs, n=300, seed=42, theta=2.0, m=2)
