import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddbh import ModelParams, star_params
from ddbh.dnls import (
    ConvergenceError,
    anti_continuous_soliton,
    continue_branch,
    dnls_rhs,
    energy,
    integrate_dnls,
    linear_stability,
    newton_stationary,
    norm,
    single_site_intensities,
    spectral_abscissa,
)

SINGLE = ModelParams(1, 0.0, -1.0, 2.0, 3.0, 2.0)


def cubic_oracle(u, a, dw, g):
    """Real positive roots of I((dw+UI)^2+g^2/4)=A^2 by bisection on a fine sign scan."""
    from scipy.optimize import brentq

    f = lambda x: x * ((dw + u * x) ** 2 + g**2 / 4) - a**2  # noqa: E731
    xs = np.linspace(1e-9, 50, 200001)
    v = f(xs)
    idx = np.nonzero(np.sign(v[:-1]) != np.sign(v[1:]))[0]
    return sorted(brentq(f, xs[i], xs[i + 1], xtol=1e-15) for i in idx)


def test_single_site_roots_star_point():
    got = [r.intensity for r in single_site_intensities(SINGLE)]
    expected = [2 - np.sqrt(2), 2, 2 + np.sqrt(2)]
    assert np.allclose(got, expected, atol=1e-10, rtol=0)
    assert np.allclose(got, cubic_oracle(-1, 2, 3, 2), atol=1e-10)


def test_single_site_linear_cavity():
    roots = single_site_intensities(ModelParams(1, 0.0, 0.0, 2.0, 3.0, 2.0))
    assert len(roots) == 1 and roots[0].intensity == pytest.approx(0.4, abs=1e-14)


def test_single_site_amplitude_is_stationary():
    for root in single_site_intensities(SINGLE):
        assert abs(root.amplitude) ** 2 == pytest.approx(root.intensity, rel=1e-12)
        assert abs(dnls_rhs([root.amplitude], SINGLE)[0]) < 1e-12
    mid = single_site_intensities(SINGLE)[1]
    assert mid.amplitude == pytest.approx(-(1 + 1j), abs=1e-12)


@given(
    st.floats(-3, 3).filter(lambda u: abs(u) > 0.05),
    st.floats(0.1, 3),
    st.floats(-4, 4),
    st.floats(0.2, 3),
)
def test_single_site_matches_oracle(u, a, dw, g):
    got = [r.intensity for r in single_site_intensities(ModelParams(1, 0.0, u, a, dw, g))]
    oracle = cubic_oracle(u, a, dw, g)
    if len(got) == len(oracle):
        assert np.allclose(got, oracle, rtol=1e-8, atol=1e-10)
    else:  # tangential roots can be missed by the sign scan
        assert all(min(abs(x - o) for x in got) < 1e-4 for o in oracle)


def test_single_site_requires_one_site():
    with pytest.raises(ValueError):
        single_site_intensities(star_params(3))


def test_damped_linear_decay():
    p = ModelParams(5, 0.0, 0.0, 0.0, 1.3, 2.0)
    phi0 = np.linspace(0.5, 1.5, 5) * np.exp(0.3j)
    traj = integrate_dnls(phi0, p, 3.0, dt=0.5)
    expected = np.outer(np.exp(-1.3j * traj.t - traj.t), phi0)
    assert np.allclose(traj.samples, expected, rtol=1e-7, atol=1e-10)


@given(st.floats(0, 2 * np.pi), st.integers(0, 2**31))
def test_gauge_covariance_without_drive(theta, seed):
    rng = np.random.default_rng(seed)
    p = ModelParams(6, 0.7, -1.0, 0.0, 2.0, 0.5)
    phi = rng.normal(size=6) + 1j * rng.normal(size=6)
    assert np.allclose(dnls_rhs(np.exp(1j * theta) * phi, p), np.exp(1j * theta) * dnls_rhs(phi, p), atol=1e-12)


@given(st.integers(0, 2**31))
def test_translation_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = star_params(7, j=0.8)
    phi = rng.normal(size=7) + 1j * rng.normal(size=7)
    assert np.allclose(dnls_rhs(np.roll(phi, 2), p), np.roll(dnls_rhs(phi, p), 2), atol=1e-12)


def test_dispersion_relation_of_linear_lattice():
    n, j, dw, g = 8, 0.6, 1.5, 0.8
    p = ModelParams(n, j, 0.0, 0.0, dw, g)
    ev = linear_stability(np.zeros(n), p)
    k = 2 * np.pi * np.arange(n) / n
    omega = dw - 2 * j * np.cos(k)
    oracle = np.concatenate([-g / 2 + 1j * omega, -g / 2 - 1j * omega])
    key = lambda z: z[np.argsort(np.round(z.imag, 8))]  # noqa: E731
    assert np.allclose(key(ev), key(oracle), atol=1e-10)


def test_decoupled_spectrum_repeats_single_site():
    single = np.sort_complex(linear_stability([single_site_intensities(SINGLE)[0].amplitude], SINGLE))
    p = ModelParams(4, 0.0, -1.0, 2.0, 3.0, 2.0)
    phi = np.full(4, single_site_intensities(SINGLE)[0].amplitude)
    ev = linear_stability(phi, p)
    key = lambda z: z[np.argsort(np.round(z.imag, 8))]  # noqa: E731
    assert np.allclose(key(ev), key(np.repeat(single, 4)), atol=1e-10)


def test_newton_converges_and_is_idempotent():
    p = ModelParams(9, 0.0, -1.0, 2.0, 3.0, 2.0)
    seed = anti_continuous_soliton(p)
    phi = newton_stationary(seed + 0.01, p)
    assert np.max(np.abs(dnls_rhs(phi, p))) < 1e-10
    again = newton_stationary(phi, p)
    assert np.allclose(again, phi, atol=1e-12)


def test_newton_failure_carries_residual():
    with pytest.raises(ConvergenceError) as err:
        newton_stationary(np.full(3, 10.0 + 10j), star_params(3, j=0.5), max_iter=1)
    assert err.value.residual > 0 and err.value.iterations == 1


def test_stable_state_recovers_from_perturbation():
    p = ModelParams(1, 0.0, -1.0, 2.0, 3.0, 2.0)
    low = single_site_intensities(p)[0].amplitude
    assert spectral_abscissa(linear_stability([low], p)) < 0
    traj = integrate_dnls([low + 1e-3], p, 40.0, dt=1.0)
    assert abs(traj.samples[-1, 0] - low) < 1e-8


def test_continuation_from_anti_continuous_limit():
    p = ModelParams(9, 0.0, -1.0, 2.0, 3.0, 2.0)
    branch = continue_branch(anti_continuous_soliton(p), p, np.arange(0.0, 0.3001, 0.05))
    assert branch.points[0].j == 0.0
    assert all(pt.residual < 1e-10 for pt in branch.points)
    amps = branch.center_amplitudes()
    assert amps[0] == pytest.approx(np.sqrt(2 + np.sqrt(2)), rel=1e-9)


def test_conservative_drift_at_tight_tolerance():
    rng = np.random.default_rng(3)
    p = ModelParams(30, 1.0, -1.0, 0.0, 3.0, 0.0)
    phi0 = rng.normal(size=30) + 1j * rng.normal(size=30)
    traj = integrate_dnls(phi0, p, 100.0, tol=1e-12, atol=1e-14, dt=10.0)
    n0, e0 = norm(phi0), energy(phi0, p)
    assert abs(norm(traj.samples[-1]) - n0) / n0 < 1e-8
    assert abs(energy(traj.samples[-1], p) - e0) / abs(e0) < 1e-8
