import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddbh import GutzwillerState, ModelParams, star_params
from ddbh.gutzwiller import (
    FockOperators,
    TruncationError,
    coherent_state_rho,
    evolve_gutzwiller,
    fock_rho,
    gutzwiller_rhs,
    homogeneous_background,
    localization_contrast,
    product_state,
    site_densities,
    site_means,
    truncation_error,
)


def test_fock_operators():
    ops = FockOperators.build(4)
    comm = ops.a @ ops.a_dag - ops.a_dag @ ops.a
    assert np.allclose(np.diag(comm)[:-1], 1)  # truncation breaks the last entry
    assert np.allclose(np.diag(ops.n), np.arange(5))
    with pytest.raises(ValueError):
        FockOperators.build(0)


@given(st.floats(0, 2), st.floats(0, 2 * np.pi))
def test_coherent_state_moments(r, theta):
    alpha = r * np.exp(1j * theta)
    rho = coherent_state_rho(alpha, 25)
    s = product_state([rho])
    assert np.trace(rho).real == pytest.approx(1, abs=1e-12)
    assert site_means(s)[0] == pytest.approx(alpha, abs=1e-9)
    assert site_densities(s)[0] == pytest.approx(r**2, abs=1e-9)
    assert truncation_error(alpha, 25) < 1e-9


def test_coherent_state_beyond_cutoff_rejected():
    with pytest.raises(ValueError):
        coherent_state_rho(4.0, 15)


def test_rhs_is_trace_free_and_hermitian():
    rng = np.random.default_rng(0)
    rhos = []
    for _ in range(3):
        v = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        r = v @ v.conj().T
        rhos.append(r / np.trace(r))
    d = gutzwiller_rhs(product_state(rhos), star_params(3, j=1.2)).rhos
    assert np.allclose(np.trace(d, axis1=1, axis2=2), 0, atol=1e-13)
    assert np.allclose(d, np.conj(np.swapaxes(d, 1, 2)), atol=1e-13)


def test_damped_cavity_decay():
    p = ModelParams(1, 0.0, 0.0, 0.0, 1.0, 2.0)
    run = evolve_gutzwiller(product_state([fock_rho(3, 8)]), p, 3.0, dt=0.5)
    expected = 3 * np.exp(-2.0 * run.t)
    assert np.max(np.abs(run.density[:, 0] - expected) / expected) < 1e-6


def test_unitary_limit_conserves_purity_and_trace():
    # RK45 phase error makes purity drift secularly (~5e-10 per unit time at rtol 1e-9)
    p = ModelParams(3, 0.0, -1.0, 0.0, 3.0, 0.0)
    state = product_state([coherent_state_rho(a, 12) for a in (0.5, 0.8j, -0.4)])
    run = evolve_gutzwiller(state, p, 10.0, tol=1e-11, dt=0.5)
    assert np.max(np.abs(run.purity - run.purity[0])) < 1e-9
    assert run.trace_drift_rate() < 1e-9
    assert run.valid


def test_strict_truncation_check():
    p = ModelParams(1, 0.0, 0.0, 0.0, 1.0, 2.0)
    with pytest.raises(TruncationError):
        evolve_gutzwiller(product_state([fock_rho(4, 4)]), p, 1.0)
    run = evolve_gutzwiller(product_state([fock_rho(4, 4)]), p, 0.2, strict=False)
    assert not run.valid


def test_background_is_stationary_and_uniform():
    p = star_params(4, j=2.0)
    rho = homogeneous_background(p, n_max=10)
    state = GutzwillerState(np.repeat(rho[None], 4, axis=0))
    d = gutzwiller_rhs(state, p).rhos
    assert np.max(np.abs(d)) < 1e-7


def test_contrast_plateau_and_half_life():
    class Fake:
        t = np.linspace(0, 10, 101)
        contrast = np.where(t < 1, 5 - 4 * t, 1 + 2 * np.exp(-((t - 2) ** 2)) * (t < 2) + (t >= 2) * 3 * np.exp(-(t - 2)))
        density = np.column_stack([np.zeros_like(t), contrast, np.zeros_like(t)])

    decay = localization_contrast(Fake, center=1)
    assert decay.t_plateau == pytest.approx(2.0)
    assert decay.plateau == pytest.approx(4.0)  # 1 + 3 e^0
    assert decay.half_life == pytest.approx(2 + np.log(3), abs=0.01)  # 1 + 3 e^{-x} = 2
    assert not decay.censored


def test_decoupled_sites_evolve_independently():
    p = ModelParams(3, 0.0, -1.0, 2.0, 3.0, 2.0)
    rhos = [coherent_state_rho(a, 10) for a in (0.3, 0.5j, -0.2)]
    joint = evolve_gutzwiller(product_state(rhos), p, 4.0, dt=1.0)
    for site, rho in enumerate(rhos):
        alone = evolve_gutzwiller(product_state([rho]), p.replace(n_sites=1), 4.0, dt=1.0)
        assert np.max(np.abs(joint.final.rhos[site] - alone.final.rhos[0])) < 1e-9
