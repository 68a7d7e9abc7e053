import json
import math

import numpy as np
import pytest

from kittensim import (
    FockDensityMatrix,
    GaussianStateSpec,
    NumericsError,
    ValidationError,
    best_cat_fidelity,
    cat_fidelity,
    cat_state,
    db_from_variance,
    density_matrix_from_json,
    density_matrix_to_json,
    fidelity,
    gaussian_state,
    load_density_matrix,
    loss_channel,
    phase_diffusion,
    photon_subtract,
    save_density_matrix,
    state_fidelity,
    variance_from_db,
    wigner,
    wigner_origin,
)
from kittensim.quadrature import marginal_variance

from conftest import random_density_matrix


def test_variance_db_conversion():
    assert variance_from_db(0.0) == 0.5
    assert variance_from_db(-2.0) == pytest.approx(0.3154786722400966, rel=1e-15)
    assert variance_from_db(2.4) == pytest.approx(0.8689004143746877, rel=1e-15)
    for db in (-6.0, -2.0, 0.0, 2.4, 5.0):
        assert db_from_variance(variance_from_db(db)) == pytest.approx(db, abs=1e-12)


def test_gaussian_state_vacuum_limit():
    rho = gaussian_state(GaussianStateSpec(0.5, 0.5), nmax=10)
    assert rho.entries[0, 0].real == pytest.approx(1.0, abs=1e-12)
    assert rho.mean_photon() == pytest.approx(0.0, abs=1e-12)


def test_gaussian_state_matches_requested_variances(sqz_state):
    assert marginal_variance(sqz_state, 0.0) == pytest.approx(
        variance_from_db(-2.0), abs=1e-9
    )
    assert marginal_variance(sqz_state, math.pi / 2) == pytest.approx(
        variance_from_db(2.4), abs=1e-9
    )
    assert sqz_state.trace() == pytest.approx(1.0, abs=1e-12)
    # <n> = (Vx + Vp - 1) / 2 for a zero-mean Gaussian state
    vx, vp = variance_from_db(-2.0), variance_from_db(2.4)
    assert sqz_state.mean_photon() == pytest.approx((vx + vp - 1) / 2, abs=1e-9)
    evals = np.linalg.eigvalsh(sqz_state.entries)
    assert evals.min() > -1e-12


def test_gaussian_state_rejects_uncertainty_violation():
    with pytest.raises(ValidationError):
        GaussianStateSpec(0.3, 0.3)


def test_gaussian_state_truncation_gate():
    with pytest.raises(NumericsError):
        gaussian_state(GaussianStateSpec(variance_from_db(-4.0), variance_from_db(6.0)), nmax=5)


def test_purified_spec_is_minimum_uncertainty():
    spec = GaussianStateSpec(variance_from_db(-2.0), variance_from_db(2.4))
    pure = spec.purified()
    assert pure.v_x * pure.v_p == pytest.approx(0.25, rel=1e-12)
    assert pure.v_x / pure.v_p == pytest.approx(spec.v_x / spec.v_p, rel=1e-12)


def test_photon_subtract_weight_is_mean_photon(sqz_state):
    rho, weight = photon_subtract(sqz_state)
    assert weight == pytest.approx(sqz_state.mean_photon(), abs=1e-12)
    assert rho.dim == sqz_state.dim - 1
    assert rho.trace() == pytest.approx(1.0, abs=1e-12)


def test_photon_subtract_vacuum_rejected():
    vac = gaussian_state(GaussianStateSpec(0.5, 0.5), nmax=8)
    with pytest.raises(ValidationError):
        photon_subtract(vac)


def test_subtracted_pure_squeezed_vacuum_reaches_wigner_bound():
    # photon subtraction from pure squeezed vacuum gives a squeezed single
    # photon whose Wigner function attains the -1/pi bound at the origin
    spec = GaussianStateSpec(0.3, 0.25 / 0.3)
    rho, _ = photon_subtract(gaussian_state(spec, nmax=20))
    assert wigner_origin(rho) == pytest.approx(-1.0 / math.pi, abs=1e-9)


def test_loss_channel_identity_and_composition(kitten):
    same = loss_channel(kitten, 1.0)
    np.testing.assert_allclose(same.entries, kitten.entries, atol=1e-14)
    a = loss_channel(loss_channel(kitten, 0.9), 0.8)
    b = loss_channel(kitten, 0.72)
    np.testing.assert_allclose(a.entries, b.entries, atol=1e-10)


def test_loss_channel_preserves_state_properties():
    rng = np.random.default_rng(11)
    for _ in range(5):
        rho = FockDensityMatrix(nmax=7, entries=random_density_matrix(rng, 8))
        out = loss_channel(rho, 0.6)
        assert out.trace() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(out.entries, out.entries.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(out.entries).min() > -1e-10


def test_loss_channel_vacuum_fixed_point():
    vac = gaussian_state(GaussianStateSpec(0.5, 0.5), nmax=8)
    out = loss_channel(vac, 0.3)
    np.testing.assert_allclose(out.entries, vac.entries, atol=1e-12)


def test_phase_diffusion_semigroup(kitten):
    s1, s2 = 0.2, 0.35
    a = phase_diffusion(phase_diffusion(kitten, s1), s2)
    b = phase_diffusion(kitten, math.hypot(s1, s2))
    np.testing.assert_allclose(a.entries, b.entries, atol=1e-10)


def test_phase_diffusion_preserves_diagonal(kitten):
    out = phase_diffusion(kitten, 0.7)
    np.testing.assert_allclose(
        np.diag(out.entries).real, np.diag(kitten.entries).real, atol=1e-14
    )
    assert wigner_origin(out) == pytest.approx(wigner_origin(kitten), abs=1e-12)


def test_phase_diffusion_commutes_with_loss(kitten):
    a = phase_diffusion(loss_channel(kitten, 0.7), 0.4)
    b = loss_channel(phase_diffusion(kitten, 0.4), 0.7)
    np.testing.assert_allclose(a.entries, b.entries, atol=1e-12)


def test_wigner_origin_matches_parity_sum():
    rng = np.random.default_rng(23)
    for _ in range(20):
        dim = int(rng.integers(3, 14))
        rho = FockDensityMatrix(nmax=dim - 1, entries=random_density_matrix(rng, dim))
        parity = sum(
            (-1) ** n * rho.entries[n, n].real for n in range(dim)
        ) / math.pi
        assert wigner(rho, 0.0, 0.0) == pytest.approx(parity, abs=1e-9)
        assert wigner_origin(rho) == pytest.approx(parity, abs=1e-12)


def test_wigner_damped_single_photon():
    one = np.zeros((5, 5), dtype=complex)
    one[1, 1] = 1.0
    rho = loss_channel(FockDensityMatrix(nmax=4, entries=one), 0.88)
    # closed form for a damped |1>: W(0,0) = (1 - 2 eta) / pi
    assert wigner_origin(rho) == pytest.approx((1 - 2 * 0.88) / math.pi, abs=1e-12)
    assert wigner_origin(rho) == pytest.approx(-0.24191551349968093, abs=1e-12)


def test_wigner_gaussian_peak(sqz_state):
    vx, vp = variance_from_db(-2.0), variance_from_db(2.4)
    assert wigner(sqz_state, 0.0, 0.0) == pytest.approx(
        1.0 / (2 * math.pi * math.sqrt(vx * vp)), abs=1e-8
    )


def test_wigner_grid_normalization(kitten):
    ax = np.linspace(-5.0, 5.0, 161)
    x, p = np.meshgrid(ax, ax, indexing="ij")
    w = wigner(kitten, x, p)
    total = np.trapezoid(np.trapezoid(w, ax, axis=1), ax)
    assert total == pytest.approx(1.0, abs=1e-4)
    assert np.all(np.abs(w) <= 1.0 / math.pi + 1e-9)


def test_cat_state_norm_and_mean_photon():
    for alpha in (0.5, 0.9, 1.4):
        odd = cat_state(alpha, parity="odd", nmax=30)
        even = cat_state(alpha, parity="even", nmax=30)
        assert np.linalg.norm(odd) == pytest.approx(1.0, abs=1e-12)
        n_odd = float(np.sum(np.arange(odd.size) * np.abs(odd) ** 2))
        n_even = float(np.sum(np.arange(even.size) * np.abs(even) ** 2))
        assert n_odd == pytest.approx(alpha**2 / math.tanh(alpha**2), rel=1e-12)
        assert n_even == pytest.approx(alpha**2 * math.tanh(alpha**2), rel=1e-12)


def test_cat_state_small_alpha_limits():
    odd = cat_state(0.0, parity="odd", nmax=6)
    assert abs(odd[1]) == pytest.approx(1.0, abs=1e-12)
    even = cat_state(1e-4, parity="even", nmax=6)
    assert abs(even[0]) == pytest.approx(1.0, abs=1e-6)


def test_cat_state_truncation_gate():
    with pytest.raises(NumericsError):
        cat_state(3.0, parity="odd", nmax=6)


def test_best_cat_fidelity_purified_kitten():
    spec = GaussianStateSpec(variance_from_db(-2.0), variance_from_db(2.4)).purified()
    rho, _ = photon_subtract(gaussian_state(spec, nmax=20))
    alpha_star, fid = best_cat_fidelity(rho)
    assert fid >= 0.99
    assert 0.8 <= alpha_star <= 1.0


def test_cat_orientation_matters(kitten):
    # the subtracted x-squeezed state overlaps the cat whose lobes point
    # along p far better than the x-lobed one
    f_default = cat_fidelity(kitten, 0.9)
    f_x = cat_fidelity(kitten, 0.9, orientation=0.0)
    assert f_default > f_x + 0.2


def test_fidelity_definitions_agree(kitten):
    psi = cat_state(0.9, parity="odd", nmax=kitten.nmax)
    direct = fidelity(kitten, psi)
    dm = np.outer(psi, psi.conj())
    uhlmann = state_fidelity(kitten, FockDensityMatrix(nmax=kitten.nmax, entries=dm))
    assert uhlmann == pytest.approx(direct, abs=1e-7)
    assert state_fidelity(kitten, kitten) == pytest.approx(1.0, abs=1e-7)


def test_state_fidelity_symmetric_and_padded(sqz_state, kitten):
    # different dimensions are zero-padded to a common space
    a = state_fidelity(sqz_state, kitten)
    b = state_fidelity(kitten, sqz_state)
    assert a == pytest.approx(b, abs=1e-8)
    assert 0.0 < a < 1.0


def test_density_matrix_json_round_trip(kitten, tmp_path):
    path = tmp_path / "rho.json"
    save_density_matrix(kitten, path)
    back = load_density_matrix(path)
    assert back.nmax == kitten.nmax
    np.testing.assert_array_equal(back.entries, kitten.entries)
    # text form round-trips too
    again = density_matrix_from_json(density_matrix_to_json(kitten))
    np.testing.assert_array_equal(again.entries, kitten.entries)


def test_density_matrix_json_rejects_non_hermitian(tmp_path):
    doc = json.loads(density_matrix_to_json(gaussian_state(GaussianStateSpec(0.5, 0.5), nmax=3)))
    doc["re"][0][1] = 0.7  # break hermiticity
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_density_matrix(path)
