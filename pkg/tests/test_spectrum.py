import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmxpipe.core import EnergyMesh, InvalidInput, Spectrum
from rmxpipe.kernel import form_rmatrix_naive
from rmxpipe.spectrum import (
    AmbiguousWindow,
    MeshCollision,
    UnderResolvedKernel,
    admix,
    convolve_gaussian,
    fit_resonance,
    format_spectrum_csv,
    lorentzian,
    mesh_avoiding_poles,
    parse_spectrum_csv,
    rydberg_series,
    sweep_response,
)


def trapezoid(y, h):
    return h * (y.sum() - 0.5 * (y[0] + y[-1]))


# -- meshes ----------------------------------------------------------------------


def test_plain_mesh():
    m = mesh_avoiding_poles(0, 1, 2, [])
    assert m.energies().tolist() == [0.0, 1.0]


def test_half_spacing_shift():
    m = mesh_avoiding_poles(0, 1, 3, [0.5])
    assert m.energies().tolist() == [0.25, 0.75, 1.25]


def test_second_collision_raises():
    # poles on the grid and on the half-shifted grid
    with pytest.raises(MeshCollision):
        mesh_avoiding_poles(0, 1, 3, [0.5, 0.75])


def test_dense_mesh_avoids_poles(seed9_case):
    _, es, _ = seed9_case
    m = mesh_avoiding_poles(0, 10, 4096, es.eigenvalues)
    e = m.energies()
    assert np.min(np.abs(e[:, None] - es.eigenvalues[None, :])) >= 1e-10


# -- sweep -------------------------------------------------------------------------


def test_single_pole_response():
    s = sweep_response([[1.0]], [0.0], EnergyMesh(2.0, 3.0, 2))
    assert s.values[0] == 0.25


def test_response_matches_naive_kernel(desk_case):
    _, es, w = desk_case
    mesh = mesh_avoiding_poles(-2.5, 8.5, 5000, es.eigenvalues)
    s = sweep_response(w, es.eigenvalues, mesh, "gemm_blocked(16)")
    for i in np.random.default_rng(3).choice(mesh.n_points, 10, replace=False):
        r = form_rmatrix_naive(w, es.eigenvalues, mesh.energies()[i]).entries
        assert s.values[i] == pytest.approx(np.sum(r**2), rel=1e-12)


def test_response_peaks_near_poles(seed9_case):
    _, es, w = seed9_case
    p = es.eigenvalues
    gaps = np.diff(p)
    k = int(np.argmax(gaps))
    near = sweep_response(w, p, EnergyMesh(p[k] + 1e-3, p[k] + 2e-3, 2)).values[0]
    mid = 0.5 * (p[k] + p[k + 1])
    far = sweep_response(w, p, EnergyMesh(mid, mid + 1e-6, 2)).values[0]
    assert near >= 10 * far


@pytest.mark.parametrize("workers", [2, 3, 4])
def test_sweep_worker_invariance(seed9_case, workers):
    _, es, w = seed9_case
    mesh = mesh_avoiding_poles(-2.5, 8.5, 10001, es.eigenvalues)
    one = sweep_response(w, es.eigenvalues, mesh, "gemm", 1).values
    many = sweep_response(w, es.eigenvalues, mesh, "gemm", workers).values
    assert one.tobytes() == many.tobytes()


def test_resolution_refinement_converges(desk_case):
    # steep interval next to (but not containing) a pole: the double pole of
    # the surrogate response is not integrable, so a literal pole-containing
    # interval diverges under refinement
    _, es, w = desk_case
    p = es.eigenvalues
    k = int(np.argmax(np.diff(p)))
    lo, hi = p[k] + 0.01, p[k + 1] - 0.01
    integrals = []
    for n in (101, 201, 401, 801):
        mesh = EnergyMesh(lo, hi, n)
        integrals.append(trapezoid(sweep_response(w, p, mesh).values, mesh.spacing))
    d = np.abs(np.diff(integrals))
    assert d[0] > d[1] > d[2]


# -- convolution --------------------------------------------------------------------


@pytest.mark.parametrize("fwhm", [0.02, 0.1, 5.0])
def test_constant_spectrum_preserved(fwhm):
    s = Spectrum(EnergyMesh(0, 1, 501), np.full(501, 3.7))
    out = convolve_gaussian(s, fwhm).values
    np.testing.assert_allclose(out, 3.7, rtol=1e-14, atol=0)


def test_delta_gives_gaussian_samples():
    n, i0 = 2001, 1000
    mesh = EnergyMesh(0, 2, n)
    h = mesh.spacing
    v = np.zeros(n)
    v[i0] = 1.0
    fwhm = 20 * h
    out = convolve_gaussian(Spectrum(mesh, v), fwhm).values
    sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
    x = mesh.energies() - mesh.energies()[i0]
    closed_form = h / (sigma * math.sqrt(2 * math.pi)) * np.exp(-0.5 * (x / sigma) ** 2)
    inside = np.abs(x) <= 5 * sigma - h / 2
    np.testing.assert_allclose(out[inside], closed_form[inside], rtol=1e-5)
    assert np.all(out[~inside & (np.abs(x) > 5 * sigma + h / 2)] == 0)


def test_interior_area_preserved():
    mesh = EnergyMesh(0, 10, 20001)
    e = mesh.energies()
    v = lorentzian(e, 5.0, 0.05, 2.0, 0.0) + np.exp(-((e - 4.0) ** 2) / 0.01)
    fwhm = 0.06
    sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
    assert 4.0 - 0.3 - 10 * sigma > 0
    before = trapezoid(v, mesh.spacing)
    after = trapezoid(convolve_gaussian(Spectrum(mesh, v), fwhm).values, mesh.spacing)
    assert abs(after - before) / before <= 1e-3


def test_under_resolved_kernel():
    with pytest.raises(UnderResolvedKernel):
        convolve_gaussian(Spectrum(EnergyMesh(0, 1, 11), np.ones(11)), 0.15)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.0, 10.0),
    st.floats(0.0, 10.0),
    st.integers(0, 2**32 - 1),
    st.floats(0.01, 0.5),
)
def test_convolution_linearity(a, b, seed, fwhm):
    rng = np.random.default_rng(seed)
    mesh = EnergyMesh(0, 1, 257)
    s1 = Spectrum(mesh, rng.random(257))
    s2 = Spectrum(mesh, rng.random(257))
    lhs = convolve_gaussian(Spectrum(mesh, a * s1.values + b * s2.values), fwhm).values
    rhs = a * convolve_gaussian(s1, fwhm).values + b * convolve_gaussian(s2, fwhm).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * max(1.0, np.max(np.abs(rhs))))


def test_admix_commutes_with_convolution():
    rng = np.random.default_rng(8)
    mesh = EnergyMesh(0, 1, 300)
    spectra = [Spectrum(mesh, rng.random(300)) for _ in range(3)]
    w = [2.0, 1.0, 0.5]
    a = convolve_gaussian(admix(spectra, w), 0.05).values
    b = admix([convolve_gaussian(s, 0.05) for s in spectra], w).values
    np.testing.assert_allclose(a, b, rtol=1e-12)


# -- admixture ------------------------------------------------------------------------


def test_admix_two_thirds_one_third():
    mesh = EnergyMesh(0, 1, 5)
    out = admix([Spectrum(mesh, np.full(5, 3.0)), Spectrum(mesh, np.zeros(5))], [2 / 3, 1 / 3])
    assert out.values.tolist() == [2.0] * 5
    ratio = admix([Spectrum(mesh, np.full(5, 3.0)), Spectrum(mesh, np.zeros(5))], [2, 1])
    assert ratio.values.tolist() == [2.0] * 5


def test_admix_identity_and_equal_weights():
    mesh = EnergyMesh(0, 1, 4)
    s = Spectrum(mesh, [1.0, 2.0, 3.0, 4.0])
    assert admix([s], [1.0]).values.tolist() == s.values.tolist()
    consts = [Spectrum(mesh, np.full(4, c)) for c in (1.0, 2.0, 4.0, 9.0)]
    np.testing.assert_allclose(admix(consts, [1, 1, 1, 1]).values, 4.0, rtol=1e-15)


def test_admix_mesh_mismatch():
    with pytest.raises(InvalidInput):
        admix([Spectrum(EnergyMesh(0, 1, 4), np.ones(4)), Spectrum(EnergyMesh(0, 2, 4), np.ones(4))], [1, 1])
    with pytest.raises(InvalidInput):
        admix([Spectrum(EnergyMesh(0, 1, 4), np.ones(4))], [-1.0])


# -- Rydberg series ---------------------------------------------------------------------


def test_hydrogenic_ground_term():
    assert rydberg_series(0.0, 0.0, 1.0, (1, 1)).tolist() == [-1.0]


def test_quantum_defect_series():
    # oracle: exact rational arithmetic, 1.63 - 4/(n - 0.16)^2
    expected = [1.6091172441444752, 1.6118368073466482, 1.6140577492092643]
    e = rydberg_series(1.63, 0.16, 2.0, (14, 16))
    np.testing.assert_allclose(e, expected, rtol=1e-15)
    assert np.all(e < 1.63)


@given(st.floats(-5, 5), st.floats(0, 0.99), st.floats(0.5, 5), st.integers(1, 30), st.integers(2, 40))
def test_series_monotone_and_bounded(threshold, mu, z, n0, count):
    e = rydberg_series(threshold, mu, z, (n0, n0 + count))
    assert np.all(np.diff(e) > 0)
    assert np.all(e < threshold)
    assert np.all(np.diff(np.diff(e)) < 0)


def test_series_rejects_n_below_defect():
    with pytest.raises(InvalidInput):
        rydberg_series(0.0, 1.5, 1.0, (1, 3))


# -- resonance fitting ------------------------------------------------------------------


def lorentz_spectrum(n=2001, center=5.0, gamma=0.01, peak=1.0, bg=0.0):
    mesh = EnergyMesh(4.9, 5.1, n)
    return Spectrum(mesh, lorentzian(mesh.energies(), center, gamma, peak, bg))


def test_fit_recovers_exact_lorentzian():
    fit = fit_resonance(lorentz_spectrum(), (4.95, 5.05))
    assert fit.center == pytest.approx(5.0, rel=1e-6)
    assert fit.gamma == pytest.approx(0.01, rel=1e-6)
    assert fit.peak == pytest.approx(1.0, rel=1e-6)
    assert abs(fit.background) < 1e-6
    assert fit.rms_residual < 1e-9


def test_fit_with_background():
    fit = fit_resonance(lorentz_spectrum(center=5.003, gamma=0.02, peak=0.4, bg=0.3), (4.93, 5.07))
    assert fit.center == pytest.approx(5.003, rel=1e-6)
    assert fit.gamma == pytest.approx(0.02, rel=1e-6)
    assert fit.background == pytest.approx(0.3, rel=1e-6)


def test_fit_after_narrow_broadening():
    s = convolve_gaussian(lorentz_spectrum(), 0.001)
    fit = fit_resonance(s, (4.95, 5.05))
    assert abs(fit.center - 5.0) <= 0.01 / 100


def test_fit_flat_is_ambiguous():
    mesh = EnergyMesh(0, 1, 50)
    with pytest.raises(AmbiguousWindow):
        fit_resonance(Spectrum(mesh, np.ones(50)), (0.1, 0.9))


def test_fit_two_peaks_is_ambiguous():
    mesh = EnergyMesh(0, 1, 501)
    e = mesh.energies()
    v = lorentzian(e, 0.3, 0.02, 1, 0) + lorentzian(e, 0.7, 0.02, 1, 0)
    with pytest.raises(AmbiguousWindow):
        fit_resonance(Spectrum(mesh, v), (0.1, 0.9))


def test_fit_needs_seven_points():
    with pytest.raises(InvalidInput):
        fit_resonance(lorentz_spectrum(), (4.99999, 5.00001))


# -- CSV -------------------------------------------------------------------------------------


def test_spectrum_csv_round_trip():
    mesh = EnergyMesh(-0.3, 1.7, 37)
    s = Spectrum(mesh, np.random.default_rng(0).random(37), "demo run")
    text = format_spectrum_csv(s)
    lines = text.splitlines()
    assert lines[0] == "# label=demo run"
    assert lines[2] == "energy_ry,energy_ev,value"
    back = parse_spectrum_csv(text)
    assert back.mesh == mesh and back.label == "demo run"
    assert back.values.tobytes() == s.values.tobytes()
    ev = float(lines[3].split(",")[1])
    assert ev == pytest.approx(-0.3 * 13.605693, rel=1e-15)
