import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import jv

from freqbin.binspace import BinGrid
from freqbin.bessel import bessel_j
from freqbin.eom import (
    BETA_STAR,
    IDLER_CALIBRATION,
    J_BAR,
    OFF,
    SIGNAL_CALIBRATION,
    ModulatorCalibration,
    ModulatorSetting,
    TruncationError,
    analysis_vector,
    equal_sideband_index,
    get_mub_basis,
    mub_bases,
    projector_family,
    required_guard_bins,
    rf_power_to_index,
    sideband_coefficient,
    sideband_matrix,
)


def test_equal_sideband_index():
    b = equal_sideband_index()
    assert abs(b - 1.434) <= 1e-3
    assert abs(jv(0, b) - jv(1, b)) <= 1e-10
    assert 1.0 < b < 2.0
    assert (jv(0, 1.0) - jv(1, 1.0)) * (jv(0, 2.0) - jv(1, 2.0)) < 0


def test_sideband_coefficient_examples():
    assert sideband_coefficient(0, 0.0, 1.23) == 1.0
    b = 1.3
    assert sideband_coefficient(-1, b, 0.0) == pytest.approx(-jv(1, b), abs=1e-15)
    c = sideband_coefficient(1, 1.4347, math.pi / 2)
    assert c == pytest.approx(1j * jv(1, 1.4347), abs=1e-14)
    assert abs(jv(1, 1.4347) - jv(0, 1.4347)) <= 1e-4


@pytest.mark.parametrize("beta", [0.5, 1.434, 3.0])
def test_parity(beta):
    for n in range(21):
        assert abs(sideband_coefficient(-n, beta, 0) - (-1) ** n * sideband_coefficient(n, beta, 0)) <= 1e-12


@pytest.mark.parametrize("beta", [0.5, 1.434, 3.0])
def test_lattice_unitarity(beta):
    total = sum(bessel_j(n, beta) ** 2 for n in range(-12, 13))
    assert total >= 1 - 1e-6


def test_order_guard():
    with pytest.raises(ValueError):
        sideband_coefficient(61, 1.0, 0.0)


def test_rf_power_to_index():
    assert rf_power_to_index(22.1, SIGNAL_CALIBRATION) == pytest.approx(1.434, abs=1e-6)
    assert rf_power_to_index(24.3, IDLER_CALIBRATION) == pytest.approx(1.434, abs=1e-6)
    # the signal modulator is the more efficient one
    assert SIGNAL_CALIBRATION.efficiency > IDLER_CALIBRATION.efficiency
    assert rf_power_to_index(0.0, SIGNAL_CALIBRATION) == 0.0
    assert rf_power_to_index(0.0, SIGNAL_CALIBRATION, off_at_zero_dbm=False) > 0
    # index scales with RF voltage: +6.02 dB doubles it
    b1 = rf_power_to_index(10.0, SIGNAL_CALIBRATION)
    b2 = rf_power_to_index(10.0 + 20 * math.log10(2), SIGNAL_CALIBRATION)
    assert b2 == pytest.approx(2 * b1, rel=1e-12)


def test_calibration_anchor_consistency():
    with pytest.raises(ValueError):
        ModulatorCalibration(0.1, 22.1, 1.434)
    with pytest.raises(ValueError):
        ModulatorCalibration(-1.0, 22.1, 1.434)


def test_modulator_setting_validation():
    with pytest.raises(ValueError):
        ModulatorSetting(-0.1)
    with pytest.raises(ValueError):
        ModulatorSetting(1.0, 0.0, 0.25)


def test_off_is_identity():
    grid = BinGrid(3)
    sb = sideband_matrix(OFF, grid)
    assert_allclose(sb.matrix, np.eye(sb.sites.size))
    jt = projector_family(OFF, OFF, grid)
    assert_allclose(jt.matrix, np.eye(sb.sites.size**2))


def test_equal_sideband_diagonals():
    grid = BinGrid(4)
    v = sideband_matrix(ModulatorSetting(BETA_STAR, 0.0), grid).matrix
    n = v.shape[0]
    assert_allclose(np.diag(v), J_BAR, atol=1e-12)
    assert_allclose(np.diag(v, 1), J_BAR, atol=1e-12)  # r - m = +1 -> J_1
    assert_allclose(np.diag(v, -1), -J_BAR, atol=1e-12)  # J_{-1} = -J_1
    assert n == grid.window_sites.size


def test_circulant_random_windows():
    rng = np.random.default_rng(3)
    for _ in range(10):
        d = int(rng.integers(2, 6))
        guard = int(rng.integers(12, 18))
        s = ModulatorSetting(float(rng.uniform(0, 3)), float(rng.uniform(-np.pi, np.pi)))
        v = sideband_matrix(s, BinGrid(d, guard_bins=guard)).matrix
        assert np.array_equal(v[:-1, :-1], v[1:, 1:])


def test_matrix_entries_follow_definition():
    s = ModulatorSetting(1.1, 0.7)
    sb = sideband_matrix(s, BinGrid(2))
    i, j = sb.index(0), sb.index(3)
    assert sb.matrix[i, j] == pytest.approx(jv(3, 1.1) * np.exp(3j * 0.7), abs=1e-14)
    assert sb.matrix[j, i] == pytest.approx(jv(-3, 1.1) * np.exp(-3j * 0.7), abs=1e-14)


def test_truncation_error_names_guard_count():
    with pytest.raises(TruncationError, match="guard bins"):
        sideband_matrix(ModulatorSetting(3.0), BinGrid(2, guard_bins=3))
    assert required_guard_bins(BETA_STAR) <= 12
    sb = sideband_matrix(ModulatorSetting(3.0), BinGrid(2))
    assert sb.residue <= 1e-6


def test_joint_column_norms_subunit():
    jt = projector_family(ModulatorSetting(BETA_STAR, 0.3), ModulatorSetting(BETA_STAR, -0.2), BinGrid(3))
    norms = np.sum(np.abs(jt.matrix) ** 2, axis=0)
    assert np.all(norms <= 1 + 1e-12)


def test_fourier_projector():
    vec = analysis_vector(ModulatorSetting(BETA_STAR, 0.0), 1, 3)
    assert_allclose(vec, J_BAR * np.array([1, 1, -1]), atol=1e-12)
    assert np.linalg.norm(vec) == pytest.approx(J_BAR * math.sqrt(3), abs=1e-12)
    assert np.linalg.norm(vec) < 1


@pytest.mark.parametrize("d", [2, 3])
def test_mub_unbiased(d):
    bases = mub_bases(d)
    for b in bases:
        assert_allclose(b.vectors @ b.vectors.conj().T, np.eye(d), atol=1e-10)
    for i, a in enumerate(bases):
        for b in bases[i + 1 :]:
            overlaps = np.abs(a.vectors.conj() @ b.vectors.T) ** 2
            assert_allclose(overlaps, 1 / d, atol=1e-10)


def test_mub_names_and_settings():
    assert [b.name for b in mub_bases(2)] == ["Z", "X", "Y"]
    assert [b.name for b in mub_bases(3)] == ["Z", "F"]
    x = get_mub_basis(2, "X")
    assert [s.theta for s in x.settings] == [0.0, math.pi]
    f = get_mub_basis(3, "F")
    assert_allclose([s.theta for s in f.settings], [0, 2 * math.pi / 3, 4 * math.pi / 3])
    # sign-twisted Fourier vectors: diag(1, 1, -1) F
    omega = np.exp(2j * np.pi / 3)
    fourier = np.array([[omega ** (-j * k) for k in range(3)] for j in range(3)]) / math.sqrt(3)
    twisted = fourier * np.array([1, 1, -1])
    for v in f.vectors:
        assert np.max(np.abs(twisted.conj() @ v)) == pytest.approx(1.0, abs=1e-10)


def test_mub_unsupported():
    with pytest.raises(ValueError, match="single phase modulator"):
        mub_bases(4)
    with pytest.raises(ValueError, match="single phase modulator"):
        get_mub_basis(3, "Y")
