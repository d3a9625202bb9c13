import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from freqbin.binspace import StateError, density_from_amplitudes, fidelity
from freqbin.source import (
    SPEED_OF_LIGHT,
    CircuitProgram,
    QuadratureGrid,
    RingSpec,
    amplitudes_from_circuit,
    brightness_ratio_single_ring,
    detuning_for_indistinguishability,
    indistinguishability,
    indistinguishability_matrix,
    lorentzian_jsa,
    program_for_signs,
    ring_radius_for_spacing,
)


def lorentz_overlap(g1, g2):
    return 2 * math.sqrt(g1 * g2) / (g1 + g2)


def test_linewidths():
    jsa = lorentzian_jsa(RingSpec(5.7e4, 7.8e4, 193_000.0, 193_000.0))
    assert jsa.gamma_s == pytest.approx(3.386, abs=1e-3)
    assert jsa.gamma_i == pytest.approx(2.474, abs=1e-3)


def test_symmetric_when_q_equal():
    jsa = lorentzian_jsa(RingSpec(6e4, 6e4))
    w = np.linspace(-10, 10, 21)
    v = np.abs(jsa(w[:, None], w[None, :]))
    assert_allclose(v, v.T, atol=1e-15)


def test_normalization():
    jsa = lorentzian_jsa(RingSpec())
    assert abs(indistinguishability(jsa, jsa)) == pytest.approx(1.0, abs=1e-6)


def test_identical_rings():
    a = lorentzian_jsa(RingSpec())
    assert indistinguishability(a, a) == pytest.approx(1.0, abs=1e-6)


def test_q_mismatch_matches_closed_form():
    a = lorentzian_jsa(RingSpec(5.7e4, 7.8e4))
    b = lorentzian_jsa(RingSpec(0.8 * 5.7e4, 7.8e4))
    want = lorentz_overlap(a.gamma_s, b.gamma_s)
    assert want == pytest.approx(0.9938, abs=1e-4)
    assert abs(indistinguishability(a, b)) == pytest.approx(want, abs=1e-6)


def test_uniform_window_rejects_poor_coverage():
    a = lorentzian_jsa(RingSpec())
    with pytest.raises(ValueError, match="norm"):
        indistinguishability(a, a, QuadratureGrid(1.0, 801, half_span=10 * a.gamma_s))


def test_detuning_for_average_indistinguishability():
    ra, rb = RingSpec(), RingSpec(0.9 * 5.7e4, 7.8e4)
    det = detuning_for_indistinguishability(0.87, ra, rb)
    got = indistinguishability(lorentzian_jsa(ra), lorentzian_jsa(RingSpec(0.9 * 5.7e4, 7.8e4, detuning_ghz=det)))
    assert abs(got) == pytest.approx(0.87, abs=1e-8)


def test_conjugate_symmetry_and_psd():
    rng = np.random.default_rng(11)
    for _ in range(5):
        rings = [
            RingSpec(rng.uniform(4e4, 8e4), rng.uniform(4e4, 9e4), detuning_ghz=rng.uniform(-2, 2)) for _ in range(4)
        ]
        jsas = [lorentzian_jsa(r) for r in rings]
        assert indistinguishability(jsas[0], jsas[1]) == pytest.approx(
            np.conj(indistinguishability(jsas[1], jsas[0])), abs=1e-12
        )
        m = indistinguishability_matrix(jsas)
        assert np.all(np.abs(m) <= 1 + 1e-9)
        assert np.linalg.eigvalsh(m)[0] >= -1e-9


def test_uniform_program():
    st = amplitudes_from_circuit(CircuitProgram())
    assert_allclose(st.amplitudes, 0.5, atol=1e-15)


def test_ring_off_transforms_phi2_to_phi4():
    prog = program_for_signs((0, 1, 1, 1))
    st = amplitudes_from_circuit(prog.with_rings((False, True, False, True)), bins=(1, 2, 3))
    assert_allclose(np.abs(st.amplitudes), np.array([1, 0, 1]) / math.sqrt(2), atol=1e-15)


def test_phase_doubling():
    st = amplitudes_from_circuit(CircuitProgram(phases=(math.pi / 2, 0.0, 0.0)))
    rel = np.angle(st.amplitudes[1] / st.amplitudes[0])
    assert abs(abs(rel) - math.pi) < 1e-12


def test_signs_program():
    for signs in [(1, -1, -1, 1), (-1, 1, 1, -1), (0, 1, -1, -1)]:
        a = amplitudes_from_circuit(program_for_signs(signs)).amplitudes
        a = a / a[np.flatnonzero(np.abs(a) > 0)[0]]
        s = np.array(signs, dtype=float)
        assert_allclose(a, s / s[np.flatnonzero(s)[0]] / 1, atol=1e-12)


def test_all_rings_off():
    with pytest.raises(StateError):
        amplitudes_from_circuit(CircuitProgram(ring_on=(False,) * 4))


def test_global_phase_shift_invariance():
    indist = np.full((4, 4), 0.87) + 0.13 * np.eye(4)
    base = CircuitProgram(phases=(0.3, -1.1, 0.7))
    shifted = amplitudes_from_circuit(base, offsets=np.full(4, 0.9))
    r1 = density_from_amplitudes(amplitudes_from_circuit(base), indist)
    r2 = density_from_amplitudes(shifted, indist)
    assert fidelity(r1, r2, "root") == pytest.approx(1.0, abs=1e-10)


def test_program_validation():
    with pytest.raises(ValueError):
        CircuitProgram(mz_splits=(1.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        CircuitProgram(input_power_mw=-1)


def test_brightness_ratio():
    assert brightness_ratio_single_ring(25, 75) == pytest.approx(1 / 9, abs=1e-15)
    assert round(brightness_ratio_single_ring(25, 75), 4) == 0.1111
    assert brightness_ratio_single_ring(15, 524) == pytest.approx(8.19e-4, abs=5e-7)
    assert brightness_ratio_single_ring(7, 7) == 1.0
    a, b, c = 15.0, 25.0, 524.0
    assert brightness_ratio_single_ring(a, b) * brightness_ratio_single_ring(b, c) == pytest.approx(
        brightness_ratio_single_ring(a, c), abs=1e-12
    )


def test_ring_radius():
    vg = SPEED_OF_LIGHT / 4.2
    r15 = ring_radius_for_spacing(vg, 15)
    assert 700 <= r15 <= 820
    assert 21 <= ring_radius_for_spacing(vg, 524) <= 23
    assert ring_radius_for_spacing(vg, 30) == pytest.approx(r15 / 2, rel=1e-14)
    with pytest.raises(ValueError):
        ring_radius_for_spacing(vg, 0)
