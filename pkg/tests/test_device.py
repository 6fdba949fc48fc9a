import json

import numpy as np
import numpy.testing as npt
import pytest

from dotqed import device, qops


def test_qubit_frequency_is_hypotenuse():
    dqd = device.DqdParams(tunnel_splitting_2t=4.2e9, detuning_delta=3.1e9)
    # sqrt(4.2^2 + 3.1^2) GHz, frozen independently
    npt.assert_allclose(device.qubit_frequency(dqd), 5220153254.455276,
                        rtol=1e-12)
    flat = device.DqdParams(tunnel_splitting_2t=5.68e9)
    assert device.qubit_frequency(flat) == 5.68e9


def test_coupling_projection_shrinks_off_sweet_spot():
    c = device.CouplingParams(g0=55e6)
    dqd = device.DqdParams(tunnel_splitting_2t=4.2e9, detuning_delta=3.1e9)
    npt.assert_allclose(device.coupling_at_detuning(c, dqd),
                        44251574.37721719, rtol=1e-12)
    # at delta = 0 the full dipole survives
    flat = device.DqdParams(tunnel_splitting_2t=4.2e9)
    assert device.coupling_at_detuning(c, flat) == 55e6


def test_dispersive_shift_value_and_sign():
    npt.assert_allclose(device.dispersive_shift(55e6, 610e6),
                        4959016.393442623, rtol=1e-12)
    assert device.dispersive_shift(55e6, -610e6) < 0
    with pytest.raises(ValueError):
        device.dispersive_shift(55e6, 0.0)


def test_ac_stark_ladder():
    chi = device.dispersive_shift(55e6, 610e6)
    # with two photons in the cavity the pull is (1 + 2*2) chi
    npt.assert_allclose(device.ac_stark_frequency(5.68e9, 2, 55e6, 610e6),
                        5704795081.967213, rtol=1e-12)
    shifts = [device.ac_stark_frequency(5.68e9, n, 55e6, 610e6)
              for n in range(4)]
    npt.assert_allclose(np.diff(shifts), 2.0 * chi, rtol=1e-12)


def test_dispersive_phase_shift():
    npt.assert_allclose(device.dispersive_phase_shift(55e6, 30e6, 610e6),
                        0.31928952573106756, rtol=1e-12)
    with pytest.raises(ValueError):
        device.dispersive_phase_shift(55e6, 30e6, 0.0)


def test_impedance_linewidth_inversion():
    # same root found two ways: closed form vs scipy bracketing on the
    # forward model kappa_ext = Cc^2 w^3 Ztl Zr / 4
    cc, w, ztl = 11e-15, 2 * np.pi * 5.07e9, 50.0
    zr = device.resonator_impedance_from_linewidth(23e6, cc, w, ztl)
    npt.assert_allclose(zr, 2955.6216422477455, rtol=1e-10)
    back = device.external_linewidth(cc, w, ztl, zr) / (2 * np.pi)
    npt.assert_allclose(back, 23e6, rtol=1e-12)


def test_flux_map_inversion():
    fm = device.FluxMap(max_frequency_nu_r0=6.0e9, flux=0.31)
    nu = device.squid_resonator_frequency(fm)
    npt.assert_allclose(nu, 4498333202.718169, rtol=1e-12)
    # anchor inversion reproduces the generating curve
    fm2 = device.flux_map_from_anchor(nu, 0.31)
    npt.assert_allclose(fm2.max_frequency_nu_r0, 6.0e9, rtol=1e-12)
    # near half a flux quantum the sqrt(|cos|) map is rejected
    with pytest.raises(ValueError):
        device.squid_resonator_frequency(
            device.FluxMap(max_frequency_nu_r0=6.0e9, flux=0.499))


def test_device_params_roundtrip(flagship, tmp_path):
    d = flagship.to_dict()
    again = device.DeviceParams.from_dict(d)
    assert again == flagship
    path = tmp_path / "device.json"
    device.save_device_params(flagship, path)
    loaded = device.load_device_params(path)
    assert loaded == flagship
    # the JSON on disk is plain and sorted
    raw = json.loads(path.read_text())
    assert list(raw) == sorted(raw)


def test_from_dict_error_messages():
    with pytest.raises(ValueError, match="missing section"):
        device.DeviceParams.from_dict({"dqd": {"tunnel_splitting_2t": 1e9}})
    bad = {"dqd": {"tunnel_splitting_2t": 1e9, "bogus": 3},
           "resonator": {"bare_frequency_nu_r": 5e9, "kappa_ext": 1e6,
                         "kappa_int": 1e6},
           "coupling": {"g0": 5e7},
           "decoherence": {"gamma1": 1e6, "gamma_phi": 1e6}}
    with pytest.raises(ValueError, match="malformed"):
        device.DeviceParams.from_dict(bad)


def test_parameter_guards():
    with pytest.raises(ValueError):
        device.DqdParams(tunnel_splitting_2t=-1e9)
    with pytest.raises(ValueError):
        device.ResonatorParams(bare_frequency_nu_r=5e9, kappa_ext=0.0,
                               kappa_int=1e6)
    with pytest.raises(ValueError):
        device.DecoherenceParams(gamma1=-1.0, gamma_phi=0.0)
    res = device.ResonatorParams(bare_frequency_nu_r=5e9, kappa_ext=23e6,
                                 kappa_int=7e6)
    assert res.kappa_tot == 30e6
    dec = device.DecoherenceParams(gamma1=3.7625e6, gamma_phi=4.9203e6)
    npt.assert_allclose(dec.gamma2, 6801550.0, rtol=1e-15)


def test_rotating_frame_hamiltonian_elements(flagship):
    space = qops.HilbertSpace(4)
    drive = 5.6e9
    h = device.build_rotating_frame_hamiltonian(
        flagship.dqd, flagship.resonator, flagship.coupling, drive,
        space=space)
    assert h.shape == (8, 8)
    npt.assert_allclose(h, h.conj().T, atol=1e-6)
    nu_q = device.qubit_frequency(flagship.dqd)
    nu_r = flagship.resonator.bare_frequency_nu_r
    # |g,0> diagonal entry: -(nu_q - nu_d)/2 + 0 photons
    npt.assert_allclose(h[0, 0], -0.5 * (nu_q - drive), rtol=1e-12)
    # |e,1> entry: +(nu_q - nu_d)/2 + (nu_r - nu_d)
    npt.assert_allclose(h[5, 5], 0.5 * (nu_q - drive) + (nu_r - drive),
                        rtol=1e-12)
    # exchange element <e,0|H|g,1> = g
    npt.assert_allclose(h[4, 1], 55e6, rtol=1e-12)


def test_rotating_frame_drive_terms(flagship):
    space = qops.HilbertSpace(3)
    const = device.build_rotating_frame_hamiltonian(
        flagship.dqd, flagship.resonator, flagship.coupling, 5.6e9,
        qubit_rabi=20e6, space=space)
    assert isinstance(const, np.ndarray)
    # sigma_x/2 coupling: <e,0|H|g,0> gains Omega/2
    npt.assert_allclose(const[3, 0], 10e6, rtol=1e-12)

    ht = device.build_rotating_frame_hamiltonian(
        flagship.dqd, flagship.resonator, flagship.coupling, 5.6e9,
        qubit_rabi=lambda t: 20e6 * np.sin(t), space=space)
    assert callable(ht)
    npt.assert_allclose(ht(0.0)[3, 0], 0.0, atol=1e-9)


def test_rwa_warning_for_far_detuned_drive(flagship):
    with pytest.warns(RuntimeWarning, match="rotating-wave"):
        device.build_rotating_frame_hamiltonian(
            flagship.dqd, flagship.resonator, flagship.coupling, 1.0e9,
            space=qops.HilbertSpace(3))


def test_vacuum_rabi_splitting_at_resonance():
    # qubit tuned onto the resonator: the one-excitation doublet is split
    # by exactly 2 g
    dqd = device.DqdParams(tunnel_splitting_2t=5.07e9, detuning_delta=0.0)
    res = device.ResonatorParams(bare_frequency_nu_r=5.07e9, kappa_ext=23e6,
                                 kappa_int=7e6)
    split = device.vacuum_rabi_splitting(dqd, res,
                                         device.CouplingParams(g0=37.5e6))
    npt.assert_allclose(split, 75e6, rtol=1e-9)


def test_vacuum_rabi_splitting_detuned_exceeds_2g():
    # off resonance the doublet gap is sqrt(Delta^2 + 4 g^2) > 2 g
    dqd = device.DqdParams(tunnel_splitting_2t=5.2e9, detuning_delta=0.0)
    res = device.ResonatorParams(bare_frequency_nu_r=5.07e9, kappa_ext=23e6,
                                 kappa_int=7e6)
    split = device.vacuum_rabi_splitting(dqd, res,
                                         device.CouplingParams(g0=37.5e6))
    npt.assert_allclose(split, np.hypot(130e6, 75e6), rtol=1e-6)
