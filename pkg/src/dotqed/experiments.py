"""Config-driven experiment runners and their bookkeeping.

Each runner takes a validated ExperimentConfig, drives the simulation and
readout chain over the requested sweep, writes CSV traces plus a JSON fit
report into the output directory, and returns flat scalar results.  A
RunManifest ties the artifacts to the exact configuration, seed and library
versions so a rerun can be checked byte for byte.

Two measurement protocols that need the full Jaynes-Cummings model live here
as plain functions rather than CLI experiment kinds: measure_dispersive_pull
(steady-state cavity line versus pinned qubit state) and measure_stark_shift
(qubit precession frequency versus intracavity photon number).
"""

from __future__ import annotations

import copy
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import device, dynamics, fitting, pulses, qops, readout

EXPERIMENT_KINDS = (
    "spectroscopy",
    "stark",
    "rabi",
    "ramsey",
    "t1",
    "echo",
    "readout-trace",
    "s11-sweep",
)

DEFAULT_RINGUP_DT = 0.5e-9
DEFAULT_SATURATION_TARGETS = (0.05, 0.1, 0.2, 0.3, 0.4)


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field."""


# ------------------------------------------------------- config parsing

def _as_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _check_keys(mapping, allowed, path):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(allowed))}")


def _as_number(value, path, minimum=None, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    x = float(value)
    if not np.isfinite(x):
        raise ConfigError(f"{path}: must be finite")
    if positive and x <= 0:
        raise ConfigError(f"{path}: must be > 0")
    if minimum is not None and x < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return x


def _as_int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return int(value)


def _as_choice(value, path, choices):
    if value not in choices:
        raise ConfigError(f"{path}: expected one of {', '.join(map(str, choices))}, "
                          f"got {value!r}")
    return value


@dataclass(frozen=True)
class SweepSpec:
    """Uniform sweep axis; the meaning of the values is set by the kind."""
    start: float
    stop: float
    points: int

    @property
    def values(self):
        return np.linspace(self.start, self.stop, self.points)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    device: device.DeviceParams
    sweep: SweepSpec | None
    seed: int
    output_dir: str
    heterodyne: readout.HeterodyneConfig
    readout_noise: readout.ReadoutNoiseModel | None
    dephasing: dynamics.OuNoiseModel | None
    probe_frequency: float | None
    probe_amplitude: float | None
    pulse_sigma: float
    drag_beta: float
    truncation_k: float
    averages: int
    workers: int
    params: dict
    effective: dict = field(repr=False)


_TOP_KEYS = ("experiment", "device", "sweep", "seed", "output_dir", "noise",
             "pulse", "readout", "params", "averages", "workers")

_READOUT_KEYS = ("probe_frequency", "probe_amplitude", "sample_rate",
                 "intermediate_frequency", "lowpass_cutoff",
                 "integration_window", "n_filter_taps")

# per-kind keys accepted under "params"
_PARAM_KEYS = {
    "spectroscopy": ("rabi_amplitudes", "extrapolation_mode"),
    "stark": ("probe_frequency", "fock_cutoff", "settle_time",
              "precession_time", "dt"),
    "rabi": (),
    "ramsey": ("drive_detuning", "fit_envelope"),
    "t1": (),
    "echo": ("fit_envelope", "echo_phase"),
    "readout-trace": ("population",),
    "s11-sweep": ("qubit_state",),
}


def _parse_sweep(raw, path):
    m = _as_mapping(raw, path)
    _check_keys(m, ("start", "stop", "points"), path)
    for key in ("start", "stop", "points"):
        if key not in m:
            raise ConfigError(f"{path}.{key}: required")
    return SweepSpec(start=_as_number(m["start"], f"{path}.start"),
                     stop=_as_number(m["stop"], f"{path}.stop"),
                     points=_as_int(m["points"], f"{path}.points", minimum=2))


def _parse_noise(raw):
    m = _as_mapping(raw, "noise")
    _check_keys(m, ("readout", "dephasing"), "noise")
    readout_noise = None
    dephasing = None
    if "readout" in m:
        r = _as_mapping(m["readout"], "noise.readout")
        _check_keys(r, ("noise_temperature", "system_gain"), "noise.readout")
        readout_noise = readout.ReadoutNoiseModel(
            noise_temperature=_as_number(r.get("noise_temperature", 6.0),
                                         "noise.readout.noise_temperature",
                                         minimum=0.0),
            system_gain=_as_number(r.get("system_gain", 1.0),
                                   "noise.readout.system_gain", positive=True))
    if "dephasing" in m:
        d = _as_mapping(m["dephasing"], "noise.dephasing")
        _check_keys(d, ("sigma_delta", "tau_c", "n_realizations"),
                    "noise.dephasing")
        if "sigma_delta" not in d or "tau_c" not in d:
            raise ConfigError("noise.dephasing: sigma_delta and tau_c are required")
        dephasing = dynamics.OuNoiseModel(
            sigma_delta=_as_number(d["sigma_delta"],
                                   "noise.dephasing.sigma_delta", minimum=0.0),
            tau_c=_as_number(d["tau_c"], "noise.dephasing.tau_c", positive=True),
            n_realizations=_as_int(d.get("n_realizations", 1000),
                                   "noise.dephasing.n_realizations", minimum=1))
    return readout_noise, dephasing


def _parse_params(kind, raw):
    m = _as_mapping(raw, "params")
    allowed = _PARAM_KEYS[kind]
    unknown = sorted(set(m) - set(allowed))
    if unknown:
        raise ConfigError(
            f"params.{unknown[0]}: unknown key for experiment '{kind}'"
            + (f"; allowed: {', '.join(allowed)}" if allowed else ""))
    out = dict(m)
    if kind == "spectroscopy":
        if "rabi_amplitudes" in m:
            amps = m["rabi_amplitudes"]
            if not isinstance(amps, (list, tuple)) or len(amps) < 2:
                raise ConfigError("params.rabi_amplitudes: expected a list of "
                                  ">= 2 drive amplitudes in Hz")
            out["rabi_amplitudes"] = [
                _as_number(a, f"params.rabi_amplitudes[{i}]", positive=True)
                for i, a in enumerate(amps)]
        if "extrapolation_mode" in m:
            _as_choice(m["extrapolation_mode"], "params.extrapolation_mode",
                       ("squared", "linear"))
    elif kind == "stark":
        if "probe_frequency" in m:
            _as_number(m["probe_frequency"], "params.probe_frequency",
                       positive=True)
        if "fock_cutoff" in m:
            _as_int(m["fock_cutoff"], "params.fock_cutoff", minimum=4)
        for key in ("settle_time", "precession_time", "dt"):
            if key in m:
                _as_number(m[key], f"params.{key}", positive=True)
    elif kind == "ramsey":
        if "drive_detuning" in m:
            _as_number(m["drive_detuning"], "params.drive_detuning")
        if "fit_envelope" in m:
            _as_choice(m["fit_envelope"], "params.fit_envelope",
                       ("exp", "gauss", "none"))
    elif kind == "echo":
        if "fit_envelope" in m:
            _as_choice(m["fit_envelope"], "params.fit_envelope",
                       ("exp", "gauss", "none"))
        if "echo_phase" in m:
            _as_number(m["echo_phase"], "params.echo_phase")
    elif kind == "readout-trace":
        if "population" in m:
            p = _as_number(m["population"], "params.population", minimum=0.0)
            if p > 1.0:
                raise ConfigError("params.population: must be <= 1")
    elif kind == "s11-sweep":
        if "qubit_state" in m:
            _as_choice(m["qubit_state"], "params.qubit_state",
                       ("bare", "g", "e"))
    return out


def validate_config(raw, experiment=None, seed=None, output_dir=None):
    """Validate a raw config dict into an ExperimentConfig.

    seed / output_dir override the corresponding config fields
    (command-line precedence).  experiment fills in the kind when the
    config omits it and must agree with the config when both are given,
    so a config written for one pipeline is never run through another.
    Raises ConfigError naming the offending field on any problem; never
    partially applies a config.
    """
    m = _as_mapping(raw, "config")
    effective = copy.deepcopy(m)
    if experiment is not None:
        declared = effective.get("experiment")
        if declared is not None and declared != experiment:
            raise ConfigError(
                f"experiment: config declares {declared!r} but the command "
                f"line selected {experiment!r}")
        effective["experiment"] = experiment
    if seed is not None:
        effective["seed"] = seed
    if output_dir is not None:
        effective["output_dir"] = output_dir

    _check_keys(effective, _TOP_KEYS, "config")

    kind = effective.get("experiment")
    if kind is None:
        raise ConfigError("experiment: required (or pass the subcommand)")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment: unknown kind {kind!r}; choose from "
                          f"{', '.join(EXPERIMENT_KINDS)}")

    if "device" not in effective:
        raise ConfigError("device: required")
    try:
        dev = device.DeviceParams.from_dict(_as_mapping(effective["device"],
                                                        "device"))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"device: {exc}") from exc

    sweep = None
    if "sweep" in effective:
        sweep = _parse_sweep(effective["sweep"], "sweep")
    elif kind != "readout-trace":
        raise ConfigError(f"sweep: required for experiment '{kind}'")

    seed_val = _as_int(effective.get("seed", 0), "seed", minimum=0)
    out_dir = effective.get("output_dir", f"runs/{kind}")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output_dir: expected a non-empty string")

    readout_noise, dephasing = (None, None)
    if "noise" in effective:
        readout_noise, dephasing = _parse_noise(effective["noise"])

    sigma, beta, trunc = 0.25e-9, 0.0, pulses.DEFAULT_TRUNCATION_K
    if "pulse" in effective:
        p = _as_mapping(effective["pulse"], "pulse")
        _check_keys(p, ("sigma", "drag_beta", "truncation_k"), "pulse")
        sigma = _as_number(p.get("sigma", sigma), "pulse.sigma", positive=True)
        beta = _as_number(p.get("drag_beta", beta), "pulse.drag_beta")
        trunc = _as_number(p.get("truncation_k", trunc), "pulse.truncation_k",
                           positive=True)

    probe_frequency = None
    probe_amplitude = None
    het_kwargs = {}
    if "readout" in effective:
        r = _as_mapping(effective["readout"], "readout")
        _check_keys(r, _READOUT_KEYS, "readout")
        if "probe_frequency" in r:
            probe_frequency = _as_number(r["probe_frequency"],
                                         "readout.probe_frequency", positive=True)
        if "probe_amplitude" in r:
            probe_amplitude = _as_number(r["probe_amplitude"],
                                         "readout.probe_amplitude", positive=True)
        for key in ("sample_rate", "intermediate_frequency", "lowpass_cutoff",
                    "integration_window"):
            if key in r:
                het_kwargs[key] = _as_number(r[key], f"readout.{key}",
                                             positive=True)
        if "n_filter_taps" in r:
            het_kwargs["n_filter_taps"] = _as_int(r["n_filter_taps"],
                                                  "readout.n_filter_taps",
                                                  minimum=3)
    try:
        het = readout.HeterodyneConfig(**het_kwargs)
    except ValueError as exc:
        raise ConfigError(f"readout: {exc}") from exc

    params = _parse_params(kind, effective.get("params", {}))

    averages = _as_int(effective.get("averages", 1), "averages", minimum=1)
    workers = _as_int(effective.get("workers", 1), "workers", minimum=1)

    return ExperimentConfig(
        experiment=kind, device=dev, sweep=sweep, seed=seed_val,
        output_dir=out_dir, heterodyne=het, readout_noise=readout_noise,
        dephasing=dephasing, probe_frequency=probe_frequency,
        probe_amplitude=probe_amplitude, pulse_sigma=sigma, drag_beta=beta,
        truncation_k=trunc, averages=averages, workers=workers, params=params,
        effective=effective)


def load_config(path, experiment=None, seed=None, output_dir=None):
    """Read a JSON config file and validate it."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}") from exc
    return validate_config(raw, experiment=experiment, seed=seed,
                           output_dir=output_dir)


# --------------------------------------------------- readout pipeline

@dataclass(frozen=True)
class ReadoutPipeline:
    """Precomputed conditional cavity responses and demodulated references.

    The master equation is linear in the density matrix, so the conditional
    trajectories for |g> and |e> span every mixture; a sweep only has to
    blend them, which keeps per-point cost at the synthesis/estimation level.
    """
    heterodyne: readout.HeterodyneConfig
    noise: readout.ReadoutNoiseModel | None
    traj_g: dynamics.Trajectory
    traj_e: dynamics.Trajectory
    ref_g: readout.IqTrace
    ref_e: readout.IqTrace
    probe_frequency: float
    probe_amplitude: float
    chi: float


def build_readout_pipeline(dev, heterodyne=None, noise=None,
                           probe_frequency=None, probe_amplitude=None,
                           ringup_dt=DEFAULT_RINGUP_DT):
    """Ring up the conditional cavity fields and demodulate the references.

    The probe defaults to the ground-state resonance; the amplitude default
    puts one steady-state photon in the cavity for the ground branch.
    """
    het = heterodyne or readout.HeterodyneConfig()
    res = dev.resonator
    nu_q = device.qubit_frequency(dev.dqd)
    g_eff = device.coupling_at_detuning(dev.coupling, dev.dqd)
    chi = device.dispersive_shift(g_eff, nu_q - res.bare_frequency_nu_r)
    if probe_frequency is None:
        probe_frequency = res.bare_frequency_nu_r + \
            readout.dressed_resonance_shift("g", chi)
    if probe_amplitude is None:
        # |alpha_ss| = 1 on the ground-branch resonance
        probe_amplitude = np.pi * res.kappa_tot / np.sqrt(2.0 * np.pi * res.kappa_ext)
    grid = dynamics.SimulationGrid(0.0, het.integration_window, ringup_dt)
    traj_g = dynamics.semiclassical_cavity_response(
        "g", res, chi, probe_frequency, probe_amplitude, grid)
    traj_e = dynamics.semiclassical_cavity_response(
        "e", res, chi, probe_frequency, probe_amplitude, grid)
    ref_g = readout.synthesize_readout_waveform(traj_g, het)
    ref_e = readout.synthesize_readout_waveform(traj_e, het)
    return ReadoutPipeline(heterodyne=het, noise=noise, traj_g=traj_g,
                           traj_e=traj_e, ref_g=ref_g, ref_e=ref_e,
                           probe_frequency=probe_frequency,
                           probe_amplitude=probe_amplitude, chi=chi)


def _blend_trajectory(pipe, p_e):
    alpha = (1.0 - p_e) * pipe.traj_g.cavity_alpha \
        + p_e * pipe.traj_e.cavity_alpha
    return dynamics.Trajectory(times=pipe.traj_g.times,
                               qubit_pe=np.full(pipe.traj_g.times.shape,
                                                float(p_e)),
                               cavity_alpha=alpha)


def measure_population(pipe, p_e, rng=None, averages=1):
    """Push a mixture through the noisy readout chain; return (mean, sem)."""
    traj = _blend_trajectory(pipe, p_e)
    het = pipe.heterodyne
    if pipe.noise is None or pipe.noise.noise_temperature <= 0.0:
        trace = readout.synthesize_readout_waveform(traj, het)
        est = readout.estimate_population(trace, pipe.ref_g, pipe.ref_e, het)
        return est.p_e, 0.0
    vals = np.empty(int(averages))
    for k in range(int(averages)):
        trace = readout.synthesize_readout_waveform(traj, het,
                                                    noise=pipe.noise, rng=rng)
        vals[k] = readout.estimate_population(trace, pipe.ref_g, pipe.ref_e,
                                              het).p_e
    sem = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), sem


# --------------------------------------- full-model measurement protocols

@dataclass(frozen=True)
class DispersivePull:
    """Cavity line centers conditioned on the qubit branch."""
    probe_frequencies: np.ndarray
    responses: dict
    centers: dict
    pull_g: float
    pull_e: float
    chi_measured: float
    chi_dispersive: float
    fits: dict


def measure_dispersive_pull(dev, n_probe=61, span=None, probe_amplitude=None,
                            fock_cutoff=6, hold_rate=16e6):
    """Steady-state cavity transmission line versus pinned qubit state.

    Sweeps a weak probe across the resonator for three qubit branches held
    open-system style: a collapse pump to |g>, to |e>, and balanced pumps
    giving a maximally mixed qubit.  The hold rate must dominate the Purcell
    rate (kappa (g/Delta)^2, fractions of a MHz here) or the branch drifts
    toward |g> while the probe integrates.  chi_measured is the line pull of
    the mixed branch relative to the ground branch; in the dispersive regime
    it approaches g^2/Delta.
    """
    res = dev.resonator
    space = qops.HilbertSpace(fock_cutoff)
    nu_q = device.qubit_frequency(dev.dqd)
    g_eff = device.coupling_at_detuning(dev.coupling, dev.dqd)
    chi = device.dispersive_shift(g_eff, nu_q - res.bare_frequency_nu_r)
    if span is None:
        span = 2.0 * (res.kappa_tot + 2.0 * abs(chi))
    if probe_amplitude is None:
        probe_amplitude = res.kappa_tot / 20.0  # ~0.01 photons: linear response
    freqs = np.linspace(res.bare_frequency_nu_r - span,
                        res.bare_frequency_nu_r + span, int(n_probe))

    a_op = qops.cavity_operator(qops.annihilation(space.fock_cutoff), space)
    sm = qops.qubit_operator(qops.sigma_minus(), space)
    sp = qops.qubit_operator(qops.sigma_plus(), space)
    hold = 2.0 * np.pi * hold_rate
    branch_channels = {
        "g": [dynamics.CollapseChannel(sm, hold, "hold |g>")],
        "e": [dynamics.CollapseChannel(sp, hold, "hold |e>")],
        "mixed": [dynamics.CollapseChannel(sm, hold, "hold down"),
                  dynamics.CollapseChannel(sp, hold, "hold up")],
    }
    cavity = dynamics.CollapseChannel(a_op, 2.0 * np.pi * res.kappa_tot,
                                      "cavity loss")

    responses = {}
    fits = {}
    centers = {}
    for branch, extra in branch_channels.items():
        resp = np.empty(len(freqs), dtype=complex)
        for i, f in enumerate(freqs):
            h = device.build_rotating_frame_hamiltonian(
                dev.dqd, res, dev.coupling, drive_frequency=f,
                cavity_drive=probe_amplitude, space=space)
            rho = dynamics.steady_state(h, [cavity] + extra)
            resp[i] = qops.expectation(rho, a_op)
        fit = fitting.fit_lorentzian(freqs, np.abs(resp) ** 2)
        responses[branch] = resp
        fits[branch] = fit
        centers[branch] = float(fit.params["center"])

    nu_r = res.bare_frequency_nu_r
    return DispersivePull(
        probe_frequencies=freqs, responses=responses, centers=centers,
        pull_g=centers["g"] - nu_r, pull_e=centers["e"] - nu_r,
        chi_measured=centers["mixed"] - centers["g"],
        chi_dispersive=chi, fits=fits)


@dataclass(frozen=True)
class StarkPoint:
    """One measurement-tone amplitude: photons and dressed qubit frequency."""
    drive_amplitude: float
    photon_number: float
    qubit_frequency: float
    max_trace_deviation: float


def measure_stark_shift(dev, drive_amplitude, probe_frequency=None,
                        fock_cutoff=18, settle_time=10e-9,
                        precession_time=100e-9, dt=2e-11,
                        coherence_floor=0.25):
    """Qubit precession frequency with the measurement tone populating the cavity.

    Prepares the driven-cavity steady state, tips the qubit to the equator,
    and reads the superposition's precession rate off the unwrapped phase of
    <sigma+>.  The first settle_time is excluded from the phase fit: after
    the tip the cavity re-rings toward the excited-branch field and the
    transient frequency is not yet stationary.  Probing at the bare resonator
    frequency keeps <n> symmetric between the branches so the photon number
    is constant during the precession window.

    The fit window also ends once |<sigma+>| falls below coherence_floor of
    its post-settle value: the bare-basis sigma+ carries an order-g/Delta
    cavity-like component that does not dephase with the qubit, and once the
    qubit part has decayed that remnant owns the phase.
    """
    res = dev.resonator
    space = qops.HilbertSpace(fock_cutoff)
    probe = res.bare_frequency_nu_r if probe_frequency is None else probe_frequency
    h = device.build_rotating_frame_hamiltonian(
        dev.dqd, res, dev.coupling, drive_frequency=probe,
        cavity_drive=drive_amplitude, space=space)
    channels = [dynamics.CollapseChannel(
        qops.cavity_operator(qops.annihilation(space.fock_cutoff), space),
        2.0 * np.pi * res.kappa_tot, "cavity loss")]

    rho_ss = dynamics.steady_state(h, channels)
    c = np.sqrt(0.5)
    tip = qops.qubit_operator(np.array([[c, -c], [c, c]]), space)
    rho0 = tip @ rho_ss @ tip.conj().T

    grid = dynamics.SimulationGrid(0.0, precession_time, dt)
    e_ops = {
        "sigma_plus": qops.qubit_operator(qops.sigma_plus(), space),
        "photons": qops.cavity_operator(
            qops.number_operator(space.fock_cutoff), space),
    }
    traj = dynamics.evolve(rho0, h, channels, grid, space=space, e_ops=e_ops)
    traj.validate_populations()

    sel = traj.times >= settle_time
    coherence = traj.expectations["sigma_plus"][sel]
    times = traj.times[sel]
    alive = np.abs(coherence) >= coherence_floor * np.abs(coherence[0])
    n_keep = len(alive) if alive.all() else int(np.argmin(alive))
    if n_keep < 32:
        raise RuntimeError(
            "qubit coherence decayed before a phase fit window opened; "
            "reduce the drive amplitude or settle_time")
    # <sigma+> rotates at +2 pi (nu_q_dressed - nu_probe)
    phase = np.unwrap(np.angle(coherence[:n_keep]))
    slope = np.polyfit(times[:n_keep], phase, 1)[0]
    nu_q = probe + slope / (2.0 * np.pi)
    n_bar = float(np.mean(
        np.real(traj.expectations["photons"][sel][:n_keep])))
    return StarkPoint(drive_amplitude=float(drive_amplitude),
                      photon_number=n_bar, qubit_frequency=float(nu_q),
                      max_trace_deviation=traj.diagnostics.max_trace_deviation)


# ------------------------------------------------------------ runners

def _sweep_map(fn, n_items, workers):
    if workers <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_items)))  # order = submission order


def _point_rngs(seed, n_points):
    """Two independent streams per sweep point, stable under any scheduling."""
    kids = np.random.SeedSequence(seed).spawn(n_points)
    return [tuple(np.random.default_rng(s) for s in k.spawn(2)) for k in kids]


def _write_csv(path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=header, comments="",
               fmt="%.12e")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pipeline_from_config(cfg):
    return build_readout_pipeline(cfg.device, heterodyne=cfg.heterodyne,
                                  noise=cfg.readout_noise,
                                  probe_frequency=cfg.probe_frequency,
                                  probe_amplitude=cfg.probe_amplitude)


def _run_sequence_sweep(cfg, make_sequence):
    """Shared core of the pulsed experiments: simulate, read out, tabulate."""
    values = cfg.sweep.values
    pipe = _pipeline_from_config(cfg)
    rngs = _point_rngs(cfg.seed, len(values))
    dec = cfg.device.decoherence
    use_mc = cfg.dephasing is not None and cfg.dephasing.sigma_delta > 0

    def one(i):
        seq = make_sequence(values[i])
        if use_mc:
            traj = dynamics.monte_carlo_dephasing(seq, cfg.dephasing, dec,
                                                  rng=rngs[i][0])
            true_err = float(traj.pe_stderr[-1])
        else:
            traj = dynamics.simulate_sequence(seq, dec)
            true_err = 0.0
        traj.validate_populations()
        pe_true = float(traj.qubit_pe[-1])
        p_est, est_err = measure_population(pipe, pe_true, rng=rngs[i][1],
                                            averages=cfg.averages)
        return (pe_true, true_err, p_est, est_err,
                traj.diagnostics.max_trace_deviation)

    rows = _sweep_map(one, len(values), cfg.workers)
    pe_true, true_err, p_est, est_err, trace_dev = map(np.array, zip(*rows))
    return values, pe_true, true_err, p_est, est_err, float(trace_dev.max())


def _run_rabi(cfg, out):
    amps = cfg.sweep.values
    _, pe_true, true_err, p_est, est_err, trace_dev = _run_sequence_sweep(
        cfg, lambda a: pulses.build_rabi_sequence(
            a, cfg.pulse_sigma, truncation_k=cfg.truncation_k,
            drag_beta=cfg.drag_beta,
            readout_duration=cfg.heterodyne.integration_window))
    _write_csv(out / "rabi.csv",
               "drive_amplitude_hz,pe_simulated,pe_estimated,pe_stderr",
               [amps, pe_true, p_est, est_err])
    fit = fitting.fit_rabi_sweep(amps, p_est)
    rate = abs(fit.params["frequency"])  # oscillation cycles per Hz of drive
    results = {
        "pi_amplitude_hz": 0.5 / rate if rate > 0 else float("nan"),
        "predicted_pi_amplitude_hz": pulses.calibrate_pi_amplitude(
            cfg.pulse_sigma, truncation_k=cfg.truncation_k),
        "fit_residual_rms": fit.residual_rms,
        "max_trace_deviation": trace_dev,
    }
    return ["rabi.csv"], {"rabi_oscillation": fit.to_dict()}, results


def _run_ramsey(cfg, out):
    detuning = float(cfg.params.get("drive_detuning", 100e6))
    pi_amp = pulses.calibrate_pi_amplitude(cfg.pulse_sigma,
                                           truncation_k=cfg.truncation_k)
    delays, pe_true, true_err, p_est, est_err, trace_dev = _run_sequence_sweep(
        cfg, lambda tau: pulses.build_ramsey_sequence(
            tau, detuning, sigma=cfg.pulse_sigma, pi_amplitude=pi_amp,
            truncation_k=cfg.truncation_k, drag_beta=cfg.drag_beta,
            readout_duration=cfg.heterodyne.integration_window))
    _write_csv(out / "ramsey.csv",
               "delay_s,pe_simulated,pe_sim_stderr,pe_estimated,pe_est_stderr",
               [delays, pe_true, true_err, p_est, est_err])
    envelope = cfg.params.get("fit_envelope", "exp")
    if detuning != 0.0:
        fit = fitting.fit_damped_cosine(delays, p_est, envelope=envelope)
        t2 = fit.params.get("decay_time", float("inf"))
        fringe = abs(fit.params["frequency"])
    else:
        fit = fitting.fit_exponential_decay(delays, p_est)
        t2 = fit.params["time_constant"]
        fringe = 0.0
    results = {
        "t2_ramsey_s": float(t2),
        "fringe_frequency_hz": float(fringe),
        "drive_detuning_hz": detuning,
        "fit_residual_rms": fit.residual_rms,
        "max_trace_deviation": trace_dev,
    }
    return ["ramsey.csv"], {"fringe_decay": fit.to_dict()}, results


def _run_t1(cfg, out):
    pi_amp = pulses.calibrate_pi_amplitude(cfg.pulse_sigma,
                                           truncation_k=cfg.truncation_k)
    delays, pe_true, true_err, p_est, est_err, trace_dev = _run_sequence_sweep(
        cfg, lambda tau: pulses.build_t1_sequence(
            tau, sigma=cfg.pulse_sigma, pi_amplitude=pi_amp,
            truncation_k=cfg.truncation_k, drag_beta=cfg.drag_beta,
            readout_duration=cfg.heterodyne.integration_window))
    _write_csv(out / "t1.csv",
               "delay_s,pe_simulated,pe_sim_stderr,pe_estimated,pe_est_stderr",
               [delays, pe_true, true_err, p_est, est_err])
    fit = fitting.fit_exponential_decay(delays, p_est)
    results = {
        "t1_s": float(fit.params["time_constant"]),
        "fit_residual_rms": fit.residual_rms,
        "max_trace_deviation": trace_dev,
    }
    return ["t1.csv"], {"population_decay": fit.to_dict()}, results


def _run_echo(cfg, out):
    pi_amp = pulses.calibrate_pi_amplitude(cfg.pulse_sigma,
                                           truncation_k=cfg.truncation_k)
    echo_phase = float(cfg.params.get("echo_phase", np.pi / 2))
    delays, pe_true, true_err, p_est, est_err, trace_dev = _run_sequence_sweep(
        cfg, lambda tau: pulses.build_echo_sequence(
            tau, sigma=cfg.pulse_sigma, pi_amplitude=pi_amp,
            echo_phase=echo_phase, truncation_k=cfg.truncation_k,
            drag_beta=cfg.drag_beta,
            readout_duration=cfg.heterodyne.integration_window))
    _write_csv(out / "echo.csv",
               "delay_s,pe_simulated,pe_sim_stderr,pe_estimated,pe_est_stderr",
               [delays, pe_true, true_err, p_est, est_err])
    fit = fitting.fit_exponential_decay(delays, p_est)
    results = {
        "t2_echo_s": float(fit.params["time_constant"]),
        "fit_residual_rms": fit.residual_rms,
        "max_trace_deviation": trace_dev,
    }
    return ["echo.csv"], {"echo_decay": fit.to_dict()}, results


def _run_spectroscopy(cfg, out):
    dec = cfg.device.decoherence
    dets = cfg.sweep.values
    amps = cfg.params.get("rabi_amplitudes")
    if amps is None:
        # low saturation ladder; hwhm^2 stays linear in drive power
        amps = [float(np.sqrt(s * dec.gamma1 * dec.gamma2))
                for s in DEFAULT_SATURATION_TARGETS]
    amps = np.asarray(amps, dtype=float)

    lines = [dynamics.steady_state_spectroscopy(dets, a, dec) for a in amps]
    line_fits = [fitting.fit_lorentzian(dets, line) for line in lines]
    hwhms = np.array([abs(f.params["hwhm"]) for f in line_fits])
    mode = cfg.params.get("extrapolation_mode", "squared")
    extrap = fitting.extrapolate_zero_power_linewidth(amps ** 2, hwhms,
                                                      mode=mode)

    header = "detuning_hz," + ",".join(f"pe_line{i}" for i in range(len(amps)))
    _write_csv(out / "lines.csv", header, [dets] + lines)
    _write_csv(out / "linewidths.csv",
               "rabi_amplitude_hz,drive_power_hz2,hwhm_hz",
               [amps, amps ** 2, hwhms])
    fits = {
        "lines": [f.to_dict() for f in line_fits],
        "zero_power_extrapolation": {
            "mode": extrap.mode, "gamma2_hz": extrap.gamma2,
            "t2_s": extrap.t2, "slope": extrap.slope,
            "intercept": extrap.intercept,
        },
    }
    results = {
        "gamma2_hz": extrap.gamma2,
        "t2_s": extrap.t2,
        "peak_pe_max": float(max(line.max() for line in lines)),
    }
    return ["lines.csv", "linewidths.csv"], fits, results


def _run_stark(cfg, out):
    p = cfg.params
    kwargs = dict(probe_frequency=p.get("probe_frequency"),
                  fock_cutoff=int(p.get("fock_cutoff", 18)),
                  settle_time=float(p.get("settle_time", 10e-9)),
                  precession_time=float(p.get("precession_time", 100e-9)),
                  dt=float(p.get("dt", 2e-11)))
    amps = cfg.sweep.values

    points = _sweep_map(lambda i: measure_stark_shift(cfg.device, amps[i],
                                                      **kwargs),
                        len(amps), cfg.workers)
    n_bar = np.array([pt.photon_number for pt in points])
    nu_q = np.array([pt.qubit_frequency for pt in points])
    trace_dev = max(pt.max_trace_deviation for pt in points)

    # polyfit only scales a covariance once there are spare points
    if len(amps) >= 4:
        coef, cov = np.polyfit(n_bar, nu_q, 1, cov=True)
        slope_std = float(np.sqrt(cov[0, 0]))
    else:
        coef = np.polyfit(n_bar, nu_q, 1)
        slope_std = float("nan")
    resid = nu_q - np.polyval(coef, n_bar)
    nu_q0 = device.qubit_frequency(cfg.device.dqd)
    g_eff = device.coupling_at_detuning(cfg.device.coupling, cfg.device.dqd)
    chi = device.dispersive_shift(
        g_eff, nu_q0 - cfg.device.resonator.bare_frequency_nu_r)

    _write_csv(out / "stark.csv",
               "drive_amplitude_hz,photon_number,qubit_frequency_hz",
               [amps, n_bar, nu_q])
    fits = {"photon_number_shift": {
        "slope_hz_per_photon": float(coef[0]),
        "intercept_hz": float(coef[1]),
        "slope_std_hz_per_photon": slope_std,
        "residual_rms_hz": float(np.sqrt(np.mean(resid ** 2))),
    }}
    results = {
        "stark_slope_hz_per_photon": float(coef[0]),
        "stark_intercept_hz": float(coef[1]),
        "two_chi_hz": 2.0 * chi,
        "max_photon_number": float(n_bar.max()),
        "max_trace_deviation": float(trace_dev),
    }
    return ["stark.csv"], fits, results


def _run_readout_trace(cfg, out):
    pipe = _pipeline_from_config(cfg)
    het = pipe.heterodyne
    p_target = float(cfg.params.get("population", 0.5))
    skip = het.filter_delay_samples

    mean_g = pipe.ref_g.mean_iq(skip=skip)
    mean_e = pipe.ref_e.mean_iq(skip=skip)
    rotation = float(np.angle(mean_e - mean_g))
    ref_g_rot = readout.rotate_reference_phase(pipe.ref_g, rotation)
    ref_e_rot = readout.rotate_reference_phase(pipe.ref_e, rotation)

    rng_meas, rng_trace = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(cfg.seed).spawn(2))
    noiseless = readout.synthesize_readout_waveform(
        _blend_trajectory(pipe, p_target), het)
    midpoint = readout.estimate_population(noiseless, pipe.ref_g, pipe.ref_e,
                                           het)
    p_est, est_err = measure_population(pipe, p_target, rng=rng_meas,
                                        averages=cfg.averages)
    mix_trace = readout.rotate_reference_phase(
        readout.synthesize_readout_waveform(
            _blend_trajectory(pipe, p_target), het,
            noise=pipe.noise, rng=rng_trace),
        rotation)

    readout.iq_trace_to_csv(ref_g_rot, out / "iq_ground.csv")
    readout.iq_trace_to_csv(ref_e_rot, out / "iq_excited.csv")
    readout.iq_trace_to_csv(mix_trace, out / "iq_mixture.csv")

    fits = {"population_estimate": {
        "method": midpoint.method,
        "target_population": p_target,
        "noiseless_estimate": midpoint.p_e,
        "noisy_estimate": p_est,
        "noisy_stderr": est_err,
    }}
    results = {
        "iq_separation": float(abs(mean_e - mean_g)),
        "rotation_phase_rad": rotation,
        "midpoint_noiseless": float(midpoint.p_e),
        "population_estimate": float(p_est),
        "estimate_stderr": float(est_err),
        "probe_frequency_hz": pipe.probe_frequency,
    }
    return (["iq_ground.csv", "iq_excited.csv", "iq_mixture.csv"],
            fits, results)


def _run_s11(cfg, out):
    res = cfg.device.resonator
    freqs = cfg.sweep.values
    state = cfg.params.get("qubit_state", "bare")
    if state == "bare":
        shift = 0.0
    else:
        nu_q = device.qubit_frequency(cfg.device.dqd)
        g_eff = device.coupling_at_detuning(cfg.device.coupling, cfg.device.dqd)
        chi = device.dispersive_shift(g_eff,
                                      nu_q - res.bare_frequency_nu_r)
        shift = readout.dressed_resonance_shift(state, chi)
    s11 = readout.reflection_spectrum(freqs, res, resonance_shift=shift)
    readout.spectrum_to_csv(freqs, s11, out / "s11.csv")

    fit = fitting.fit_lorentzian(freqs, np.abs(s11) ** 2)
    kappa_tot = 2.0 * abs(fit.params["hwhm"])
    winding = readout.phase_winding(s11)
    results = {
        "kappa_tot_hz": float(kappa_tot),
        "resonance_frequency_hz": float(fit.params["center"]),
        "winding_turns": float(winding / (2.0 * np.pi)),
        "min_abs_s11": float(np.abs(s11).min()),
        "passive": 1.0 if readout.is_passive(s11) else 0.0,
    }
    return ["s11.csv"], {"reflection_dip": fit.to_dict()}, results


_RUNNERS = {
    "spectroscopy": _run_spectroscopy,
    "stark": _run_stark,
    "rabi": _run_rabi,
    "ramsey": _run_ramsey,
    "t1": _run_t1,
    "echo": _run_echo,
    "readout-trace": _run_readout_trace,
    "s11-sweep": _run_s11,
}


# ----------------------------------------------------------- manifest

def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# execution details that cannot change the artifacts: where they land and
# how many threads computed them
_NON_PHYSICS_KEYS = ("output_dir", "workers")


def config_hash(effective):
    """Hash of the effective config, excluding pure execution details."""
    stripped = {k: v for k, v in effective.items()
                if k not in _NON_PHYSICS_KEYS}
    return _sha256_text(_canonical_json(stripped))


def _versions():
    import scipy

    from . import __version__
    return {"package": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__}


@dataclass(frozen=True)
class RunManifest:
    """Provenance record: config hash, seed, versions, artifact digests.

    run_hash covers everything that determines the outputs (config, seed,
    library versions, file digests) and nothing that does not (timestamps,
    output paths), so identical reruns produce identical hashes.
    """
    experiment: str
    config_sha256: str
    seed: int
    versions: dict
    created_at: str
    files: list
    run_hash: str

    @classmethod
    def build(cls, cfg, out_dir, filenames):
        entries = []
        for name in sorted(filenames):
            path = Path(out_dir) / name
            entries.append({"name": name, "sha256": _sha256_file(path),
                            "bytes": path.stat().st_size})
        cfg_hash = config_hash(cfg.effective)
        versions = _versions()
        run_hash = _sha256_text(_canonical_json({
            "config_sha256": cfg_hash,
            "seed": cfg.seed,
            "versions": versions,
            "files": [{"name": e["name"], "sha256": e["sha256"]}
                      for e in entries],
        }))
        return cls(experiment=cfg.experiment, config_sha256=cfg_hash,
                   seed=cfg.seed, versions=versions,
                   created_at=datetime.now(timezone.utc).isoformat(
                       timespec="seconds"),
                   files=entries, run_hash=run_hash)

    def to_dict(self):
        return {"experiment": self.experiment,
                "config_sha256": self.config_sha256, "seed": self.seed,
                "versions": dict(self.versions),
                "created_at": self.created_at,
                "files": [dict(e) for e in self.files],
                "run_hash": self.run_hash}

    def save(self, path):
        _write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        try:
            with open(p) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"run: cannot read manifest {p}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"run: {p} is not valid JSON: {exc}") from exc
        try:
            return cls(experiment=d["experiment"],
                       config_sha256=d["config_sha256"], seed=d["seed"],
                       versions=d["versions"], created_at=d["created_at"],
                       files=d["files"], run_hash=d["run_hash"])
        except KeyError as exc:
            raise ConfigError(f"run: manifest {p} is missing {exc}") from exc


def run_experiment(cfg):
    """Execute one configured experiment end to end; returns the manifest."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, fit_report, results = _RUNNERS[cfg.experiment](cfg, out)
    _write_json(out / "fits.json", fit_report)
    _write_json(out / "results.json", results)
    # the echoed config omits execution details (output_dir, workers) so the
    # artifacts are location and scheduling independent
    _write_json(out / "config.json",
                {k: v for k, v in cfg.effective.items()
                 if k not in _NON_PHYSICS_KEYS})
    files = list(files) + ["fits.json", "results.json", "config.json"]
    manifest = RunManifest.build(cfg, out, files)
    manifest.save(out / "manifest.json")
    return manifest


# ----------------------------------------------------- reference check

@dataclass(frozen=True)
class CheckRow:
    name: str
    expected: float
    actual: float | None
    rtol: float
    atol: float
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class CheckReport:
    rows: list

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def format_table(self):
        lines = [f"{'quantity':<28} {'expected':>14} {'actual':>14} "
                 f"{'tolerance':>18} {'status':>8}"]
        for r in self.rows:
            actual = "missing" if r.actual is None else f"{r.actual:.6e}"
            tol = f"rtol={r.rtol:g}" if r.rtol else f"atol={r.atol:g}"
            status = "pass" if r.passed else "FAIL"
            note = f"  ({r.note})" if r.note and not r.passed else ""
            lines.append(f"{r.name:<28} {r.expected:>14.6e} {actual:>14} "
                         f"{tol:>18} {status:>8}{note}")
        n_fail = sum(not r.passed for r in self.rows)
        lines.append(f"{len(self.rows)} quantities checked, {n_fail} failed")
        return "\n".join(lines)


def compare_to_reference(run, reference_path):
    """Check a run's results.json against expected values with tolerances.

    `run` is a manifest path or a run directory.  The reference file must
    hold a non-empty "quantities" object; an empty or malformed reference
    raises ConfigError rather than passing vacuously.
    """
    run_path = Path(run)
    RunManifest.load(run_path)  # reject runs without a readable manifest
    run_dir = run_path if run_path.is_dir() else run_path.parent
    results_path = run_dir / "results.json"
    if not results_path.exists():
        raise ConfigError(f"run: {results_path} not found")
    with open(results_path) as fh:
        results = json.load(fh)

    try:
        with open(reference_path) as fh:
            ref = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"reference: cannot read {reference_path}: {exc}") \
            from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"reference: {reference_path} is not valid JSON: "
                          f"{exc}") from exc
    if not isinstance(ref, dict) or "quantities" not in ref:
        raise ConfigError('reference: expected an object with a "quantities" '
                          "key")
    quantities = ref["quantities"]
    if not isinstance(quantities, dict) or not quantities:
        raise ConfigError("reference: quantities must be a non-empty object")

    rows = []
    for name in sorted(quantities):
        spec = quantities[name]
        path = f"reference.quantities.{name}"
        if not isinstance(spec, dict) or "expected" not in spec:
            raise ConfigError(f'{path}: expected an object with an "expected" '
                              "value")
        _check_keys(spec, ("expected", "rtol", "atol"), path)
        expected = _as_number(spec["expected"], f"{path}.expected")
        rtol = _as_number(spec.get("rtol", 0.0), f"{path}.rtol", minimum=0.0)
        atol = _as_number(spec.get("atol", 0.0), f"{path}.atol", minimum=0.0)
        if rtol == 0.0 and atol == 0.0:
            raise ConfigError(f"{path}: needs rtol or atol")
        actual = results.get(name)
        if actual is None or isinstance(actual, bool) \
                or not isinstance(actual, (int, float)):
            rows.append(CheckRow(name=name, expected=expected, actual=None,
                                 rtol=rtol, atol=atol, passed=False,
                                 note="missing from results"))
            continue
        ok = abs(float(actual) - expected) <= atol + rtol * abs(expected)
        rows.append(CheckRow(name=name, expected=expected,
                             actual=float(actual), rtol=rtol, atol=atol,
                             passed=bool(ok)))
    return CheckReport(rows=rows)
