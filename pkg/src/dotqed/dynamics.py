"""Time evolution engines: Lindblad master equation, semiclassical cavity
response, steady-state spectroscopy, and Monte-Carlo dephasing under
Ornstein-Uhlenbeck detuning noise.

Unit rules (easy to get wrong, so spelled out): Hamiltonians handed to
`evolve` and the sequence simulators are H/h in ordinary Hz; `lindblad_rhs`
is the one low-level entry point that works in angular units (rad/s), and
CollapseChannel rates are angular rates 1/s.  A relaxation channel built
from gamma1 in Hz therefore carries rate 2*pi*gamma1, giving
P_e(t) = exp(-2*pi*gamma1*t).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import qops
from .pulses import drag_quadrature_value, envelope_value
from .readout import dressed_resonance_shift

TWO_PI = 2.0 * np.pi

TRACE_TOL = 1e-7
TRUNCATION_POP_TOL = 1e-4
ADAPTIVE_TOL = 1e-9

DEFAULT_DT_PULSE = 1e-12
DEFAULT_DT_IDLE = 1e-11


class TruncationWarning(UserWarning):
    """Cavity population reached the top of the Fock ladder."""


@dataclass(frozen=True)
class CollapseChannel:
    """Lindblad operator with an angular rate (1/s)."""
    operator: np.ndarray
    rate: float
    label: str = ""

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"collapse rate must be >= 0, got {self.rate!r}")


def qubit_channels(dec, space=None):
    """Relaxation sigma_- at 2*pi*gamma1 and dephasing sigma_z at 2*pi*gamma_phi/2.

    The sigma_z rate convention makes gamma2 = gamma1/2 + gamma_phi hold in Hz.
    """
    sm = qops.sigma_minus()
    sz = qops.sigma_z()
    if space is not None:
        sm = qops.qubit_operator(sm, space)
        sz = qops.qubit_operator(sz, space)
    chans = []
    if dec.gamma1 > 0:
        chans.append(CollapseChannel(sm, TWO_PI * dec.gamma1, "qubit relaxation"))
    if dec.gamma_phi > 0:
        chans.append(CollapseChannel(sz, np.pi * dec.gamma_phi, "qubit dephasing"))
    return chans


def cavity_channels(res, space):
    """Photon loss through the port (kappa_ext) and internally (kappa_int)."""
    a = qops.cavity_operator(qops.annihilation(space.fock_cutoff), space)
    chans = [CollapseChannel(a, TWO_PI * res.kappa_ext, "cavity external loss")]
    if res.kappa_int > 0:
        chans.append(CollapseChannel(a, TWO_PI * res.kappa_int, "cavity internal loss"))
    return chans


def lindblad_rhs(rho, h_angular, channels):
    """drho/dt for H in angular units (rad/s) and channels with angular rates.

    -i[H, rho] + sum_k r_k (L rho L^dag - 1/2 {L^dag L, rho})
    """
    out = -1j * (h_angular @ rho - rho @ h_angular)
    for ch in channels:
        l_op = ch.operator
        ldl = l_op.conj().T @ l_op
        out = out + ch.rate * (l_op @ rho @ l_op.conj().T
                               - 0.5 * (ldl @ rho + rho @ ldl))
    return out


@dataclass(frozen=True)
class SimulationGrid:
    """Uniform output grid; dt is an upper bound on the actual step."""
    t_start: float
    t_end: float
    dt: float
    method: str = "rk4"      # "rk4" (fixed step) or "rk45" (adaptive)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def times(self):
        n = max(1, int(np.ceil((self.t_end - self.t_start) / self.dt - 1e-9)))
        return np.linspace(self.t_start, self.t_end, n + 1)


@dataclass
class EvolveDiagnostics:
    max_trace_deviation: float = 0.0
    max_hermiticity_defect: float = 0.0
    min_eigenvalue: float = 0.0
    max_top_fock_population: float = 0.0


@dataclass
class Trajectory:
    """Observables sampled on the integration grid."""
    times: np.ndarray
    qubit_pe: np.ndarray
    cavity_alpha: np.ndarray | None = None
    pe_stderr: np.ndarray | None = None
    expectations: dict | None = None
    states: np.ndarray | None = None
    diagnostics: EvolveDiagnostics | None = None

    def validate_populations(self, tol=1e-6):
        pe = np.asarray(self.qubit_pe)
        if pe.min() < -tol or pe.max() > 1.0 + tol:
            raise ValueError(
                f"populations leave [0, 1]: min {pe.min():.3e}, max {pe.max():.3e}")
        return True


def _rk4_step(rho, t, dt, rhs):
    k1 = rhs(t, rho)
    k2 = rhs(t + 0.5 * dt, rho + (0.5 * dt) * k1)
    k3 = rhs(t + 0.5 * dt, rho + (0.5 * dt) * k2)
    k4 = rhs(t + dt, rho + dt * k3)
    return rho + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _observable_row(rho, space, ops):
    if space is not None:
        n = space.fock_cutoff
        diag = np.real(np.diag(rho))
        pe = float(diag[n:].sum())
        top = float(diag[n - 2] + diag[n - 1] + diag[2 * n - 2] + diag[2 * n - 1])
    else:
        pe = float(np.real(rho[1, 1]))
        top = 0.0
    vals = [complex(np.einsum("ij,ji->", op, rho)) for op in ops]
    return pe, top, vals


def evolve(rho0, h_of_t, channels, grid, space=None, e_ops=None,
           store_states=False):
    """Integrate the Lindblad equation; H/h supplied in Hz.

    h_of_t may be a constant matrix or a callable t -> matrix.  Returns a
    Trajectory sampled at every grid point with the qubit excited population
    (reduced over the cavity when `space` is given), <a> when `space` is
    given, optional extra expectations (e_ops: name -> operator), and
    numerical-hygiene diagnostics.  Warns (TruncationWarning) when the top
    two Fock levels accumulate more than 1e-4 population; warns when the
    trace drifts beyond 1e-7.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    qops.validate_density_matrix(rho0, "initial state")
    dim = rho0.shape[0]
    if space is not None and dim != space.dim:
        raise ValueError(f"state dim {dim} does not match {space!r}")

    h_static = None if callable(h_of_t) else np.asarray(h_of_t, dtype=complex) * TWO_PI
    h_call = h_of_t if callable(h_of_t) else None
    chans = []
    for c in channels:
        l_op = np.asarray(c.operator, dtype=complex)
        if l_op.shape != (dim, dim):
            raise ValueError(f"channel {c.label!r} has shape {l_op.shape}, "
                             f"state is {dim}x{dim}")
        chans.append((l_op, l_op.conj().T, c.rate))
    ldl_half = [0.5 * (ld @ l) for l, ld, _ in chans]

    def rhs(t, rho):
        h = h_static if h_call is None else TWO_PI * np.asarray(h_call(t), dtype=complex)
        out = -1j * (h @ rho - rho @ h)
        for (l_op, l_dag, rate), hld in zip(chans, ldl_half):
            out = out + rate * (l_op @ rho @ l_dag - (hld @ rho + rho @ hld))
        return out

    times = grid.times
    n_steps = len(times) - 1
    e_ops = e_ops or {}
    op_names = list(e_ops)
    op_mats = [np.asarray(e_ops[k], dtype=complex) for k in op_names]
    if space is not None:
        alpha_op = qops.cavity_operator(qops.annihilation(space.fock_cutoff), space)
        op_mats = [alpha_op] + op_mats

    pe = np.empty(len(times))
    exp_vals = np.empty((len(op_mats), len(times)), dtype=complex)
    states = np.empty((len(times), dim, dim), dtype=complex) if store_states else None
    diag = EvolveDiagnostics(min_eigenvalue=np.inf)
    eig_stride = max(1, n_steps // 128)
    max_top = 0.0

    if grid.method == "rk4":
        rho_iter = _rk4_state_iter(rho0, times, rhs)
    else:
        rho_iter = _adaptive_state_iter(rho0, times, rhs, dim)

    for k, rho in enumerate(rho_iter):
        pe_k, top_k, vals = _observable_row(rho, space, op_mats)
        pe[k] = pe_k
        max_top = max(max_top, top_k)
        if op_mats:
            exp_vals[:, k] = vals
        if states is not None:
            states[k] = rho
        tr = np.trace(rho)
        diag.max_trace_deviation = max(diag.max_trace_deviation,
                                       float(abs(tr - 1.0)))
        diag.max_hermiticity_defect = max(
            diag.max_hermiticity_defect, float(np.max(np.abs(rho - rho.conj().T))))
        if k % eig_stride == 0 or k == n_steps:
            w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
            diag.min_eigenvalue = min(diag.min_eigenvalue, float(w.min()))

    diag.max_top_fock_population = max_top
    if diag.max_trace_deviation > TRACE_TOL:
        warnings.warn(
            f"trace drifted by {diag.max_trace_deviation:.2e} (> {TRACE_TOL:g}); "
            "reduce dt", RuntimeWarning, stacklevel=2)
    if space is not None and max_top > TRUNCATION_POP_TOL:
        warnings.warn(
            f"top two Fock levels reached population {max_top:.2e} "
            f"(> {TRUNCATION_POP_TOL:g}); raise the cutoff",
            TruncationWarning, stacklevel=2)

    alpha = None
    extra = None
    if space is not None:
        alpha = exp_vals[0]
        extra = {name: exp_vals[1 + i] for i, name in enumerate(op_names)} or None
    elif op_names:
        extra = {name: exp_vals[i] for i, name in enumerate(op_names)}
    return Trajectory(times=times, qubit_pe=pe, cavity_alpha=alpha,
                      expectations=extra, states=states, diagnostics=diag)


def _rk4_state_iter(rho0, times, rhs):
    rho = rho0.copy()
    yield rho
    for k in range(len(times) - 1):
        rho = _rk4_step(rho, times[k], times[k + 1] - times[k], rhs)
        yield rho


def _adaptive_state_iter(rho0, times, rhs, dim):
    def flat_rhs(t, y):
        return rhs(t, y.reshape(dim, dim)).ravel()

    sol = solve_ivp(flat_rhs, (times[0], times[-1]), rho0.ravel().astype(complex),
                    t_eval=times, method="RK45",
                    rtol=ADAPTIVE_TOL, atol=ADAPTIVE_TOL)
    if not sol.success:
        raise RuntimeError(f"adaptive integration failed: {sol.message}")
    for k in range(sol.y.shape[1]):
        yield sol.y[:, k].reshape(dim, dim)


def liouvillian(h_hz, channels):
    """Matrix of the Lindblad generator acting on row-major vectorized states.

    H is supplied in Hz, channels carry angular rates; the result L satisfies
    vec(drho/dt) = L @ vec(rho) with vec = ndarray.ravel() (C order), using
    vec(A rho B) = (A kron B^T) vec(rho).
    """
    h = TWO_PI * np.asarray(h_hz, dtype=complex)
    d = h.shape[0]
    ident = np.eye(d)
    gen = -1j * (np.kron(h, ident) - np.kron(ident, h.T))
    for ch in channels:
        l_op = np.asarray(ch.operator, dtype=complex)
        ldl = l_op.conj().T @ l_op
        gen = gen + ch.rate * (np.kron(l_op, l_op.conj())
                               - 0.5 * (np.kron(ldl, ident)
                                        + np.kron(ident, ldl.T)))
    return gen


def steady_state(h_hz, channels, residual_tol=1e-6):
    """Unique stationary state of the Lindblad generator; H in Hz.

    Solves L rho = 0 with the trace condition replacing one row.  Raises
    when the linear solve fails or the residual is large, both symptoms of
    a degenerate steady-state manifold (e.g. an undamped conserved quantity).
    """
    gen = liouvillian(h_hz, channels)
    d2 = gen.shape[0]
    d = int(round(np.sqrt(d2)))
    a_mat = gen.copy()
    a_mat[0, :] = 0.0
    a_mat[0, ::d + 1] = 1.0       # trace row over vec indices i*d + i
    b = np.zeros(d2, dtype=complex)
    b[0] = 1.0
    try:
        x = np.linalg.solve(a_mat, b)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("steady state is not unique or the generator is "
                           f"singular: {exc}") from None
    scale = float(np.max(np.abs(gen))) or 1.0
    residual = float(np.max(np.abs(gen @ x))) / scale
    if residual > residual_tol:
        raise RuntimeError(f"steady-state residual {residual:.2e} exceeds "
                           f"{residual_tol:g}; generator likely has a "
                           "degenerate kernel")
    rho = x.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    return rho


# ----------------------------------------------------- semiclassical cavity

_STATE_PE = {"g": 0.0, "e": 1.0, "mixed": 0.5}


def semiclassical_steady_state(qubit_state, res, chi, probe_frequency,
                               probe_amplitude=1.0):
    """alpha_ss = -i sqrt(2 pi kappa_ext) a_in / (i 2 pi Delta + pi kappa_tot)."""
    shift = dressed_resonance_shift(qubit_state, chi)
    detuning = res.bare_frequency_nu_r + shift - probe_frequency
    return (-1j * np.sqrt(TWO_PI * res.kappa_ext) * probe_amplitude
            / (1j * TWO_PI * detuning + np.pi * res.kappa_tot))


def semiclassical_cavity_response(qubit_state, res, chi, probe_frequency,
                                  probe_amplitude, grid, alpha0=0.0):
    """Integrate the driven-cavity field conditioned on a fixed qubit state.

    d alpha/dt = -[i 2 pi (nu_r + shift - nu_p) + pi kappa_tot] alpha
                 - i sqrt(2 pi kappa_ext) a_in(t)

    with shift = -chi, +chi, 0 for g, e, mixed.  probe_amplitude may be a
    constant or a callable a_in(t), normalized so the steady state matches
    semiclassical_steady_state.
    """
    if qubit_state not in _STATE_PE:
        raise ValueError(f"unknown qubit state {qubit_state!r}")
    shift = dressed_resonance_shift(qubit_state, chi)
    detuning = res.bare_frequency_nu_r + shift - probe_frequency
    pole = 1j * TWO_PI * detuning + np.pi * res.kappa_tot
    coupling = -1j * np.sqrt(TWO_PI * res.kappa_ext)
    a_in = probe_amplitude if callable(probe_amplitude) else (lambda t: probe_amplitude)

    times = grid.times
    alpha = np.empty(len(times), dtype=complex)
    a = complex(alpha0)
    alpha[0] = a

    def f(t, x):
        return -pole * x + coupling * a_in(t)

    for k in range(1, len(times)):
        t = times[k - 1]
        dt = times[k] - t
        k1 = f(t, a)
        k2 = f(t + 0.5 * dt, a + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, a + 0.5 * dt * k2)
        k4 = f(t + dt, a + dt * k3)
        a = a + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        alpha[k] = a

    pe = np.full(len(times), _STATE_PE[qubit_state])
    return Trajectory(times=times, qubit_pe=pe, cavity_alpha=alpha)


# -------------------------------------------------- steady-state spectroscopy

def steady_state_spectroscopy(detunings, rabi_amplitude, dec):
    """Saturation line shape of the continuously driven qubit.

    P_e(Delta) = s / (2 (1 + (Delta/gamma2)^2 + s)) with the saturation
    parameter s = Omega^2 / (gamma1 gamma2).  All inputs in Hz; the 2 pi
    factors cancel inside both ratios.
    """
    if dec.gamma1 <= 0 or dec.gamma2 <= 0:
        raise ValueError("spectroscopy needs gamma1 > 0 and gamma2 > 0")
    detunings = np.asarray(detunings, dtype=float)
    s = rabi_amplitude ** 2 / (dec.gamma1 * dec.gamma2)
    return s / (2.0 * (1.0 + (detunings / dec.gamma2) ** 2 + s))


def power_broadened_hwhm(rabi_amplitude, dec):
    """HWHM (Hz) = gamma2 sqrt(1 + s); reduces to gamma2 at vanishing power."""
    if dec.gamma1 <= 0 or dec.gamma2 <= 0:
        raise ValueError("linewidth needs gamma1 > 0 and gamma2 > 0")
    s = rabi_amplitude ** 2 / (dec.gamma1 * dec.gamma2)
    return dec.gamma2 * float(np.sqrt(1.0 + s))


# ------------------------------------------------------------------ OU noise

@dataclass(frozen=True)
class OuNoiseModel:
    """Stationary Gaussian detuning noise with autocovariance
    sigma_delta^2 exp(-|dt| / tau_c)."""
    sigma_delta: float        # Hz, standard deviation
    tau_c: float              # s, correlation time
    n_realizations: int = 1000

    def __post_init__(self):
        if self.sigma_delta < 0:
            raise ValueError("sigma_delta must be >= 0")
        if self.tau_c <= 0:
            raise ValueError("tau_c must be positive")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_ou_detuning(model, grid, rng=None, n_realizations=None):
    """Exact-discretization OU paths at the grid times, shape (n, n_times).

    x_{k+1} = x_k e^(-dt/tau) + sigma sqrt(1 - e^(-2 dt/tau)) xi_k, with the
    first sample drawn from the stationary distribution.  The update uses the
    exact transition density, so non-uniform spacing costs nothing.
    """
    times = grid.times if hasattr(grid, "times") else np.asarray(grid, dtype=float)
    rng = _as_rng(rng)
    n = model.n_realizations if n_realizations is None else int(n_realizations)
    out = np.empty((n, len(times)))
    out[:, 0] = model.sigma_delta * rng.standard_normal(n)
    if len(times) > 1:
        decay = np.exp(-np.diff(times) / model.tau_c)
        kick = model.sigma_delta * np.sqrt(np.maximum(0.0, 1.0 - decay ** 2))
        noise = rng.standard_normal((n, len(times) - 1))
        for k in range(len(times) - 1):
            out[:, k + 1] = out[:, k] * decay[k] + kick[k] * noise[:, k]
    return out


# ------------------------------------------------------- sequence simulation

@dataclass(frozen=True)
class _CompiledSequence:
    """Per-step drive tables for the two-level stepper.

    u1/u2/u4 hold pi*(h_x - i h_y) in rad/s at each step's start, midpoint,
    and end, evaluated one-sidedly per segment: pulse supports are truncated,
    hence discontinuous at their edges, but the edges always coincide with
    step boundaries, so every RK4 stage sees a smooth integrand.
    """
    times: np.ndarray
    dts: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u4: np.ndarray
    detuning0: float


def _field_table(entries, t):
    hx = np.zeros(len(t))
    hy = np.zeros(len(t))
    for entry in entries:
        env = envelope_value(entry.pulse, t)
        quad = drag_quadrature_value(entry.pulse, t) \
            if getattr(entry.pulse, "drag_beta", 0.0) else 0.0
        c = np.cos(entry.carrier_phase)
        s = np.sin(entry.carrier_phase)
        hx += env * c - quad * s
        hy += env * s + quad * c
    return np.pi * (hx - 1j * hy)


def compile_sequence(sequence, qubit_frequency=0.0, dt_pulse=DEFAULT_DT_PULSE,
                     dt_idle=DEFAULT_DT_IDLE):
    """Build the step grid and drive tables for a pulse sequence.

    The grid runs from t = 0 to the readout-window start, split at every
    pulse-support edge; segments under a pulse use dt_pulse, idle gaps use
    dt_idle.  All entries must share one carrier; the frame rotates at that
    carrier, so the static z coefficient is qubit_frequency - carrier.
    """
    carriers = sequence.carrier_frequencies
    if len(carriers) > 1:
        raise ValueError("sequence mixes carrier frequencies; the two-level "
                         "simulator supports a single carrier")
    carrier = carriers[0] if carriers else qubit_frequency
    detuning0 = qubit_frequency - carrier

    t_end = sequence.readout_window.start
    if t_end <= 0.0:
        times = np.array([0.0, 0.0])
        zero = np.zeros(1, dtype=complex)
        return _CompiledSequence(times, np.zeros(1), zero, zero, zero, detuning0)

    edges = {0.0, t_end}
    for entry in sequence.entries:
        for edge in (entry.pulse.start, entry.pulse.end):
            if 0.0 < edge < t_end:
                edges.add(edge)
    edges = sorted(edges)

    all_times = [np.array([0.0])]
    u1_parts, u2_parts, u4_parts = [], [], []
    for a, b in zip(edges, edges[1:]):
        mid = 0.5 * (a + b)
        active = [e for e in sequence.entries
                  if e.pulse.start <= mid <= e.pulse.end]
        dt = dt_pulse if active else dt_idle
        n = max(1, int(np.ceil((b - a) / dt - 1e-9)))
        seg = np.linspace(a, b, n + 1)
        all_times.append(seg[1:])
        u1_parts.append(_field_table(active, seg[:-1]))
        u2_parts.append(_field_table(active, 0.5 * (seg[:-1] + seg[1:])))
        u4_parts.append(_field_table(active, seg[1:]))

    times = np.concatenate(all_times)
    return _CompiledSequence(times=times, dts=np.diff(times),
                             u1=np.concatenate(u1_parts),
                             u2=np.concatenate(u2_parts),
                             u4=np.concatenate(u4_parts),
                             detuning0=detuning0)


def _evolve_two_level(compiled, dec, deltas=None, n_batch=1):
    """Batched fixed-RK4 integration of 2x2 Lindblad states.

    Works on matrix components (p_g, rho_01, p_e) with rho_10 = conj(rho_01),
    so Hermiticity is exact and the trace is preserved to rounding.  deltas
    (n_batch, n_steps) are per-step z detunings in Hz, held constant within
    each step.  Returns (mean population, sem, max trace deviation).
    """
    g1 = TWO_PI * dec.gamma1
    decay = 0.5 * g1 + TWO_PI * dec.gamma_phi

    a = np.ones(n_batch)                       # ground population
    b = np.zeros(n_batch, dtype=complex)       # rho_01
    d = np.zeros(n_batch)                      # excited population
    n_out = len(compiled.times)
    pe_mean = np.empty(n_out)
    pe_sem = np.zeros(n_out)
    pe_mean[0] = 0.0
    root_n = np.sqrt(n_batch) if n_batch > 1 else 1.0
    trace_dev = 0.0

    def stage(u, w, av, bv, dv):
        ub = u * np.conj(bv)
        flow = 2.0 * ub.imag            # population flow driven by the pulse
        da = flow + g1 * dv
        dd = -flow - g1 * dv
        db = -1j * (u * (dv - av) - 2.0 * w * bv) - decay * bv
        return da, db, dd

    for k in range(n_out - 1):
        dt = compiled.dts[k]
        if deltas is not None:
            w = np.pi * (compiled.detuning0 + deltas[:, k])
        else:
            w = np.pi * compiled.detuning0
        u1, u2, u4 = compiled.u1[k], compiled.u2[k], compiled.u4[k]

        da1, db1, dd1 = stage(u1, w, a, b, d)
        da2, db2, dd2 = stage(u2, w, a + 0.5 * dt * da1, b + 0.5 * dt * db1,
                              d + 0.5 * dt * dd1)
        da3, db3, dd3 = stage(u2, w, a + 0.5 * dt * da2, b + 0.5 * dt * db2,
                              d + 0.5 * dt * dd2)
        da4, db4, dd4 = stage(u4, w, a + dt * da3, b + dt * db3, d + dt * dd3)
        a = a + (dt / 6.0) * (da1 + 2.0 * (da2 + da3) + da4)
        b = b + (dt / 6.0) * (db1 + 2.0 * (db2 + db3) + db4)
        d = d + (dt / 6.0) * (dd1 + 2.0 * (dd2 + dd3) + dd4)

        pe_mean[k + 1] = d.mean()
        if n_batch > 1:
            pe_sem[k + 1] = d.std(ddof=1) / root_n
        if k % 256 == 0:
            trace_dev = max(trace_dev, float(np.abs(a + d - 1.0).max()))

    trace_dev = max(trace_dev, float(np.abs(a + d - 1.0).max()))
    return pe_mean, pe_sem, trace_dev


def simulate_sequence(sequence, dec, *, qubit_frequency=0.0, extra_detuning=0.0,
                      dt_pulse=DEFAULT_DT_PULSE, dt_idle=DEFAULT_DT_IDLE):
    """Deterministic two-level simulation of a control sequence.

    Evolves |g><g| through the pulses up to the readout-window start, in the
    frame rotating at the sequence carrier.  extra_detuning adds a constant
    offset to the qubit frequency (useful for fringe scans).  The returned
    Trajectory's final sample is the population handed to the readout chain.
    """
    compiled = compile_sequence(sequence, qubit_frequency, dt_pulse, dt_idle)
    deltas = None
    if extra_detuning:
        deltas = np.full((1, len(compiled.dts)), float(extra_detuning))
    pe, _, trace_dev = _evolve_two_level(compiled, dec, deltas=deltas, n_batch=1)
    diag = EvolveDiagnostics(max_trace_deviation=trace_dev)
    return Trajectory(times=compiled.times, qubit_pe=pe, diagnostics=diag)


def monte_carlo_dephasing(sequence, noise, dec, n_realizations=None, *,
                          qubit_frequency=0.0, rng=None,
                          dt_pulse=DEFAULT_DT_PULSE, dt_idle=DEFAULT_DT_IDLE):
    """Average the sequence simulation over OU detuning realizations.

    Every realization rides its own noise path, sampled once per step and
    held across it (the step grids resolve tau_c in any regime we simulate).
    Returns the mean population with per-point standard error.  With
    sigma_delta = 0 this reduces exactly to simulate_sequence: same stepper,
    same grid, noise term identically zero.
    """
    n = noise.n_realizations if n_realizations is None else int(n_realizations)
    compiled = compile_sequence(sequence, qubit_frequency, dt_pulse, dt_idle)

    if noise.sigma_delta == 0.0:
        pe, _, trace_dev = _evolve_two_level(compiled, dec, n_batch=1)
        sem = np.zeros_like(pe)
    else:
        deltas = sample_ou_detuning(noise, compiled.times[:-1], rng=_as_rng(rng),
                                    n_realizations=n)
        pe, sem, trace_dev = _evolve_two_level(compiled, dec, deltas=deltas,
                                               n_batch=n)
    diag = EvolveDiagnostics(max_trace_deviation=trace_dev)
    return Trajectory(times=compiled.times, qubit_pe=pe, pe_stderr=sem,
                      diagnostics=diag)


def trajectory_to_csv(traj, path):
    """Write time, P_e, Re<a>, Im<a> (and stderr when present) columns."""
    alpha = traj.cavity_alpha
    if alpha is None:
        alpha = np.zeros(len(traj.times), dtype=complex)
    cols = [traj.times, traj.qubit_pe, np.real(alpha), np.imag(alpha)]
    header = "time_s,p_e,re_alpha,im_alpha"
    if traj.pe_stderr is not None:
        cols.append(traj.pe_stderr)
        header += ",p_e_stderr"
    np.savetxt(path, np.column_stack(cols), fmt="%.12e", delimiter=",",
               header=header, comments="")
    return path
