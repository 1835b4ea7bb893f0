"""Control primitives: Raman pi pulses, laser-cavity transfers and the STIRAP wire exchange.

Every primitive is a :class:`Primitive`: pulses and cavity couplings with
times measured from the primitive start, plus the deterministic per-level
phases it imprints. The executor removes those phases with a virtual frame
update after the pulses, so a calibrated primitive acts as a clean level
permutation up to its residual infidelity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .controls import CavityCoupling, Envelope, PulseSpec
from .dynamics import (
    TWO_PI,
    FrameConfig,
    Hamiltonian,
    NoiseParams,
    Register,
    _segments,
    _solve,
    collapse_operators,
    evolve_lindblad,
    evolve_unitary,
    hamiltonian_model,
    liouvillian,
)
from .hilbert import (
    ATOM_DIM,
    CAVITY,
    EXCITED_LEVELS,
    LEVEL_INDEX,
    CompositeState,
    LevelScheme,
    Space,
    apply_local,
    partial_trace,
    product_state,
)

# vacuum Rabi frequency of the D = 50 um, L = 30 cm hour-glass cavity (MHz)
DEFAULT_G = 170 / (50 * math.sqrt(30))

RAMAN_OMEGA = 10.0
RAMAN_DETUNING = 1000.0
CAVITY_TRANSFER_DETUNING_RATIO = 30.0
STIRAP_OMEGA = 2.0
STIRAP_DURATION = 50.0
STIRAP_OVERLAP = 0.5
STIRAP_SAMPLES = 200


class CalibrationError(RuntimeError):
    pass


class AdiabaticityError(RuntimeError):
    def __init__(self, what: str, peak: float, t: float):
        super().__init__(f"{what} peaked at {peak:.3g} (t = {t:.4g} us), above threshold")
        self.peak = peak
        self.t = t


@dataclass(frozen=True)
class Primitive:
    """A schedulable control block acting on one atom or on a cavity-coupled pair."""

    name: str
    pulses: tuple
    couplings: tuple = ()
    duration: float = 0.0
    phase_correction: tuple = ()  # ((atom, ((level, phase), ...)), ...)
    cavity_phase: float = 0.0  # frame phase per photon
    pre_correction: tuple = ()  # same layout as phase_correction, applied before the pulses
    frame: FrameConfig = field(default_factory=FrameConfig, compare=False)
    cavity_pre_phase: float = 0.0  # frame phase per photon applied before the pulses

    @property
    def atoms(self) -> tuple:
        return tuple(sorted({p.atom for p in self.pulses} | {c.atom for c in self.couplings}))

    @property
    def uses_cavity(self) -> bool:
        return bool(self.couplings)

    def retarget(self, mapping: dict) -> "Primitive":
        """Copy with atom indices renamed through ``mapping``."""
        pulses = tuple(p.on_atom(mapping.get(p.atom, p.atom)) for p in self.pulses)
        couplings = tuple(CavityCoupling(mapping.get(c.atom, c.atom), c.g, c.legs, c.detuning)
                          for c in self.couplings)
        corr = tuple((mapping.get(a, a), ph) for a, ph in self.phase_correction)
        pre = tuple((mapping.get(a, a), ph) for a, ph in self.pre_correction)
        return Primitive(self.name, pulses, couplings, self.duration, corr, self.cavity_phase, pre, self.frame,
                         self.cavity_pre_phase)

    def inverse(self) -> "Primitive":
        """Primitive undoing this one.

        Negating every detuning and mirroring the envelopes in time turns the
        rotating-frame Hamiltonian into ``-H(T - t)`` up to a pi phase on the
        excited levels. That phase and the frame corrections are undone
        virtually, so the result is the exact inverse in the noise-free limit.
        """
        T = self.duration
        pulses = tuple(PulseSpec(p.atom, p.legs, p.omega_peak,
                                 Envelope(p.envelope.shape, p.envelope.duration, T - p.envelope.center),
                                 tuple(-d for d in p.detuning), p.phase) for p in self.pulses)
        couplings = tuple(CavityCoupling(c.atom, c.g, c.legs, tuple(-d for d in c.detuning))
                          for c in self.couplings)
        frame = replace(self.frame, two_photon_detunings={k: -v for k, v in self.frame.two_photon_detunings.items()})
        driven = set(self.atoms)

        def undo(corr):
            phases = {a: {lv: -ph for lv, ph in levels} for a, levels in corr}
            for a in driven:
                for lv in EXCITED_LEVELS:
                    phases.setdefault(a, {})[lv] = phases.get(a, {}).get(lv, 0.0) + math.pi
            return tuple((a, tuple(sorted(v.items()))) for a, v in sorted(phases.items()))

        name = self.name[:-len(" inverse")] if self.name.endswith(" inverse") else self.name + " inverse"
        return Primitive(name, pulses, couplings, T, undo(self.pre_correction), 0.0,
                         undo(self.phase_correction), frame, -self.cavity_phase)

    def correction_diag(self, atom: int, before: bool = False) -> Optional[np.ndarray]:
        for a, phases in (self.pre_correction if before else self.phase_correction):
            if a == atom:
                diag = np.ones(ATOM_DIM, dtype=complex)
                for lv, ph in phases:
                    diag[LEVEL_INDEX[lv]] = np.exp(1j * ph)
                return diag
        return None


# ---------------------------------------------------------------------------
# execution


def _rotate_cavity(data: np.ndarray, phase: float, space: Space) -> np.ndarray:
    diag = np.exp(1j * phase * np.arange(space.cavity_dim))
    return apply_local(data, np.diag(diag), [space.n_atoms], space.dims)


def _pure_cluster(psi: np.ndarray, dims: tuple, axes: list, h: Hamiltonian, t0: float, t1: float,
                  tol: float) -> np.ndarray:
    tensor = np.moveaxis(psi.reshape(dims), axes, range(len(axes)))
    shape = tensor.shape
    dsub = int(np.prod(shape[:len(axes)]))
    out = evolve_unitary(tensor.reshape(dsub, -1), h, t0, t1, tol)
    return np.moveaxis(out.reshape(shape), range(len(axes)), axes).reshape(-1)


def _local_superop(h: Hamiltonian, jumps, t0: float, t1: float, tol: float) -> np.ndarray:
    d = h.dim
    s = np.eye(d * d, dtype=complex)
    for a, b in _segments(h, t0, t1):
        if h.constant_on(a, b):
            s = scipy.linalg.expm(liouvillian(h((a + b) / 2), jumps) * (b - a)) @ s
        else:
            s = _solve(lambda t, v: (liouvillian(h(t), jumps) @ v.reshape(d * d, -1)).reshape(-1),
                       s.reshape(-1), a, b, tol).reshape(d * d, d * d)
    return s


def _apply_superop(rho: np.ndarray, sup: np.ndarray, axis: int, dims: tuple) -> np.ndarray:
    n = len(dims)
    t = np.moveaxis(rho.reshape(dims + dims), [axis, n + axis], [0, 1])
    shape = t.shape
    out = (sup @ t.reshape(dims[axis] ** 2, -1)).reshape(shape)
    return np.moveaxis(out, [0, 1], [axis, n + axis]).reshape(rho.shape)


def _excited_projector(space: Space) -> np.ndarray:
    diag = np.zeros(space.dims)
    for k in range(space.n_atoms):
        idx = [slice(None)] * len(space.dims)
        for ex in EXCITED_LEVELS:
            idx[k] = LEVEL_INDEX[ex]
            diag[tuple(idx)] = 1.0
    return diag.reshape(-1)


def _observe(state_data: np.ndarray, space: Space, exc_diag: np.ndarray) -> tuple[float, float, float]:
    pops = np.abs(state_data) ** 2 if state_data.ndim == 1 else np.real(np.diag(state_data))
    cav = pops.reshape(-1, space.cavity_dim).sum(axis=0)
    return float(pops @ exc_diag), float(cav @ np.arange(space.cavity_dim)), float(cav[2:].sum())


def run_primitive(state: CompositeState, prim: Primitive, noise: Optional[NoiseParams] = None,
                  tol: float = 1e-10, samples: int = 0, scheme: Optional[LevelScheme] = None):
    """Execute a primitive on a register state.

    Returns the new state, or ``(state, trace)`` when ``samples > 0``; the
    trace holds sampled times, total excited population, mean photon number
    and population above one photon.
    """
    space = state.space
    dims = space.dims
    noisy = noise is not None and not noise.is_zero
    for a in prim.atoms:
        space.site_index(a)
    data = state.data.copy()
    if noisy and data.ndim == 1:
        data = np.outer(data, data.conj())
    for atom, _ in prim.pre_correction:
        data = apply_local(data, np.diag(prim.correction_diag(atom, before=True)), [atom], dims)
    if prim.cavity_pre_phase:
        data = _rotate_cavity(data, prim.cavity_pre_phase, space)
    if prim.duration <= 0:
        grid = [0.0]
    else:
        grid = np.linspace(0.0, prim.duration, max(samples, 1) + 1)
    exc_diag = _excited_projector(space) if samples else None
    trace = {"t": [], "excited": [], "photons": [], "leak": []}

    if samples:
        e, n, lk = _observe(data, space, exc_diag)
        trace["t"].append(0.0)
        trace["excited"].append(e)
        trace["photons"].append(n)
        trace["leak"].append(lk)

    if noisy:
        full = Register.from_space(space)
        if prim.uses_cavity:
            if space.dim > 256:
                raise ValueError("open-system wire simulation is limited to two atoms")
            h_full = hamiltonian_model(full, prim.pulses, prim.couplings, prim.frame, scheme)
        else:
            local_h = {}
            for k in range(space.n_atoms):
                reg = Register.cluster([k])
                local_h[k] = (hamiltonian_model(reg, [p for p in prim.pulses if p.atom == k], (), prim.frame, scheme),
                              collapse_operators(noise, reg))
            cav_reg = Register(dims=(space.cavity_dim,), atom_axes=(), cavity_axis=0)
            cav_h = Hamiltonian(np.zeros((space.cavity_dim,) * 2))
            cav_jumps = collapse_operators(noise, cav_reg)
    else:
        clusters = []
        if prim.uses_cavity:
            wire_atoms = sorted({c.atom for c in prim.couplings})
            reg = Register.cluster(wire_atoms, space.cavity_dim)
            h = hamiltonian_model(reg, [p for p in prim.pulses if p.atom in wire_atoms], prim.couplings,
                                  prim.frame, scheme)
            clusters.append((wire_atoms + [space.n_atoms], h))
        else:
            wire_atoms = []
        for k in sorted({p.atom for p in prim.pulses} - set(wire_atoms)):
            reg = Register.cluster([k])
            clusters.append(([k], hamiltonian_model(reg, [p for p in prim.pulses if p.atom == k], (),
                                                    prim.frame, scheme)))

    for t0, t1 in zip(grid[:-1], grid[1:]):
        if noisy:
            if prim.uses_cavity:
                data = evolve_lindblad(data, h_full, noise, t0, t1, tol, register=full)
            else:
                for k, (h, jumps) in local_h.items():
                    data = _apply_superop(data, _local_superop(h, jumps, t0, t1, tol), k, dims)
                if cav_jumps:
                    data = _apply_superop(data, _local_superop(cav_h, cav_jumps, t0, t1, tol), space.n_atoms, dims)
        else:
            for axes, h in clusters:
                data = _pure_cluster(data, dims, axes, h, t0, t1, tol)
        if samples:
            e, n, lk = _observe(data, space, exc_diag)
            trace["t"].append(float(t1))
            trace["excited"].append(e)
            trace["photons"].append(n)
            trace["leak"].append(lk)

    for atom, _ in prim.phase_correction:
        data = apply_local(data, np.diag(prim.correction_diag(atom)), [atom], dims)
    if prim.cavity_phase:
        data = _rotate_cavity(data, prim.cavity_phase, space)
    out = CompositeState(space, data)
    if samples:
        return out, {k: np.asarray(v) for k, v in trace.items()}
    return out


# ---------------------------------------------------------------------------
# single-atom Raman pulses


def _raman_pulse(atom: int, pair: tuple, excited: str, omega: float, detuning: float, two_photon: float,
                 duration: float, phase: float = 0.0, shape: str = "rect") -> PulseSpec:
    g1, g2 = pair
    return PulseSpec(atom, ((g1, excited), (g2, excited)), (omega, omega),
                     Envelope.starting_at(shape, duration), (detuning, detuning + two_photon), phase)


def local_unitary(pulse: PulseSpec, scheme: Optional[LevelScheme] = None) -> np.ndarray:
    """8x8 propagator of a single-atom pulse over its envelope window."""
    reg = Register.cluster([pulse.atom])
    h = hamiltonian_model(reg, [pulse], (), None, scheme)
    env = pulse.envelope
    return evolve_unitary(np.eye(ATOM_DIM, dtype=complex), h, env.start, env.end, 1e-11)


def _excited_for(pair: tuple, scheme: LevelScheme) -> str:
    shared = scheme.shared_excited(*pair)
    if not shared:
        raise ValueError(f"levels {pair} are not Lambda-connected through a common excited level")
    return shared[0]


@lru_cache(maxsize=256)
def _calibrate_raman(pair: tuple, omega: float, detuning: float, angle: float, scheme: LevelScheme,
                     shape: str, target: float) -> tuple:
    excited = _excited_for(pair, scheme)
    g1, g2 = (LEVEL_INDEX[x] for x in pair)
    omega_eff = TWO_PI * omega**2 / (2 * detuning)
    t_guess = angle / omega_eff
    if shape != "rect":
        t_guess *= {"blackman": 1 / 0.42, "gaussian": 1.0}.get(shape, 1.0)
        if shape == "gaussian":
            t_guess /= Envelope("gaussian", 1.0, 0.5).area()
    want = math.sin(angle / 2) ** 2

    def cost(x):
        u = local_unitary(_raman_pulse(0, pair, excited, omega, detuning, x[1], t_guess * x[0], shape=shape), scheme)
        p_to = abs(u[g2, g1]) ** 2
        p_stay = abs(u[g1, g1]) ** 2
        return (p_to - want) ** 2 + (p_stay - (1 - want)) ** 2 + (1 - p_to - p_stay) ** 2

    best = scipy.optimize.minimize(cost, np.array([1.0, 0.0]), method="Nelder-Mead",
                                   options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 400})
    x = best.x
    u = local_unitary(_raman_pulse(0, pair, excited, omega, detuning, x[1], t_guess * x[0], shape=shape), scheme)
    p_to = abs(u[g2, g1]) ** 2
    if abs(p_to - want) > target:
        raise CalibrationError(f"Raman calibration on {pair} reached |transfer - target| = {abs(p_to - want):.2e}")
    return excited, float(t_guess * x[0]), float(x[1])


def calibrate_raman_pi(atom: int, pair: Sequence[str], omega_peak: float = RAMAN_OMEGA,
                       detuning: float = RAMAN_DETUNING, scheme: Optional[LevelScheme] = None,
                       angle: float = math.pi, shape: str = "rect", target: float = 1e-4) -> PulseSpec:
    """Off-resonant Raman pulse rotating ``pair[0]`` into ``pair[1]`` by ``angle``.

    Duration and two-photon detuning are tuned numerically (Nelder-Mead on
    the exact single-atom propagator) to absorb AC-Stark shifts.
    """
    scheme = scheme or LevelScheme()
    pair = tuple(pair)
    if detuning < 10 * omega_peak:
        warnings.warn(f"Raman detuning/Rabi ratio {detuning / omega_peak:.3g} is below 10", stacklevel=2)
    excited, duration, two_photon = _calibrate_raman(pair, float(omega_peak), float(detuning), float(angle),
                                                     scheme, shape, target)
    return _raman_pulse(atom, pair, excited, omega_peak, detuning, two_photon, duration, shape=shape)


def raman_phases(pulse: PulseSpec, scheme: Optional[LevelScheme] = None) -> tuple:
    """Virtual-frame correction making a calibrated pi pulse a phase-free swap of its pair."""
    u = local_unitary(pulse.on_atom(0), scheme)
    (g1, _), (g2, _) = pulse.legs
    i1, i2 = LEVEL_INDEX[g1], LEVEL_INDEX[g2]
    return ((g2, float(-np.angle(u[i2, i1]))), (g1, float(-np.angle(u[i1, i2]))))


def raman_primitive(atom: int, pair: Sequence[str], scheme: Optional[LevelScheme] = None,
                    omega_peak: float = RAMAN_OMEGA, detuning: float = RAMAN_DETUNING) -> Primitive:
    pulse = calibrate_raman_pi(atom, pair, omega_peak, detuning, scheme)
    return Primitive(f"raman {pair[0]}<->{pair[1]}", (pulse,), (), pulse.envelope.duration,
                     ((atom, raman_phases(pulse, scheme)),))


# ---------------------------------------------------------------------------
# laser-cavity two-photon transfer


@lru_cache(maxsize=64)
def _calibrate_cavity_transfer(direction: str, omega: float, detuning: float, g: float,
                               scheme: LevelScheme) -> tuple:
    space = Space(1, 2)
    init = product_state(space, ["a"], 0) if direction == "atom->cavity" else product_state(space, ["c"], 1)
    final = product_state(space, ["c"], 1) if direction == "atom->cavity" else product_state(space, ["a"], 0)
    # differential light shift between |a,0> and |c,1>
    shift_guess = (omega**2 - g**2) / (4 * detuning)
    omega_eff = TWO_PI * omega * g / (2 * detuning)
    t_guess = math.pi / omega_eff

    def build(x):
        return _transfer_primitive(0, direction, omega, detuning, g, x[1], t_guess * x[0])

    def cost(x):
        out = run_primitive(init, build(x), scheme=scheme)
        return 1 - abs(np.vdot(final.data, out.data)) ** 2

    best = scipy.optimize.minimize(cost, np.array([1.0, -shift_guess]), method="Nelder-Mead",
                                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400})
    infid = cost(best.x)
    if infid > 1e-3:
        raise CalibrationError(f"cavity transfer calibration reached infidelity {infid:.2e}")
    prim = build(best.x)
    out = run_primitive(init, prim, scheme=scheme)
    phase = float(np.angle(np.vdot(final.data, out.data)))
    return float(t_guess * best.x[0]), float(best.x[1]), phase


def _transfer_primitive(atom, direction, omega, detuning, g, two_photon, duration, correction=(), cavity_phase=0.0):
    pulse = PulseSpec(atom, (("a", "g"),), omega, Envelope.starting_at("rect", duration), detuning + two_photon)
    coupling = CavityCoupling(atom, g, (("c", "g"),), detuning)
    return Primitive(f"cavity transfer {direction}", (pulse,), (coupling,), duration, correction, cavity_phase)


def cavity_raman_transfer(atom: int, direction: str = "atom->cavity", omega_peak: float = DEFAULT_G,
                          detuning: Optional[float] = None, g: float = DEFAULT_G,
                          scheme: Optional[LevelScheme] = None) -> Primitive:
    """Laser-cavity two-photon pi pulse between ``|a,0>`` and ``|c,1>``.

    ``atom->cavity`` maps ``(x|a> + y|c>)|0>`` to ``|c>(x|1> + y|0>)``;
    ``cavity->atom`` is the inverse map.
    """
    if direction not in ("atom->cavity", "cavity->atom"):
        raise ValueError("direction must be 'atom->cavity' or 'cavity->atom'")
    if g <= 0:
        raise ValueError("cavity coupling must be positive")
    scheme = scheme or LevelScheme()
    if detuning is None:
        detuning = CAVITY_TRANSFER_DETUNING_RATIO * max(omega_peak, g)
    duration, two_photon, phase = _calibrate_cavity_transfer(direction, float(omega_peak), float(detuning),
                                                             float(g), scheme)
    # an emitted photon is rephased in the cavity frame, an absorbed one on level a
    if direction == "atom->cavity":
        return _transfer_primitive(atom, direction, omega_peak, detuning, g, two_photon, duration, (), -phase)
    return _transfer_primitive(atom, direction, omega_peak, detuning, g, two_photon, duration,
                               ((atom, (("a", -phase),)),))


def apply_cavity_transfer(state: CompositeState, prim: Primitive, **kwargs) -> CompositeState:
    """Run a cavity transfer, refusing an occupied cavity for the emitting direction."""
    if prim.name.endswith("atom->cavity") and state.photon_number() > 1e-6:
        raise ValueError("cavity must be in vacuum before an atom->cavity transfer")
    return run_primitive(state, prim, **kwargs)


# ---------------------------------------------------------------------------
# STIRAP exchange through the cavity


def wire_detunings(scheme: LevelScheme, cavity_detuning: float = 0.0) -> dict:
    """Single-photon detunings of every wire leg for a cavity ``cavity_detuning`` MHz off the a-g-c legs.

    The pair is frequency matched on the a-g-c Lambda (channel spacing equal
    to epsilon_ac); the b-h-d legs inherit the level-scheme mismatch.
    """
    dh = scheme.offset("h") - scheme.offset("g")
    return {
        ("sender", ("c", "g")): cavity_detuning,
        ("sender", ("d", "h")): cavity_detuning + dh - (scheme.offset("d") - scheme.offset("c")),
        ("receiver", ("a", "g")): cavity_detuning,
        ("receiver", ("b", "h")): cavity_detuning + dh - scheme.offset("b"),
    }


def fit_local_phases(branches: Sequence[tuple]) -> dict:
    """Least-squares per-(atom, level) phases cancelling branch phases.

    ``branches`` holds ``(((atom, level), ...), phase)``; a global phase is
    left free. Returns ``{(atom, level): correction}``.
    """
    keys = sorted({k for levels, _ in branches for k in levels})
    if not keys:
        return {}
    a = np.zeros((len(branches), len(keys) + 1))
    b = np.zeros(len(branches))
    for i, (levels, ph) in enumerate(branches):
        for k in levels:
            a[i, keys.index(k)] = 1.0
        a[i, -1] = 1.0
        b[i] = -ph
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return {k: float(v) for k, v in zip(keys, sol[:-1]) if abs(v) > 1e-12}


def _stirap_raw(sender: int, receiver: int, omega: float, detuning: float, overlap: float, duration: float,
                g: float, scheme: LevelScheme, reverse: bool) -> Primitive:
    det = wire_detunings(scheme, detuning)
    s_legs, r_legs = (("c", "g"), ("d", "h")), (("a", "g"), ("b", "h"))
    couplings = (
        CavityCoupling(sender, g, s_legs, tuple(det[("sender", leg)] for leg in s_legs)),
        CavityCoupling(receiver, g, r_legs, tuple(det[("receiver", leg)] for leg in r_legs)),
    )
    # laser tones are two-photon resonant with the cavity on each Lambda
    pump = PulseSpec(sender, (("a", "g"), ("b", "h")), omega, Envelope.starting_at("blackman", duration),
                     tuple(det[("sender", leg)] for leg in s_legs))
    stokes = PulseSpec(receiver, (("c", "g"), ("d", "h")), omega, Envelope.starting_at("blackman", duration),
                       tuple(det[("receiver", leg)] for leg in r_legs))
    delay = (1 - overlap) * duration
    first, second = (pump, stokes) if reverse else (stokes, pump)
    pulses = (first, second.shifted(delay))
    name = "stirap reverse" if reverse else "stirap exchange"
    return Primitive(name, pulses, couplings, duration + delay)


def exchange_branches(reverse: bool) -> list[tuple]:
    """Moving branches of the exchange as ((sender, receiver) in, (sender, receiver) out)."""
    fwd = [(("a", "a"), ("c", "c")), (("a", "b"), ("c", "d"))]
    return [(o, i) for i, o in fwd] if reverse else fwd


@lru_cache(maxsize=32)
def _stirap_reference(omega: float, detuning: float, overlap: float, duration: float, g: float,
                      scheme: LevelScheme, reverse: bool, cavity_dim: int) -> dict:
    raw = _stirap_raw(0, 1, omega, detuning, overlap, duration, g, scheme, reverse)
    space = Space(2, cavity_dim)
    report = {"peak_excited": 0.0, "t_excited": 0.0, "peak_leak": 0.0, "final_photons": 0.0,
              "infidelity": 0.0, "branches": []}
    for inp, out in exchange_branches(reverse):
        st, tr = run_primitive(product_state(space, list(inp)), raw, samples=STIRAP_SAMPLES, scheme=scheme)
        k = int(np.argmax(tr["excited"]))
        if tr["excited"][k] > report["peak_excited"]:
            report["peak_excited"], report["t_excited"] = float(tr["excited"][k]), float(tr["t"][k])
        report["peak_leak"] = max(report["peak_leak"], float(tr["leak"].max()))
        report["final_photons"] = max(report["final_photons"], float(tr["photons"][-1]))
        amp = st.data[space.index(list(out), 0)]
        report["infidelity"] = max(report["infidelity"], 1 - abs(amp) ** 2)
        report["branches"].append((((0, out[0]), (1, out[1])), float(np.angle(amp))))
    # dark branches stay in the zero-energy ground manifold and pick up no phase
    for s_lv, r_lv in (("c", "a"), ("c", "b")):
        report["branches"].append((((0, s_lv), (1, r_lv)), 0.0))
    return report


def stirap_exchange(atom_i: int, atom_j: int, omega_peak: float = STIRAP_OMEGA, detuning: float = 0.0,
                    overlap_fraction: float = STIRAP_OVERLAP, duration: float = STIRAP_DURATION,
                    g: float = DEFAULT_G, scheme: Optional[LevelScheme] = None, reverse: bool = False,
                    check: bool = True, excited_threshold: float = 1e-2,
                    infidelity_threshold: float = 1e-2) -> Primitive:
    """Counterintuitive pulse pair moving atom ``atom_i``'s A register onto atom ``atom_j``.

    ``atom_i`` sends (pump on its a-g and b-h legs, cavity on c-g and d-h)
    and ``atom_j`` receives (cavity on a-g and b-h, Stokes on c-g and d-h).
    The Stokes pulse leads by ``(1 - overlap_fraction) * duration``;
    ``reverse=True`` swaps the order and moves the register back. Each
    Blackman pulse lasts ``duration`` us.

    With ``check`` the primitive is first simulated noise-free on its moving
    branches; excessive excited population or transfer error raises
    :class:`AdiabaticityError`. The returned primitive carries the fitted
    branch phases as its frame correction.
    """
    if atom_i == atom_j:
        raise ValueError("exchange needs two distinct atoms")
    if g <= 0:
        raise ValueError("both atoms must be cavity coupled (g > 0)")
    if not 0 < overlap_fraction < 1:
        raise ValueError("overlap_fraction must lie in (0, 1)")
    scheme = scheme or LevelScheme()
    raw = _stirap_raw(atom_i, atom_j, omega_peak, detuning, overlap_fraction, duration, g, scheme, reverse)
    correction = ()
    if check:
        rep = _stirap_reference(float(omega_peak), float(detuning), float(overlap_fraction), float(duration),
                                float(g), scheme, reverse, 2)
        if rep["peak_excited"] > excited_threshold:
            raise AdiabaticityError("excited-state population", rep["peak_excited"], rep["t_excited"])
        if rep["infidelity"] > infidelity_threshold or rep["final_photons"] > 1e-3:
            raise AdiabaticityError("transfer infidelity", max(rep["infidelity"], rep["final_photons"]),
                                    raw.duration)
        fitted = fit_local_phases(rep["branches"])
        per_atom: dict = {}
        for (atom, lv), ph in fitted.items():
            per_atom.setdefault(atom_i if atom == 0 else atom_j, []).append((lv, ph))
        correction = tuple((a, tuple(v)) for a, v in sorted(per_atom.items()))
    return Primitive(raw.name, raw.pulses, raw.couplings, raw.duration, correction, 0.0)


def stirap_report(omega_peak: float = STIRAP_OMEGA, detuning: float = 0.0, overlap_fraction: float = STIRAP_OVERLAP,
                  duration: float = STIRAP_DURATION, g: float = DEFAULT_G, scheme: Optional[LevelScheme] = None,
                  reverse: bool = False, cavity_dim: int = 2) -> dict:
    """Noise-free diagnostics of an exchange: peak excited population, photon leakage, infidelity."""
    scheme = scheme or LevelScheme()
    rep = _stirap_reference(float(omega_peak), float(detuning), float(overlap_fraction), float(duration),
                            float(g), scheme, reverse, int(cavity_dim))
    return {k: v for k, v in rep.items() if k != "branches"}
