"""Rotating-frame Hamiltonians and closed/open-system time evolution.

Frequencies enter in MHz (cyclic) and are multiplied by 2*pi once, here, so
every matrix handed to an integrator is in rad/us and times are in us.

The frame removes every optical carrier: each laser tone and the cavity mode
get their own rotating frame, which leaves only detunings, half Rabi
frequencies and half vacuum couplings in the Hamiltonian. Per atom the frame
is fixed by walking the graph of driven legs: along a leg of detuning ``D``
the excited level sits ``D`` above the ground level it is reached from.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .controls import CavityCoupling, PulseSpec
from .hilbert import (
    ATOM_DIM,
    CAVITY,
    EXCITED_LEVELS,
    GROUND_LEVELS,
    LEVEL_INDEX,
    LEVELS,
    CompositeState,
    LevelScheme,
    Space,
    destroy,
)

TWO_PI = 2 * np.pi

# homogeneous optical linewidth of the NV zero-phonon line (MHz)
NV_HOMOGENEOUS_LINEWIDTH = 5.0


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot advance (step-size underflow)."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t = {t:.6g} us)")
        self.t = t


@dataclass(frozen=True)
class Register:
    """Axes of a (sub)register: which axis holds which atom, and the cavity axis."""

    dims: tuple
    atom_axes: tuple  # ((atom id, axis), ...)
    cavity_axis: Optional[int] = None

    @classmethod
    def from_space(cls, space: Space) -> "Register":
        return cls(space.dims, tuple((i, i) for i in range(space.n_atoms)), space.n_atoms)

    @classmethod
    def cluster(cls, atoms: Sequence[int], cavity_dim: Optional[int] = None) -> "Register":
        dims = (ATOM_DIM,) * len(atoms)
        cav = None
        if cavity_dim is not None:
            dims = dims + (cavity_dim,)
            cav = len(atoms)
        return cls(dims, tuple((a, i) for i, a in enumerate(atoms)), cav)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def atoms(self) -> tuple:
        return tuple(a for a, _ in self.atom_axes)

    def axis(self, atom: int) -> int:
        for a, ax in self.atom_axes:
            if a == atom:
                return ax
        raise IndexError(f"atom {atom} is not part of this register")

    def embed(self, op, axis: int, sparse: bool = False):
        left = int(np.prod(self.dims[:axis]))
        right = int(np.prod(self.dims[axis + 1:]))
        if sparse:
            return sp.kron(sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(op)),
                           sp.identity(right, format="csr"), format="csr")
        return np.kron(np.kron(np.eye(left), op), np.eye(right))


@dataclass
class FrameConfig:
    """Detuning bookkeeping for the multi-rotating frame.

    ``cavity_detuning_policy`` is ``"resonant"`` (the cavity sits on each
    atom's wire leg) or ``"detuned"`` (offset by ``cavity_detuning`` MHz, the
    non-degenerate configuration). ``atom_optical_detunings`` overrides the
    cavity detuning per atom; ``two_photon_detunings`` maps ``(atom, level)``
    to an extra ground-level shift in MHz, normally absent.
    """

    cavity_detuning_policy: str = "resonant"
    cavity_detuning: float = 0.0
    atom_optical_detunings: dict = field(default_factory=dict)
    two_photon_detunings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cavity_detuning_policy not in ("resonant", "detuned"):
            raise ValueError(f"unknown cavity detuning policy {self.cavity_detuning_policy!r}")

    @classmethod
    def detuned(cls, delta_c: float) -> "FrameConfig":
        return cls("detuned", float(delta_c))

    def cavity_detuning_for(self, atom: int) -> float:
        if atom in self.atom_optical_detunings:
            return float(self.atom_optical_detunings[atom])
        return self.cavity_detuning if self.cavity_detuning_policy == "detuned" else 0.0

    def validate(self, scheme: LevelScheme, linewidth: float = NV_HOMOGENEOUS_LINEWIDTH) -> None:
        """Check linewidth << |cavity detuning| << epsilon_ac for the detuned policy."""
        if self.cavity_detuning_policy != "detuned":
            return
        d = abs(self.cavity_detuning)
        if not linewidth < d < scheme.epsilon_ac:
            raise ValueError(
                f"cavity detuning {d} MHz must lie between the linewidth ({linewidth} MHz) "
                f"and epsilon_ac ({scheme.epsilon_ac} MHz)")
        if not 10 * linewidth <= d <= scheme.epsilon_ac / 10:
            warnings.warn("cavity detuning is within a factor 10 of the linewidth or of epsilon_ac",
                          stacklevel=2)


@dataclass(frozen=True)
class NoiseParams:
    """Decoherence knobs.

    ``kappa_width`` is the cavity full width in kHz; ``gamma_excited`` the
    excited-state linewidth in MHz (total decay rate ``2 pi gamma``);
    ``branching`` maps each excited level to ground-level fractions;
    ``t2_spin`` is in ms and ``t1_spin`` in s (``None`` disables T1).
    """

    kappa_width: float = 0.0
    gamma_excited: float = 0.0
    branching: Optional[Mapping] = None
    t2_spin: float = math.inf
    t1_spin: Optional[float] = None

    def __post_init__(self):
        if self.kappa_width < 0 or self.gamma_excited < 0 or self.t2_spin <= 0:
            raise ValueError("noise rates must be non-negative")
        if self.t1_spin is not None and self.t1_spin <= 0:
            raise ValueError("t1_spin must be positive")
        for ex, fractions in self.branching_fractions().items():
            if abs(sum(fractions.values()) - 1) > 1e-12 or min(fractions.values()) < 0:
                raise ValueError(f"branching fractions of {ex} must be non-negative and sum to 1")

    @classmethod
    def none(cls) -> "NoiseParams":
        return cls()

    @classmethod
    def nv_default(cls) -> "NoiseParams":
        """1.4 kHz cavity, 5 MHz optical linewidth, T2 = 0.1 ms, no T1 channel."""
        return cls(kappa_width=1.4, gamma_excited=NV_HOMOGENEOUS_LINEWIDTH, t2_spin=0.1)

    def scaled(self, factor: float) -> "NoiseParams":
        return NoiseParams(self.kappa_width * factor, self.gamma_excited * factor, self.branching,
                           self.t2_spin / factor,
                           None if self.t1_spin is None else self.t1_spin / factor)

    def branching_fractions(self) -> dict:
        if self.branching is not None:
            return {ex: dict(v) for ex, v in self.branching.items()}
        return {"g": {"a": 0.5, "c": 0.5}, "h": {"b": 0.5, "d": 0.5}}

    @property
    def kappa(self) -> float:
        """Cavity energy decay rate (1/us)."""
        return TWO_PI * self.kappa_width * 1e-3

    @property
    def gamma(self) -> float:
        return TWO_PI * self.gamma_excited

    @property
    def dephasing_rate(self) -> float:
        return 0.0 if math.isinf(self.t2_spin) else 1.0 / (self.t2_spin * 1e3)

    @property
    def relaxation_rate(self) -> float:
        return 0.0 if self.t1_spin is None else 1.0 / (self.t1_spin * 1e6)

    @property
    def is_zero(self) -> bool:
        return self.kappa == 0 and self.gamma == 0 and self.dephasing_rate == 0 and self.relaxation_rate == 0


class Hamiltonian:
    """``H(t) = static + sum_k envelope_k(t) * H_k`` in rad/us."""

    def __init__(self, static: np.ndarray, terms: Sequence = ()):
        self.static = np.asarray(static, dtype=complex)
        self.terms = [(np.asarray(m, dtype=complex), env) for m, env in terms]

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    def __call__(self, t: float) -> np.ndarray:
        h = self.static.copy()
        for m, env in self.terms:
            v = env(t) if env is not None else 1.0
            if v:
                h += v * m
        return h

    def breakpoints(self) -> list[float]:
        pts = set()
        for _, env in self.terms:
            if env is not None:
                pts.update((env.start, env.end))
        return sorted(pts)

    def constant_on(self, t0: float, t1: float) -> bool:
        for _, env in self.terms:
            if env is None or env.shape == "rect":
                continue
            if env.end > t0 and env.start < t1:
                return False
        return True

    def max_norm(self) -> float:
        return float(np.abs(self.static).max() + sum(np.abs(m).max() for m, _ in self.terms))


def _atom_frame(atom: int, drives: Sequence[PulseSpec], couplings: Sequence[CavityCoupling]) -> np.ndarray:
    """Diagonal detunings (MHz) of one atom's levels in its rotating frame."""
    edges = []
    for p in drives:
        if p.atom == atom:
            edges += [(gr, ex, d) for (gr, ex), d in zip(p.legs, p.detuning)]
    for c in couplings:
        if c.atom == atom:
            edges += [(gr, ex, d) for (gr, ex), d in zip(c.legs, c.detuning)]
    diag: dict[str, float] = {}
    for anchor in LEVELS:
        if anchor in diag or not any(anchor in (gr, ex) for gr, ex, _ in edges):
            continue
        diag[anchor] = 0.0
        stack = [anchor]
        while stack:
            lv = stack.pop()
            for gr, ex, d in edges:
                if lv == gr:
                    other, val = ex, diag[gr] + d
                elif lv == ex:
                    other, val = gr, diag[ex] - d
                else:
                    continue
                if other in diag:
                    if abs(diag[other] - val) > 1e-9:
                        raise ValueError(
                            f"inconsistent rotating frame on atom {atom}: level {other} "
                            f"needs detuning {diag[other]} and {val}")
                else:
                    diag[other] = val
                    stack.append(other)
    out = np.zeros(ATOM_DIM)
    for lv, v in diag.items():
        out[LEVEL_INDEX[lv]] = v
    return out


def hamiltonian_model(register: Register, drives: Sequence[PulseSpec] = (),
                      couplings: Sequence[CavityCoupling] = (),
                      frame: Optional[FrameConfig] = None,
                      scheme: Optional[LevelScheme] = None) -> Hamiltonian:
    """Time-dependent Hamiltonian of a register under ``drives`` and cavity ``couplings``."""
    frame = frame or FrameConfig()
    drives = [p for p in drives if any(w > 0 for w in p.omega_peak)]
    reg_atoms = set(register.atoms)
    for obj in list(drives) + list(couplings):
        if obj.atom not in reg_atoms:
            raise ValueError(f"control addresses atom {obj.atom}, not in the register")
        if scheme is not None:
            for leg in obj.legs:
                if leg not in scheme.optical_links:
                    raise ValueError(f"leg {leg} is not an optical transition of the level scheme")
    if couplings and register.cavity_axis is None:
        raise ValueError("cavity couplings need a register with a cavity")

    D = register.dim
    static = np.zeros((D, D), dtype=complex)
    for atom, axis in register.atom_axes:
        diag = _atom_frame(atom, drives, couplings)
        for (a, lv), shift in frame.two_photon_detunings.items():
            if a == atom:
                diag[LEVEL_INDEX[lv]] += shift
        if np.any(diag):
            static += register.embed(np.diag(TWO_PI * diag).astype(complex), axis)

    if couplings:
        ncav = register.dims[register.cavity_axis]
        a_op = register.embed(destroy(ncav), register.cavity_axis)
        for c in couplings:
            axis = register.axis(c.atom)
            for gr, ex in c.legs:
                up = np.zeros((ATOM_DIM, ATOM_DIM), dtype=complex)
                up[LEVEL_INDEX[ex], LEVEL_INDEX[gr]] = 1.0
                term = register.embed(up, axis) @ a_op
                static += (TWO_PI * c.g / 2) * (term + term.conj().T)

    terms = []
    for p in drives:
        axis = register.axis(p.atom)
        m = np.zeros((ATOM_DIM, ATOM_DIM), dtype=complex)
        for (gr, ex), w in zip(p.legs, p.omega_peak):
            m[LEVEL_INDEX[ex], LEVEL_INDEX[gr]] += (TWO_PI * w / 2) * np.exp(1j * p.phase)
        m = m + m.conj().T
        terms.append((register.embed(m, axis), p.envelope))
    return Hamiltonian(static, terms)


def build_hamiltonian(space: Union[Space, CompositeState], scheme: LevelScheme, frame: FrameConfig,
                      drives: Sequence[PulseSpec], cavity_coupling: Sequence[CavityCoupling], t: float) -> np.ndarray:
    """Hermitian rotating-frame Hamiltonian (rad/us) of a full register at time ``t``."""
    if isinstance(space, CompositeState):
        space = space.space
    h = hamiltonian_model(Register.from_space(space), drives, cavity_coupling, frame, scheme)(t)
    assert np.allclose(h, h.conj().T, atol=1e-12), "non-Hermitian Hamiltonian assembly"
    return h


def _segments(h: Hamiltonian, t0: float, t1: float) -> list[tuple[float, float]]:
    pts = [t0] + [p for p in h.breakpoints() if t0 < p < t1] + [t1]
    return [(a, b) for a, b in zip(pts[:-1], pts[1:]) if b > a]


def _solve(rhs: Callable, y0: np.ndarray, a: float, b: float, tol: float) -> np.ndarray:
    sol = solve_ivp(rhs, (a, b), y0, method="DOP853", rtol=tol, atol=tol)
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}", float(sol.t[-1]))
    return sol.y[:, -1]


def _as_hamiltonian(h) -> Hamiltonian:
    if isinstance(h, Hamiltonian):
        return h
    if callable(h):
        return _CallableHamiltonian(h)
    return Hamiltonian(np.asarray(h))


class _CallableHamiltonian(Hamiltonian):
    def __init__(self, fn: Callable):
        self.fn = fn
        self.static = np.asarray(fn(0.0), dtype=complex)
        self.terms = []

    def __call__(self, t):
        return np.asarray(self.fn(t), dtype=complex)

    def constant_on(self, t0, t1):
        return False


def evolve_unitary(state, hamiltonian, t0: float, t1: float, tol: float = 1e-10):
    """Schroedinger evolution from ``t0`` to ``t1``.

    ``state`` is a pure :class:`CompositeState` or an array whose first axis
    is the register (extra columns are evolved together). Segments on which
    the Hamiltonian is constant use the matrix exponential; the rest use an
    adaptive 8th-order Runge-Kutta stepper with local error ``tol``.
    """
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    wrap = isinstance(state, CompositeState)
    data = state.data if wrap else np.asarray(state, dtype=complex)
    if wrap and not state.is_pure:
        raise ValueError("evolve_unitary needs a pure-vector state")
    h = _as_hamiltonian(hamiltonian)
    y = data.astype(complex)
    shape = y.shape
    for a, b in _segments(h, t0, t1):
        if h.constant_on(a, b):
            u = scipy.linalg.expm(-1j * h((a + b) / 2) * (b - a))
            y = (u @ y.reshape(h.dim, -1)).reshape(shape)
        else:
            def rhs(t, v):
                return (-1j * (h(t) @ v.reshape(h.dim, -1))).reshape(-1)
            y = _solve(rhs, y.reshape(-1), a, b, tol).reshape(shape)
    if wrap:
        return CompositeState(state.space, y)
    return y


def collapse_operators(noise: NoiseParams, register: Register) -> list:
    """Sparse jump operators (sqrt(rate) included) for every atom and the cavity."""
    ops = []
    for _, axis in register.atom_axes:
        local = []
        if noise.dephasing_rate > 0:
            for lv in GROUND_LEVELS:
                m = np.zeros((ATOM_DIM, ATOM_DIM))
                m[LEVEL_INDEX[lv], LEVEL_INDEX[lv]] = math.sqrt(noise.dephasing_rate)
                local.append(m)
        if noise.gamma > 0:
            for ex, fractions in noise.branching_fractions().items():
                for gr, frac in fractions.items():
                    if frac > 0:
                        m = np.zeros((ATOM_DIM, ATOM_DIM))
                        m[LEVEL_INDEX[gr], LEVEL_INDEX[ex]] = math.sqrt(noise.gamma * frac)
                        local.append(m)
        if noise.relaxation_rate > 0:
            rate = noise.relaxation_rate / (len(GROUND_LEVELS) - 1)
            for lv in GROUND_LEVELS:
                for to in GROUND_LEVELS:
                    if to != lv:
                        m = np.zeros((ATOM_DIM, ATOM_DIM))
                        m[LEVEL_INDEX[to], LEVEL_INDEX[lv]] = math.sqrt(rate)
                        local.append(m)
        ops += [register.embed(m, axis, sparse=True) for m in local]
    if noise.kappa > 0 and register.cavity_axis is not None:
        n = register.dims[register.cavity_axis]
        ops.append(register.embed(math.sqrt(noise.kappa) * destroy(n), register.cavity_axis, sparse=True))
    return ops


def liouvillian(h: np.ndarray, jumps: Sequence) -> np.ndarray:
    """Dense superoperator acting on row-major ``vec(rho)``."""
    d = h.shape[0]
    eye = np.eye(d)
    out = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for L in jumps:
        L = L.toarray() if sp.issparse(L) else np.asarray(L)
        k = L.conj().T @ L
        out += np.kron(L, L.conj()) - 0.5 * (np.kron(k, eye) + np.kron(eye, k.T))
    return out


_DENSE_SUPEROP_MAX_DIM = 64


def evolve_lindblad(state, hamiltonian, noise: NoiseParams, t0: float, t1: float, tol: float = 1e-10,
                    register: Optional[Register] = None):
    """Lindblad master-equation evolution.

    Pure input is promoted to a density matrix. With a raw array input pass
    the ``register`` describing its axes so the jump operators can be built.
    """
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    wrap = isinstance(state, CompositeState)
    if wrap:
        register = Register.from_space(state.space)
        rho = state.density().astype(complex)
    else:
        arr = np.asarray(state, dtype=complex)
        rho = np.outer(arr, arr.conj()) if arr.ndim == 1 else arr
        if register is None:
            raise ValueError("register required for raw-array input")
    h = _as_hamiltonian(hamiltonian)
    d = h.dim
    jumps = collapse_operators(noise, register)
    k_sum = sum((L.conj().T @ L for L in jumps), sp.csr_matrix((d, d))).toarray()
    jumps_h = [L.conj().T.tocsr() for L in jumps]

    def rhs(t, v):
        r = v.reshape(d, d)
        heff = h(t) - 0.5j * k_sum
        out = -1j * (heff @ r - r @ heff.conj().T)
        for L, Lh in zip(jumps, jumps_h):
            lr = L @ r
            out += (Lh.T @ lr.T).T
        return out.reshape(-1)

    for a, b in _segments(h, t0, t1):
        if h.constant_on(a, b) and d <= _DENSE_SUPEROP_MAX_DIM:
            sup = liouvillian(h((a + b) / 2), jumps)
            rho = (scipy.linalg.expm(sup * (b - a)) @ rho.reshape(-1)).reshape(d, d)
        else:
            rho = _solve(rhs, rho.reshape(-1), a, b, tol).reshape(d, d)
    rho = (rho + rho.conj().T) / 2
    if wrap:
        return CompositeState(state.space, rho)
    return rho


def expectation(op: np.ndarray, state) -> float:
    data = state.data if isinstance(state, CompositeState) else np.asarray(state)
    if data.ndim == 1:
        return float(np.real(np.vdot(data, op @ data)))
    return float(np.real(np.trace(op @ data)))
