"""Gate-level sequences: retrieval, wire exchange, intra-atom gate, storage, CNOT and readout.

Qubits rest in the storage levels with ``|0> = e`` and ``|1> = f``. The
``odd`` retrieval pattern loads the A register (``e -> a``, ``f -> c``), the
``even`` pattern loads B (``e -> a``, ``f -> b``).

Within a gate pair the higher channel sends over the wire and uses the odd
pattern. With the channel spacing equal to epsilon_ac, its c-g line is then
degenerate with the lower channel's a-g line, which is what the shared
cavity mode requires. For pairs starting on an even channel this coincides
with the channel-parity rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import NoiseParams
from .hilbert import (
    ATOM_DIM,
    EXCITED_LEVELS,
    GROUND_LEVELS,
    LEVEL_INDEX,
    CompositeState,
    LevelScheme,
    apply_local,
    fidelity,
)
from .controls import Envelope, PulseSpec
from .pulses import (
    DEFAULT_G,
    RAMAN_DETUNING,
    RAMAN_OMEGA,
    Primitive,
    calibrate_raman_pi,
    local_unitary,
    raman_primitive,
    run_primitive,
    stirap_exchange,
)

STORAGE = ("e", "f")
# leakage a chain of imperfect gates may leave outside the expected levels
POPULATION_TOL = 1e-3
READOUT_OMEGA = 1.0


class StageError(RuntimeError):
    """Precondition failure inside a multi-stage sequence."""

    def __init__(self, message: str, stage: Optional[int] = None):
        prefix = f"stage {stage}: " if stage is not None else ""
        super().__init__(prefix + message)
        self.stage = stage


def parity(channel: int) -> str:
    return "odd" if channel % 2 else "even"


def wire_roles(i: int, j: int) -> tuple:
    """(sender, receiver) of an adjacent pair."""
    if abs(i - j) != 1:
        raise ValueError(f"channels {i} and {j} are not spectral neighbours")
    return max(i, j), min(i, j)


def working_levels(par: str) -> tuple:
    """Levels holding the retrieved qubit (|0>, |1>) for a channel parity."""
    if par == "odd":
        return ("a", "c")
    if par == "even":
        return ("a", "b")
    raise ValueError(f"parity must be 'odd' or 'even', got {par!r}")


# ---------------------------------------------------------------------------
# ideal level maps


def level_permutation(pairs: Sequence[tuple]) -> np.ndarray:
    """8x8 permutation swapping each listed pair of levels."""
    perm = np.eye(ATOM_DIM)
    for x, y in pairs:
        i, j = LEVEL_INDEX[x], LEVEL_INDEX[y]
        perm[[i, j]] = perm[[j, i]]
    return perm


def pair_permutation(pairs: Sequence[tuple]) -> np.ndarray:
    """64x64 permutation on (sender, receiver) swapping joint levels ``((s1, r1), (s2, r2))``."""
    perm = np.eye(ATOM_DIM**2)
    for (s1, r1), (s2, r2) in pairs:
        i = LEVEL_INDEX[s1] * ATOM_DIM + LEVEL_INDEX[r1]
        j = LEVEL_INDEX[s2] * ATOM_DIM + LEVEL_INDEX[r2]
        perm[[i, j]] = perm[[j, i]]
    return perm


def _retrieval_pairs(par: str) -> tuple:
    zero, one = working_levels(par)
    return (("e", zero), ("f", one))


EXCHANGE_PAIRS = ((("a", "a"), ("c", "c")), (("a", "b"), ("c", "d")))


def _gate_pair(control_is_sender: bool) -> tuple:
    # with the sender's qubit in the receiver's A register (up = 1), flip B;
    # with the receiver controlling (B down = 1), flip A between up and down
    return ("a", "b") if control_is_sender else ("b", "d")


def ideal_cnot(control_level_of_one: str = "f") -> np.ndarray:
    """64x64 CNOT on (control, target) storage levels, identity elsewhere."""
    u = np.eye(ATOM_DIM**2)
    e, f = LEVEL_INDEX["e"], LEVEL_INDEX["f"]
    i = LEVEL_INDEX[control_level_of_one] * ATOM_DIM
    u[[i + e, i + f]] = u[[i + f, i + e]]
    return u


# ---------------------------------------------------------------------------
# primitive sequences


def retrieve(atom: int, par: str, scheme: Optional[LevelScheme] = None) -> list[Primitive]:
    """Raman pi pulses moving the storage qubit into the working levels of its parity."""
    return [raman_primitive(atom, pair, scheme) for pair in _retrieval_pairs(par)]


def store(atom: int, par: str, scheme: Optional[LevelScheme] = None) -> list[Primitive]:
    """Inverse of :func:`retrieve`."""
    return [raman_primitive(atom, (w, s), scheme) for s, w in reversed(_retrieval_pairs(par))]


def merge_parallel(prims: Sequence[Primitive], name: str) -> Primitive:
    """Run primitives on disjoint atoms simultaneously."""
    seen: set = set()
    for p in prims:
        if p.uses_cavity:
            raise ValueError("only laser-only primitives can be merged")
        if seen & set(p.atoms):
            raise ValueError("merged primitives must act on disjoint atoms")
        seen |= set(p.atoms)
    pulses = tuple(q for p in prims for q in p.pulses)
    corr = tuple(c for p in prims for c in p.phase_correction)
    pre = tuple(c for p in prims for c in p.pre_correction)
    return Primitive(name, pulses, (), max(p.duration for p in prims), corr, 0.0, pre)


def _parallel_sequences(seqs: Sequence[Sequence[Primitive]], name: str) -> list[Primitive]:
    depth = max(len(s) for s in seqs)
    out = []
    for k in range(depth):
        layer = [s[k] for s in seqs if k < len(s)]
        out.append(merge_parallel(layer, name) if len(layer) > 1 else layer[0])
    return out


@dataclass(frozen=True)
class Stage:
    """One step of a gate sequence with its start time (us) and ideal level map."""

    name: str
    primitives: tuple
    start: float
    ideal: tuple  # (atoms, matrix) applied to the ideal state after the stage

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.primitives)

    @property
    def pulses(self) -> list[PulseSpec]:
        out, t = [], self.start
        for p in self.primitives:
            out += [q.shifted(t) for q in p.pulses]
            t += p.duration
        return out


def cnot_stages(control: int, target: int, scheme: Optional[LevelScheme] = None,
                cavity_detuning: float = 0.0, g: float = DEFAULT_G, stirap: Optional[dict] = None) -> list[Stage]:
    """The five-stage CNOT between adjacent channels ``control`` and ``target``."""
    if abs(control - target) != 1:
        raise StageError(f"CNOT needs spectrally adjacent atoms, got {control} and {target}", 0)
    sender, receiver = max(control, target), min(control, target)
    stirap = stirap or {}
    kw = dict(detuning=cavity_detuning, g=g, scheme=scheme, **stirap)
    fwd = stirap_exchange(sender, receiver, **kw)
    rev = stirap_exchange(sender, receiver, reverse=True, **kw)
    gate_pair = _gate_pair(control == sender)
    pair = (sender, receiver)
    swaps = level_permutation(_retrieval_pairs("odd")), level_permutation(_retrieval_pairs("even"))
    retrieval = np.kron(*swaps)
    layout = [
        ("retrieve", _parallel_sequences([retrieve(sender, "odd", scheme), retrieve(receiver, "even", scheme)],
                                         "retrieve"), retrieval),
        ("exchange", [fwd], pair_permutation(EXCHANGE_PAIRS)),
        ("gate", [raman_primitive(receiver, gate_pair, scheme)],
         np.kron(np.eye(ATOM_DIM), level_permutation([gate_pair]))),
        ("exchange back", [rev], pair_permutation(EXCHANGE_PAIRS)),
        ("store", _parallel_sequences([store(sender, "odd", scheme), store(receiver, "even", scheme)], "store"),
         retrieval),
    ]
    stages, t = [], 0.0
    for name, prims, ideal in layout:
        st = Stage(name, tuple(prims), t, (pair, ideal))
        stages.append(st)
        t += st.duration
    return stages


def _check_levels(state: CompositeState, atom: int, allowed: Sequence[str], what: str, stage=None) -> None:
    outside = sum(state.population(atom, lv) for lv in GROUND_LEVELS + EXCITED_LEVELS if lv not in allowed)
    if outside > POPULATION_TOL:
        raise StageError(f"atom {atom}: population {outside:.3g} outside {what} levels {tuple(allowed)}", stage)


def apply_retrieve(state: CompositeState, atom: int, par: str, noise: Optional[NoiseParams] = None,
                   scheme: Optional[LevelScheme] = None) -> CompositeState:
    _check_levels(state, atom, STORAGE, "storage")
    for p in retrieve(atom, par, scheme):
        state = run_primitive(state, p, noise, scheme=scheme)
    return state


def apply_store(state: CompositeState, atom: int, par: str, noise: Optional[NoiseParams] = None,
                scheme: Optional[LevelScheme] = None) -> CompositeState:
    _check_levels(state, atom, working_levels(par), "working")
    for p in store(atom, par, scheme):
        state = run_primitive(state, p, noise, scheme=scheme)
    return state


def apply_ideal(state_data: np.ndarray, ideal: tuple, dims: tuple) -> np.ndarray:
    atoms, mat = ideal
    return apply_local(state_data, mat, list(atoms), dims)


@dataclass
class CnotResult:
    state: CompositeState
    fidelity: float
    stages: list
    trace: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.state, self.fidelity, self.stages))


def run_stages(state: CompositeState, stages: Sequence[Stage], noise: Optional[NoiseParams] = None,
               tol: float = 1e-10, scheme: Optional[LevelScheme] = None) -> CompositeState:
    for st in stages:
        for p in st.primitives:
            state = run_primitive(state, p, noise, tol=tol, scheme=scheme)
    return state


def swap_stages(i: int, j: int, scheme: Optional[LevelScheme] = None, **kwargs) -> list[Stage]:
    """Three alternating CNOTs, concatenated in time."""
    out, t = [], 0.0
    for c, tg in ((i, j), (j, i), (i, j)):
        for st in cnot_stages(c, tg, scheme, **kwargs):
            out.append(Stage(st.name, st.primitives, t, st.ideal))
            t += st.duration
    return out


def cnot(control: int, target: int, noise: Optional[NoiseParams] = None, state: Optional[CompositeState] = None,
         scheme: Optional[LevelScheme] = None, cavity_detuning: float = 0.0, g: float = DEFAULT_G,
         tol: float = 1e-10, stirap: Optional[dict] = None) -> CnotResult:
    """Run the CNOT sequence on ``state`` (both atoms in storage levels).

    Returns a :class:`CnotResult`, which unpacks as ``(state, fidelity,
    stages)``; ``trace`` holds one record per stage with its end time and the
    overlap with the ideal intermediate state.
    """
    if state is None:
        raise ValueError("an input state is required")
    stages = cnot_stages(control, target, scheme, cavity_detuning, g, stirap)
    for atom in (control, target):
        _check_levels(state, atom, STORAGE, "storage", stage=1)
    dims = state.space.dims
    target_state = cnot_target(state, control, target)
    ideal = state.data.copy()
    trace = []
    for k, st in enumerate(stages, start=1):
        for p in st.primitives:
            state = run_primitive(state, p, noise, tol=tol, scheme=scheme)
        ideal = apply_ideal(ideal, st.ideal, dims)
        trace.append({"stage": st.name, "index": k, "t_end_us": st.start + st.duration,
                      "overlap": fidelity(state, ideal), "ideal": ideal.copy(), "state": state})
    return CnotResult(state, fidelity(state, target_state), stages, trace)


CHECKPOINT_LABELS = (
    "(alpha|a>+beta|c>) x |a>",
    "|c> x (alpha|c>+beta|a>)",
    "|c> x (alpha|c>+beta|b>)",
    "alpha|aa>+beta|cb>",
)


def intermediate_state_checks(result: CnotResult, threshold: float = 0.99) -> dict:
    """Overlaps after retrieval, exchange, gate and return against their ideal states."""
    rows = []
    for rec, label in zip(result.trace[:4], CHECKPOINT_LABELS):
        rows.append({"stage": rec["stage"], "checkpoint": label, "overlap": rec["overlap"],
                     "passed": rec["overlap"] >= threshold})
    return {"checkpoints": rows, "passed": all(r["passed"] for r in rows)}


def cnot_target(state: CompositeState, control: int, target: int) -> np.ndarray:
    """Ideal CNOT image of a storage-level input, by direct matrix action."""
    return apply_local(state.data, ideal_cnot(), [control, target], state.space.dims)


# ---------------------------------------------------------------------------
# single-qubit gates on storage levels


def storage_x(atom: int, scheme: Optional[LevelScheme] = None) -> Primitive:
    return raman_primitive(atom, ("e", "f"), scheme)


def storage_z(atom: int) -> Primitive:
    """Virtual Z: a frame update with no physical pulse."""
    return Primitive("z", (), (), 0.0, ((atom, (("f", math.pi),)),))


def storage_h(atom: int, scheme: Optional[LevelScheme] = None, omega_peak: float = RAMAN_OMEGA,
              detuning: float = RAMAN_DETUNING) -> Primitive:
    """Hadamard from a calibrated Raman pi/2 on e-f dressed with frame phases on both sides."""
    pulse = calibrate_raman_pi(atom, ("e", "f"), omega_peak, detuning, scheme, angle=math.pi / 2)
    u = local_unitary(pulse.on_atom(0), scheme)
    e, f = LEVEL_INDEX["e"], LEVEL_INDEX["f"]
    th = np.angle(u[np.ix_([e, f], [e, f])])
    # solve a_i + b_j + th_ij = (0, 0, 0, pi) up to a global phase
    b0, b1 = 0.0, th[0, 0] - th[0, 1]
    a0 = -th[0, 0] - b0
    a1 = -th[1, 0] - b0
    return Primitive("h", (pulse,), (), pulse.envelope.duration,
                     ((atom, (("e", float(a0)), ("f", float(a1)))),), 0.0,
                     ((atom, (("e", float(b0)), ("f", float(b1)))),))


# ---------------------------------------------------------------------------
# readout


def _promotion_pulse(atom: int, level: str, scheme: LevelScheme, phase: float = 0.0) -> PulseSpec:
    excited = next((x for x in EXCITED_LEVELS if (level, x) in scheme.optical_links), None)
    if excited is None:
        raise ValueError(f"level {level} has no optical transition")
    return PulseSpec(atom, ((level, excited),), READOUT_OMEGA,
                     Envelope.starting_at("rect", 1 / (2 * READOUT_OMEGA)), 0.0, phase)


def readout(state: CompositeState, atom: int, level: str, rng: np.random.Generator,
            efficiency: float = 1.0, dark_count: float = 0.0, scheme: Optional[LevelScheme] = None):
    """Projective measurement of ``level`` on ``atom``.

    A resonant pi pulse promotes ``level`` to its excited state, where the
    cavity frequency pull reveals it; detection succeeds with probability
    ``efficiency`` and a false click occurs with probability ``dark_count``.
    The state collapses on the physical outcome and the pi pulse is undone.
    Returns ``(bit, post-measurement state)``.
    """
    if level in EXCITED_LEVELS:
        raise ValueError("readout addresses ground levels only")
    if level not in GROUND_LEVELS:
        raise ValueError(f"unknown level {level!r}")
    if not 0 <= efficiency <= 1 or not 0 <= dark_count <= 1:
        raise ValueError("efficiency and dark_count are probabilities")
    scheme = scheme or LevelScheme()
    up = _promotion_pulse(atom, level, scheme)
    promoted = run_primitive(state, Primitive("promote", (up,), (), up.envelope.duration))
    excited = up.legs[0][1]
    p_exc = promoted.population(atom, excited)
    truth = bool(rng.random() < p_exc)
    keep = np.ones(ATOM_DIM)
    keep[LEVEL_INDEX[excited]] = 0.0
    proj = np.diag(1.0 - keep) if truth else np.diag(keep)
    data = apply_local(promoted.data, proj, [atom], state.space.dims)
    data = data / (np.linalg.norm(data) if data.ndim == 1 else np.real(np.trace(data)))
    down = _promotion_pulse(atom, level, scheme, phase=math.pi)
    post = run_primitive(CompositeState(state.space, data), Primitive("restore", (down,), (), down.envelope.duration))
    clicked = (truth and rng.random() < efficiency) or (not truth and rng.random() < dark_count)
    return int(clicked), post
