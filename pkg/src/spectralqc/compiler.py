"""Circuit routing, guarded list scheduling and schedule serialization.

Qubit ``i`` lives on spectral channel ``i``. Two-qubit gates need adjacent
channels and a free cavity; concurrent pairs need an idle channel between
them and distinct cavity modes.
"""

from __future__ import annotations

import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .controls import CavityCoupling, PulseSpec
from .design import CavityDesign, commensurate_fsr, derive, max_parallel_pairs, op_budget
from .dynamics import NoiseParams
from .hilbert import ATOM_DIM, LEVEL_INDEX, CompositeState, LevelScheme, apply_local, fidelity
from .protocol import (
    _check_levels,
    STORAGE,
    Stage,
    cnot_stages,
    ideal_cnot,
    storage_h,
    storage_x,
    storage_z,
    swap_stages,
    wire_roles,
)
from .pulses import Primitive, run_primitive, wire_detunings
from .spectral import ChannelTable

log = logging.getLogger(__name__)

SINGLE_QUBIT_GATES = ("X", "Z", "H")
TWO_QUBIT_GATES = ("CNOT", "SWAP")
SCHEDULE_FORMAT = "spectralqc.schedule"
SCHEDULE_VERSION = 1
DEFAULT_MODE_STRIDE = 11
MAX_SIMULATED_ATOMS = 4


class BudgetWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# circuits


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple

    def __post_init__(self):
        name = self.name.upper()
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        arity = 1 if name in SINGLE_QUBIT_GATES else 2 if name in TWO_QUBIT_GATES else None
        if arity is None:
            raise ValueError(f"unknown gate {self.name!r}")
        if len(self.qubits) != arity:
            raise ValueError(f"{name} takes {arity} qubit(s)")
        if arity == 2 and self.qubits[0] == self.qubits[1]:
            raise ValueError(f"{name} needs two distinct qubits")
        if min(self.qubits) < 0:
            raise ValueError("qubit indices must be non-negative")

    @property
    def is_pair(self) -> bool:
        return len(self.qubits) == 2

    def __str__(self):
        return " ".join([self.name, *map(str, self.qubits)])


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits:
                raise ValueError(f"gate '{g}' addresses a qubit beyond {self.n_qubits}")

    @property
    def is_routed(self) -> bool:
        return all(abs(g.qubits[0] - g.qubits[1]) == 1 for g in self.gates if g.is_pair)


_LINE = re.compile(r"^\s*(?P<body>[^#]*?)\s*(#.*)?$")


def parse_circuit(text: str) -> Circuit:
    """Parse the line-oriented circuit format (see README)."""
    gates, n = [], None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = _LINE.match(raw).group("body")
        if not body:
            continue
        words = body.split()
        head = words[0].lower()
        try:
            if head == "qubits":
                if len(words) != 2 or n is not None:
                    raise ValueError("expected a single 'qubits N' header")
                n = int(words[1])
            else:
                gates.append(Gate(words[0], tuple(int(w) for w in words[1:])))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if n is None:
        n = 1 + max((max(g.qubits) for g in gates), default=-1)
    return Circuit(n, tuple(gates))


def format_circuit(circuit: Circuit) -> str:
    return "\n".join([f"qubits {circuit.n_qubits}"] + [str(g) for g in circuit.gates]) + "\n"


_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.diag([1, -1]).astype(complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def _qubit_op(n: int, q: int, op: np.ndarray) -> np.ndarray:
    return np.kron(np.kron(np.eye(2**q), op), np.eye(2 ** (n - q - 1)))


def gate_unitary(gate: Gate, n: int) -> np.ndarray:
    """Unitary on ``n`` qubits, qubit 0 most significant."""
    if gate.name in SINGLE_QUBIT_GATES:
        return _qubit_op(n, gate.qubits[0], {"X": _X, "Z": _Z, "H": _H}[gate.name])
    a, b = gate.qubits
    dim = 2**n
    u = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        bits = [(col >> (n - 1 - k)) & 1 for k in range(n)]
        if gate.name == "CNOT":
            bits[b] ^= bits[a]
        else:
            bits[a], bits[b] = bits[b], bits[a]
        row = sum(bit << (n - 1 - k) for k, bit in enumerate(bits))
        u[row, col] = 1
    return u


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    if circuit.n_qubits > 10:
        raise ValueError("matrix oracle limited to 10 qubits")
    u = np.eye(2**circuit.n_qubits, dtype=complex)
    for g in circuit.gates:
        u = gate_unitary(g, circuit.n_qubits) @ u
    return u


def route(circuit: Circuit) -> Circuit:
    """Insert SWAP chains so that every two-qubit gate acts on neighbours.

    A distant CNOT walks its control next to the target, acts, and walks
    back; a distant SWAP becomes a chain of neighbour swaps.
    """
    out = []
    for g in circuit.gates:
        if not g.is_pair or abs(g.qubits[0] - g.qubits[1]) == 1:
            out.append(g)
            continue
        a, b = g.qubits
        step = 1 if b > a else -1
        if g.name == "CNOT":
            walk = [Gate("SWAP", (q, q + step)) for q in range(a, b - step, step)]
            out += walk + [Gate("CNOT", (b - step, b))] + walk[::-1]
        else:
            walk = [Gate("SWAP", (q, q + step)) for q in range(a, b, step)]
            out += walk + walk[-2::-1]
    routed = Circuit(circuit.n_qubits, tuple(out))
    if len(out) != len(circuit.gates):
        log.info("routing added %d gates", len(out) - len(circuit.gates))
    return routed


def routing_overhead(original: Circuit, routed: Circuit) -> dict:
    return {"gates_before": len(original.gates), "gates_after": len(routed.gates),
            "added": len(routed.gates) - len(original.gates)}


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class TimedCoupling:
    start: float
    end: float
    coupling: CavityCoupling


@dataclass(frozen=True)
class Operation:
    """One gate inside a slot; times are relative to the slot start (us)."""

    gate: str
    qubits: tuple
    mode: Optional[int]
    duration: float
    pulses: tuple = ()
    couplings: tuple = ()
    frame_updates: tuple = ()  # (atom, level, phase_rad, time_us)

    @property
    def channels(self) -> tuple:
        return tuple(sorted(self.qubits))

    @property
    def is_pair(self) -> bool:
        return len(self.qubits) == 2


@dataclass(frozen=True)
class Slot:
    start: float
    operations: tuple

    @property
    def duration(self) -> float:
        return max((op.duration for op in self.operations), default=0.0)

    @property
    def pairs(self) -> list:
        return [op for op in self.operations if op.is_pair]


@dataclass(frozen=True)
class Schedule:
    n_channels: int
    mode_stride: int
    slots: tuple = ()

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.slots)


def _timeline(prims: Sequence[Primitive], t0: float = 0.0) -> tuple:
    pulses, couplings, frame = [], [], []
    t = t0
    for p in prims:
        for atom, phases in p.pre_correction:
            frame += [(atom, lv, ph, t) for lv, ph in phases]
        pulses += [q.shifted(t) for q in p.pulses]
        couplings += [TimedCoupling(t, t + p.duration, c) for c in p.couplings]
        t += p.duration
        for atom, phases in p.phase_correction:
            frame += [(atom, lv, ph, t) for lv, ph in phases]
    return tuple(pulses), tuple(couplings), tuple(frame), t - t0


def _stages_to_prims(stages: Sequence[Stage]) -> list:
    return [p for st in stages for p in st.primitives]


def gate_primitives(gate: Gate, scheme: Optional[LevelScheme] = None) -> list:
    q = gate.qubits
    if gate.name == "X":
        return [storage_x(q[0], scheme)]
    if gate.name == "Z":
        return [storage_z(q[0])]
    if gate.name == "H":
        return [storage_h(q[0], scheme)]
    if gate.name == "CNOT":
        return _stages_to_prims(cnot_stages(q[0], q[1], scheme))
    return _stages_to_prims(swap_stages(q[0], q[1], scheme))


@lru_cache(maxsize=None)
def _gate_template(name: str, shape: tuple, scheme: Optional[LevelScheme]) -> tuple:
    # calibrate once on canonical atoms, then rename
    return _timeline(gate_primitives(Gate(name, shape), scheme))


def _relabel(template: tuple, mapping: dict) -> tuple:
    pulses, couplings, frame, dur = template
    pulses = tuple(p.on_atom(mapping[p.atom]) for p in pulses)
    couplings = tuple(TimedCoupling(c.start, c.end, CavityCoupling(mapping[c.coupling.atom], c.coupling.g,
                                                                     c.coupling.legs, c.coupling.detuning))
                      for c in couplings)
    frame = tuple((mapping[a], lv, ph, t) for a, lv, ph, t in frame)
    return pulses, couplings, frame, dur


def make_operation(gate: Gate, mode_stride: int, scheme: Optional[LevelScheme] = None) -> Operation:
    if gate.is_pair:
        a, b = gate.qubits
        if abs(a - b) != 1:
            raise ValueError(f"gate '{gate}' is not routed")
        lo = min(a, b)
        # canonical copy on channels (0, 1), same orientation
        shape = (0, 1) if a < b else (1, 0)
        mapping = {0: lo, 1: lo + 1}
        mode = lo * mode_stride
    else:
        shape, mapping, mode = (0,), {0: gate.qubits[0]}, None
    pulses, couplings, frame, dur = _relabel(_gate_template(gate.name, shape, scheme), mapping)
    return Operation(gate.name, gate.qubits, mode, dur, pulses, couplings, frame)


def _conflicts(op: Operation, others: Sequence[Operation]) -> bool:
    lo, hi = min(op.qubits), max(op.qubits)
    for other in others:
        olo, ohi = min(other.qubits), max(other.qubits)
        if op.is_pair and other.is_pair:
            # disjoint with at least one idle channel in between
            if not (olo > hi + 1 or ohi < lo - 1):
                return True
        elif op.is_pair or other.is_pair:
            # laser-only gates stay off active pairs and their immediate neighbours
            if not (olo > hi + 1 or ohi < lo - 1):
                return True
        elif lo == olo:
            return True
    return False


def schedule(circuit: Circuit, n_channels: int, mode_stride: int = DEFAULT_MODE_STRIDE,
             scheme: Optional[LevelScheme] = None) -> Schedule:
    """Greedy as-soon-as-possible slotting under data dependencies and the guard rule."""
    if not circuit.is_routed:
        raise ValueError("circuit must be routed first")
    for g in circuit.gates:
        if max(g.qubits) >= n_channels:
            raise ValueError(f"gate '{g}' references channel >= {n_channels}")
    slots: list[list[Operation]] = []
    ready = [0] * n_channels
    for g in circuit.gates:
        op = make_operation(g, mode_stride, scheme)
        k = max(ready[q] for q in g.qubits)
        while k < len(slots) and _conflicts(op, slots[k]):
            k += 1
        if k == len(slots):
            slots.append([])
        slots[k].append(op)
        for q in g.qubits:
            ready[q] = k + 1
    out, t = [], 0.0
    for ops in slots:
        slot = Slot(t, tuple(sorted(ops, key=lambda o: o.channels)))
        out.append(slot)
        t += slot.duration
    return Schedule(n_channels, mode_stride, tuple(out))


def validate_schedule(sched: Schedule) -> list[str]:
    """Independent check of every slot; returns human-readable violations."""
    problems = []
    limit = max_parallel_pairs(sched.n_channels) if sched.n_channels >= 2 else 0
    for k, slot in enumerate(sched.slots):
        used: set = set()
        for op in slot.operations:
            if max(op.qubits) >= sched.n_channels:
                problems.append(f"slot {k}: {op.gate} {op.qubits} beyond channel range")
            if used & set(op.qubits):
                problems.append(f"slot {k}: channel reused by {op.gate} {op.qubits}")
            used |= set(op.qubits)
            if op.is_pair and abs(op.qubits[0] - op.qubits[1]) != 1:
                problems.append(f"slot {k}: {op.gate} {op.qubits} not on neighbours")
        pairs = sorted(slot.pairs, key=lambda o: o.channels)
        for a, b in zip(pairs, pairs[1:]):
            if b.channels[0] - a.channels[1] < 2:
                problems.append(f"slot {k}: no guard channel between {a.channels} and {b.channels}")
        active = {c for p in pairs for c in p.channels}
        for op in slot.operations:
            if not op.is_pair:
                q = op.qubits[0]
                if {q - 1, q, q + 1} & active:
                    problems.append(f"slot {k}: {op.gate} on {q} touches an active pair")
        if len(pairs) > limit:
            problems.append(f"slot {k}: {len(pairs)} pairs exceed the parallel limit {limit}")
        modes = [p.mode for p in pairs]
        if len(set(modes)) != len(modes):
            problems.append(f"slot {k}: cavity mode shared within the slot")
    return problems


# ---------------------------------------------------------------------------
# serialization


def _pulse_record(p: PulseSpec, freqs: Optional[list]) -> dict:
    d = p.to_dict()
    if freqs is not None:
        d["frequency_mhz"] = freqs
    return d


def _coupling_record(c: TimedCoupling) -> dict:
    return {"atom": c.coupling.atom, "g_mhz": c.coupling.g, "legs": [list(x) for x in c.coupling.legs],
            "detuning_mhz": list(c.coupling.detuning), "start_us": c.start, "end_us": c.end}


def _tone_frequencies(p: PulseSpec, centers: np.ndarray, scheme: LevelScheme) -> list:
    """Absolute laser frequencies (MHz from the profile centre): transition minus detuning."""
    c = float(centers[p.atom])
    return [c + scheme.offset(ex) - scheme.offset(gr) - d for (gr, ex), d in zip(p.legs, p.detuning)]


def _op_record(op: Operation, centers, scheme) -> dict:
    rec = {"gate": op.gate, "qubits": list(op.qubits), "mode": op.mode, "duration_us": op.duration,
           "pulses": [_pulse_record(p, None if centers is None else _tone_frequencies(p, centers, scheme))
                      for p in op.pulses],
           "couplings": [_coupling_record(c) for c in op.couplings],
           "frame_updates": [{"atom": a, "level": lv, "phase_rad": ph, "time_us": t}
                             for a, lv, ph, t in op.frame_updates]}
    if centers is not None and op.is_pair:
        sender, receiver = wire_roles(*op.qubits)
        cav = float(centers[sender]) + scheme.offset("g") - scheme.offset("c")
        rec["cavity_frequency_mhz"] = cav - _wire_detuning(op)
        rec["wire_mismatch_mhz"] = float(centers[receiver]) + scheme.offset("g") - scheme.offset("a") - cav
    return rec


def _wire_detuning(op: Operation) -> float:
    for c in op.couplings:
        for leg, d in zip(c.coupling.legs, c.coupling.detuning):
            if leg == ("c", "g"):
                return d
    return 0.0


def schedule_to_dict(sched: Schedule, centers=None, scheme: Optional[LevelScheme] = None) -> dict:
    scheme = scheme or LevelScheme()
    return {
        "format": SCHEDULE_FORMAT,
        "version": SCHEDULE_VERSION,
        "n_channels": sched.n_channels,
        "mode_stride": sched.mode_stride,
        "slots": [{"start_us": s.start, "operations": [_op_record(op, centers, scheme) for op in s.operations]}
                  for s in sched.slots],
    }


def parse_schedule(text: str) -> Schedule:
    d = json.loads(text)
    if d.get("format") != SCHEDULE_FORMAT:
        raise ValueError("not a schedule file")
    if d.get("version") != SCHEDULE_VERSION:
        raise ValueError(f"unsupported schedule version {d.get('version')}")
    slots = []
    for s in d["slots"]:
        ops = []
        for o in s["operations"]:
            pulses = tuple(PulseSpec.from_dict(p) for p in o["pulses"])
            couplings = tuple(TimedCoupling(c["start_us"], c["end_us"],
                                            CavityCoupling(c["atom"], c["g_mhz"], tuple(tuple(x) for x in c["legs"]),
                                                           tuple(c["detuning_mhz"])))
                              for c in o["couplings"])
            frame = tuple((f["atom"], f["level"], f["phase_rad"], f["time_us"]) for f in o["frame_updates"])
            ops.append(Operation(o["gate"], tuple(o["qubits"]), o["mode"], o["duration_us"], pulses, couplings,
                                 frame))
        slots.append(Slot(s["start_us"], tuple(ops)))
    return Schedule(d["n_channels"], d["mode_stride"], tuple(slots))


@dataclass
class CostReport:
    total_slots: int
    wall_time_us: float
    pair_operations: int
    pair_slots: int
    ops_budget: float
    parallel_limit: int
    budget_fraction: float
    overrun_factor: float
    warnings: list = field(default_factory=list)


def emit(sched: Schedule, table: Optional[ChannelTable] = None, design: Optional[CavityDesign] = None,
         scheme: Optional[LevelScheme] = None, t2_ms: float = 0.1) -> tuple[str, CostReport]:
    """Serialize a schedule with absolute frequencies and report its cost.

    Every referenced channel must be prepared in ``table``, and the cavity
    must be commensurate with the channel spacing at the schedule's mode
    stride.
    """
    scheme = scheme or LevelScheme()
    design = design or derive()
    referenced = sorted({q for s in sched.slots for op in s.operations for q in op.qubits})
    centers = None
    if table is not None:
        for q in referenced:
            if q >= table.n_resolvable or not table.prepared[q]:
                raise ValueError(f"channel {q} is not prepared")
        if referenced:
            _, k = commensurate_fsr(design, table.channel_spacing / 1e3)
            if k != sched.mode_stride:
                raise ValueError(f"cavity FSR gives mode stride {k}, schedule assumes {sched.mode_stride}")
        centers = table.centers
    elif referenced:
        raise ValueError("a prepared channel table is required")
    text = json.dumps(schedule_to_dict(sched, centers, scheme), indent=1)

    budget = op_budget(design, t2_ms).ops_before_cavity_decay
    n_pair_ops = sum(3 if op.gate == "SWAP" else 1 for s in sched.slots for op in s.pairs)
    pair_slots = sum(max((3 if op.gate == "SWAP" else 1 for op in s.pairs), default=0) for s in sched.slots)
    limit = max_parallel_pairs(sched.n_channels) if sched.n_channels >= 2 else 1
    total_fraction = n_pair_ops / (budget * limit) if math.isfinite(budget) else 0.0
    depth_fraction = pair_slots / budget if math.isfinite(budget) else 0.0
    overrun = max(total_fraction, depth_fraction)
    report = CostReport(len(sched.slots), sched.duration, n_pair_ops, pair_slots, budget, limit, total_fraction,
                        overrun)
    if centers is not None:
        for s in sched.slots:
            for op in s.pairs:
                sender, receiver = wire_roles(*op.qubits)
                mismatch = centers[receiver] - centers[sender] + scheme.epsilon_ac
                if abs(mismatch) > table.homogeneous_linewidth:
                    report.warnings.append(f"pair {op.channels}: wire legs {mismatch:.4g} MHz apart")
    if overrun > 1:
        msg = f"schedule exceeds the cavity operation budget by a factor {overrun:.3g}"
        report.warnings.append(msg)
        warnings.warn(msg, BudgetWarning, stacklevel=2)
    return text, report


# ---------------------------------------------------------------------------
# simulation


def _storage_matrix(op: np.ndarray) -> np.ndarray:
    m = np.eye(ATOM_DIM, dtype=complex)
    idx = [LEVEL_INDEX["e"], LEVEL_INDEX["f"]]
    m[np.ix_(idx, idx)] = op
    return m


def _swap_storage() -> np.ndarray:
    u = np.eye(ATOM_DIM**2)
    for x in STORAGE:
        for y in STORAGE:
            i = LEVEL_INDEX[x] * ATOM_DIM + LEVEL_INDEX[y]
            j = LEVEL_INDEX[y] * ATOM_DIM + LEVEL_INDEX[x]
            u[i] = 0
            u[i, j] = 1
    return u


def ideal_operation(data: np.ndarray, gate: str, atoms: Sequence[int], dims: tuple) -> np.ndarray:
    """Apply a gate's ideal action on the storage encoding (|0> = e, |1> = f)."""
    if gate in SINGLE_QUBIT_GATES:
        return apply_local(data, _storage_matrix({"X": _X, "Z": _Z, "H": _H}[gate]), list(atoms), dims)
    if gate == "CNOT":
        return apply_local(data, ideal_cnot(), list(atoms), dims)
    return apply_local(data, _swap_storage(), list(atoms), dims)


def _op_primitives(gate: str, atoms: tuple, scheme: Optional[LevelScheme]) -> list:
    return gate_primitives(Gate(gate, atoms), scheme)


def simulate_schedule(sched: Schedule, state: CompositeState, noise: Optional[NoiseParams] = None,
                      window: Optional[Sequence[int]] = None, scheme: Optional[LevelScheme] = None,
                      tol: float = 1e-10) -> tuple:
    """Run a schedule slot by slot through the gate protocols.

    ``state`` holds one atom per simulated channel: all channels when there
    are at most four, otherwise the sorted ``window`` of channels (atoms
    outside it are frozen spectators; gates straddling the window edge are
    rejected). Returns ``(final state, trace)`` with the fidelity against the
    ideal storage-qubit evolution after every slot.
    """
    if window is None:
        if sched.n_channels > MAX_SIMULATED_ATOMS:
            raise ValueError(f"select a window of at most {MAX_SIMULATED_ATOMS} channels")
        window = list(range(sched.n_channels))
    window = sorted(int(w) for w in window)
    if len(window) > MAX_SIMULATED_ATOMS:
        raise ValueError(f"window holds more than {MAX_SIMULATED_ATOMS} channels")
    if state.space.n_atoms != len(window):
        raise ValueError("state must hold one atom per simulated channel")
    pos = {c: k for k, c in enumerate(window)}
    dims = state.space.dims
    for k in range(len(window)):
        _check_levels(state, k, STORAGE, "storage")
    ideal = state.data.copy()
    trace = []
    for n, slot in enumerate(sched.slots):
        for op in slot.operations:
            inside = [q in pos for q in op.qubits]
            if not any(inside):
                continue
            if not all(inside):
                raise ValueError(f"{op.gate} {op.qubits} straddles the simulation window")
            atoms = tuple(pos[q] for q in op.qubits)
            if op.is_pair and abs(atoms[0] - atoms[1]) != 1:
                raise ValueError("window must keep gate pairs adjacent")
            for prim in _op_primitives(op.gate, atoms, scheme):
                state = run_primitive(state, prim, noise, tol=tol, scheme=scheme)
            ideal = ideal_operation(ideal, op.gate, atoms, dims)
        trace.append({"slot": n, "t_end_us": slot.start + slot.duration, "fidelity": fidelity(state, ideal)})
    return state, trace
