"""Composite Hilbert space of multi-level atoms coupled to one cavity mode.

Basis ordering is fixed everywhere in the package::

    atom 0 (x) atom 1 (x) ... (x) atom N-1 (x) cavity

with each atom spanning the levels ``a b c d e f g h`` in that order and the
cavity spanning Fock states ``0 .. cavity_dim - 1``. Flattening uses numpy
C order, so the cavity index varies fastest and atom 0 slowest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

GROUND_LEVELS = ("a", "b", "c", "d", "e", "f")
EXCITED_LEVELS = ("g", "h")
LEVELS = GROUND_LEVELS + EXCITED_LEVELS
LEVEL_INDEX = {label: i for i, label in enumerate(LEVELS)}
ATOM_DIM = len(LEVELS)

# (A spin, B spin) for every ground level; A is spin 1, B is spin 1/2
AB_ENCODING = {
    "a": ("up", "up"),
    "b": ("up", "down"),
    "c": ("down", "up"),
    "d": ("down", "down"),
    "e": ("horiz", "up"),
    "f": ("horiz", "down"),
}

# the two cavity Lambda systems: (ground 1, excited, ground 2)
LAMBDA_LEGS = (("a", "g", "c"), ("b", "h", "d"))

MAX_AMPLITUDES = 10**6

Site = Union[int, str]
CAVITY = "cavity"


def _all_links() -> frozenset:
    return frozenset((gr, ex) for gr in GROUND_LEVELS for ex in EXCITED_LEVELS)


@dataclass(frozen=True)
class LevelScheme:
    """Per-atom level structure.

    Ground offsets are in MHz relative to level ``a``; excited offsets are in
    MHz relative to a shared optical reference (the optical carrier itself is
    never stored). ``optical_links`` lists the (ground, excited) transitions
    that laser tones may address; the cavity Lambda legs must be among them.
    """

    ground_offsets: tuple = (0.0, 4.6, 2800.0, 2802.4, 1400.0, 1404.6)
    excited_offsets: tuple = (0.0, 4.6)
    optical_links: frozenset = field(default_factory=_all_links)
    ab_encoding: Mapping = field(default_factory=lambda: dict(AB_ENCODING), hash=False, compare=False)

    def __post_init__(self):
        if len(self.ground_offsets) != len(GROUND_LEVELS):
            raise ValueError(f"need {len(GROUND_LEVELS)} ground offsets, got {len(self.ground_offsets)}")
        if len(self.excited_offsets) != len(EXCITED_LEVELS):
            raise ValueError(f"need {len(EXCITED_LEVELS)} excited offsets")
        if self.ground_offsets[0] != 0.0:
            raise ValueError("ground offsets are measured from level a, which must sit at 0")
        if dict(self.ab_encoding) != AB_ENCODING:
            raise ValueError("ab_encoding must be the fixed A/B product map")
        eac, ebd = self.epsilon_ac, self.epsilon_bd
        if eac <= 0 or ebd <= 0:
            raise ValueError("epsilon_ac and epsilon_bd must be positive")
        if abs(eac - ebd) >= eac:
            raise ValueError("|epsilon_ac - epsilon_bd| must be small compared to epsilon_ac")
        for g1, ex, g2 in LAMBDA_LEGS:
            if (g1, ex) not in self.optical_links or (g2, ex) not in self.optical_links:
                raise ValueError(f"Lambda leg {g1}-{ex}-{g2} missing from optical_links")

    @classmethod
    def nv_diamond(cls) -> "LevelScheme":
        """NV-diamond preset at 500 G (2.8 GHz inter-qubit spacing)."""
        return cls()

    def offset(self, label: str) -> float:
        if label in GROUND_LEVELS:
            return float(self.ground_offsets[GROUND_LEVELS.index(label)])
        if label in EXCITED_LEVELS:
            return float(self.excited_offsets[EXCITED_LEVELS.index(label)])
        raise KeyError(f"unknown level {label!r}")

    @property
    def epsilon_ac(self) -> float:
        return self.offset("c") - self.offset("a")

    @property
    def epsilon_bd(self) -> float:
        return self.offset("d") - self.offset("b")

    def shared_excited(self, g1: str, g2: str) -> list[str]:
        """Excited levels optically linked to both ground levels."""
        return [ex for ex in EXCITED_LEVELS
                if (g1, ex) in self.optical_links and (g2, ex) in self.optical_links]


@dataclass(frozen=True)
class Space:
    """Dimensions of an atoms (x) cavity register."""

    n_atoms: int
    cavity_dim: int = 2
    atom_dim: int = ATOM_DIM

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("need at least one atom")
        if self.cavity_dim < 2:
            raise ValueError("cavity_dim must be >= 2")

    @property
    def dims(self) -> tuple:
        return (self.atom_dim,) * self.n_atoms + (self.cavity_dim,)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def site_index(self, site: Site) -> int:
        if site == CAVITY:
            return self.n_atoms
        if isinstance(site, (int, np.integer)) and 0 <= site < self.n_atoms:
            return int(site)
        raise IndexError(f"site {site!r} out of range for {self.n_atoms} atoms")

    def index(self, levels: Sequence[str], photons: int = 0) -> int:
        """Flat basis index of |levels..., photons>."""
        if len(levels) != self.n_atoms:
            raise ValueError("one level label per atom required")
        idx = [LEVEL_INDEX[lv] for lv in levels] + [photons]
        return int(np.ravel_multi_index(idx, self.dims))


@dataclass
class CompositeState:
    """Pure vector or density matrix on a :class:`Space`."""

    space: Space
    data: np.ndarray

    @property
    def representation(self) -> str:
        return "pure-vector" if self.data.ndim == 1 else "density-matrix"

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def atom_dims(self) -> tuple:
        return self.space.dims[:-1]

    @property
    def cavity_dim(self) -> int:
        return self.space.cavity_dim

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data

    def to_density(self) -> "CompositeState":
        return CompositeState(self.space, self.density().copy())

    def copy(self) -> "CompositeState":
        return CompositeState(self.space, self.data.copy())

    def check(self, atol_norm: float = 1e-9, atol_herm: float = 1e-10, min_eig: float = -1e-8) -> None:
        """Raise ``ValueError`` if normalisation or positivity is violated."""
        if self.is_pure:
            norm = np.vdot(self.data, self.data).real
            if abs(norm - 1) > atol_norm:
                raise ValueError(f"state norm {norm!r} deviates from 1")
            return
        rho = self.data
        if np.max(np.abs(rho - rho.conj().T)) > atol_herm:
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1) > atol_norm:
            raise ValueError(f"trace {tr!r} deviates from 1")
        lo = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
        if lo < min_eig:
            raise ValueError(f"negative eigenvalue {lo!r}")

    def population(self, site: Site, level: Union[str, int]) -> float:
        """Probability of finding ``site`` in ``level`` (label or Fock number)."""
        red = partial_trace(self, [site])
        k = LEVEL_INDEX[level] if isinstance(level, str) else int(level)
        return float(red[k, k].real)

    def photon_number(self) -> float:
        red = partial_trace(self, [CAVITY])
        return float(np.real(np.sum(np.arange(red.shape[0]) * np.diag(red))))


def build_space(atoms: int, scheme: LevelScheme | None = None, cavity_dim: int = 2) -> CompositeState:
    """Ground state |a>...|a>|0> of ``atoms`` atoms and a truncated cavity."""
    space = Space(atoms, cavity_dim)
    if space.dim > MAX_AMPLITUDES:
        raise ValueError(f"{space.dim} amplitudes exceeds the desk-scale limit of {MAX_AMPLITUDES}")
    psi = np.zeros(space.dim, dtype=complex)
    psi[0] = 1.0
    return CompositeState(space, psi)


def level_ket(label: str) -> np.ndarray:
    v = np.zeros(ATOM_DIM, dtype=complex)
    v[LEVEL_INDEX[label]] = 1.0
    return v


def atom_vector(amplitudes: Mapping[str, complex]) -> np.ndarray:
    """Single-atom vector from ``{label: amplitude}``."""
    v = np.zeros(ATOM_DIM, dtype=complex)
    for label, amp in amplitudes.items():
        v[LEVEL_INDEX[label]] += amp
    return v


def fock_ket(n: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


def product_state(space: Space, atoms: Sequence, cavity=0) -> CompositeState:
    """Product state from per-atom specs (label, mapping or vector) and a cavity spec."""
    if len(atoms) != space.n_atoms:
        raise ValueError("one atom spec per atom required")
    vecs = []
    for spec in atoms:
        if isinstance(spec, str):
            vecs.append(level_ket(spec))
        elif isinstance(spec, Mapping):
            vecs.append(atom_vector(spec))
        else:
            vecs.append(np.asarray(spec, dtype=complex))
    if isinstance(cavity, (int, np.integer)):
        vecs.append(fock_ket(int(cavity), space.cavity_dim))
    else:
        vecs.append(np.asarray(cavity, dtype=complex))
    psi = reduce(np.kron, vecs)
    return CompositeState(space, psi / np.linalg.norm(psi))


def transition(to: str, frm: str) -> np.ndarray:
    """Single-atom operator |to><frm|."""
    return np.outer(level_ket(to), level_ket(frm))


def projector(label: str) -> np.ndarray:
    return transition(label, label)


def destroy(dim: int) -> np.ndarray:
    """Truncated annihilation operator."""
    return np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)


def embed_operator(op: np.ndarray, site: Site, space: Space) -> np.ndarray:
    """Lift a single-site operator to the full register (identity elsewhere)."""
    k = space.site_index(site)
    op = np.asarray(op)
    d = space.dims[k]
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match site dimension {d}")
    left = int(np.prod(space.dims[:k]))
    right = int(np.prod(space.dims[k + 1:]))
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def partial_trace(state: Union[CompositeState, np.ndarray], keep: Iterable[Site], dims=None) -> np.ndarray:
    """Reduced density matrix on the ``keep`` sites (in register order)."""
    if isinstance(state, CompositeState):
        dims = state.space.dims
        keep_idx = sorted({state.space.site_index(s) for s in keep})
        data = state.data
    else:
        keep_idx = sorted(set(keep))
        data = np.asarray(state)
    if not keep_idx:
        raise ValueError("keep must name at least one site")
    n = len(dims)
    drop = [i for i in range(n) if i not in keep_idx]
    dk = int(np.prod([dims[i] for i in keep_idx]))
    if data.ndim == 1:
        psi = data.reshape(dims)
        psi = np.moveaxis(psi, keep_idx, range(len(keep_idx))).reshape(dk, -1)
        return psi @ psi.conj().T
    rho = data.reshape(dims + dims)
    perm = keep_idx + drop
    rho = rho.transpose(perm + [n + p for p in perm])
    rest = int(np.prod([dims[i] for i in drop])) if drop else 1
    rho = rho.reshape(dk, rest, dk, rest)
    return np.einsum("ajbj->ab", rho)


def _apply_axes(tensor: np.ndarray, op: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    axes = list(axes)
    moved = np.moveaxis(tensor, axes, range(len(axes)))
    shape = moved.shape
    dsub = op.shape[1]
    out = (op @ moved.reshape(dsub, -1)).reshape(shape)
    return np.moveaxis(out, range(len(axes)), axes)


def apply_local(data: np.ndarray, op: np.ndarray, sites: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Apply an operator acting on ``sites`` (register indices, in the given order).

    Works on vectors (``op @ psi``) and on density matrices (``op rho op^dag``).
    """
    dims = tuple(dims)
    n = len(dims)
    if data.ndim == 1:
        return _apply_axes(data.reshape(dims), op, sites).reshape(-1)
    rho = data.reshape(dims + dims)
    rho = _apply_axes(rho, op, sites)
    rho = _apply_axes(rho, op.conj(), [n + s for s in sites])
    return rho.reshape(data.shape)


def fidelity(state: Union[CompositeState, np.ndarray], target: Union[CompositeState, np.ndarray]) -> float:
    """Overlap ``<t|rho|t>`` between a state and a pure target."""
    s = state.data if isinstance(state, CompositeState) else np.asarray(state)
    t = target.data if isinstance(target, CompositeState) else np.asarray(target)
    if t.ndim != 1:
        raise ValueError("target must be a pure vector")
    if s.ndim == 1:
        return float(abs(np.vdot(t, s)) ** 2)
    return float(np.real(t.conj() @ s @ t))
