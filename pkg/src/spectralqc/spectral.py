"""Inhomogeneous channel model and one-atom-per-channel preparation.

Atoms are drawn from the inhomogeneous profile as per-channel counts
(a multinomial over channel bins) rather than one by one, which keeps the
default 2.5e9-atom volume cheap. Preparation simulates deforming-laser shots
gated by noisy frequency-pull measurements.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .dynamics import NV_HOMOGENEOUS_LINEWIDTH

FORMAT = "spectralqc.channel-table"
VERSION = 1
PROFILES = ("gaussian", "lorentzian", "uniform")
PRESETS = {"nv-500G": 2800.0, "nv-zero-field": 4.6}  # channel spacing, MHz

STOP_THRESHOLD = 1.5  # stop once the measured pull falls below this many single-atom pulls
PROBES_PER_MEASUREMENT = 4
# occupancies above this are counted down without simulating each probe
FAST_FORWARD_FLOOR = 64


def n_resolvable(width_mhz: float, spacing_mhz: float) -> int:
    if not (width_mhz > 0 and spacing_mhz > 0):
        raise ValueError("width and spacing must be positive")
    # guard against 1e6 / 4.6 style round-off just below an integer
    return int(math.floor(width_mhz / spacing_mhz * (1 + 1e-12)))


@dataclass
class ChannelTable:
    """Spectral channels of one spot.

    Frequencies are MHz; ``centers`` are offsets from the profile centre.
    ``occupancy`` counts every atom binned into a channel and ``in_window``
    those close enough to the channel centre to be usable.
    """

    inhomogeneous_width: float = 1e6
    channel_spacing: float = 2800.0
    profile: str = "gaussian"
    homogeneous_linewidth: float = NV_HOMOGENEOUS_LINEWIDTH
    occupancy: np.ndarray = field(default=None, repr=False)
    in_window: np.ndarray = field(default=None, repr=False)
    prepared: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        n = self.n_resolvable
        if self.occupancy is None:
            self.occupancy = np.zeros(n, dtype=np.int64)
        if self.in_window is None:
            self.in_window = np.zeros(n, dtype=np.int64)
        if self.prepared is None:
            self.prepared = np.zeros(n, dtype=bool)
        for name in ("occupancy", "in_window", "prepared"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per channel ({n})")
            setattr(self, name, arr)
        if np.any(self.prepared & (self.occupancy != 1)):
            raise ValueError("prepared channels must hold exactly one atom")

    @classmethod
    def preset(cls, name: str, **kwargs) -> "ChannelTable":
        return cls(channel_spacing=PRESETS[name], **kwargs)

    @property
    def n_resolvable(self) -> int:
        return n_resolvable(self.inhomogeneous_width, self.channel_spacing)

    @property
    def centers(self) -> np.ndarray:
        n = self.n_resolvable
        return (np.arange(n) - (n - 1) / 2) * self.channel_spacing

    @property
    def states(self) -> list[str]:
        return ["prepared" if p else "raw" for p in self.prepared]

    def copy(self) -> "ChannelTable":
        return replace(self, occupancy=self.occupancy.copy(), in_window=self.in_window.copy(),
                       prepared=self.prepared.copy())

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "inhomogeneous_width_mhz": self.inhomogeneous_width,
            "channel_spacing_mhz": self.channel_spacing,
            "profile": self.profile,
            "homogeneous_linewidth_mhz": self.homogeneous_linewidth,
            "n_resolvable": self.n_resolvable,
            "channels": {
                "occupancy": self.occupancy.tolist(),
                "in_window": self.in_window.tolist(),
                "state": self.states,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelTable":
        if d.get("format") != FORMAT:
            raise ValueError("not a channel table")
        if d.get("version") != VERSION:
            raise ValueError(f"unsupported channel table version {d.get('version')}")
        ch = d["channels"]
        table = cls(d["inhomogeneous_width_mhz"], d["channel_spacing_mhz"], d["profile"],
                    d["homogeneous_linewidth_mhz"], np.asarray(ch["occupancy"], dtype=np.int64),
                    np.asarray(ch["in_window"], dtype=np.int64),
                    np.asarray([s == "prepared" for s in ch["state"]], dtype=bool))
        if table.n_resolvable != d["n_resolvable"]:
            raise ValueError("channel count does not match width and spacing")
        return table

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "ChannelTable":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class DopedVolume:
    dopant_density: float = 1e17  # per cm^3
    volume: float = 25000.0  # um^3
    rng_seed: int = 0

    @property
    def expected_atoms(self) -> float:
        return self.dopant_density * self.volume * 1e-12

    @property
    def mean_distance(self) -> float:
        """Spacing (um) between atoms of adjacent channels, one per channel in the volume."""
        return self.volume ** (1 / 3)


def _cdf(profile: str, width: float):
    if profile == "gaussian":
        return stats.norm(scale=width / (2 * math.sqrt(2 * math.log(2)))).cdf
    if profile == "lorentzian":
        return stats.cauchy(scale=width / 2).cdf
    return stats.uniform(loc=-width / 2, scale=width).cdf


def populate(volume: DopedVolume, table: ChannelTable, rng: Optional[np.random.Generator] = None) -> tuple:
    """Draw atoms from the profile into the channels.

    Returns ``(table, summary)``. Atoms whose frequency falls outside every
    channel bin are counted in the summary only.
    """
    rng = rng if rng is not None else np.random.default_rng(volume.rng_seed)
    cdf = _cdf(table.profile, table.inhomogeneous_width)
    c = table.centers
    half = table.channel_spacing / 2
    win = min(table.homogeneous_linewidth, half)
    p_bin = cdf(c + half) - cdf(c - half)
    p_win = cdf(c + win) - cdf(c - win)
    total = int(rng.poisson(volume.expected_atoms))
    counts = rng.multinomial(total, np.append(p_bin, max(0.0, 1 - p_bin.sum())))
    occ = counts[:-1].astype(np.int64)
    inside = rng.binomial(occ, np.clip(p_win / np.where(p_bin > 0, p_bin, 1), 0, 1)).astype(np.int64)
    out = replace(table, occupancy=occ, in_window=inside, prepared=np.zeros_like(table.prepared))
    mean = volume.expected_atoms * p_bin
    summary = {
        "total_atoms": total,
        "expected_atoms": volume.expected_atoms,
        "outside_channels": int(counts[-1]),
        "n_resolvable": table.n_resolvable,
        "mean_occupancy": float(occ.mean()),
        "p_channel_empty": float(np.mean(np.exp(-mean))),
        "empty_channels": int(np.sum(occ == 0)),
        "no_atom_in_window": int(np.sum(inside == 0)),
        "mean_distance_um": volume.mean_distance,
    }
    return out, summary


@dataclass(frozen=True)
class PrepParams:
    pull_per_atom: float  # kHz
    measurement_noise: float = 0.0  # kHz, per probe
    success_probability: float = 1.0
    probes: int = PROBES_PER_MEASUREMENT
    threshold: float = STOP_THRESHOLD

    def __post_init__(self):
        if not self.pull_per_atom > 0:
            raise ValueError("pull_per_atom must be positive")
        if self.measurement_noise < 0 or self.probes < 1:
            raise ValueError("invalid measurement settings")
        if not 0 < self.success_probability <= 1:
            raise ValueError("success_probability must lie in (0, 1]")


def _measure(occ: int, p: PrepParams, rng: np.random.Generator) -> float:
    pull = occ * p.pull_per_atom
    if p.measurement_noise > 0:
        pull += float(rng.normal(0.0, p.measurement_noise, p.probes).mean())
    return pull


def _countdown(occ: int, p: PrepParams, rng: np.random.Generator) -> tuple[int, list, int, int]:
    """Shoot until the measured pull says one atom is left.

    Returns (final occupancy, measured pulls, shots, shots taken without probing).
    """
    shots = 0
    skipped = 0
    sigma = p.measurement_noise / math.sqrt(p.probes)
    if occ > FAST_FORWARD_FLOOR:
        # far above threshold a stop is a > 50 sigma event: count down without probing
        target = FAST_FORWARD_FLOOR
        if sigma == 0 or (target - p.threshold) * p.pull_per_atom / sigma > 50:
            need = occ - target
            extra = rng.negative_binomial(need, p.success_probability) if p.success_probability < 1 else 0
            shots += need + int(extra)
            skipped = need + int(extra)
            occ = target
    trace = [_measure(occ, p, rng)]
    while trace[-1] >= p.threshold * p.pull_per_atom and occ > 0:
        shots += 1
        if rng.random() < p.success_probability:
            occ -= 1
        trace.append(_measure(occ, p, rng))
    return occ, trace, shots, skipped


def prepare_channel(table: ChannelTable, index: int, params: PrepParams,
                    rng: Optional[np.random.Generator] = None) -> tuple:
    """Remove atoms from one channel until a single one remains.

    Returns ``(table, trace)`` where ``trace`` lists the measured pulls
    (kHz), starting before the first shot. Counts above the fast-forward floor
    are reduced without recording probes; ``trace`` then starts at the floor.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if not 0 <= index < table.n_resolvable:
        raise IndexError(f"channel {index} out of range")
    occ = int(table.occupancy[index])
    if occ < 1:
        raise ValueError(f"channel {index} is empty and cannot be prepared")
    out = table.copy()
    if table.prepared[index]:
        return out, []
    final, trace, _, _ = _countdown(occ, params, rng)
    # the survivor is usable only if it sits inside the channel window
    out.in_window[index] = min(int(out.in_window[index]), final)
    out.occupancy[index] = final
    out.prepared[index] = final == 1
    return out, trace


def prepare_all(table: ChannelTable, params: PrepParams, rng: Optional[np.random.Generator] = None) -> tuple:
    """Prepare every raw, non-empty channel. Returns ``(table, report)``."""
    rng = rng if rng is not None else np.random.default_rng()
    out = table.copy()
    shots = 0
    failed = []
    for k in range(out.n_resolvable):
        if out.prepared[k] or out.occupancy[k] == 0:
            continue
        final, _, n, _ = _countdown(int(out.occupancy[k]), params, rng)
        shots += n
        out.in_window[k] = min(int(out.in_window[k]), final)
        out.occupancy[k] = final
        out.prepared[k] = final == 1
        if final != 1:
            failed.append(k)
    report = {
        "n_channels": out.n_resolvable,
        "prepared": int(out.prepared.sum()),
        "empty_channels": [int(k) for k in np.flatnonzero(out.occupancy == 0) if k not in failed],
        "failed_channels": failed,
        "total_shots": int(shots),
    }
    return out, report
