"""Cavity geometry, operation budgets and parallelism estimates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# empirical coefficients of the hour-glass cavity: g = G / (D sqrt(L)) MHz, width = K / L kHz
G_COEFFICIENT = 170.0
KAPPA_COEFFICIENT = 42.0
FSR_FORMULAS = ("c/4L", "c/2L")


@dataclass(frozen=True)
class CavityDesign:
    """Cavity of length ``length_cm`` and waist ``waist_um`` with its derived figures."""

    length_cm: float
    waist_um: float
    quality: float = 2e5
    fsr_formula: str = "c/4L"
    g_coefficient: float = G_COEFFICIENT
    kappa_coefficient: float = KAPPA_COEFFICIENT

    def __post_init__(self):
        if not (self.length_cm > 0 and self.waist_um > 0):
            raise ValueError("cavity length and waist must be positive")
        if self.fsr_formula not in FSR_FORMULAS:
            raise ValueError(f"fsr_formula must be one of {FSR_FORMULAS}")
        if self.kappa_coefficient < 0 or self.g_coefficient <= 0:
            raise ValueError("coupling coefficients must be positive")

    @property
    def g_vacuum(self) -> float:
        """Vacuum Rabi frequency (MHz)."""
        return self.g_coefficient / (self.waist_um * math.sqrt(self.length_cm))

    @property
    def kappa_width(self) -> float:
        """Cavity full width (kHz)."""
        return self.kappa_coefficient / self.length_cm

    @property
    def fsr(self) -> float:
        """Free spectral range (MHz)."""
        factor = 4 if self.fsr_formula == "c/4L" else 2
        return SPEED_OF_LIGHT / (factor * self.length_cm * 1e-2) * 1e-6

    @property
    def photon_lifetime(self) -> float:
        """1 / (2 pi width), in ms."""
        if self.kappa_width == 0:
            return math.inf
        return 1.0 / (2 * math.pi * self.kappa_width)

    def with_length(self, length_cm: float) -> "CavityDesign":
        return CavityDesign(length_cm, self.waist_um, self.quality, self.fsr_formula,
                            self.g_coefficient, self.kappa_coefficient)

    def report(self) -> dict:
        out = asdict(self)
        out.update(g_vacuum_mhz=self.g_vacuum, kappa_width_khz=self.kappa_width, fsr_mhz=self.fsr,
                   photon_lifetime_ms=self.photon_lifetime)
        return out


def derive(length_cm: float = 30.0, waist_um: float = 50.0, quality: float = 2e5,
           fsr_formula: str = "c/4L") -> CavityDesign:
    return CavityDesign(float(length_cm), float(waist_um), float(quality), fsr_formula)


@dataclass(frozen=True)
class OpBudget:
    ops_before_cavity_decay: float
    limiting_resource: str
    unbounded: bool


def op_budget(design: CavityDesign, t2_ms: float = 0.1) -> OpBudget:
    """Operations per cavity lifetime, g / width, and whether spin or cavity coherence runs out first."""
    if design.kappa_width == 0:
        return OpBudget(math.inf, "spin", True)
    ops = design.g_vacuum * 1e3 / design.kappa_width
    limiting = "spin" if t2_ms < design.photon_lifetime else "cavity"
    return OpBudget(ops, limiting, False)


def commensurate_fsr(design: CavityDesign, channel_spacing_ghz: float,
                     max_relative_change: float = 0.02) -> tuple[float, int]:
    """Nearest length at which the channel spacing is an integer multiple ``k`` of the FSR.

    Returns ``(adjusted length in cm, k)``.
    """
    spacing = channel_spacing_ghz * 1e3
    fsr = design.fsr
    if not spacing > fsr:
        raise ValueError(f"channel spacing {spacing} MHz must exceed the FSR {fsr:.6g} MHz")
    ratio = spacing / fsr
    best = None
    for k in {max(1, math.floor(ratio)), math.ceil(ratio)}:
        # FSR scales as 1/L
        new_len = design.length_cm * k / ratio
        delta = abs(new_len - design.length_cm)
        if best is None or delta < best[0] - 1e-15:
            best = (delta, new_len, k)
    delta, new_len, k = best
    if abs(ratio - round(ratio)) < 1e-12:
        return design.length_cm, int(round(ratio))
    if delta > max_relative_change * design.length_cm:
        raise ValueError(f"no commensurate length within {max_relative_change:.1%} of L "
                         f"(closest needs {delta / design.length_cm:.2%})")
    return new_len, int(k)


def max_parallel_pairs(n_channels: int) -> int:
    """Adjacent pairs that fit with one idle channel between consecutive pairs."""
    if n_channels < 2:
        raise ValueError("at least two channels are needed")
    return (n_channels + 1) // 3


def parallel_budget(n_channels: int, ops_per_pair: float) -> tuple[int, float]:
    """(parallel pairs, total operations before decoherence)."""
    n = max_parallel_pairs(n_channels)
    return n, n * ops_per_pair
