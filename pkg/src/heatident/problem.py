"""Physical description of a single-layer wall and its dimensionless form.

Temperatures are carried in Kelvin everywhere inside the package; Celsius only
appears when reading or writing user-facing files.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

KELVIN_OFFSET = 273.15
DEFAULT_T0 = 293.15
HOUR = 3600.0


def celsius_to_kelvin(v):
    return v + KELVIN_OFFSET


def kelvin_to_celsius(v):
    return v - KELVIN_OFFSET


class ParameterKind(str, enum.Enum):
    """The scalar that is treated as unknown during identification."""

    HEAT_CAPACITY = "heat_capacity"
    CONDUCTIVITY = "conductivity"
    SURFACE_COEFFICIENT_LEFT = "surface_coefficient_left"

    @classmethod
    def parse(cls, text: str | "ParameterKind") -> "ParameterKind":
        if isinstance(text, cls):
            return text
        aliases = {"c": cls.HEAT_CAPACITY, "k": cls.CONDUCTIVITY, "hl": cls.SURFACE_COEFFICIENT_LEFT,
                   "h_l": cls.SURFACE_COEFFICIENT_LEFT}
        key = str(text).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class Material:
    id: int
    c: float  # J/(m3 K)
    k: float  # W/(m K)
    name: str = ""

    def __post_init__(self):
        if not (self.c > 0 and self.k > 0):
            raise ValueError(f"material {self.id}: c and k must be positive (c={self.c}, k={self.k})")


# Volumetric heat capacities are read as MJ/(m3 K).
MATERIALS: dict[int, Material] = {
    1: Material(1, 5e-2 * 1e6, 5e-2, "insulation"),
    2: Material(2, 5e-1 * 1e6, 5e-1, "wood"),
    3: Material(3, 1.5e6, 1.0, "brick"),
    4: Material(4, 2.0e6, 1.5, "concrete"),
    5: Material(5, 2.5e6, 2.5, "stone"),
}


def get_material(material_id: int) -> Material:
    try:
        return MATERIALS[int(material_id)]
    except KeyError:
        raise KeyError(f"unknown material id {material_id!r}; known ids are {sorted(MATERIALS)}") from None


@dataclass(frozen=True)
class ForcingTerm:
    """One additive term: ``amplitude * sin(2 pi t / scale)`` or ``amplitude * tanh(t / scale)``."""

    shape: str
    amplitude: float  # K
    scale: float  # s, period for sin, time constant for tanh

    def __post_init__(self):
        if self.shape not in ("sin", "tanh"):
            raise ValueError(f"unsupported forcing term shape {self.shape!r}")
        if not self.scale > 0:
            raise ValueError("forcing term period/time constant must be positive")

    def __call__(self, t):
        if self.shape == "sin":
            return self.amplitude * np.sin(2.0 * np.pi * t / self.scale)
        return self.amplitude * np.tanh(t / self.scale)


@dataclass(frozen=True)
class ForcingSignal:
    """Ambient temperature in K as a closed-form function of time in seconds."""

    kind: str
    baseline: float
    terms: tuple[ForcingTerm, ...] = ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, self.baseline, dtype=float)
        for term in self.terms:
            out = out + term(t)
        return out if out.ndim else float(out)

    @classmethod
    def constant(cls, value: float) -> "ForcingSignal":
        return cls("constant", float(value))

    @classmethod
    def paper_left(cls, baseline: float = DEFAULT_T0) -> "ForcingSignal":
        return cls("paper-left", float(baseline), (
            ForcingTerm("sin", 10.0, 20 * HOUR),
            ForcingTerm("sin", 10.0, 2 * HOUR),
        ))

    @classmethod
    def paper_right(cls, baseline: float = DEFAULT_T0) -> "ForcingSignal":
        return cls("paper-right", float(baseline), (
            ForcingTerm("tanh", 20.0, 4 * HOUR),
            ForcingTerm("sin", -10.0, 4 * HOUR),
        ))

    @classmethod
    def custom(cls, baseline: float, terms) -> "ForcingSignal":
        return cls("custom-sum-of-terms", float(baseline), tuple(terms))

    def is_constant(self) -> bool:
        return not self.terms


def eval_forcing(signal: ForcingSignal, t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("forcing signals are defined for t >= 0 only")
    return signal(t)


@dataclass(frozen=True)
class ReferenceScales:
    t_ref: float = 3600.0
    T_ref: float = 273.15
    k_ref: float = 1.0
    c_ref: float = 1.5e6
    h_ref: float = 5.0

    def __post_init__(self):
        for name in ("t_ref", "T_ref", "k_ref", "c_ref", "h_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"reference scale {name} must be strictly positive")


@dataclass(frozen=True)
class WallProblem:
    L: float
    h_L: float
    h_R: float
    T0: float
    forcing_L: ForcingSignal
    forcing_R: ForcingSignal
    t_f: float
    material: Material

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("wall thickness L must be positive")
        if self.h_L < 0 or self.h_R < 0:
            raise ValueError("surface coefficients must be non-negative")
        if not self.t_f > 0:
            raise ValueError("time horizon t_f must be positive")
        if not self.T0 > 0:
            raise ValueError("T0 is an absolute temperature in K and must be positive")

    def parameter(self, kind: ParameterKind) -> float:
        kind = ParameterKind.parse(kind)
        if kind is ParameterKind.HEAT_CAPACITY:
            return self.material.c
        if kind is ParameterKind.CONDUCTIVITY:
            return self.material.k
        return self.h_L

    def with_parameter(self, kind: ParameterKind, value: float) -> "WallProblem":
        kind = ParameterKind.parse(kind)
        if kind is ParameterKind.HEAT_CAPACITY:
            return replace(self, material=replace(self.material, c=float(value)))
        if kind is ParameterKind.CONDUCTIVITY:
            return replace(self, material=replace(self.material, k=float(value)))
        return replace(self, h_L=float(value))


@dataclass(frozen=True)
class DimensionlessProblem:
    k_star: float
    c_star: float
    hL_star: float
    hR_star: float
    Fo: float
    Bi: float
    u0: float
    tf_star: float
    forcing_L: ForcingSignal
    forcing_R: ForcingSignal
    scales: ReferenceScales = field(default_factory=ReferenceScales)

    def u_inf_L(self, t_star):
        return self.forcing_L(np.asarray(t_star) * self.scales.t_ref) / self.scales.T_ref

    def u_inf_R(self, t_star):
        return self.forcing_R(np.asarray(t_star) * self.scales.t_ref) / self.scales.T_ref

    def to_kelvin(self, u):
        return np.asarray(u) * self.scales.T_ref

    def to_seconds(self, t_star):
        return np.asarray(t_star) * self.scales.t_ref

    def parameter_scale(self, kind: ParameterKind) -> float:
        """Reference value that turns the dimensionless parameter back into physical units."""
        kind = ParameterKind.parse(kind)
        s = self.scales
        return {ParameterKind.HEAT_CAPACITY: s.c_ref, ParameterKind.CONDUCTIVITY: s.k_ref,
                ParameterKind.SURFACE_COEFFICIENT_LEFT: s.h_ref}[kind]


def nondimensionalize(problem: WallProblem, scales: ReferenceScales | None = None) -> DimensionlessProblem:
    scales = scales or ReferenceScales()
    return DimensionlessProblem(
        k_star=problem.material.k / scales.k_ref,
        c_star=problem.material.c / scales.c_ref,
        hL_star=problem.h_L / scales.h_ref,
        hR_star=problem.h_R / scales.h_ref,
        Fo=scales.t_ref * scales.k_ref / (scales.c_ref * problem.L ** 2),
        Bi=scales.h_ref * problem.L / scales.k_ref,
        u0=problem.T0 / scales.T_ref,
        tf_star=problem.t_f / scales.t_ref,
        forcing_L=problem.forcing_L,
        forcing_R=problem.forcing_R,
        scales=scales,
    )


def steady_state_temperature(problem: WallProblem, x: float, T_left: float, T_right: float) -> float:
    """Series-resistance steady state at depth ``x`` for constant ambient temperatures."""
    k = problem.material.k
    resistance = (1.0 / problem.h_L if problem.h_L > 0 else math.inf) + problem.L / k + (
        1.0 / problem.h_R if problem.h_R > 0 else math.inf)
    if math.isinf(resistance):
        raise ValueError("steady state needs both surface coefficients positive")
    q = (T_right - T_left) / resistance
    return T_left + q * (1.0 / problem.h_L + x / k)


# --- JSON problem descriptor ---------------------------------------------

def _forcing_from_dict(d: dict[str, Any] | None, default: Callable[[float], ForcingSignal], T0: float) -> ForcingSignal:
    if d is None:
        return default(T0)
    kind = d.get("kind", "constant")
    baseline = celsius_to_kelvin(float(d["baseline_C"])) if "baseline_C" in d else T0
    if kind == "paper-left":
        return ForcingSignal.paper_left(baseline)
    if kind == "paper-right":
        return ForcingSignal.paper_right(baseline)
    if kind == "constant":
        if "value_C" in d:
            baseline = celsius_to_kelvin(float(d["value_C"]))
        return ForcingSignal.constant(baseline)
    if kind in ("custom", "custom-sum-of-terms"):
        terms = [ForcingTerm(t["shape"], float(t["amplitude_K"]), float(t["scale_s"])) for t in d.get("terms", [])]
        return ForcingSignal.custom(baseline, terms)
    raise ValueError(f"unknown forcing kind {kind!r}")


def _forcing_to_dict(f: ForcingSignal) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": f.kind, "baseline_C": kelvin_to_celsius(f.baseline)}
    if f.kind == "custom-sum-of-terms":
        out["terms"] = [{"shape": t.shape, "amplitude_K": t.amplitude, "scale_s": t.scale} for t in f.terms]
    return out


def problem_from_dict(d: dict[str, Any]) -> tuple[WallProblem, ReferenceScales]:
    """Build a problem from the JSON descriptor layout (material/wall/forcing/scales)."""
    m = d["material"]
    material = Material(int(m.get("id", 0)), float(m["c_MJ_per_m3K"]) * 1e6, float(m["k_W_per_mK"]),
                        str(m.get("name", "")))
    w = d["wall"]
    T0 = celsius_to_kelvin(float(w.get("T0_C", 20.0)))
    forcing = d.get("forcing", {})
    problem = WallProblem(
        L=float(w["L_m"]),
        h_L=float(w["hL"]),
        h_R=float(w["hR"]),
        T0=T0,
        forcing_L=_forcing_from_dict(forcing.get("left"), ForcingSignal.paper_left, T0),
        forcing_R=_forcing_from_dict(forcing.get("right"), ForcingSignal.paper_right, T0),
        t_f=float(w["tf_s"]),
        material=material,
    )
    scales = ReferenceScales(**d.get("scales", {}))
    return problem, scales


def problem_to_dict(problem: WallProblem, scales: ReferenceScales | None = None) -> dict[str, Any]:
    scales = scales or ReferenceScales()
    m = problem.material
    return {
        "material": {"id": m.id, "c_MJ_per_m3K": m.c / 1e6, "k_W_per_mK": m.k, "name": m.name},
        "wall": {"L_m": problem.L, "hL": problem.h_L, "hR": problem.h_R,
                 "T0_C": kelvin_to_celsius(problem.T0), "tf_s": problem.t_f},
        "forcing": {"left": _forcing_to_dict(problem.forcing_L), "right": _forcing_to_dict(problem.forcing_R)},
        "scales": {"t_ref": scales.t_ref, "T_ref": scales.T_ref, "k_ref": scales.k_ref,
                   "c_ref": scales.c_ref, "h_ref": scales.h_ref},
    }
