"""Hybrid power plant: fuel cell + battery base sources and an ultracapacitor.

The cells cover steady load up to their combined rating; the ultracapacitor
either absorbs spare cell power (never both in the same step) or discharges to
cover surges above the cell rating.  Undeliverable load raises the brownout
flag and the shortfall degrades vehicle acceleration upstream.

Power availability is evaluated over a 1 s horizon, so with steps of <= 1 s an
allocation can never ask a source for more energy than it holds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SourceSpec",
    "PlantSpecs",
    "PlantState",
    "AllocationDecision",
    "StepAccounting",
    "FUEL_CELL",
    "BATTERY",
    "ULTRACAP",
    "DEFAULT_SPECS",
    "PLANT_TRACE_HEADER",
    "allocate",
    "step",
    "precharge",
    "available_surge",
]

HORIZON_S = 1.0  # availability horizon for allocate()/available_surge()

MAH_TO_J = 11.1 * 3.6  # mAh at 11.1 V nominal -> joules


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    energy_capacity: float  # joules
    max_output: float  # watts
    max_charge_accept: float = 0.0  # watts, rechargeable sources only

    def __post_init__(self):
        # capacity 0 is legal for the ultracap only: it models the device
        # being absent (ablation runs); base sources must hold energy.
        floor_ok = self.energy_capacity >= 0 if self.kind == "ultracap" else self.energy_capacity > 0
        if not floor_ok:
            raise ValueError(f"{self.kind}: energy_capacity out of range")
        if self.max_output <= 0:
            raise ValueError(f"{self.kind}: max_output must be > 0")
        if self.max_charge_accept < 0:
            raise ValueError(f"{self.kind}: max_charge_accept must be >= 0")


FUEL_CELL = SourceSpec("fuel_cell", energy_capacity=10000 * MAH_TO_J, max_output=3.0)
BATTERY = SourceSpec("battery", energy_capacity=2000 * MAH_TO_J, max_output=13.0)
ULTRACAP = SourceSpec(
    "ultracap",
    energy_capacity=0.5 * 1000.0 * 3.0**2,  # 1/2 C V^2 for 1000 F at 3 V
    max_output=30.0,
    max_charge_accept=10.0,
)


@dataclass(frozen=True)
class PlantSpecs:
    fuel_cell: SourceSpec = FUEL_CELL
    battery: SourceSpec = BATTERY
    ultracap: SourceSpec = ULTRACAP
    eta_charge: float = 1.0
    full_soc_tol: float = 1e-9
    # optional band below full where charging stops (stateless refill cutoff)
    charge_hysteresis: float = 0.0

    def __post_init__(self):
        if not 0 < self.eta_charge <= 1:
            raise ValueError("eta_charge must be in (0, 1]")
        if self.charge_hysteresis < 0:
            raise ValueError("charge_hysteresis must be >= 0")

    @property
    def p_max(self) -> float:
        """Combined base-source rating in watts."""
        return self.fuel_cell.max_output + self.battery.max_output


DEFAULT_SPECS = PlantSpecs()


@dataclass(frozen=True)
class PlantState:
    specs: PlantSpecs = DEFAULT_SPECS
    soc_fc: float = 1.0
    soc_batt: float = 1.0
    soc_uc: float = 0.0

    def __post_init__(self):
        for name in ("soc_fc", "soc_batt", "soc_uc"):
            soc = getattr(self, name)
            if not 0.0 <= soc <= 1.0:
                raise ValueError(f"{name} out of [0, 1]")

    @property
    def energy_fc(self) -> float:
        return self.soc_fc * self.specs.fuel_cell.energy_capacity

    @property
    def energy_batt(self) -> float:
        return self.soc_batt * self.specs.battery.energy_capacity

    @property
    def energy_uc(self) -> float:
        return self.soc_uc * self.specs.ultracap.energy_capacity


@dataclass(frozen=True)
class AllocationDecision:
    p_load: float
    p_fc_batt: float
    p_uc: float
    p_charge: float
    brownout: bool

    @property
    def p_supplied(self) -> float:
        return self.p_fc_batt + self.p_uc


@dataclass
class StepAccounting:
    """Debug collector: joules lost to SOC clamping (conservation violations)."""

    clamped_joules: float = 0.0


PLANT_TRACE_HEADER = [
    "t",
    "p_load",
    "p_fc_batt",
    "p_uc",
    "p_charge",
    "soc_fc",
    "soc_batt",
    "soc_uc",
    "brownout",
]


def _cell_deliverable(state: PlantState) -> float:
    """Watts the base sources can jointly sustain over the horizon."""
    fc = state.specs.fuel_cell
    batt = state.specs.battery
    return min(fc.max_output, state.energy_fc / HORIZON_S) + min(
        batt.max_output, state.energy_batt / HORIZON_S
    )


def available_surge(state: PlantState) -> float:
    """Watts the ultracap can add on top of the cells over a 1 s horizon."""
    uc = state.specs.ultracap
    return min(uc.max_output, state.energy_uc / HORIZON_S)


def allocate(p_load: float, state: PlantState) -> AllocationDecision:
    """Split a load across cells, ultracap discharge, and ultracap charging.

    Cells serve the load first.  Spare cell headroom charges the ultracap
    (if not full); load above the cell rating discharges it.  Discharging
    and charging are mutually exclusive by construction, and when brownout
    is False the supplied power equals the load exactly.
    """
    if p_load < 0 or not np.isfinite(p_load):
        raise ValueError("p_load must be finite and >= 0")
    specs = state.specs
    uc = specs.ultracap
    cells = _cell_deliverable(state)

    if p_load <= cells:
        p_fc_batt = p_load
        p_charge = 0.0
        cutoff = 1.0 - specs.full_soc_tol - specs.charge_hysteresis
        if state.soc_uc < cutoff and uc.energy_capacity > 0:
            headroom_w = (uc.energy_capacity - state.energy_uc) / (
                specs.eta_charge * HORIZON_S
            )
            p_charge = max(0.0, min(uc.max_charge_accept, cells - p_load, headroom_w))
        return AllocationDecision(p_load, p_fc_batt, 0.0, p_charge, brownout=False)

    shortfall = p_load - cells
    surge = available_surge(state)
    if shortfall <= surge:
        # p_uc set to the exact difference so p_fc_batt + p_uc == p_load
        return AllocationDecision(p_load, cells, shortfall, 0.0, brownout=False)
    return AllocationDecision(p_load, cells, surge, 0.0, brownout=True)


def _split_cells(specs: PlantSpecs, state: PlantState, total_w: float, dt: float):
    """Fuel cell first up to its rating, battery covers the rest."""
    fc_w = min(total_w, specs.fuel_cell.max_output, state.energy_fc / dt if dt > 0 else np.inf)
    return fc_w, total_w - fc_w


def step(
    state: PlantState,
    decision: AllocationDecision,
    dt: float,
    accounting: StepAccounting | None = None,
) -> PlantState:
    """Integrate SOCs over dt seconds under an allocation decision.

    SOCs clamp to [0, 1]; any clamped energy is a conservation violation and
    is reported through the optional accounting collector.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    specs = state.specs
    cell_total = decision.p_fc_batt + decision.p_charge
    fc_w, batt_w = _split_cells(specs, state, cell_total, dt)

    e_fc = state.energy_fc - fc_w * dt
    e_batt = state.energy_batt - batt_w * dt
    e_uc = state.energy_uc + specs.eta_charge * decision.p_charge * dt - decision.p_uc * dt

    clamped = 0.0
    caps = (
        specs.fuel_cell.energy_capacity,
        specs.battery.energy_capacity,
        specs.ultracap.energy_capacity,
    )
    socs = []
    for energy, cap in zip((e_fc, e_batt, e_uc), caps):
        clipped = min(max(energy, 0.0), cap)
        clamped += abs(energy - clipped)
        socs.append(clipped / cap if cap > 0 else 0.0)
    if accounting is not None:
        accounting.clamped_joules += clamped
    return replace(state, soc_fc=socs[0], soc_batt=socs[1], soc_uc=socs[2])


def precharge(state: PlantState, predicted_profile) -> tuple[PlantState, float]:
    """Charge the ultracap until it holds the predicted surge energy.

    Surge energy is the integral of predicted demand above the cell rating
    (left rectangle rule).  Charging runs at the accept rate from the cells
    (fuel cell first); filling the device completely is the saturating
    fallback when the surge exceeds its capacity.  Returns the new state and
    the charging duration in seconds.
    """
    specs = state.specs
    uc = specs.ultracap
    demand = np.asarray(predicted_profile.demand, dtype=float)
    surplus = np.maximum(demand - specs.p_max, 0.0)
    surge_energy = float(np.sum(surplus[:-1]) * predicted_profile.sample_interval)
    target = min(surge_energy, uc.energy_capacity)
    if target <= state.energy_uc:
        return state, 0.0

    rate = min(uc.max_charge_accept, _cell_deliverable(state))
    if rate <= 0:
        return state, 0.0
    need_uc = target - state.energy_uc
    # cells can only give what they hold
    need_uc = min(need_uc, specs.eta_charge * (state.energy_fc + state.energy_batt))
    drawn = need_uc / specs.eta_charge
    duration = drawn / rate

    fc_rate, batt_rate = _split_cells(specs, state, rate, duration)
    e_fc = max(state.energy_fc - fc_rate * duration, 0.0)
    e_batt = max(state.energy_batt - batt_rate * duration, 0.0)
    new = replace(
        state,
        soc_fc=e_fc / specs.fuel_cell.energy_capacity,
        soc_batt=e_batt / specs.battery.energy_capacity,
        soc_uc=min((state.energy_uc + need_uc) / uc.energy_capacity, 1.0)
        if uc.energy_capacity > 0
        else 0.0,
    )
    return new, duration
