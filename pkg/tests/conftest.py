"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from gridflex.devices import (
    BatterySpec,
    FlexLoadSpec,
    HvacSpec,
    PvSpec,
)
from gridflex.scenario import Household


def arr(h, value):
    return np.full(h, float(value))


def make_hvac(h, p_max=3.0, prefer=75.0, lower=66.0, upper=84.0,
              zeta1=0.9, zeta2=0.9, gamma=1.0):
    return HvacSpec(p_max=arr(h, p_max), t_prefer=arr(h, prefer),
                    t_lower=arr(h, lower), t_upper=arr(h, upper),
                    zeta1=zeta1, zeta2=zeta2, gamma=gamma)


def make_flex(h, prefer=1.0, band=0.5, gamma=1.0, slot_hours=1.0):
    prefer_v = arr(h, prefer)
    return FlexLoadSpec(p_prefer=prefer_v,
                        p_lower=np.maximum(prefer_v - band, 0.0),
                        p_upper=prefer_v + band,
                        total_energy=float(prefer_v.sum() * slot_hours),
                        gamma=gamma)


def make_battery(h, p_charge=5.0, p_discharge=5.0, capacity=10.0,
                 soc_init=0.5, prefer=0.5, lower=0.1, upper=0.9, gamma=1.0):
    return BatterySpec(p_charge_max=p_charge, p_discharge_max=p_discharge,
                       capacity_kwh=capacity, soc_init=soc_init,
                       soc_prefer=arr(h, prefer), soc_lower=lower,
                       soc_upper=upper, gamma=gamma)


def make_pv(rating=5.0, gamma=1.0):
    return PvSpec(panel_rating_kw=rating, gamma=gamma)


def household_of(devices, participating=False, hid=0):
    return Household(household_id=hid, node_label="n0",
                     devices=tuple(devices), participating=participating)
