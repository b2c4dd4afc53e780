"""Element builders shared by the hand-written test networks."""

import numpy as np

from carbon_trace_simulator.dispatch_powerflow import ScenarioSample


def sample(base_load, wind_speed=(), der_factor=(), ev_demand=()):
    return ScenarioSample(
        index=0,
        wind_speed=np.asarray(wind_speed, dtype=float),
        der_factor=np.asarray(der_factor, dtype=float),
        base_load=np.asarray(base_load, dtype=float),
        ev_demand=np.asarray(ev_demand, dtype=float),
    )


def constant_cei(value, p_rate, p_lim):
    return {
        "a_down": value,
        "b_down": 0.0,
        "a_over": value,
        "b_over": 0.0,
        "p_rate": p_rate,
        "p_lim": p_lim,
    }


def conventional(gen_id, bus, p_rate=100.0, p_lim=200.0, intensity=0.8, participation=1.0):
    return {
        "id": gen_id,
        "bus": bus,
        "kind": "conventional",
        "p_rate": p_rate,
        "p_lim": p_lim,
        "cei": constant_cei(intensity, p_rate, p_lim),
        "participation_factor": participation,
    }
