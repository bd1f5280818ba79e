"""Shared fixtures.

The paired mission sweep is the expensive part of the suite, so it runs once
per session and every mission-level test reads from it.  Everything in here
is seeded; reruns produce identical traces.
"""

import dataclasses
import time

import pytest

from aeps import DEFAULT_SPECS, ULTRACAP, generate_scenario, run_mission

SWEEP_SEEDS = tuple(range(10))
SWEEP_COMPLEXITIES = ("low_dynamic", "high_dynamic")


@pytest.fixture(scope="session")
def sweep():
    """Both modes over 2 complexities x 10 seeds, closed-form demand."""
    traces = {"normal": [], "agility_enhanced": []}
    t0 = time.perf_counter()
    for complexity in SWEEP_COMPLEXITIES:
        for seed in SWEEP_SEEDS:
            config = generate_scenario(complexity, seed=seed)
            for mode in traces:
                traces[mode].append(run_mission(config, mode))
    traces["elapsed_s"] = time.perf_counter() - t0
    return traces


@pytest.fixture(scope="session")
def ablated_sweep():
    """The enhanced missions again with the ultracapacitor removed."""
    specs = dataclasses.replace(
        DEFAULT_SPECS, ultracap=dataclasses.replace(ULTRACAP, energy_capacity=0.0)
    )
    traces = []
    for complexity in SWEEP_COMPLEXITIES:
        for seed in SWEEP_SEEDS:
            config = generate_scenario(complexity, seed=seed)
            traces.append(run_mission(config, "agility_enhanced", specs=specs))
    return traces
