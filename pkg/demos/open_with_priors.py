"""Open a door with and without a store of past experience.

The store holds earlier trajectories of this same door. After each step the new
observations are merged with a stored trajectory when that raises the joint
evidence, so the revolute model usually becomes certain after fewer observations.
"""
from dataclasses import replace

import numpy as np

from doorkin.doorsim import generate_trajectory, revolute_door, run_opening
from doorkin.geometry import handle_transform
from doorkin.priors import PriorStore

handle = handle_transform([-1, 0, 0], [1.9, 0.3, 1.0])
door = revolute_door(handle, 0.8, travel_limit=2.0, noise_sigma=0.005)

# two past openings of 1.2 m of handle travel each
store = PriorStore()
for seed in (101, 102):
    store.add(generate_trajectory(replace(door, travel_limit=1.2 / 0.8), 30, seed=seed))


def first_confident(log, level=0.9):
    return next((r.n_obs for r in log.records if r.posterior["revolute"] >= level), np.nan)


plain, primed = [], []
for seed in range(8):
    plain.append(first_confident(run_opening(door, iters=20, seed=seed)))
    primed.append(first_confident(run_opening(door, iters=20, seed=seed, use_priors=True, store=store)))
print("observations until P(revolute) >= 0.9 over 8 runs")
print(f"  without priors: {plain}  median {np.nanmedian(plain)}")
print(f"  with priors:    {primed}  median {np.nanmedian(primed)}")
