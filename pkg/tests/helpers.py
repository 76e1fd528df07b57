"""Closed-form flows shared by the tests."""
import math

import numpy as np

from eulerlab.integrator import TimeGrid, TrajectoryTable


def exact_table(cloud, grid: TimeGrid, flow) -> TrajectoryTable:
    """Table whose rows are ``flow(t_n, x)`` at every step of ``grid``."""
    steps = tuple(range(grid.N + 1))
    pos = np.stack([flow(grid.time(n), cloud.points) for n in steps])
    return TrajectoryTable(cloud, grid, steps, pos, "reference")


def contraction(t, x):
    return math.exp(-t) * x


def rotation(t, x):
    c, s = math.cos(t), math.sin(t)
    return x @ np.array([[c, s], [-s, c]])


def power_flow(t, x):
    """Exact flow of ``b = -sign(x)|x|^(1/2)``: reaches 0 at ``t = 2 sqrt|x|`` and stays."""
    return np.sign(x) * np.maximum(np.sqrt(np.abs(x)) - t / 2, 0.0) ** 2
