"""Coarse grid search for the benchmark PID gains.

The PID baseline needs gains; rather than hand-pick them we score a small
grid on the sigmoid scenarios (all three initial-condition families, a few
seeds) and keep the gains with the lowest median closed-loop cost.  The
winner is what ``baselines.DEFAULT_PID_GAINS`` holds.

    python3 demos/tune_pid.py
"""

import itertools

import numpy as np

from tokencontrol import simulate as sim
from tokencontrol.baselines import PIDGains

KP = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
KI = (0.0, 0.25, 0.5, 1.0, 2.0)
KD = (0.0, 1.0, 2.0, 4.0, 8.0)
SEEDS = (100, 101)


def score(gains):
    costs = []
    for family in sim.FAMILIES:
        for seed in SEEDS:
            sc = sim.standard_scenario("sigmoid", family, seed=seed, controller="pid", pid_gains=gains)
            costs.append(sim.run_closed_loop(sc).realized_total_cost)
    return float(np.median(costs))


def main():
    results = []
    for kp, ki, kd in itertools.product(KP, KI, KD):
        g = PIDGains(kp, ki, kd)
        results.append((score(g), g))
    results.sort(key=lambda r: r[0])
    print("best five (median cost, gains):")
    for cost, g in results[:5]:
        print(f"  {cost:10.2f}  kp={g.kp:<5} ki={g.ki:<5} kd={g.kd:<5}")


if __name__ == "__main__":
    main()
