"""Pilot for the concave / non-concave triple-proximity contrast.

Runs both variance sequences on an independent seed and fixes the factor by
which the non-concave frequency at epsilon = 0.01 must exceed the concave one
in the main acceptance run: the pilot ratio shrunk by four standard errors
(delta method on the log ratio), rounded down to 0.05.

    python pilot/run_pilot.py  # rewrites pilot/triples_pilot.json
"""
import json
import math
from pathlib import Path

import numpy as np

from rankflow.model import SystemSpec
from rankflow.stats import triple_proximity_curve

SEED = 777_001
N_PATHS = 2000
T, DT = 1.0, 1e-4
START = (0.0, 0.01, 0.02)
EPSILONS = (0.05, 0.02, 0.01, 0.005, 0.002)
TARGET = 0.01


def main():
    curves = {}
    for label, s2 in [("concave", (1, 2, 1)), ("nonconcave", (1, 1, 4))]:
        spec = SystemSpec((0, 0, 0), tuple(np.sqrt(s2)), START)
        curves[label] = triple_proximity_curve(spec, T, EPSILONS, N_PATHS, SEED, dt=DT)
    i = EPSILONS.index(TARGET)
    p1 = curves["concave"].frequencies[i]
    p2 = curves["nonconcave"].frequencies[i]
    ratio = p2 / p1
    se_log = math.sqrt((1 - p1) / (N_PATHS * p1) + (1 - p2) / (N_PATHS * p2))
    factor = math.floor(ratio * math.exp(-4 * se_log) / 0.05) * 0.05
    doc = {
        "seed": SEED, "n_paths": N_PATHS, "T": T, "dt": DT, "start": START,
        "epsilons": EPSILONS, "target_epsilon": TARGET,
        "frequencies": {k: c.frequencies for k, c in curves.items()},
        "pilot_ratio": ratio, "se_log_ratio": se_log, "factor": round(factor, 2),
    }
    path = Path(__file__).with_name("triples_pilot.json")
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc, indent=2))


if __name__ == "__main__":
    main()
