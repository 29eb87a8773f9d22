"""One scripted robot pass against each reaction preset.

The robot drives west at 0.6 m/s, 1 m beside the walker's line. Prints
the closest approach per preset and a few proxemics metrics.

    python3 demos/preset_pass.py
"""

import math

import yaml

from socnavsim.behaviors import PRESETS
from socnavsim.harness import simulate
from socnavsim.scenario_io import parse_scenario

SCENE = {
    "map": {"width": 20, "height": 6, "resolution": 0.5},
    "duration": 25,
    "seed": 3,
    "robot": {"pose": [18, 4, math.pi], "policy": {"type": "straight", "velocity": [-0.6, 0]}},
}


def main():
    print(f"{'preset':12s} {'min dist':>9s} {'personal s':>11s} {'intimate s':>11s}")
    for kind in PRESETS:
        doc = dict(SCENE, agents=[{"id": 1, "pose": [2, 3, 0], "goals": [[18, 3]],
                                   "behavior": {"preset": kind}}])
        engine = simulate(parse_scenario(yaml.safe_dump(doc)))
        (rep,) = engine.finish(["min_distance_to_human", "personal_space_time",
                                "intimate_space_time"])
        v = rep.value
        print(f"{kind:12s} {v('min_distance_to_human'):9.2f} {v('personal_space_time'):11.2f} "
              f"{v('intimate_space_time'):11.2f}")


if __name__ == "__main__":
    main()
