"""Regenerate ``oracle_scenes.json`` from ``tests/oracle.py``.

Run from the repository root:  python tests/fixtures/make_fixtures.py
The JSON is committed; tests read it and never call this script.
"""

import json
import math
import os
import random
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
import oracle  # noqa: E402


def scene(rng, n_paths, multi, name):
    dist = rng.uniform(20, 80)
    bearing = rng.uniform(-0.3, 0.3)
    position = [dist * math.cos(bearing), dist * math.sin(bearing)]
    heading = rng.uniform(0, 2 * math.pi)
    scat = [
        [rng.uniform(-20, dist + 20), rng.choice([-1, 1]) * rng.uniform(3, 30)] for _ in range(n_paths)
    ]
    if multi:
        labels = [1, 2, 3, 4] + [rng.randint(1, 4) for _ in range(n_paths - 4)]
        length, width = 3.0, 6.0
    else:
        labels, length, width = [0] * n_paths, 0.0, 0.0
    gamma = rng.uniform(0, 1e-6)
    paths = oracle.observe(position, heading, scat, labels, length, width, gamma)
    return {
        "name": name,
        "scene": {
            "hv_pose": {"position": position, "heading": heading},
            "layout": {"length": length, "width": width} if multi else None,
            "scatterers": [{"position": s, "cluster": k} for s, k in zip(scat, labels)],
            "gamma": gamma,
            "c": oracle.C,
        },
        "paths": paths,
    }


def main():
    rng = random.Random(20240501)
    fixtures = []
    # hand-checkable case: HV at (10, 0) facing +x, scatterer at (5, 5)
    hand = oracle.observe([10.0, 0.0], 0.0, [[5.0, 5.0]], [0])
    fixtures.append(
        {
            "name": "hand",
            "scene": {
                "hv_pose": {"position": [10.0, 0.0], "heading": 0.0},
                "layout": None,
                "scatterers": [{"position": [5.0, 5.0], "cluster": 0}],
                "gamma": 0.0,
                "c": oracle.C,
            },
            "paths": hand,
        }
    )
    for p in range(4, 11):
        fixtures.append(scene(rng, p, False, f"single_P{p}"))
    for p in (6, 7, 8, 10, 12, 16):
        fixtures.append(scene(rng, p, True, f"multi_P{p}"))
    out = os.path.join(os.path.dirname(__file__), "oracle_scenes.json")
    with open(out, "w") as fh:
        json.dump(fixtures, fh, indent=1)
    print(f"wrote {len(fixtures)} fixtures to {out}")


if __name__ == "__main__":
    main()
