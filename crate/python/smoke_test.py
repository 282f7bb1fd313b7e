"""Smoke test for the `nodal` extension module.

Build it with `cargo build --release -p nodal-py` and copy
target/release/libnodal.so to python/nodal.so (see README), then run
`python3 python/smoke_test.py`.
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import nodal  # noqa: E402


def main():
    cfg = {"command": "solve", "k": 1, "sizes": [100], "samples": 300, "K": 6}
    p = nodal.Problem(json.dumps(cfg))
    assert p.m == 2
    assert p.grid_points == 100

    h = math.pi / 101
    lam = p.eigenvalues()
    assert len(lam) == 6
    for j, v in enumerate(lam, start=1):
        exact = (2.0 / h * math.sin(j * h / 2.0)) ** 2
        assert abs(v - exact) / exact < 1e-8, (j, v, exact)

    phi = [math.sin((i + 1) * h) for i in range(100)]
    u = p.project([phi, [2.0 * x for x in phi]])
    for comp, c in zip(u, p.masses):
        assert abs(sum(x * x for x in comp) * h - c) < 1e-12 * c
    e = p.energy(u)
    assert e["kinetic"] > 0.0
    assert p.classify(u)["tag"] == "Positive", p.classify(u)

    feas = p.feasibility()
    assert feas["feasible"], feas["failed"]

    feas, report = p.solve()
    assert report is not None
    assert report["status"] == "Converged", report["status"]
    assert report["v_norm"] < 1e-8
    assert report["classification"]["tag"] == "SignChanging"

    try:
        nodal.Problem(json.dumps({"beta": [[0, 0]]}))
    except ValueError as err:
        assert "coupling must be nonzero" in str(err)
    else:
        raise AssertionError("zero coupling accepted")

    with tempfile.TemporaryDirectory() as tmp:
        code = nodal.run_config(json.dumps({"command": "spectrum", "K": 3}), tmp)
        assert code == 0
        assert os.path.exists(os.path.join(tmp, "spectrum.csv"))

    print("python smoke test passed")


if __name__ == "__main__":
    main()
