"""Smoke test for the kwlab_py extension.

Build first:  pip install --no-build-isolation ./crates/python
Run:          python python/smoke_test.py   (or pytest python/)
"""

import json
import math
import os
import tempfile

import kwlab_py

# flat unit torus, -4 log(2 pi eta(i)^2)
A_TORUS = -5.242131703646037


def test_fixture_names():
    names = kwlab_py.fixture_names()
    assert "constant" in names
    assert "sign-changing-stripe" in names


def test_robin_constant_flat():
    a = kwlab_py.robin_constant(256, 0.3, 0.7)
    assert abs(a - A_TORUS) < 1e-3, a


def test_bubble_energy():
    e = kwlab_py.bubble_energy(1.0, 50.0)
    expected = 16 * math.pi * math.log1p(math.pi * 2500.0) - 16 * math.pi
    assert abs(e["closed_form"] - expected) < 1e-9
    assert abs(e["gap"]) < 5e-3 * abs(expected)


def test_thresholds_constant():
    report = kwlab_py.thresholds("constant", n=64, lattice=4)
    assert report["djlw_satisfied"]
    c0 = -8 * math.pi - 8 * math.pi * math.log(math.pi) - 4 * math.pi * A_TORUS
    assert abs(report["C0"] - c0) < 5e-2


def test_solve_constant():
    summary, values = kwlab_py.solve("constant", 1.0, n=64)
    assert summary["status"] == "converged"
    assert summary["residual"] < 1e-8
    assert len(values) == 64 * 64


def test_pipeline_and_plot_data():
    with tempfile.TemporaryDirectory() as tmp:
        config = {
            "grid": {"N": 64, "w": "zero"},
            "weight": {"fixture": "constant"},
            "output_dir": os.path.join(tmp, "run"),
            "upper_bound": {"enabled": False},
        }
        summary = kwlab_py.run_pipeline(json.dumps(config))
        assert summary["converged"] and summary["exit_code"] == 0
        paths = kwlab_py.emit_plot_data(os.path.join(tmp, "run"))
        assert len(paths) == 5


def test_bad_config():
    try:
        kwlab_py.run_pipeline('{"grid": {"N": 64, "w": "zero"}}')
    except ValueError:
        return
    raise AssertionError("missing weight accepted")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print("ok", name)
