"""Smoke test for the pyspdelab extension module.

Build and install first, for example:

    maturin build --release -m crates/pyspdelab/Cargo.toml -o dist
    pip install dist/pyspdelab-*.whl
"""

import json
import math
import tempfile

import pyspdelab as sp


def check_kernels():
    names = [k["kernel"] for k in sp.builtin_kernels()]
    assert len(names) == 5 and names[0] == "wiener", names
    fbm = sp.Kernel("fbm", H=0.75, T=2.0)
    assert abs(fbm.r(1.0, 1.0) - 1.0) < 1e-12
    assert abs(fbm.rectangle_increment(0.0, 1.0, 1.0, 2.0) - (2 ** 0.5 - 1.0)) < 1e-12
    paths = fbm.sample_paths([0.0, 0.5, 1.0], [1.0], 4, 3)
    assert len(paths) == 4 and len(paths[0][0]) == 3 and paths[0][0][0] == 0.0
    try:
        sp.Kernel("fbm")
    except ValueError:
        pass
    else:
        raise AssertionError("fbm without H must be rejected")


def check_symbols():
    heat = sp.Symbol.neg_power(2.0, 1)
    assert heat.eval(0.0, [3.0]) == complex(-9.0, 0.0)
    m1 = sp.Symbol(json.dumps({"name": "resolvent_power", "base": {"name": "power", "gamma": 2}, "s": 1}), 2)
    assert m1.check("mihlin")["passed"]
    assert not sp.Symbol('{"name": "log1p"}', 1).check("mihlin")["passed"]
    grid = sp.Grid(1, 32, 2 * math.pi)
    wave = [complex(math.cos(3 * grid.point(i)[0]), 0.0) for i in range(len(grid))]
    out = heat.evolve(grid, 0.5, 0.0, wave)
    assert max(abs(a - b * math.exp(-4.5)) for a, b in zip(out, wave)) < 1e-12


def check_solver():
    problem = sp.Problem(json.dumps({
        "grid": {"d": 1, "n": 16, "L": 2 * math.pi},
        "psi": {"name": "neg_power", "gamma": 2},
        "phi": {"name": "power", "gamma": 2},
        "kernel": {"kernel": "wiener"},
        "lambdas": [1.0],
        "T": 1.0,
        "n_t": 4,
        "u0": {"type": "mode", "k": [1], "amplitude": 1.0},
        "g": {"type": "bump", "amplitude": 1.0, "width": 1.0},
    }))
    ens = problem.solve(200, seed=1)
    assert ens.n_samples == 200 and ens.times[-1] == 1.0
    assert len(ens.field(0, 4)) == 16
    norms = ens.norms()
    assert all(math.isfinite(norms[k]) for k in ("u", "du", "g", "u0", "f"))
    again = problem.solve(200, seed=1)
    assert again.field(7, 3) == ens.field(7, 3)


def check_cli():
    with tempfile.TemporaryDirectory() as out:
        summary = sp.run_command("verify-skorohod", '{"params": {"n_samples": 2000}}', seed=4, out=out)
        assert summary["passed"], summary
        report = json.load(open(summary["artifacts"][0]))
        assert len(report["reports"]) == 8
        try:
            sp.run_command("verify-lp", '{"bogus": 1}', out=out)
        except ValueError:
            pass
        else:
            raise AssertionError("unknown keys must be rejected")


if __name__ == "__main__":
    check_kernels()
    check_symbols()
    check_solver()
    check_cli()
    print("pyspdelab smoke test passed")
