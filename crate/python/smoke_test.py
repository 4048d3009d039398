"""Smoke test for the compiled module. Build it first with `maturin develop -m crates/python/Cargo.toml`."""

import json
import math
import tempfile

import hsch


def main():
    k = hsch.MemoryKernel.series(1.0, n_modes=256)
    assert abs(k.g(0.0) - 1.0) < 2 * k.truncation_error_bound + 1e-12
    assert k.g(1.0) < k.g(0.1) < k.g(0.0)
    m = k.matrix(0.3)
    assert m[0][1] == 0.0 and m[0][0] == m[1][1]

    line = hsch.Grid.interval(0.0, 1.0, 64)
    xs = [x for x, _ in line.coords()]
    ch = hsch.CahnHilliard(line, [0.1 * math.cos(math.pi * x) for x in xs], beta=0.01)
    m0, e0 = ch.mean(), ch.energy()
    ch.step(1e-3, steps=50)
    assert abs(ch.mean() - m0) < 1e-10
    assert ch.energy() <= e0 + 1e-12

    g = hsch.Grid.rectangle((0.0, 1.0), (0.0, 1.0), (16, 16))
    phi = [0.2 * math.cos(math.pi * x) * math.cos(math.pi * y) for x, y in g.coords()]
    flow = hsch.HeleShaw(g, phi, k, 1e-2, beta=0.02, force=(0.5, 0.0))
    flow.step(10)
    div = hsch.divergence(g, flow.velocity)
    assert max(abs(d) for d in div) < 1e-6 * (1.0 + flow.max_velocity() * 16)
    assert abs(flow.t - 0.1) < 1e-12

    try:
        hsch.CahnHilliard(line, xs, lambda_=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative lambda accepted")

    with tempfile.TemporaryDirectory() as out:
        cfg = {"dt": 1e-3, "t_end": 0.01, "cells": [32, 1],
               "phi0": {"type": "cosine", "mean": 0.0, "modes": [{"kx": 1, "amplitude": 0.1}]}}
        lines = hsch.run_scenario("ch1d", json.dumps(cfg), out)
        assert any("mass drift" in s for s in lines), lines

    print("hsch", hsch.__version__, "smoke test ok")


if __name__ == "__main__":
    main()
