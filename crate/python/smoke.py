"""Smoke test for the gazegraph Python bindings.

Build the extension first:
    cargo build --release -p gazegraph-py
    cp target/release/libgazegraph_py.so python/gazegraph_py.so
then run `python3 python/smoke.py`.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gazegraph_py as gg

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    pts = [(0.3, 0.4)] * 20 + [(0.7, 0.6)] * 20
    trace = gg.Trace(pts, 20.0)
    assert len(trace) == 40
    fix = gg.detect_fixations(trace)
    assert len(fix) == 2, fix
    assert abs(fix[0].x - 0.3) < 1e-12 and abs(fix[1].duration - 1.0) < 1e-12

    assert gg.dtw(trace, trace) == 0.0
    assert abs(gg.dtw(gg.Trace([(0, 0), (1, 0)], 20.0), gg.Trace([(0, 0)], 20.0)) - 1.0) < 1e-12
    assert gg.levenshtein(trace, trace) == 0
    assert abs(gg.temporal_correlation(trace, trace) - 1.0) < 1e-12

    wave = [0.1 + 0.05 * math.sin(2 * math.pi * 2.0 * i / 20.0) for i in range(256)]
    a = gg.Trace([(0.5 + r, 0.5) for r in wave], 20.0)
    b = gg.Trace([(0.5 - r, 0.5) for r in wave], 20.0)
    freqs, psd = gg.residual_psd([a, b], 20.0)
    peak = freqs[max(range(len(psd)), key=psd.__getitem__)]
    assert abs(peak - 2.0) <= freqs[1] - freqs[0], peak

    cfg = gg.Config.from_file(os.path.join(ROOT, "configs", "smoke.toml"))
    assert cfg.with_overrides(["seed=3"]).seed == 3
    try:
        gg.Config.from_toml("windw = 3")
        raise AssertionError("misspelled key accepted")
    except ValueError as e:
        assert "windw" in str(e)

    with tempfile.TemporaryDirectory() as out:
        try:
            gg.run("train", cfg, out)
            raise AssertionError("missing prerequisite accepted")
        except FileNotFoundError:
            pass
        for cmd in ["gen", "train", "simulate", "evaluate", "report"]:
            gg.run(cmd, cfg, out)
        with open(os.path.join(out, "evaluate", "metrics.csv")) as f:
            table = f.read()
        assert table.splitlines()[1].startswith("synthetic,Human,")

        model = gg.Model.load(os.path.join(out, "train", "checkpoint.json"))
        runs = model.simulate(os.path.join(out, "gen", "sequences", "test_0000"), horizon=20, runs=2,
                              seed=1, window=cfg.window, offsets=cfg.t_d)
        assert len(runs) == 2 and all(len(r) == 20 for r in runs)
        assert all(0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 for r in runs for x, y in r.points())

    print("python smoke: ok")


if __name__ == "__main__":
    main()
