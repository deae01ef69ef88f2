"""Quick end-to-end check of the Python bindings.

Build first with `maturin develop -m crates/py/Cargo.toml`, then run this file.
"""

import json
import math
import os
import tempfile

import dynacal


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


tree = dynacal.BinTree(1024, 1)
assert tree.max_depth == 6
assert close(tree.log_term, 1 + math.log(1024))
assert tree.partition() == [(0.0, 1.0, 0.0)]
for t in range(1, 12):
    probs = [0.0] * len(tree.partition())
    probs[0] = 1.0
    tree.accumulate(probs)
    tree.split(t)
assert tree.is_partition()
assert len(tree.partition()) == 2

assert close(dynacal.potential(3.0, 3.0), math.exp(1.0))
assert close(dynacal.raw_weight(0.0, 0.0), 0.5 * (math.exp(1 / 3) - 1.0))

probs = dynacal.solve_forecast([(0.25, 0.5, 0.4, 0.4), (0.75, 0.5, -0.6, 0.6)])
assert close(sum(probs), 1.0)

assert dynacal.group_names("walsh:4") == ["all", "walsh+1", "walsh-1", "walsh+2", "walsh-2", "walsh+3", "walsh-3"]
ind = dynacal.group_indicators("walsh:4", context_id=2, grid_value=0.4166)
assert ind[0] == 1.0 and all(a + b == 1.0 for a, b in zip(ind[1::2], ind[2::2]))
assert dynacal.walsh(3, 1) == -1
assert close(dynacal.c_stat([0.1, 0.2, 0.9]), 0.8)

fit = dynacal.fit_scaling([(x, 3 * x ** 0.5) for x in (10.0, 100.0, 1000.0)])
assert close(fit["exponent"], 0.5, 1e-9)

config = {
    "horizon": 2048,
    "environment": {"variant": {"piecewise_bernoulli": {"segments": [{"length": 2048, "mean": 0.37}]}}},
    "record_level": "full",
}
tr = dynacal.run(json.dumps(config))
report = tr.calibration()
assert report["calerr"] == report["mcerr"]
assert all(c["ok"] is not False for c in tr.invariants()["checks"])
assert tr.bias_audit()["worst_ratio"] < 10
assert len(tr.predictions()) == 2048

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "run.jsonl")
    tr.write(path)
    again = dynacal.Transcript.read(path)
    assert again.calibration() == report

sweep = dynacal.sweep(json.dumps({"axis": "T", "values": [256, 512], "base": config, "timing": False}))
assert len(sweep["rows"]) == 2

print(f"ok: calerr={report['calerr']:.3f} ever_active={tr.ever_active} depth={tr.max_depth_reached}")
