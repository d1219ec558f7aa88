"""Smoke test for the pykdehmm extension module.

Build the module and put it on the path first, e.g.

    cargo build --release -p kdehmm-py --features extension-module
    cp target/release/libpykdehmm.so python/pykdehmm.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pykdehmm


def main():
    assert abs(pykdehmm.gaussian_kernel(0.0) - 1.0 / math.sqrt(2.0 * math.pi)) < 1e-15
    assert abs(pykdehmm.log_sum_exp([0.0, 0.0]) - math.log(2.0)) < 1e-15
    h = pykdehmm.silverman_bandwidth(1.0, 100)
    assert abs(h - (4.0 / 300.0) ** 0.2) < 1e-12, h

    rows, states = pykdehmm.synth(300, seed=3)
    assert len(rows) == 300 and len(states) == 300
    assert len(rows[0]) == 7
    assert rows == pykdehmm.synth(300, seed=3)[0]

    model = pykdehmm.Model.fit(rows, n_states=3, p_star=1, max_iter=15, seed=1)
    assert model.n_states == 3 and model.n_vars == 7 and model.p_star == 1
    assert abs(sum(model.initial) - 1.0) < 1e-9
    for row in model.transitions:
        assert abs(sum(row) - 1.0) < 1e-9
    assert all(b > 0 for row in model.bandwidths for b in row)
    trace = model.loglik_trace
    assert all(b >= a - 1e-6 * abs(a) for a, b in zip(trace, trace[1:])), trace

    held_out, _ = pykdehmm.synth(120, seed=9)
    ll = model.log_likelihood(held_out)
    assert math.isfinite(ll)
    path = model.viterbi(held_out)
    assert len(path) == 120 - model.p_star
    assert all(0 <= s < 3 for s in path)

    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "m.json")
        model.save(p)
        back = pykdehmm.Model.load(p)
        assert back.log_likelihood(held_out) == ll
    assert pykdehmm.Model.from_json(model.to_json()).bandwidths == model.bandwidths

    try:
        pykdehmm.Model.fit(rows, variant="nope")
    except ValueError:
        pass
    else:
        raise AssertionError("bad variant accepted")

    print(repr(model))
    print("smoke test passed")


if __name__ == "__main__":
    main()
