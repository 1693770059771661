"""Smoke test for the thermocal Python extension.

Build and install the module first, e.g.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import math
import os
import sys
import tempfile

import thermocal_py as tc


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m3.csv")
        truth = tc.synthesize("M3", path, n_steps=600, seed=4)
        cal = tc.Calibration("M3", path)
        assert cal.n_samples == 600
        assert len(cal.names) == len(truth)

        ll = cal.log_likelihood(truth)
        lp, grad = cal.log_posterior(truth)
        assert math.isfinite(ll) and math.isfinite(lp)
        assert len(grad) == len(cal.free_names)

        theta, best = cal.maximize(starts=2, seed=1)
        assert math.isfinite(best) and len(theta) == len(truth)

        draws = cal.sample(iterations=200, chains=2, seed=3)
        assert len(draws) == 2 and len(draws[0]) == 200
        stats = tc.diagnose(draws, burn_in=100)
        assert len(stats) == len(cal.names)
        assert all(ess > 0 for _, ess in stats)

        try:
            cal.log_likelihood(truth[:-1])
        except ValueError:
            pass
        else:
            raise AssertionError("short theta accepted")

    print(f"thermocal {tc.__version__}: loglik at truth {ll:.2f}, maximum {best:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
