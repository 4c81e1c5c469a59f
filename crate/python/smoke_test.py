"""Smoke test for the pixdiff extension module.

Build and install first, e.g. `pip install ./crates/python`. Pass a
`pixdiff train` output directory to also exercise the sampler.
"""

import math
import sys

import pixdiff

size = 8
shape = (size, size, 1)
x0 = pixdiff.portrait_like(size, seed=3)
assert len(x0) == size * size and all(0.0 < v <= 1.0 for v in x0)

sched = pixdiff.PixelSchedule(x0, shape, gamma=10.0, steps=20)
assert sched.total_steps == 20
scale = sched.scale()
assert all(abs(s - math.exp(-10.0 * v)) < 1e-15 for s, v in zip(scale, x0))
assert all(abs(ab - s) < 1e-12 for ab, s in zip(sched.alpha_bar(20), scale))

x_i, eps = pixdiff.forward_jump(sched, 5, seed=1)
again, _ = pixdiff.forward_jump(sched, 5, seed=1)
assert x_i == again
mu, var = pixdiff.posterior(x_i, sched, 5)
assert len(mu) == len(var) == size * size and all(v > 0 for v in var)
assert pixdiff.posterior(pixdiff.forward_jump(sched, 1, seed=2)[0], sched, 1)[1] == [0.0] * (size * size)

states = pixdiff.simulate(sched, seed=4, stride=5)
assert [s for s, _ in states] == [0, 5, 10, 15, 20]
assert pixdiff.ssim(x0, x0, shape) == 1.0

b = pixdiff.snr_bounds(0.5, 20.0, 0.1)
rate = pixdiff.snr_rate(0.5, 20.0, 0.1)
assert b["snr_lower"] < pixdiff.snr(0.5, 20.0, 0.1) < b["snr_upper"]
assert b["rate_lower"] < abs(rate) < b["rate_upper"]
times = [1e-3 * (k + 1) for k in range(100)]
assert pixdiff.verify_prop1(0.2, 0.8, 20.0, times)["holds_everywhere"]
assert pixdiff.verify_prop2([0.1, 0.5, 1.0], 20.0, 1.0, times)["coefficient_failures"] == 0

try:
    pixdiff.PixelSchedule(x0, shape, gamma=250.0, steps=200)
except ValueError as e:
    assert "gamma < T" in str(e)
else:
    raise AssertionError("gamma >= T must be rejected")

if len(sys.argv) > 1:
    sampler = pixdiff.Sampler.load(sys.argv[1])
    w, h, c = sampler.shape
    s = pixdiff.PixelSchedule(pixdiff.portrait_like(w, seed=5), sampler.shape, sampler.gamma, sampler.total_steps)
    x_i, _ = pixdiff.forward_jump(s, 5, seed=6)
    out = sampler.sample(x_i, 5, seed=7)
    assert out["predictor_calls"] == 1 and len(out["x0_hat"]) == w * h * c
    print("sampler ok")

print("pixdiff", pixdiff.__version__, "smoke test passed")
