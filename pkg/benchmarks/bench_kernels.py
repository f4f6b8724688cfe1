"""Compare the compiled and pure-Python kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]

Times the state-space march of an LTI block, the sample-by-sample solve of
a Lur'e loop (LTI block with a static map), and one end-to-end
``solve_feedback`` call; prints median wall time per backend and the
speed-up, and checks that both backends produce the same outputs.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from passivity_lab import _kernels
from passivity_lab.interconnect import FeedbackLoop, solve_feedback
from passivity_lab.signals import SampledSignal
from passivity_lab.systems import LtiStateSpace, static_map


def _time(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    N, dt = args.samples, 0.005
    rng = np.random.default_rng(0)

    g = LtiStateSpace.from_tf([1.0, 3.0, 2.0], [1.0, 2.0, 2.0, 1.0])
    real = g.realize(dt)
    U = rng.standard_normal((1, N))
    e1, e2 = 2.0 * rng.standard_normal(N), rng.standard_normal(N)
    phi = static_map("cubic")
    loop = FeedbackLoop(g, phi)
    s1, s2 = SampledSignal(e1, dt), SampledSignal(e2, dt)

    cases = {
        "lti_march": lambda: _kernels.lti_march(real.Ad, real.Bd, real.Cd, real.Dd,
                                                np.zeros(real.states), U, False),
        "lure_march": lambda: _kernels.lure_march(real.Ad, real.Bd, real.Cd[0], real.Dd[0, 0], 0,
                                                  phi.code, phi.kernel_params(), e1, e2,
                                                  np.zeros(real.states), 0.5, 1e-12, 200),
        "solve_feedback": lambda: solve_feedback(loop, s1, s2).y.values,
    }
    backends = _kernels.available_backends()
    print(f"samples {N}, repeat {args.repeat}, backends {', '.join(backends)}")
    print(f"{'case':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>12}")
    for name, fn in cases.items():
        times, outs = {}, {}
        for b in backends:
            with _kernels.backend(b):
                times[b], outs[b] = _time(fn, args.repeat)
        row = f"{name:<16}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['cython']:>11.1f}x"
            a = outs["cython"][0] if isinstance(outs["cython"], tuple) else outs["cython"]
            p = outs["python"][0] if isinstance(outs["python"], tuple) else outs["python"]
            diff = float(np.max(np.abs(np.asarray(a) - np.asarray(p))))
            row += f"   max |diff| {diff:.1e}"
        print(row)


if __name__ == "__main__":
    main()
