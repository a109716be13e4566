"""Compare the compiled rollout/step kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--episodes 256] [--repeat 5]

Prints the best-of-repeat wall time per kernel and backend, the speedup, and
the maximum absolute difference between the two backends' outputs.
"""

import argparse
import time

import numpy as np

from prefsim.envs import _fallback, make_env, scripted_policy

try:
    from prefsim.envs import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cases(n, rng):
    cases = {}
    for name, fn in (("LineHopper", "hopper"), ("TwinWalker", "walker"),
                     ("DiskReacher-hard", "reacher")):
        env = make_env(name)
        pol = scripted_policy(env, "expert")
        init = env.reset(rng, n)
        params = np.tile(np.asarray(pol.params, dtype=np.float64), (n, 1))
        noise = pol.draw_noise(rng, n, env.spec.horizon)
        extra = (env.tolerance,) if fn == "reacher" else ()
        cases[f"{fn}_rollout"] = (f"{fn}_rollout", (init, params, noise) + extra)
        acts = rng.uniform(-1, 1, (n, env.spec.action_dim))
        cases[f"{fn}_step"] = (f"{fn}_step", (init, acts) + extra)
    return cases


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, (name, fargs) in _cases(args.episodes, rng).items():
        t_py, out_py = _time(getattr(_fallback, name), fargs, args.repeat)
        t_cy, out_cy = _time(getattr(_kernels, name), fargs, args.repeat)
        diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(out_py, out_cy))
        print(f"{label:18s} {1e3 * t_py:11.3f} {1e3 * t_cy:12.3f} {t_py / t_cy:8.1f} {diff:11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
