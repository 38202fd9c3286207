"""Time one rollout loss + gradient with the compiled and the pure-Python kernel.

    python benchmarks/bench_kernels.py [--length 499] [--repeat 5]

Prints the best-of-``repeat`` time per backend and variant and checks that both
backends return the same loss and gradient.
"""

import argparse
import time

import numpy as np

from dilar import kernel
from dilar.benchmark import ChirpSpec, GroundTruthSpec, generate_ground_truth
from dilar.models import VARIANTS, build_model, init_param_store
from dilar.training import cmse_weights


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--length", type=int, default=499, help="rollout window")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--hidden", type=int, nargs="+", default=[12, 12])
    args = p.parse_args(argv)

    impls = kernel.backends()
    if "compiled" not in impls:
        print("compiled kernel not importable; only the Python fallback is timed")
    ds = generate_ground_truth(GroundTruthSpec(), ChirpSpec())
    l = args.length
    u, y = ds.u[: l + 1], ds.x_obs[1 : l + 1]
    w = cmse_weights(ds.x_obs[: ds.split_index]).w

    print(f"window {l}, hidden {args.hidden}, best of {args.repeat}")
    print(f"{'variant':12}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}{'rel |dg|':>12}")
    for v in VARIANTS:
        model = build_model(v, tuple(args.hidden))
        params = init_param_store(model, (2.4, -4.8, -1.1, 19.0, 9.5), np.random.default_rng(0))
        x0 = np.r_[ds.x_obs[0], 0.0]
        times, grads = {}, {}
        for name, impl in impls.items():
            def call(impl=impl):
                return kernel.loss_and_grad(model, params, x0, u, y, w, ds.h, impl=impl)
            grads[name] = call()[1]
            times[name] = best_time(call, args.repeat)
        row = f"{v:12}" + "".join(f"{times[n] * 1e3:>11.2f} ms" for n in impls)
        if len(impls) > 1:
            ref = grads["python"]
            diff = np.abs(grads["compiled"] - ref).max() / max(np.abs(ref).max(), 1e-300)
            row += f"{times['python'] / times['compiled']:>9.1f}x{diff:>12.1e}"
        print(row)


if __name__ == "__main__":
    main()
