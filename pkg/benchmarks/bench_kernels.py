"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--events 1000000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from evdepth import synthgen
from evdepth.kernels import available_backends, load_backend


def make_events(n, width, height, span, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, width, n).astype(np.uint16)
    y = rng.integers(0, height, n).astype(np.uint16)
    t = np.sort(rng.integers(0, span, n)).astype(np.int64)
    p = rng.choice(np.array([-1, 1], np.int8), n)
    return x, y, t, p


def cases(args):
    w, h, span = 346, 260, 50_000
    ev = make_events(args.events, w, h, span)
    cfg = synthgen.GenConfig(width=128, height=96, duration=0.5)
    frames = synthgen.render_sequence(cfg)
    stack = np.stack([f.log_intensity for f in frames])
    times = np.array([f.t for f in frames])
    return {
        "voxel B=5": lambda k: k.voxel_accumulate(*ev, 0, span, 5, h, w),
        "cstr": lambda k: k.cstr_accumulate(*ev, 0, span, h, w),
        "tore K=3": lambda k: k.tore_ages(*ev, span, 3, h, w),
        "threshold 128x96x101": lambda k: k.threshold_events(stack, times, cfg.threshold),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {name: load_backend(name) for name in available_backends()}
    print(f"{'kernel':<24}" + "".join(f"{b:>14}" for b in backends) + "   speedup")
    for label, fn in cases(args).items():
        best = {}
        for name, k in backends.items():
            best[name] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        row = f"{label:<24}" + "".join(f"{best[b] * 1e3:>12.1f}ms" for b in backends)
        if len(best) == 2:
            row += f"   {best['python'] / best['compiled']:.1f}x"
        print(row)


if __name__ == "__main__":
    main()
