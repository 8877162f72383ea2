"""Compare the compiled and pure-Python block kernels.

Micro-benchmarks time each kernel on a few partitions; the end-to-end part
times one certificate computation per backend in a fresh interpreter, since
the backend is chosen at import.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sharpcert import kernels
from sharpcert.groups import GroupStructure

CASES = [
    ("400 singletons", 400, 1),
    ("100 groups of 20", 2000, 20),
    ("20 groups of 20", 400, 20),
]

END_TO_END = """
import time
from sharpcert import kernels
from sharpcert.certificates import classify
from sharpcert.problem_io import EnsembleSpec, generate_instance
prob = generate_instance(EnsembleSpec(60, 400, 400, 1, 3, seed=1), 0)
start = time.perf_counter()
classify(prob, full=True)
print(kernels.BACKEND, time.perf_counter() - start)
"""


def micro(repeat):
    rng = np.random.default_rng(0)
    names = sorted(kernels.BACKENDS)
    print(f"{'case':<20} {'kernel':<26}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for label, p, G in CASES:
        gs = GroupStructure.contiguous(p, G)
        v = rng.standard_normal(p)
        t = 0.5 * float(np.max(gs.norms(v)))
        calls = {
            "block_norms": lambda k: k.block_norms(v, gs.perm, gs.ptr),
            "block_soft_threshold": lambda k: k.block_soft_threshold(v, 0.3, gs.perm, gs.ptr),
            "project_epigraph_maxnorm": lambda k: k.project_epigraph_maxnorm(v, t, gs.perm, gs.ptr),
        }
        for kernel, fn in calls.items():
            times = {}
            for name in names:
                k = kernels.get_backend(name)
                number = 200
                times[name] = min(timeit.repeat(lambda: fn(k), number=number, repeat=repeat)) / number
            row = "".join(f"{times[n] * 1e6:>10.1f}us" for n in names)
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{label:<20} {kernel:<26}{row}{speed:>9.1f}x")


def end_to_end():
    print("\nend to end: classify(full=True) on an l1 instance with m=60, n=400")
    for flag in ("0", "1"):
        env = dict(os.environ, SHARPCERT_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        print(f"  {out[0]:<10} {float(out[1]):.2f}s")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if "compiled" not in kernels.BACKENDS:
        print("compiled extension not built; only the python backend is timed")
    micro(args.repeat)
    end_to_end()


if __name__ == "__main__":
    main()
