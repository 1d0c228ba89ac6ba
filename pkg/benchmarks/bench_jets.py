"""Compare the compiled jet kernels with the numpy fallback.

Times the raw product kernel, a composed sqrt (Horner) and a full order-4 jet of
the deformed sphere metric, swapping ``zermelo.jets._core`` between backends.

    python benchmarks/bench_jets.py --repeat 5
"""

import argparse
import contextlib
import timeit

import numpy as np

from zermelo import _jetcore_py, jets
from zermelo.metrics import rotation_wind, sphere_stereographic, zermelo

try:
    from zermelo import _jetcore as _compiled
except ImportError:
    _compiled = None


@contextlib.contextmanager
def backend(module):
    saved = jets._core
    jets._core = module
    try:
        yield
    finally:
        jets._core = saved


def cases(batch):
    rng = np.random.default_rng(0)
    tab = jets.table(4, 4)
    a = rng.normal(size=(batch, tab.size))
    b = rng.normal(size=(batch, tab.size))
    u = jets.Jet.variables(rng.uniform(0.5, 1.5, size=(batch, 4)), 4)
    metric = zermelo(sphere_stereographic(2), rotation_wind(0.5))
    point = np.c_[rng.uniform(-1, 1, size=(batch, 2)), rng.normal(size=(batch, 2))]

    def L(*v):
        F = metric.evaluator(list(v[:2]), list(v[2:]))
        return F * F

    return {
        "mul (4 vars, order 4)": lambda: jets._core.mul(a, b, tab.left, tab.right, tab.out),
        "sqrt (4 vars, order 4)": lambda: jets.sqrt(u[0] * u[1] + u[2] * u[2] + u[3]),
        "deformed sphere F^2 jet": lambda: jets.eval_jet(L, point, 4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64, help="points per call")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--number", type=int, default=5, help="calls per timing")
    args = ap.parse_args(argv)

    backends = {"python": _jetcore_py}
    if _compiled is not None:
        backends["compiled"] = _compiled
    else:
        print("compiled extension not built; timing the fallback only")

    print(f"{'case':28s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name in cases(args.batch):
        times = {}
        for bname, module in backends.items():
            with backend(module):
                fn = cases(args.batch)[name]
                fn()  # warm table caches
                best = min(timeit.repeat(fn, number=args.number, repeat=args.repeat))
                times[bname] = best / args.number
        row = " ".join(f"{1e3 * t:10.2f}ms" for t in times.values())
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:28s} {row}   {speedup:6.1f}x")


if __name__ == "__main__":
    main()
