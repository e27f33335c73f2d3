"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on the shapes the desk-scale extractor produces, checks the
two backends agree, then times one forward/backward pass of the desk model
with each backend swapped in.
"""

import argparse
import contextlib
import timeit

import numpy as np

from fmdnn import _kernels_py, kernels
from fmdnn import tensor as T
from fmdnn.config import desk_config
from fmdnn.fca import FMDNN

try:
    from fmdnn import _kernels as compiled
except ImportError:
    compiled = None

NAMES = ("im2col", "col2im", "maxpool_forward", "maxpool_backward")


@contextlib.contextmanager
def backend(module):
    saved = {n: getattr(kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(kernels, n, getattr(module, n))
    try:
        yield
    finally:
        for n in NAMES:
            setattr(kernels, n, saved[n])


def cases(rng, batch):
    x = np.ascontiguousarray(rng.normal(size=(batch, 12, 32, 32)))
    cols = np.ascontiguousarray(rng.normal(size=(batch, 12 * 9, 32 * 32)))
    pooled, index = _kernels_py.maxpool_forward(x, 2, 2)
    grad = np.ascontiguousarray(rng.normal(size=pooled.shape))
    return {
        "im2col 12x32x32 k3": ("im2col", (x, 3, 1, 1)),
        "col2im 12x32x32 k3": ("col2im", (cols, 12, 32, 32, 3, 1, 1)),
        "maxpool fwd 2x2": ("maxpool_forward", (x, 2, 2)),
        "maxpool bwd 2x2": ("maxpool_backward", (grad, index, 32, 32)),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--batch", type=int, default=8)
    args = parser.parse_args()
    if compiled is None:
        print("compiled extension not built; only the numpy backend is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for label, (name, call_args) in cases(rng, args.batch).items():
        py_fn, c_fn = getattr(_kernels_py, name), getattr(compiled, name)
        a, b = py_fn(*call_args), c_fn(*call_args)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.array_equal(np.asarray(u), np.asarray(v)), f"{name}: backends disagree"
        tp = best_of(lambda: py_fn(*call_args), args.repeat)
        tc = best_of(lambda: c_fn(*call_args), args.repeat)
        print(f"{label:<22}{tp * 1e3:>10.3f}{tc * 1e3:>11.3f}{tp / tc:>8.2f}x")

    cfg = desk_config()
    model = FMDNN(cfg)
    x = rng.random((args.batch, 3, cfg.model.image_size, cfg.model.image_size))
    labels = np.arange(args.batch) % cfg.model.num_classes

    def step():
        loss = T.cross_entropy(model(x), labels)
        T.backward(loss)
        model.zero_grad()

    timings = {}
    for tag, module in (("numpy", _kernels_py), ("cython", compiled)):
        with backend(module):
            step()
            timings[tag] = best_of(step, max(3, args.repeat // 5))
    print(f"{'model fwd+bwd b=' + str(args.batch):<22}{timings['numpy'] * 1e3:>10.1f}"
          f"{timings['cython'] * 1e3:>11.1f}{timings['numpy'] / timings['cython']:>8.2f}x")


if __name__ == "__main__":
    main()
