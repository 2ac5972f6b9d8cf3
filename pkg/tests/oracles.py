"""Independent reference implementations shared by the test modules."""

import numpy as np


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def offdiag_sq_loops(C):
    p = C.shape[0]
    return sum(C[i, j] ** 2 for i in range(p) for j in range(p) if i != j)
