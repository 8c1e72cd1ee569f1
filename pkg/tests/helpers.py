"""Seeded random-model generators shared across the test suite.

All randomness flows through the package's own generator so the suite is
platform-reproducible. Kernels and emissions are strictly positive (entries
drawn from [0.05, 1) before row normalization), which keeps every
conditioning event possible and the averaged row minimum positive.
"""

import numpy as np

from filterstab import FiniteModel, Xoshiro256StarStar, build_model


def _positive_rows(stream, rows, cols, lo=0.05, hi=1.0):
    raw = np.array([[lo + (hi - lo) * stream.random() for _ in range(cols)]
                    for _ in range(rows)])
    return raw / raw.sum(axis=1, keepdims=True)


def random_positive_model(seed, d, n_symbols=2, gaussian=False) -> FiniteModel:
    stream = Xoshiro256StarStar(seed)
    transition = _positive_rows(stream, d, d)
    if gaussian:
        means = [2.0 * i + stream.random() for i in range(d)]
        observation = {"type": "gaussian", "means": means, "sigma": 0.5 + stream.random()}
    else:
        observation = {"type": "finite", "gamma": _positive_rows(stream, d, n_symbols).tolist()}
    nu = _positive_rows(stream, 1, d)[0]
    beta = _positive_rows(stream, 1, d)[0]
    return build_model({
        "states": d,
        "transition": transition.tolist(),
        "observation": observation,
        "nu": nu.tolist(),
        "beta": beta.tolist(),
    })


def random_kernel_matrix(seed, d, lo=0.05, hi=1.0) -> np.ndarray:
    stream = Xoshiro256StarStar(seed)
    return _positive_rows(stream, d, d, lo, hi)
