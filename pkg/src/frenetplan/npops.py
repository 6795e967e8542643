"""Plain-numpy counterpart of :mod:`frenetplan.learn.tape`'s function namespace.

Kernels shared between inference and training take an ``xp`` argument and
only call functions that exist under the same name in both namespaces.
"""

import numpy as np
from numpy import clip, concatenate, exp, log, maximum, minimum, sqrt, stack, sum, tanh, where  # noqa: F401

atan2 = np.arctan2


def norm(a, axis=None):
    return np.sqrt(np.sum(a * a, axis=axis))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def kkt_solve(factor, eta):
    return factor.solve(eta)


def value(x):
    return x
