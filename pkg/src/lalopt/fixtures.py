"""Small problems with closed-form KKT points, used in tests and demos."""

from __future__ import annotations

import numpy as np

from .model import QCQP


def sphere_problem(p=(3.0, 4.0)) -> QCQP:
    """``min p'x  s.t.  ||x||^2 = 1``.

    The minimiser is ``-p / ||p||`` with multiplier ``||p|| / 2``.
    """
    p = np.asarray(p, dtype=float)
    n = p.size
    return QCQP(np.zeros((n, n)), p, 0.0, [(2.0 * np.eye(n), np.zeros(n), -1.0)])


def sphere_solution(p=(3.0, 4.0)):
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p)
    return -p / r, np.array([r / 2.0])


def linear_quadratic_problem(n: int = 2) -> QCQP:
    """``min 1/2 ||x||^2  s.t.  x_1 = 1``; solution ``e_1`` with multiplier ``-1``."""
    b = np.zeros(n)
    b[0] = 1.0
    return QCQP(np.eye(n), np.zeros(n), 0.0, [(np.zeros((n, n)), b, -1.0)])


def linear_quadratic_solution(n: int = 2):
    x = np.zeros(n)
    x[0] = 1.0
    return x, np.array([-1.0])
