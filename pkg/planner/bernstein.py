"""Order-5 Bernstein segments parameterized by their endpoint waypoints.

A segment of duration t is B(tau) = sum_k c_k b_k(tau / t) per axis. The six
control points follow from the endpoint triples (p, v, a) and (q, V, A):

    c0 = p                      c5 = q
    c1 = p + t v / 5            c4 = q - t V / 5
    c2 = p + 2 t v / 5 + t^2 a / 20
    c3 = q - 2 t V / 5 + t^2 A / 20

so the conversion matrix is A0 + t A1 + t^2 A2.
"""
import numpy as np
from scipy.special import comb

from planner import ORDER, InvalidOrderError, NonPositiveDurationError


_A0 = np.array([[1, 0, 0, 0, 0, 0],
                [1, 0, 0, 0, 0, 0],
                [1, 0, 0, 0, 0, 0],
                [0, 0, 0, 1, 0, 0],
                [0, 0, 0, 1, 0, 0],
                [0, 0, 0, 1, 0, 0]], dtype=float)

_A1 = np.array([[0, 0, 0, 0, 0, 0],
                [0, 1 / 5, 0, 0, 0, 0],
                [0, 2 / 5, 0, 0, 0, 0],
                [0, 0, 0, 0, -2 / 5, 0],
                [0, 0, 0, 0, -1 / 5, 0],
                [0, 0, 0, 0, 0, 0]], dtype=float)

_A2 = np.array([[0, 0, 0, 0, 0, 0],
                [0, 0, 0, 0, 0, 0],
                [0, 0, 1 / 20, 0, 0, 0],
                [0, 0, 0, 0, 0, 1 / 20],
                [0, 0, 0, 0, 0, 0],
                [0, 0, 0, 0, 0, 0]], dtype=float)

# first and second forward differences of the control points
DIFF1 = np.diff(np.eye(ORDER + 1), n=1, axis=0)
DIFF2 = np.diff(np.eye(ORDER + 1), n=2, axis=0)


def _check_duration(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise NonPositiveDurationError(f'segment duration must be positive, got {t}')
    return t


def conversion_parts():
    """The duration-free parts (A0, A1, A2) of the conversion matrix."""
    return _A0, _A1, _A2


def conversion_matrix(t):
    """6x6 map from [p, v, a, q, V, A] to control points; t may be an array
    of durations, giving a stack of matrices."""
    t = _check_duration(t)
    return _A0 + t[..., None, None] * _A1 + (t ** 2)[..., None, None] * _A2


def conversion_matrix_dt(t):
    """Derivative of the conversion matrix with respect to the duration."""
    t = _check_duration(t)
    return _A1 + 2.0 * t[..., None, None] * _A2


def _triple(w):
    if hasattr(w, 'position'):
        return np.stack([np.atleast_1d(w.position), np.atleast_1d(w.velocity),
                         np.atleast_1d(w.acceleration)]).astype(float)
    return np.asarray(w, dtype=float).reshape(3, -1)


def waypoints_to_coefficients(w, w_next, t):
    """Control points, shape (axes, 6), of the segment joining two waypoints."""
    z = np.concatenate([_triple(w), _triple(w_next)], axis=0)
    return (conversion_matrix(t) @ z).T


def differentiation_matrix(m, t):
    """Maps the control points of the (m-1)-th derivative to those of the m-th.

    Shape (6-m) x (7-m) with (6-m)/t on the superdiagonal and its negative on
    the diagonal.
    """
    if not (isinstance(m, (int, np.integer)) and 1 <= m <= ORDER):
        raise InvalidOrderError(f'differentiation order must be in 1..{ORDER}, got {m}')
    t = float(_check_duration(t))
    n = ORDER + 1 - m
    return (n / t) * (np.eye(n, n + 1, k=1) - np.eye(n, n + 1))


def derivative_matrix(m, t):
    """Product D(m) ... D(2) D(1) mapping position control points to those of
    the m-th derivative; the identity for m = 0."""
    if m == 0:
        return np.eye(ORDER + 1)
    out = differentiation_matrix(1, t)
    for order in range(2, m + 1):
        out = differentiation_matrix(order, t) @ out
    return out


def basis(n, s):
    """Bernstein basis of degree n at normalized times s, shape (len(s), n+1)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))[:, None]
    k = np.arange(n + 1)[None, :]
    return comb(n, k) * s ** k * (1.0 - s) ** (n - k)


def evaluate_coefficients(coefficients, s):
    """Evaluate Bernstein curves with control points (axes, n+1) at s in [0, 1]."""
    coefficients = np.atleast_2d(coefficients)
    return basis(coefficients.shape[1] - 1, s) @ coefficients.T


def endpoint_waypoints(coefficients, t):
    """Recover the (p, v, a) triples at both ends of a segment, each (3, axes)."""
    coefficients = np.atleast_2d(coefficients)
    vel = coefficients @ derivative_matrix(1, t).T
    acc = coefficients @ derivative_matrix(2, t).T
    start = np.stack([coefficients[:, 0], vel[:, 0], acc[:, 0]])
    end = np.stack([coefficients[:, -1], vel[:, -1], acc[:, -1]])
    return start, end
