"""Backward RK4 for linear systems dV/dt = A(t) V - c(t) with piecewise-constant coefficients.

On a step of constant coefficients one RK4 step is an affine map, so it is
stored as the (J+1)x(J+1) matrix ``T(-h A~)`` acting on ``[V, 1]``, where
``A~ = [[A, -c], [0, 0]]`` and ``T`` is the degree-4 Taylor polynomial.
"""

from __future__ import annotations

import math

import numpy as np

DEFAULT_STEP = 1.0 / 3650.0


def time_nodes(horizon: float, step: float = DEFAULT_STEP, extra=()) -> np.ndarray:
    """Uniform nodes ``k * step`` on [0, horizon], merged with extra breakpoints."""
    n = int(math.floor(horizon / step + 1e-9))
    pts = np.arange(n + 1) * step
    pts = pts[pts < horizon]
    extra = np.asarray([x for x in extra if 0.0 <= x <= horizon], dtype=float)
    return np.unique(np.concatenate((pts, extra, [0.0, float(horizon)])))


def rk4_matrices(augmented: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Batched ``T(-h A~)`` for generators ``augmented`` (n, m, m) and step sizes ``steps`` (n,)."""
    x = -steps[:, None, None] * augmented
    eye = np.broadcast_to(np.eye(augmented.shape[-1]), augmented.shape)
    out = eye + x / 4.0
    out = eye + (x @ out) / 3.0
    out = eye + (x @ out) / 2.0
    return eye + x @ out


def augment(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Stack ``A`` (n, J, J) and forcing ``c`` (n, J) into (n, J+1, J+1)."""
    n, J = c.shape
    out = np.zeros((n, J + 1, J + 1))
    out[:, :J, :J] = a
    out[:, :J, J] = -c
    return out


class BackwardSolution:
    """Right values ``right[i] = V(nodes[i])`` and left limits ``left[i] = V(nodes[i]-)``."""

    def __init__(self, nodes, augmented, terminal, atoms=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.augmented = augmented
        N = len(self.nodes) - 1
        J = augmented.shape[-1] - 1
        self.n_states = J
        steps = np.diff(self.nodes)
        mats = rk4_matrices(augmented, steps)
        atoms = atoms or {}
        right = np.empty((N + 1, J))
        left = np.empty((N + 1, J))
        right[N] = terminal
        left[N] = right[N] + atoms.get(N, 0.0)
        w = np.append(left[N], 1.0)
        for i in range(N - 1, -1, -1):
            w = mats[i] @ w
            right[i] = w[:J]
            if i in atoms:
                w[:J] += atoms[i]
            left[i] = w[:J]
        self.right = right
        self.left = left

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    def values_at(self, t) -> np.ndarray:
        """V(t) for a scalar or array ``t``; between nodes a partial RK4 step is taken."""
        t_arr = np.asarray(t, dtype=float)
        scalar = t_arr.ndim == 0
        t_arr = np.atleast_1d(t_arr)
        if np.any(t_arr > self.horizon) or np.any(t_arr < 0):
            raise ValueError("evaluation time outside [0, horizon]")
        i = np.searchsorted(self.nodes, t_arr, side="right") - 1
        out = self.right[np.minimum(i, len(self.nodes) - 1)].copy()
        inner = self.nodes[i] != t_arr
        if np.any(inner):
            k = i[inner]
            h = self.nodes[k + 1] - t_arr[inner]
            mats = rk4_matrices(self.augmented[k], h)
            w = np.concatenate((self.left[k + 1], np.ones((len(k), 1))), axis=1)
            out[inner] = np.einsum("nij,nj->ni", mats, w)[:, : self.n_states]
        return out[0] if scalar else out
