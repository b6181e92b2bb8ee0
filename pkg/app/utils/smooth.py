"""C^∞ transition profiles shared by cutoffs, coefficient plateaus and the
dyadic partition of unity."""

from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline


def bump(x: np.ndarray) -> np.ndarray:
    """exp(-1/(x(1-x))) on (0, 1), zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (xi * (1.0 - xi)))
    return out


class SmoothStep:
    """Step rising from 0 on (-inf, 0] to 1 on [1, inf), C^∞ in between.

    Built as the normalized running integral of :func:`bump`, integrated panel
    by panel with Gauss-Legendre and interpolated with the exact derivative.
    """

    panels = 4096
    order = 12

    def __init__(self):
        edges = np.linspace(0.0, 1.0, self.panels + 1)
        nodes, weights = np.polynomial.legendre.leggauss(self.order)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        points = mid[:, None] + half[:, None] * nodes[None, :]
        per_panel = (bump(points) * weights).sum(axis=1) * half
        cumulative = np.concatenate([[0.0], np.cumsum(per_panel)])

        self.normalizer = float(cumulative[-1])
        values = cumulative / self.normalizer
        values[-1] = 1.0
        self._spline = CubicHermiteSpline(edges, values, bump(edges) / self.normalizer)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.clip(self._spline(np.clip(x, 0.0, 1.0)), 0.0, 1.0)
        out = np.where(x <= 0.0, 0.0, np.where(x >= 1.0, 1.0, out))
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        out = bump(np.atleast_1d(x)) / self.normalizer
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    @property
    def derivative_sup(self) -> float:
        """Exact sup of the derivative, attained at x = 1/2."""
        return float(np.exp(-4.0) / self.normalizer)


@lru_cache(maxsize=1)
def smooth_step() -> SmoothStep:
    return SmoothStep()


def falling(x, start: float, stop: float):
    """1 below ``start``, 0 above ``stop``, smooth in between."""
    return 1.0 - smooth_step()((np.asarray(x, dtype=float) - start) / (stop - start))
