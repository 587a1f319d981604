"""Synthetic potential-outcome designs with known observable densities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import DiscretizedObservables
from .exceptions import DomainError

TYPES = ("always_taker", "never_taker", "complier", "defier")


@dataclass(frozen=True)
class BetaLATEDesign:
    """Binary instrument and treatment, outcomes ``scale * Beta(a, b)``.

    Each compliance type has its own Beta parameters for ``Y(1)`` and
    ``Y(0)``; outcomes are bounded on ``[0, scale]``.

    Parameters
    ----------
    type_probs : tuple of 4 floats
        Always-taker, never-taker, complier and defier shares.
    shape1, shape0 : tuple of 4 (a, b) pairs
        Beta parameters of ``Y(1)`` and ``Y(0)`` by type.
    pr_z1 : float
    scale : float
    """

    type_probs: tuple = (0.2, 0.2, 0.45, 0.15)
    shape1: tuple = ((4.0, 3.0), (3.0, 3.0), (5.0, 3.0), (2.0, 4.0))
    shape0: tuple = ((3.0, 3.0), (2.0, 4.0), (3.0, 4.0), (3.0, 3.0))
    pr_z1: float = 0.5
    scale: float = 4.0

    def __post_init__(self):
        pr = np.asarray(self.type_probs, dtype=float)
        if pr.shape != (4,) or np.any(pr < 0) or abs(pr.sum() - 1) > 1e-12:
            raise DomainError("type_probs must be 4 shares summing to one")
        if not 0 < self.pr_z1 < 1:
            raise DomainError("pr_z1 must lie in (0, 1)")

    @classmethod
    def with_defiers(cls, defier_share, complier_share=0.45, **kw):
        """Design with the given defier share; the rest split between takers."""
        rest = 1.0 - defier_share - complier_share
        if rest < 0 or defier_share < 0:
            raise DomainError("shares must be nonnegative and sum to at most one")
        return cls(type_probs=(rest / 2, rest / 2, complier_share, defier_share), **kw)

    def sample(self, n, rng):
        """Draw ``n`` records ``(y, d, z)``."""
        rng = np.random.default_rng(rng)
        z = (rng.random(n) < self.pr_z1).astype(int)
        t = rng.choice(4, size=n, p=np.asarray(self.type_probs))
        d = np.select([t == 0, t == 1, t == 2], [1, 0, z], default=1 - z)
        a1, b1 = np.asarray(self.shape1).T
        a0, b0 = np.asarray(self.shape0).T
        y1 = self.scale * rng.beta(a1[t], b1[t])
        y0 = self.scale * rng.beta(a0[t], b0[t])
        y = np.where(d == 1, y1, y0)
        return np.column_stack([y, d, z]).astype(float)

    def _dens(self, shapes, y, k):
        a, b = shapes[k]
        return stats.beta.pdf(y / self.scale, a, b) / self.scale

    def observables(self, K=4000):
        """Exact observable densities evaluated at ``K`` bin midpoints on ``[0, scale]``."""
        w = self.scale / K
        y = (np.arange(K) + 0.5) * w
        pr = self.type_probs
        f1 = [self._dens(self.shape1, y, k) for k in range(4)]
        f0 = [self._dens(self.shape0, y, k) for k in range(4)]
        p1 = pr[0] * f1[0] + pr[2] * f1[2]
        q1 = pr[0] * f1[0] + pr[3] * f1[3]
        q0 = pr[1] * f0[1] + pr[2] * f0[2]
        p0 = pr[1] * f0[1] + pr[3] * f0[3]
        p = np.column_stack([p0, p1])
        q = np.column_stack([q0, q1])
        # midpoint sums are off by O(w^2); renormalize to unit mass
        p /= p.sum() * w
        q /= q.sum() * w
        return DiscretizedObservables(y, w, p, q, self.pr_z1)

    @property
    def late(self):
        """Complier average treatment effect."""
        (a1, b1), (a0, b0) = self.shape1[2], self.shape0[2]
        return self.scale * (a1 / (a1 + b1) - a0 / (a0 + b0))
