"""Brute-force cross-checks for the closed forms, used by ``selftest`` and the tests.

Nothing here calls the closed-form path it is meant to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fastretrial.analytic import SystemConfig


def binomial_success_sum(n_devices: int, n_preambles: int, alpha: float) -> float:
    """Sum over the other active devices k of (1-1/L)^k * Binom(N-1, alpha)(k)."""
    m = n_devices - 1
    keep = 1.0 - 1.0 / n_preambles
    return math.fsum(
        keep ** k * math.comb(m, k) * alpha ** k * (1.0 - alpha) ** (m - k) for k in range(m + 1)
    )


def binomial_throughput_sum(n_devices: int, n_preambles: int, alpha: float) -> float:
    """E[K (1-1/L)^(K-1)] for K ~ Binom(N, alpha)."""
    keep = 1.0 - 1.0 / n_preambles
    return math.fsum(
        k * keep ** (k - 1) * math.comb(n_devices, k) * alpha ** k * (1.0 - alpha) ** (n_devices - k)
        for k in range(1, n_devices + 1)
    )


def bisect_product_log(x: float, tol: float = 1e-15) -> float:
    """Solve w e^w = x for w >= -1 by plain bisection."""
    lo, hi = -1.0, max(1.0, math.log1p(x) if x > 0 else 0.0)
    while hi * math.exp(hi) < x:
        hi *= 2.0
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid * math.exp(mid) < x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CollisionCheck:
    attempts: int
    successes: int
    expected: float

    @property
    def rate(self) -> float:
        return self.successes / self.attempts

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.expected) / self.expected


def saturated_collision_check(n_devices: int = 40, n_preambles: int = 20, slots: int = 1000,
                              runs: int = 30, seed: int = 0) -> CollisionCheck:
    """Simulate with every device backlogged; per-attempt success should be (1-1/L)^(N-1)."""
    from fastretrial.simulator import SimConfig, run_simulation

    cfg = SimConfig(SystemConfig(n_devices, n_preambles, 10.0), total_slots=slots,
                    warmup_slots=0, num_runs=runs, master_seed=seed, max_tau=1)
    est = run_simulation(cfg)
    expected = (1.0 - 1.0 / n_preambles) ** (n_devices - 1)
    return CollisionCheck(est.tx_attempts, est.tx_successes, expected)


def exact_two_device_tail(n_preambles: int, arrival_rate: float, max_tau: int,
                          cap: int = 30, kmax: int = 10) -> np.ndarray:
    """Stationary Pr(q_1 >= tau), tau = 1..max_tau, for N = 2 devices.

    Builds the joint chain on (q_1, q_2) in [0, cap]^2 (overflow lumped on the
    boundary, Poisson tail lumped on ``kmax``) and solves for its stationary
    vector. ``cap`` must sit far above the tail of interest.
    """
    from scipy import sparse
    from scipy.sparse.linalg import eigs

    L, lam = n_preambles, arrival_rate
    pa = np.array([math.exp(-lam) * lam ** k / math.factorial(k) for k in range(kmax + 1)])
    pa[-1] += 1.0 - pa.sum()
    collide = 1.0 / L
    size = cap + 1
    rows, cols, vals = [], [], []
    for q1 in range(size):
        for q2 in range(size):
            src = q1 * size + q2
            for a1 in range(kmax + 1):
                for a2 in range(kmax + 1):
                    w = pa[a1] * pa[a2]
                    l1, l2 = q1 + a1, q2 + a2
                    if l1 >= 1 and l2 >= 1:
                        outcomes = ((collide, l1, l2), (1.0 - collide, l1 - 1, l2 - 1))
                    else:
                        outcomes = ((1.0, l1 - (l1 >= 1), l2 - (l2 >= 1)),)
                    for pr, n1, n2 in outcomes:
                        rows.append(src)
                        cols.append(min(n1, cap) * size + min(n2, cap))
                        vals.append(w * pr)
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(size * size, size * size))
    _, vec = eigs(P.T, k=1, which="LM")
    pi = np.abs(vec[:, 0].real)
    pi /= pi.sum()
    marg = pi.reshape(size, size).sum(axis=1)
    return np.array([marg[t:].sum() for t in range(1, max_tau + 1)])
