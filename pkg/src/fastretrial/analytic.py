"""Steady-state analysis of multichannel slotted ALOHA with fast retrial.

Every routine here is a pure function of plain numbers or of a
:class:`SystemConfig`. The pipeline is

    arrival rate -> access probability -> success probability -> QoS exponent

with the access probability obtained either from the finite-N throughput
equation or from its Lambert W limit at fixed load ratio ``N / L``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Literal

from fastretrial.errors import (
    BoundExceededError,
    InfeasibleRateError,
    InvalidConfigError,
    LambertDomainError,
    NoPositiveRootError,
    UnachievableTargetError,
)
from fastretrial.lambertw import lambert_w0

Mode = Literal["finite", "asymptotic"]

#: Above this many devices ``analyze`` defaults to the asymptotic formulas.
AUTO_ASYMPTOTIC_THRESHOLD = 10_000

_INV_E = math.exp(-1.0)


@dataclass(frozen=True)
class SystemConfig:
    """N devices contending for L preambles, Poisson(lambda) arrivals each."""

    n_devices: int
    n_preambles: int
    arrival_rate: float

    def __post_init__(self):
        if int(self.n_devices) != self.n_devices or self.n_devices < 1:
            raise InvalidConfigError(f"n_devices must be a positive integer, got {self.n_devices!r}")
        if int(self.n_preambles) != self.n_preambles or self.n_preambles < 2:
            raise InvalidConfigError(f"n_preambles must be an integer >= 2, got {self.n_preambles!r}")
        if self.n_devices < self.n_preambles:
            raise InvalidConfigError(
                f"N = {self.n_devices} < L = {self.n_preambles}: every device could own a "
                "preamble, random access is not needed"
            )
        if not (self.arrival_rate > 0 and math.isfinite(self.arrival_rate)):
            raise InvalidConfigError(f"arrival_rate must be positive, got {self.arrival_rate!r}")
        object.__setattr__(self, "n_devices", int(self.n_devices))
        object.__setattr__(self, "n_preambles", int(self.n_preambles))
        object.__setattr__(self, "arrival_rate", float(self.arrival_rate))

    @property
    def eta(self) -> float:
        """Load ratio N / L."""
        return self.n_devices / self.n_preambles

    def with_rate(self, arrival_rate: float) -> "SystemConfig":
        return SystemConfig(self.n_devices, self.n_preambles, arrival_rate)


@dataclass(frozen=True)
class QosTarget:
    """Require ``Pr(q >= tau) <= epsilon``."""

    tau: int
    epsilon: float

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise InvalidConfigError(f"tau must be an integer >= 1, got {self.tau!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidConfigError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")


@dataclass(frozen=True)
class AnalyticSolution:
    config: SystemConfig
    alpha: float
    alpha_max: float
    p_success: float
    lambda_max: float
    theta_star: float
    theta_lower: float
    theta_upper: float
    asymptotic: bool

    def tail(self, tau: int) -> float:
        return tail_probability(self.theta_star, tau)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("config"))
        return d


def _pow_one_minus(x: float, k: float) -> float:
    """(1 - x)**k evaluated in log space."""
    if x >= 1.0:
        return 0.0 if k > 0 else 1.0
    return math.exp(k * math.log1p(-x))


def _bisect(f: Callable[[float], float], lo: float, hi: float, max_iter: int = 200,
            xtol: float = 0.0) -> float:
    """Root of ``f`` on ``[lo, hi]`` given ``f(lo) <= 0 <= f(hi)``.

    Halves until the bracket is no wider than ``xtol`` or cannot be split in
    floating point; returns the endpoint with the smaller residual.
    """
    flo, fhi = f(lo), f(hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= xtol:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fm < 0.0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return lo if abs(flo) <= abs(fhi) else hi


# --------------------------------------------------------------------------
# stability


def lambda_max(cfg: SystemConfig) -> float:
    """Sufficient stability threshold ``(1 - 1/L)**(N - 1)``.

    This is the no-collision probability when all N devices transmit, and
    equals ``exp(-kappa_L (N - 1))`` with ``kappa_L = ln(L / (L - 1))``.
    """
    return _pow_one_minus(1.0 / cfg.n_preambles, cfg.n_devices - 1)


def is_stable(cfg: SystemConfig) -> bool:
    """True iff ``lambda < lambda_max(cfg)``.

    The condition is sufficient for positive recurrence of the joint queue
    process, not necessary: configurations failing it may still have short
    queues in practice.
    """
    return cfg.arrival_rate < lambda_max(cfg)


def max_devices(n_preambles: int, arrival_rate: float) -> int:
    """Largest N satisfying the stability bound, ``floor(1 + ln(lam) / ln(1 - 1/L))``.

    Sufficient only; larger populations can still be stable.
    """
    if n_preambles < 2:
        raise InvalidConfigError("n_preambles must be >= 2")
    if not 0.0 < arrival_rate < 1.0:
        raise InvalidConfigError("arrival_rate must lie in (0, 1)")
    ratio = math.log(arrival_rate) / math.log1p(-1.0 / n_preambles)
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, abs(ratio)):
        ratio = nearest
    return int(math.floor(1.0 + ratio))


def min_preambles(n_devices: int, arrival_rate: float, limit: int = 10**9) -> int:
    """Smallest L for which ``lambda < (1 - 1/L)**(N - 1)`` holds."""
    if n_devices < 2:
        raise InvalidConfigError("n_devices must be >= 2")
    if not 0.0 < arrival_rate < 1.0:
        raise InvalidConfigError("arrival_rate must lie in (0, 1)")
    gap = -math.expm1(math.log(arrival_rate) / (n_devices - 1))  # 1 - lam**(1/(N-1))
    if gap <= 0.0 or 1.0 / gap > limit:
        raise BoundExceededError(
            f"minimum number of preambles exceeds {limit} for N = {n_devices}, lambda = {arrival_rate}"
        )
    L = max(2, math.ceil(1.0 / gap))

    def ok(L_):
        return arrival_rate < _pow_one_minus(1.0 / L_, n_devices - 1)

    while L > 2 and ok(L - 1):
        L -= 1
    while not ok(L):
        L += 1
    return L


# --------------------------------------------------------------------------
# access and success probabilities


def throughput_per_device(alpha: float, cfg: SystemConfig) -> float:
    """Normalised throughput ``S(alpha) = alpha (1 - alpha/L)**(N-1)``."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha * _pow_one_minus(alpha / cfg.n_preambles, cfg.n_devices - 1)


def total_throughput(alpha: float, cfg: SystemConfig) -> float:
    """Expected collision-free transmissions per slot, ``N S(alpha)``."""
    return cfg.n_devices * throughput_per_device(alpha, cfg)


def solve_alpha_max(cfg: SystemConfig) -> float:
    """Non-trivial root ``alpha <= L/N`` of ``S(alpha) = S(1)``."""
    peak = cfg.n_preambles / cfg.n_devices
    target = throughput_per_device(1.0, cfg)
    if peak >= 1.0:
        return 1.0
    return _bisect(lambda a: throughput_per_device(a, cfg) - target, 0.0, peak)


def solve_alpha(cfg: SystemConfig) -> float:
    """Access probability solving ``S(alpha) = lambda`` on the rising branch."""
    lam, lmax = cfg.arrival_rate, lambda_max(cfg)
    if lam >= lmax:
        raise InfeasibleRateError(
            f"lambda = {lam:.6g} >= lambda_max = {lmax:.6g} (stability condition violated)"
        )
    peak = min(1.0, cfg.n_preambles / cfg.n_devices)
    return _bisect(lambda a: throughput_per_device(a, cfg) - lam, 0.0, peak)


def _check_asymptotic(eta: float, lam: float) -> None:
    if eta < 1.0:
        raise InvalidConfigError(f"load ratio eta must be >= 1, got {eta!r}")
    if lam * eta > _INV_E * (1.0 + 1e-14):
        raise LambertDomainError(
            f"eta * lambda = {eta * lam:.6g} exceeds 1/e; no asymptotic solution exists"
        )


def alpha_asymptotic(eta: float, lam: float) -> float:
    """Large-system access probability ``-W0(-eta lam) / eta``."""
    _check_asymptotic(eta, lam)
    return -lambert_w0(-eta * lam) / eta


def alpha_max_asymptotic(eta: float) -> float:
    """``-W0(-eta e^{-eta}) / eta``, the large-system limit of alpha_max."""
    return alpha_asymptotic(eta, math.exp(-eta))


def success_prob(alpha: float, cfg: SystemConfig) -> float:
    """Per-transmission success probability ``(1 - alpha/L)**(N-1)``."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"alpha must lie in [0, 1], got {alpha!r}")
    return _pow_one_minus(alpha / cfg.n_preambles, cfg.n_devices - 1)


def success_prob_asymptotic(eta: float, lam: float) -> float:
    """Large-system success probability ``exp(W0(-lam eta))``."""
    _check_asymptotic(eta, lam)
    return math.exp(lambert_w0(-eta * lam))


def alpha_from_empty_prob(lam: float, p_empty: float) -> float:
    """Access probability implied by ``Pr(q = 0)`` under Poisson arrivals."""
    if not 0.0 <= p_empty <= 1.0:
        raise InvalidConfigError(f"p_empty must lie in [0, 1], got {p_empty!r}")
    if lam <= 0.0:
        raise InvalidConfigError(f"arrival rate must be positive, got {lam!r}")
    return 1.0 - math.exp(-lam) * p_empty


# --------------------------------------------------------------------------
# QoS exponent


def lmgf_arrival(theta: float, lam: float) -> float:
    """Poisson log-MGF ``lam (e^theta - 1)``."""
    return lam * math.expm1(theta)


def lmgf_service(theta: float, p: float) -> float:
    """Bernoulli(p) log-MGF ``ln(1 - p + p e^theta)``."""
    return math.log1p(p * math.expm1(theta))


def exponent_balance(theta: float, lam: float, p: float) -> float:
    """Left side of the QoS exponent equation; zero at ``theta = theta*``."""
    return lmgf_arrival(theta, lam) + lmgf_service(-theta, p)


def qos_bounds(lam: float, p: float) -> tuple[float, float]:
    """(theta_L, theta_U) = (ln(p/lam), ln(1 - ln(1-p)/lam))."""
    if not 0.0 < p < 1.0:
        raise InvalidConfigError(f"p must lie in (0, 1), got {p!r}")
    if lam <= 0.0:
        raise InvalidConfigError(f"arrival rate must be positive, got {lam!r}")
    return math.log(p / lam), math.log1p(-math.log1p(-p) / lam)


def qos_exponent(lam: float, p: float) -> float:
    """Unique positive root of ``lam (e^t - 1) + ln(1 - p (1 - e^-t)) = 0``.

    Raises :class:`NoPositiveRootError` when ``p <= lam``.
    """
    if lam <= 0.0:
        raise InvalidConfigError(f"arrival rate must be positive, got {lam!r}")
    if p >= 1.0:
        # deterministic service of one block per slot: no positive root is finite
        raise NoPositiveRootError("p = 1: queue never builds up, exponent is infinite")
    if p <= lam:
        raise NoPositiveRootError(
            f"p = {p:.6g} <= lambda = {lam:.6g}: no positive QoS exponent exists"
        )
    lo, hi = qos_bounds(lam, p)
    lo = max(lo, 1e-12)

    def f(t):
        return exponent_balance(t, lam, p)

    # the bounds are exact in theory; widen slightly against rounding
    while f(lo) > 0.0 and lo > 1e-300:
        lo *= 0.5
    while f(hi) < 0.0:
        hi = hi * 1.01 + 1e-12
    return _bisect(f, lo, hi)


def tail_probability(theta_star: float, tau: int) -> float:
    """``exp(-theta* tau)``, the exponent-level estimate of ``Pr(q >= tau)``."""
    if theta_star <= 0.0:
        raise InvalidConfigError(f"theta_star must be positive, got {theta_star!r}")
    return math.exp(-theta_star * tau)


def required_exponent(target: QosTarget) -> float:
    """Smallest exponent meeting the target: ``-ln(epsilon) / tau``."""
    return -math.log(target.epsilon) / target.tau


# --------------------------------------------------------------------------
# pipeline and design


def _resolve_mode(cfg: SystemConfig, mode: Mode | None) -> bool:
    if mode is None:
        return cfg.n_devices > AUTO_ASYMPTOTIC_THRESHOLD
    if mode not in ("finite", "asymptotic"):
        raise InvalidConfigError(f"unknown mode {mode!r}")
    return mode == "asymptotic"


def analyze(cfg: SystemConfig, mode: Mode | None = None) -> AnalyticSolution:
    """Run the full pipeline for one configuration.

    ``mode=None`` picks the finite-N formulas up to
    :data:`AUTO_ASYMPTOTIC_THRESHOLD` devices and the Lambert W limits above.
    In asymptotic mode the rate must also be below ``e^{-eta}``.
    """
    asymptotic = _resolve_mode(cfg, mode)
    lam, lmax = cfg.arrival_rate, lambda_max(cfg)
    if lam >= lmax:
        raise InfeasibleRateError(
            f"lambda = {lam:.6g} >= lambda_max = {lmax:.6g} (stability condition violated)"
        )
    if asymptotic:
        eta = cfg.eta
        if lam >= math.exp(-eta):
            raise InfeasibleRateError(
                f"lambda = {lam:.6g} >= exp(-eta) = {math.exp(-eta):.6g} "
                "(asymptotic stability condition violated)"
            )
        alpha = alpha_asymptotic(eta, lam)
        amax = alpha_max_asymptotic(eta)
        p = success_prob_asymptotic(eta, lam)
    else:
        alpha = solve_alpha(cfg)
        amax = solve_alpha_max(cfg)
        p = success_prob(alpha, cfg)
    theta = qos_exponent(lam, p)
    lo, hi = qos_bounds(lam, p)
    return AnalyticSolution(
        config=cfg,
        alpha=alpha,
        alpha_max=amax,
        p_success=p,
        lambda_max=lmax,
        theta_star=theta,
        theta_lower=lo,
        theta_upper=hi,
        asymptotic=asymptotic,
    )


def max_arrival_rate(n_devices: int, n_preambles: int, target: QosTarget,
                     mode: Mode | None = None, xtol: float = 1e-10) -> float:
    """Largest stable rate whose QoS exponent still meets ``target``.

    Bisection over ``(0, lambda_max)``; relies on theta*(lambda) decreasing.
    """
    base = SystemConfig(n_devices, n_preambles, 1e-3)
    need = required_exponent(target)
    hi = lambda_max(base)
    if _resolve_mode(base, mode):
        hi = min(hi, math.exp(-base.eta))
    hi *= 1.0 - 1e-12
    lo = 1e-12

    def theta_at(lam):
        return analyze(base.with_rate(lam), mode).theta_star

    if theta_at(lo) < need:
        raise UnachievableTargetError(
            f"required exponent {need:.6g} exceeds theta* even at lambda = {lo:g}"
        )
    if theta_at(hi) >= need:
        return hi
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if theta_at(mid) >= need:
            lo = mid
        else:
            hi = mid
    return lo
