"""Principal branch of the Lambert W function on the real axis."""

import math

from fastretrial.errors import LambertDomainError

BRANCH_POINT = -math.exp(-1.0)
_CLAMP = 1e-14
_MAX_ITER = 50


def _initial_guess(x: float) -> float:
    if abs(x) < 0.25:
        return x
    if x < 0.0:
        # series in p = sqrt(2(ex + 1)) about the branch point
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    if x > math.e:
        lx = math.log(x)
        return lx - math.log(lx)
    return math.log1p(x) * 0.75


def lambert_w0(x: float) -> float:
    """Return w >= -1 with ``w * exp(w) == x``.

    Uses Halley iteration on ``w e^w - x``. Arguments up to 1e-14 below
    ``-1/e`` are clamped onto the branch point; anything further below
    raises :class:`LambertDomainError`.
    """
    x = float(x)
    if math.isnan(x):
        raise LambertDomainError("lambert_w0 argument is NaN")
    if x < BRANCH_POINT:
        if x < BRANCH_POINT - _CLAMP:
            raise LambertDomainError(
                f"lambert_w0 argument {x!r} is below the branch point -1/e"
            )
        x = BRANCH_POINT
    if x == BRANCH_POINT:
        return -1.0
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf

    w = _initial_guess(x)
    tol = 1e-13 * max(1.0, abs(x))
    for _ in range(_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) <= tol * 1e-3:
            break
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        dw = f / denom
        w_new = w - dw
        if w_new < -1.0:
            w_new = -1.0 + 0.5 * (w + 1.0)
        if w_new == w:
            break
        w = w_new
        if abs(dw) <= 4e-16 * (1.0 + abs(w)) and abs(f) <= tol:
            break
    return w


def lambert_grid(n: int = 1000, upper: float = 1e3, gap: float = 1e-9) -> list[float]:
    """``n`` points from ``-1/e + gap`` to ``upper``, log-spaced in distance to the branch point."""
    lo, hi = math.log10(gap), math.log10(upper - BRANCH_POINT)
    pts = [BRANCH_POINT + 10 ** (lo + (hi - lo) * k / (n - 1)) for k in range(n)]
    pts[-1] = upper  # pin the end point against rounding in the log round trip
    return pts
