"""Embedded Dormand-Prince 5(4) integrator with dense output.

Adaptive explicit Runge-Kutta pair; the propagating solution is 5th
order with a 4th-order embedded error estimate.  Each accepted step
stores interpolation coefficients so the solution can be evaluated
anywhere inside the integration span (needed to read trajectories at
data times and to expand information functionals off the step grid).
Integration runs in either time direction, which the backward adjoint
solve relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, StiffnessError

# classic DOPRI5 tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array(
    [
        [0, 0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    ]
)
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# error weights of the embedded 4th-order solution (includes the FSAL stage)
E = np.array(
    [71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# dense-output matrix (quartic interpolant over each step)
P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

MAX_STEPS = 1_000_000


class OdeSolution:
    """Piecewise-quartic dense output of one adaptive integration."""

    def __init__(self, ts, ys, coeffs, direction, nfev):
        self.ts = np.asarray(ts)
        self.ys = np.asarray(ys)
        self.coeffs = coeffs  # per step: (t0, h, y0, Q[n, 4])
        self.direction = direction
        self.nfev = nfev

    @property
    def t0(self):
        return self.ts[0]

    @property
    def t1(self):
        return self.ts[-1]

    def _segment(self, t):
        ts = self.ts if self.direction > 0 else self.ts[::-1]
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(self.coeffs) - 1)
        return i if self.direction > 0 else len(self.coeffs) - 1 - i

    def __call__(self, t):
        lo, hi = sorted((self.ts[0], self.ts[-1]))
        if t < lo - 1e-12 * (1 + abs(lo)) or t > hi + 1e-12 * (1 + abs(hi)):
            raise InputError(f"t={t} outside integration span [{lo}, {hi}]")
        t0, h, y0, Q = self.coeffs[self._segment(t)]
        x = (t - t0) / h
        xs = np.array([x, x * x, x**3, x**4])
        return y0 + h * (Q @ xs)

    def eval_many(self, ts):
        return np.array([self(t) for t in np.atleast_1d(ts)])


def _initial_step(f, t0, y0, f0, direction, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def solve_rk45(f, t_span, y0, rtol=1e-8, atol=1e-8, max_step=np.inf, t_stops=()):
    """Integrate y' = f(t, y) over t_span (either direction).

    ``t_stops`` forces step endpoints at the listed interior times, which
    makes the stored node values exact there (used as the interpolation
    oracle in tests).  Returns an :class:`OdeSolution`.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 == t1:
        raise InputError("empty integration span")
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)

    stops = sorted(
        (t for t in t_stops if min(t0, t1) < t < max(t0, t1)),
        reverse=direction < 0,
    )
    stops.append(t1)

    nfev = 0

    def rhs(t, y):
        nonlocal nfev
        nfev += 1
        return np.asarray(f(t, y), dtype=float)

    t = t0
    y = y0.copy()
    fcur = rhs(t, y)
    h = min(_initial_step(rhs, t, y, fcur, direction, rtol, atol, span), max_step)

    ts = [t]
    ys = [y.copy()]
    coeffs = []
    K = np.empty((7, y0.size))

    stop_i = 0
    steps = 0
    while stop_i < len(stops):
        target = stops[stop_i]
        if direction * (t - target) >= 0:
            stop_i += 1
            continue
        remaining = abs(target - t)
        h_step = min(h, max_step, remaining)
        hit = h_step >= remaining * (1 - 1e-14)
        if h_step < 1e-14 * max(span, 1.0):
            raise StiffnessError(f"step size underflow at t={t}")
        steps += 1
        if steps > MAX_STEPS:
            raise StiffnessError("step budget exhausted")

        hd = h_step * direction
        K[0] = fcur
        for s in range(1, 6):
            K[s] = rhs(t + C[s] * hd, y + hd * (A[s, :s] @ K[:s]))
        y_new = y + hd * (B @ K[:6])
        t_new = target if hit else t + hd
        f_new = rhs(t_new, y_new)
        K[6] = f_new

        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((hd * (E @ K) / scale) ** 2))

        if err <= 1.0:
            Q = K.T @ P
            coeffs.append((t, t_new - t, y.copy(), Q))
            t = t_new
            y = y_new
            fcur = f_new
            ts.append(t)
            ys.append(y.copy())
            factor = 10.0 if err == 0 else min(10.0, 0.9 * err**-0.2)
            h = h_step * max(factor, 0.2)
        else:
            h = h_step * max(0.2, 0.9 * err**-0.2)

    return OdeSolution(ts, ys, coeffs, direction, nfev)
