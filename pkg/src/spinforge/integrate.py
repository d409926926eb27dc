"""Explicit ODE steppers for complex-valued state vectors and matrices.

scipy's solve_ivp does not support complex y, and the trajectory solver needs
to interrupt steps at norm crossings, so a compact Dormand-Prince 5(4) stepper
and a fixed-step RK4 are kept here. Both operate on ndarrays of any shape.
"""

import numpy as np

__all__ = ["IntegrationError", "DormandPrince45", "solve_to", "rk4_fixed"]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class IntegrationError(RuntimeError):
    """Step-size underflow or tolerance failure; carries the last good time."""

    def __init__(self, message, last_good_t):
        super().__init__(f"{message} (last good t = {last_good_t!r})")
        self.last_good_t = last_good_t


class DormandPrince45:
    """Adaptive embedded RK 5(4) stepper (FSAL), complex-safe.

    The caller drives the loop via :meth:`step`; after each accepted step the
    attributes ``t_old``, ``t``, ``y_old``, ``y``, ``f_old``, ``f_new`` allow
    cubic Hermite interpolation inside the step (used for jump location).
    """

    def __init__(self, fun, t0, y0, rtol=1e-8, atol=1e-10, max_step=np.inf,
                 first_step=None, min_step_floor=1e-14):
        self.fun = fun
        self.t = float(t0)
        self.y = np.asarray(y0).astype(complex)
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.min_step_floor = min_step_floor
        self.f_new = fun(self.t, self.y)
        self.t_old = self.t
        self.y_old = self.y
        self.f_old = self.f_new
        self.h = first_step if first_step is not None else self._initial_step()
        self.n_steps = 0
        self.n_rejected = 0

    def _err_norm(self, err, y0, y1):
        scale = self.atol + self.rtol * np.maximum(np.abs(y0), np.abs(y1))
        return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))

    def _initial_step(self):
        # standard heuristic (Hairer-Norsett-Wanner I.7) simplified
        scale = self.atol + self.rtol * np.abs(self.y)
        d0 = np.sqrt(np.mean(np.abs(self.y / scale) ** 2))
        d1 = np.sqrt(np.mean(np.abs(self.f_new / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        return min(h0, self.max_step)

    def step(self, t_limit=None):
        """Advance one accepted step, not beyond ``t_limit``."""
        h = min(self.h, self.max_step)
        while True:
            clipped = False
            if t_limit is not None and self.t + h > t_limit:
                h = t_limit - self.t
                clipped = True
            if h <= max(self.min_step_floor, abs(self.t) * 1e-15):
                if clipped:  # already at the limit within round-off
                    self.t = t_limit
                    return
                raise IntegrationError("step size underflow", self.t)
            k = [self.f_new]
            for i in range(1, 7):
                yi = self.y + h * sum(a * ki for a, ki in zip(_A[i], k))
                k.append(self.fun(self.t + _C[i] * h, yi))
            y_new = self.y + h * sum(b * ki for b, ki in zip(_B5[:6], k[:6]))
            err = h * sum(e * ki for e, ki in zip(_E, k))
            enorm = self._err_norm(err, self.y, y_new)
            if enorm <= 1.0:
                factor = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
                self.t_old, self.y_old, self.f_old = self.t, self.y, k[0]
                self.t = self.t + h
                self.y = y_new
                self.f_new = k[6]  # FSAL
                self.h = min(h * factor, self.max_step)
                self.n_steps += 1
                return
            h *= max(0.2, 0.9 * enorm ** -0.2)
            self.n_rejected += 1

    def interpolate(self, t):
        """Cubic Hermite interpolant on the last accepted step."""
        h = self.t - self.t_old
        if h == 0:
            return self.y.copy()
        s = (t - self.t_old) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return (h00 * self.y_old + h10 * h * self.f_old
                + h01 * self.y + h11 * h * self.f_new)


def solve_to(fun, y0, t_grid, rtol=1e-8, atol=1e-10, max_step=np.inf,
             callback=None):
    """Integrate dy/dt = fun(t, y) and return y at each time in ``t_grid``.

    Steps are clipped to land exactly on the requested output times, so output
    accuracy is that of the integrator itself. ``t_grid`` must be increasing
    and start at the initial time. If ``callback(i, t, y)`` is given it is
    invoked per output point instead of storing states (streaming mode).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be non-decreasing")
    stepper = DormandPrince45(fun, t_grid[0], y0, rtol=rtol, atol=atol, max_step=max_step)
    out = None if callback is not None else []
    for i, t in enumerate(t_grid):
        while stepper.t < t * (1 - 1e-15) if t > 0 else stepper.t < t - 1e-300:
            stepper.step(t_limit=t)
        if callback is not None:
            callback(i, t, stepper.y)
        else:
            out.append(stepper.y.copy())
    return out


def rk4_fixed(fun, y0, t_grid, dt, callback=None):
    """Classic RK4 with fixed internal step ``dt``, sampled at ``t_grid``.

    The interval between consecutive output times is split into an integer
    number of equal substeps no longer than ``dt`` (reproducibility path).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    y = np.array(y0)  # dtype preserving: works for real and complex states
    out = None if callback is not None else []
    t = t_grid[0]
    if callback is not None:
        callback(0, t, y)
    else:
        out.append(y.copy())
    for i in range(1, len(t_grid)):
        span = t_grid[i] - t
        n_sub = max(1, int(np.ceil(span / dt - 1e-12)))
        h = span / n_sub
        for _ in range(n_sub):
            k1 = fun(t, y)
            k2 = fun(t + h / 2, y + (h / 2) * k1)
            k3 = fun(t + h / 2, y + (h / 2) * k2)
            k4 = fun(t + h, y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = t_grid[i]
        if callback is not None:
            callback(i, t, y)
        else:
            out.append(y.copy())
    return out
