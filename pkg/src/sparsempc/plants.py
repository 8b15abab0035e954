"""Ground-truth plants: controlled Lorenz dynamics and the regenerative
turning simulator, plus excitation signals, noise injection, numerical
derivatives and trajectory CSV import/export.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DivergenceError",
    "LorenzParams",
    "TurningParams",
    "Trajectory",
    "TurningTrajectory",
    "lorenz_rhs",
    "integrate_ode",
    "make_signal",
    "simulate_turning",
    "simulate_turning_batch",
    "inject_noise",
    "finite_difference_derivatives",
    "trajectory_to_csv",
    "trajectory_from_csv",
]


class DivergenceError(RuntimeError):
    """State left the finite range during integration."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


@dataclass(frozen=True)
class LorenzParams:
    """Lorenz-3 parameters; chaotic defaults."""
    alpha: float = 10.0
    beta: float = 8.0 / 3.0
    rho: float = 28.0


def lorenz_rhs(x, u=0.0, params=LorenzParams()):
    """Controlled Lorenz right-hand side; actuation enters the first state."""
    x1, x2, x3 = float(x[0]), float(x[1]), float(x[2])
    u = float(u[0]) if np.ndim(u) else float(u)
    p = params
    return np.array([
        p.alpha * (x2 - x1) + u,
        x1 * (p.rho - x3) - x2,
        x1 * x2 - p.beta * x3,
    ])


def lorenz_fixed_points(params=LorenzParams()):
    """The two nonzero equilibria (+-sqrt(beta(rho-1)), same, rho-1)."""
    s = math.sqrt(params.beta * (params.rho - 1.0))
    return (np.array([s, s, params.rho - 1.0]),
            np.array([-s, -s, params.rho - 1.0]))


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled state/input series with optional derivatives."""

    times: np.ndarray
    X: np.ndarray
    U: np.ndarray
    Xdot: np.ndarray = None
    dt: float = 0.0

    def __post_init__(self):
        n = len(self.times)
        if self.X.shape[0] != n or self.U.shape[0] != n:
            raise ValueError("times, X and U must share their first dimension")
        if self.Xdot is not None and self.Xdot.shape != self.X.shape:
            raise ValueError("Xdot shape must match X")
        if n >= 2:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9):
                raise ValueError("times must be strictly increasing and uniform")

    @property
    def n_samples(self):
        return len(self.times)

    def with_xdot(self, xdot):
        return replace(self, Xdot=np.asarray(xdot, dtype=float))


def integrate_ode(rhs, x0, u_signal, dt, n_steps, method="rk4"):
    """Integrate dx/dt = rhs(x, u(t)) on a uniform grid.

    Returns a Trajectory of n_steps + 1 samples whose Xdot column holds the
    rhs evaluated at the stored states (exact derivative pairing for
    regression).  Raises DivergenceError with the step index if the state
    leaves the finite range.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")

    u_of_t = u_signal if callable(u_signal) else (lambda t: u_signal)
    x = np.asarray(x0, dtype=float).copy()
    n_states = x.size
    u0 = np.atleast_1d(np.asarray(u_of_t(0.0), dtype=float))
    n_inputs = u0.size

    times = np.arange(n_steps + 1) * dt
    X = np.empty((n_steps + 1, n_states))
    U = np.empty((n_steps + 1, n_inputs))
    Xdot = np.empty((n_steps + 1, n_states))

    for i in range(n_steps + 1):
        t = times[i]
        u = np.atleast_1d(np.asarray(u_of_t(t), dtype=float))
        X[i] = x
        U[i] = u
        Xdot[i] = rhs(x, u if n_inputs > 1 else float(u[0]))
        if not np.all(np.isfinite(X[i])):
            raise DivergenceError(i)
        if i == n_steps:
            break
        if method == "euler":
            x = x + dt * Xdot[i]
        else:
            def f(xx, tt):
                uu = np.atleast_1d(np.asarray(u_of_t(tt), dtype=float))
                return rhs(xx, uu if n_inputs > 1 else float(uu[0]))
            k1 = Xdot[i]
            k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = f(x + dt * k3, t + dt)
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    return Trajectory(times=times, X=X, U=U, Xdot=Xdot, dt=float(dt))


def make_signal(kind, **params):
    """Excitation factory.  Returns a vectorized callable t -> u(t).

    kinds:
        "schroeder"       -- low-crest multisine, params amplitude, n_harmonics,
                             period; phase k = -pi*k*(k-1)/n_harmonics
        "validation_cube" -- 5*sin(30 t)^3
        "constant"        -- params value
        "table"           -- linear interpolation of params times/values
    """
    if kind == "schroeder":
        amplitude = params.get("amplitude", 50.0)
        n_harmonics = int(params.get("n_harmonics", 64))
        period = params.get("period", 10.0)
        if n_harmonics < 1:
            raise ValueError("n_harmonics must be >= 1")
        ks = np.arange(1, n_harmonics + 1)
        phases = -np.pi * ks * (ks - 1) / n_harmonics
        scale = amplitude / np.sqrt(n_harmonics)

        def u(t):
            t = np.asarray(t, dtype=float)
            arg = 2 * np.pi * np.multiply.outer(t, ks) / period + phases
            return scale * np.cos(arg).sum(axis=-1)
        return u

    if kind == "validation_cube":
        return lambda t: 5.0 * np.sin(30.0 * np.asarray(t, dtype=float)) ** 3

    if kind == "constant":
        value = params.get("value", 0.0)
        return lambda t: value * np.ones_like(np.asarray(t, dtype=float))

    if kind == "table":
        ts = np.asarray(params["times"], dtype=float)
        vs = np.asarray(params["values"], dtype=float)
        return lambda t: np.interp(np.asarray(t, dtype=float), ts, vs)

    raise ValueError(f"unknown signal kind {kind!r}")


# ---------------------------------------------------------------------------
# Turning machine tool
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TurningParams:
    """Single-DOF turning structure and cutting-force parameters (SI).

    c is a viscous damping in N*s/m; ks the specific cutting force in N/m^2;
    hm the mean chip thickness in m; beta_force the force angle in rad.
    steps_per_rev sets the simulation grid (the regeneration delay spans
    exactly one revolution), n_rev the default run length.
    """

    m: float = 3.17
    c: float = 795.77
    k: float = 2.0e7
    ks: float = 1.5e9
    hm: float = 1.0e-4
    beta_force: float = math.radians(68.0)
    steps_per_rev: int = 200
    n_rev: int = 100
    blowup_bound: float = 1.0     # |y| beyond this truncates as divergent

    def __post_init__(self):
        for name in ("m", "c", "k", "ks", "hm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.steps_per_rev < 2:
            raise ValueError("steps_per_rev must be >= 2")
        if self.n_rev < 1:
            raise ValueError("n_rev must be >= 1")

    @property
    def natural_frequency_hz(self):
        return math.sqrt(self.k / self.m) / (2 * math.pi)

    @property
    def damping_ratio(self):
        return self.c / (2 * math.sqrt(self.k * self.m))

    @property
    def ks_cosbeta(self):
        return self.ks * math.cos(self.beta_force)


@dataclass(frozen=True)
class TurningTrajectory:
    """Recorded turning vibration series for one (omega, b) cut."""

    times: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    yddot: np.ndarray
    fn_force: np.ndarray
    delay_column: np.ndarray     # y(t - tau) - y(t), zero pre-history
    omega: float                 # rev/s
    b: float                     # m
    steps_per_rev: int
    diverged: bool = False

    @property
    def dt(self):
        return 1.0 / (self.omega * self.steps_per_rev)

    @property
    def once_per_rev(self):
        """Displacement sampled at the start of every revolution."""
        return self.y[:: self.steps_per_rev]


def _turning_step_batch(state, j, n_tau, dt, bb, coef):
    """One semi-implicit Euler step for a batch of cuts (helper of the
    batched simulator); state arrays are updated in place."""
    y, z, hist, alive = state
    m, c, k, kcb, hm = coef
    ydel = hist[j % n_tau]
    force = kcb * bb * (hm + ydel - y)
    acc = (force - c * z - k * y) / m
    hist[j % n_tau] = y.copy()
    znew = z + dt * acc
    ynew = y + dt * znew
    y[alive] = ynew[alive]
    z[alive] = znew[alive]
    return force, acc


@dataclass(frozen=True)
class BatchTurningRun:
    """Once-per-revolution record of a batch of simulated cuts."""

    once_per_rev: np.ndarray     # (n_rev + 1, B)
    diverged: np.ndarray         # (B,) bools
    final_y: np.ndarray          # (B,)
    final_z: np.ndarray          # (B,)
    series: tuple = None         # optional full (y, ydot, yddot, F, delay) arrays


def simulate_turning_batch(params, omegas, bs, n_rev=None, y0=None, z0=None,
                           record_series=False):
    """Simulate many (omega, b) cuts in lock step.

    All cuts share params.steps_per_rev and the revolution count, so the
    delay buffer layout is common and the time loop vectorizes across cuts.
    The integrator is the velocity-first (semi-implicit) Euler scheme of
    time-domain machining simulators: acceleration -> velocity -> position.
    Pre-history is zero: the delayed displacement is 0 for t <= 0.

    Lanes whose |y| exceeds params.blowup_bound freeze at the end of the
    revolution and are flagged divergent.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    bs = np.atleast_1d(np.asarray(bs, dtype=float))
    if omegas.shape != bs.shape:
        raise ValueError("omegas and bs must have equal shapes")
    if np.any(omegas <= 0) or np.any(bs <= 0):
        raise ValueError("omega and b must be > 0")
    n_rev = params.n_rev if n_rev is None else int(n_rev)
    n_tau = params.steps_per_rev
    n_batch = omegas.size
    n_steps = n_rev * n_tau
    dt = 1.0 / (omegas * n_tau)

    y = np.zeros(n_batch) if y0 is None else np.broadcast_to(
        np.asarray(y0, dtype=float), (n_batch,)).copy()
    z = np.zeros(n_batch) if z0 is None else np.broadcast_to(
        np.asarray(z0, dtype=float), (n_batch,)).copy()
    hist = np.zeros((n_tau, n_batch))           # delayed y ring buffer
    alive = np.ones(n_batch, dtype=bool)
    coef = (params.m, params.c, params.k, params.ks_cosbeta, params.hm)

    once = np.zeros((n_rev + 1, n_batch))
    once[0] = y
    if record_series:
        ys = np.zeros((n_steps, n_batch))
        zs = np.zeros((n_steps, n_batch))
        accs = np.zeros((n_steps, n_batch))
        forces = np.zeros((n_steps, n_batch))
        delays = np.zeros((n_steps, n_batch))

    state = (y, z, hist, alive)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n_steps):
            if record_series:
                ys[j] = y
                zs[j] = z
                delays[j] = hist[j % n_tau] - y
            force, acc = _turning_step_batch(state, j, n_tau, dt, bs, coef)
            if record_series:
                forces[j] = force
                accs[j] = acc
            if (j + 1) % n_tau == 0:
                alive &= np.abs(y) < params.blowup_bound
                once[(j + 1) // n_tau] = y

    series = None
    if record_series:
        series = (ys, zs, accs, forces, delays)
    return BatchTurningRun(once_per_rev=once, diverged=~alive,
                           final_y=y.copy(), final_z=z.copy(), series=series)


def simulate_turning(params, omega, b, n_rev=None):
    """Time-domain simulation of one cut; records y, ydot, yddot, the
    normal force and the delayed-difference column on the full grid."""
    n_rev = params.n_rev if n_rev is None else int(n_rev)
    run = simulate_turning_batch(params, [omega], [b], n_rev=n_rev,
                                 record_series=True)
    ys, zs, accs, forces, delays = (a[:, 0] for a in run.series)
    dt = 1.0 / (omega * params.steps_per_rev)
    times = np.arange(len(ys)) * dt
    return TurningTrajectory(
        times=times, y=ys, ydot=zs, yddot=accs, fn_force=forces,
        delay_column=delays, omega=float(omega), b=float(b),
        steps_per_rev=params.steps_per_rev, diverged=bool(run.diverged[0]))


# ---------------------------------------------------------------------------
# Measurement noise and derivatives
# ---------------------------------------------------------------------------

def inject_noise(signal, r, seed):
    """Add zero-mean Gaussian noise scaled to r times the sample standard
    deviation of the input.  Deterministic per seed; the seed may be an int
    or a tuple keying an independent stream."""
    if r < 0:
        raise ValueError("noise ratio must be >= 0")
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1:
        raise ValueError("inject_noise takes one column at a time")
    if r == 0:
        return signal.copy()
    rng = np.random.default_rng(seed)
    sigma = float(np.std(signal))
    return signal + r * sigma * rng.standard_normal(signal.size)


def finite_difference_derivatives(X, dt):
    """Second-order finite differences: central interior, one-sided ends."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 3:
        raise ValueError("need at least 3 samples for second-order differences")
    return np.gradient(X, dt, axis=0, edge_order=2)


# ---------------------------------------------------------------------------
# CSV schema: t, x_1..x_J, u_1..u_S, xdot_1..xdot_J
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj, path):
    n_states = traj.X.shape[1]
    n_inputs = traj.U.shape[1]
    header = (["t"] + [f"x_{j + 1}" for j in range(n_states)]
              + [f"u_{s + 1}" for s in range(n_inputs)]
              + [f"xdot_{j + 1}" for j in range(n_states)])
    xdot = traj.Xdot if traj.Xdot is not None else np.full_like(traj.X, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(traj.n_samples):
            row = ([repr(float(traj.times[i]))]
                   + [repr(float(v)) for v in traj.X[i]]
                   + [repr(float(v)) for v in traj.U[i]]
                   + [repr(float(v)) for v in xdot[i]])
            w.writerow(row)


def trajectory_from_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    n_states = sum(1 for h in header if h.startswith("x_"))
    n_inputs = sum(1 for h in header if h.startswith("u_"))
    arr = np.array([[float(v) for v in row] for row in data])
    times = arr[:, 0]
    X = arr[:, 1:1 + n_states]
    U = arr[:, 1 + n_states:1 + n_states + n_inputs]
    Xdot = arr[:, 1 + n_states + n_inputs:]
    if np.all(np.isnan(Xdot)):
        Xdot = None
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return Trajectory(times=times, X=X, U=U, Xdot=Xdot, dt=dt)
