"""Controlled diffusions, variational free energy, and Girsanov KL estimates.

Adding a control u to a base drift b yields the diffusion
``dX = (b + u) dt + dW``; its expected control energy plus negative
terminal log-likelihood (the variational free energy) upper-bounds the
negative log-likelihood of the observation for every control, with
equality at the optimal one.  For the unit-variance Gaussian observation
model over a Brownian base the optimal control is ``(y - x) / (2 - t)`` in
closed form, which makes the equality testable.

The path KL divergence between two drifts is the Girsanov energy
``(1/2) int E ||b_p - b_q||^2 dt`` along paths of the first drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError, UnsupportedOracleError
from .fields import SOFT_BOUND_RADIUS, DriftField
from .sde import PATH_CHUNK_RUNS, StreamBatch
from .stats import MCStats, map_chunks, mc_merge, mc_from_samples
from .targets import TargetDensity


@dataclass(frozen=True)
class ObservationModel:
    """Unit-variance Gaussian observation: q(y | x) = N(y; x, I)."""

    dim: int
    kind: str = "gaussian-unit"

    def log_q(self, y: np.ndarray, x: np.ndarray):
        sq = ((y - x) ** 2).sum(axis=-1)
        return -0.5 * self.dim * math.log(2.0 * math.pi) - 0.5 * sq


@dataclass(frozen=True)
class ObservationLikelihood:
    """Terminal function g(x) = q(y | x) for the value-function oracle."""

    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, float)))


@dataclass(frozen=True)
class ControlField:
    """A control u(x, t) with coarse bound metadata for the combined field."""

    kind: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    sup_norm: float
    lip_x: float
    holder_t: float
    soft_bound: bool
    name: str


def constant_shift_control(phi, base: DriftField) -> ControlField:
    """u(x, t) = phi - b(x, t): the controlled drift is constant phi."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.shape[0] != base.dim:
        raise ConfigurationError("phi dimension does not match base drift")
    def fn(x, t):
        return phi - base.fn(x, t)
    norm = float(np.linalg.norm(phi))
    return ControlField("constant-shift", fn, base.dim,
                        norm + base.sup_norm, base.lip_x, base.holder_t,
                        base.soft_bound,
                        name="const-shift:phi=" + ",".join(repr(float(v)) for v in phi))


def ou_linear_control(matrix, base: DriftField) -> ControlField:
    """u(x, t) = A x - b(x, t): the controlled diffusion is linear."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if a.shape != (base.dim, base.dim):
        raise ConfigurationError("control matrix must be (d, d)")
    def fn(x, t):
        return x @ a.T - base.fn(x, t)
    spectral = float(np.linalg.norm(a, 2))
    return ControlField("ou-linear", fn, base.dim,
                        spectral * SOFT_BOUND_RADIUS + base.sup_norm,
                        spectral + base.lip_x, base.holder_t, True,
                        name="ou:A=diag(" + ",".join(repr(float(v)) for v in np.diag(a)) + ")")


def gaussian_obs_optimal_control(y) -> ControlField:
    """u(x, t) = (y - x) / (2 - t): optimal for the Gaussian observation
    model over a Brownian base."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    def fn(x, t):
        t_arr = np.asarray(t, dtype=float)
        denom = 2.0 - (t_arr[..., None] if t_arr.ndim else t_arr)
        return (y - x) / denom
    amp = float(np.linalg.norm(y)) + SOFT_BOUND_RADIUS
    return ControlField("optimal-gaussian-obs", fn, y.shape[0],
                        amp, 1.0, amp, True,
                        name="optimal:y=" + ",".join(repr(float(v)) for v in y))


def custom_control(fn, dim: int, sup_norm: float = 0.0, lip_x: float = 0.0,
                   holder_t: float = 0.0, name: str = "custom") -> ControlField:
    return ControlField("custom", fn, dim, sup_norm, lip_x, holder_t, True, name)


def zero_control(dim: int) -> ControlField:
    def fn(x, t):
        return np.zeros_like(x)
    return ControlField("zero", fn, dim, 0.0, 0.0, 0.0, False, name="zero")


def controlled_drift(base: DriftField, control: ControlField) -> DriftField:
    """The drift b + u of the controlled diffusion (triangle-bound metadata)."""
    if base.dim != control.dim:
        raise ConfigurationError(
            f"base dim {base.dim} does not match control dim {control.dim}")
    def fn(x, t):
        return base.fn(x, t) + control.fn(x, t)
    return DriftField(fn=fn, dim=base.dim,
                      sup_norm=base.sup_norm + control.sup_norm,
                      lip_x=base.lip_x + control.lip_x,
                      holder_t=base.holder_t + control.holder_t,
                      soft_bound=base.soft_bound or control.soft_bound,
                      name=f"{base.name}+{control.name}")


def parse_control(spec: str, base: DriftField) -> ControlField:
    """Parse ``const-shift:phi=...`` | ``ou:A=diag(...)`` | ``optimal:y=...``
    | ``zero``."""
    head, _, body = spec.partition(":")
    if head == "zero":
        return zero_control(base.dim)
    key, eq, value = body.partition("=")
    key = key.strip()
    if head == "const-shift":
        if key != "phi" or not eq:
            raise ConfigurationError(f"const-shift control needs phi=..., got {spec!r}")
        return constant_shift_control([float(v) for v in value.split(",")], base)
    if head == "ou":
        if key != "A" or not eq:
            raise ConfigurationError(f"ou control needs A=diag(...), got {spec!r}")
        inner = value.strip()
        if not (inner.startswith("diag(") and inner.endswith(")")):
            raise ConfigurationError(f"ou control needs A=diag(...), got {spec!r}")
        diag = [float(v) for v in inner[5:-1].split(",")]
        return ou_linear_control(np.diag(diag), base)
    if head == "optimal":
        if key != "y" or not eq:
            raise ConfigurationError(f"optimal control needs y=..., got {spec!r}")
        return gaussian_obs_optimal_control([float(v) for v in value.split(",")])
    raise ConfigurationError(f"unknown control kind {head!r} in {spec!r}")


# -- Monte Carlo functionals ---------------------------------------------------


def _path_functional(step_payload, terminal_payload, dim: int,
                     x0, n_steps: int, runs: int, seed: int,
                     workers: int) -> MCStats:
    """Chunked per-run-stream Euler simulation accumulating a functional.

    ``step_payload(acc, x, t, dt)`` updates the running integrand in place
    and returns the drift to step with; ``terminal_payload(acc, x)`` maps
    the accumulator and terminal states to the per-run samples.
    """
    if n_steps < 1 or runs < 1:
        raise DomainError("n_steps and runs must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != dim:
        raise ConfigurationError(f"x0 has dim {x0.shape[0]}, field expects {dim}")
    t = np.linspace(0.0, 1.0, n_steps + 1)
    dt = np.diff(t)
    sqdt = np.sqrt(dt)

    def chunk(start, stop):
        c = stop - start
        streams = StreamBatch(seed)
        z = np.empty((c, n_steps * dim))
        for i in range(c):
            streams.generator(start + i + 1).standard_normal(out=z[i])
        z = z.reshape(c, n_steps, dim)
        x = np.broadcast_to(x0, (c, dim)).copy()
        acc = np.zeros(c)
        for k in range(n_steps):
            drift_step = step_payload(acc, x, t[k], dt[k])
            x = x + drift_step * dt[k] + z[:, k, :] * sqdt[k]
        return terminal_payload(acc, x)

    bounds = [(s, min(s + PATH_CHUNK_RUNS, runs))
              for s in range(0, runs, PATH_CHUNK_RUNS)]
    parts = map_chunks(chunk, bounds, workers)
    out = MCStats()
    for part in parts:
        out = mc_merge(out, mc_from_samples(part))
    return out.require_clean("path functional")


def free_energy(control: ControlField, base: DriftField,
                obs: ObservationModel, y, x0, n_steps: int = 200,
                runs: int = 10_000, seed: int = 0,
                workers: int = 1) -> MCStats:
    """MC estimate of the variational free energy of a control.

    ``F = E[(1/2) int ||u_t||^2 dt - log q(y | X_1)]`` along controlled
    paths, with the control energy accumulated by left-endpoint quadrature
    on the simulation partition.
    """
    if base.dim != control.dim or obs.dim != base.dim:
        raise ConfigurationError("control, base, and observation dims must match")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape[0] != obs.dim:
        raise ConfigurationError("observation y has wrong dimension")

    def step(acc, x, tk, dtk):
        u = control.fn(x, tk)
        acc += 0.5 * (u * u).sum(axis=-1) * dtk
        return base.fn(x, tk) + u

    def terminal(acc, x):
        return acc - obs.log_q(y, x)

    return _path_functional(step, terminal, base.dim, x0, n_steps,
                            runs, seed, workers)


def exact_nll_gaussian(obs: ObservationModel, y, x0) -> float:
    """Closed-form negative log-likelihood for the Brownian base:
    ``-log N(y; x0, 2 I) = (d/2) log(4 pi) + ||y - x0||^2 / 4``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if y.shape != x0.shape or y.shape[0] != obs.dim:
        raise ConfigurationError("y and x0 must both have the observation dim")
    return (0.5 * obs.dim * math.log(4.0 * math.pi)
            + float(((y - x0) ** 2).sum()) / 4.0)


def girsanov_kl(drift_p: DriftField, drift_q: DriftField, x0,
                n_steps: int = 200, runs: int = 10_000, seed: int = 0,
                workers: int = 1) -> MCStats:
    """Path KL estimate ``(1/2) int E_p ||b_p - b_q||^2 dt``.

    Paths are simulated under ``drift_p``; the squared drift gap is
    integrated by left-endpoint quadrature.
    """
    if drift_p.dim != drift_q.dim:
        raise ConfigurationError("drift dimensions differ")

    def step(acc, x, tk, dtk):
        bp = drift_p.fn(x, tk)
        gap = bp - drift_q.fn(x, tk)
        acc += 0.5 * (gap * gap).sum(axis=-1) * dtk
        return bp

    def terminal(acc, x):
        return acc

    return _path_functional(step, terminal, drift_p.dim, x0, n_steps,
                            runs, seed, workers)


# -- closed-form identity checks -------------------------------------------------


def _require_shifted_gaussian(target: TargetDensity) -> np.ndarray:
    if target.kind != "shifted-gaussian":
        raise UnsupportedOracleError(
            "transition-density oracle exists only for shifted-gaussian "
            f"targets, got {target.kind!r}")
    return target.means[0]


def _log_gauss_kernel(x: np.ndarray, y: np.ndarray, var: float) -> float:
    d = x.shape[0]
    sq = float(((y - x) ** 2).sum())
    return -0.5 * d * math.log(2.0 * math.pi * var) - sq / (2.0 * var)


def transition_density_check(target: TargetDensity, sample_pairs) -> float:
    """Max |log p*_formula - log p*_known| over (s, x, t, y) samples.

    The formula route multiplies the Brownian kernel by
    ``exp(v(x, s) - v(y, t))`` with the closed-form value function; the
    known optimal kernel for a shifted-gaussian target is
    ``N(y; x + (t - s) m, (t - s) I)``.
    """
    m = _require_shifted_gaussian(target)
    msq = float(m @ m)
    worst = 0.0
    for (s, x, t, y) in sample_pairs:
        if not 0.0 <= s < t <= 1.0:
            raise DomainError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        # v(x, u) = -log Q_{1-u} f(x) = -(m.x - u |m|^2 / 2)
        v_xs = -(float(m @ x) - s * msq / 2.0)
        v_yt = -(float(m @ y) - t * msq / 2.0)
        lp_formula = _log_gauss_kernel(x, y, t - s) + v_xs - v_yt
        lp_known = _log_gauss_kernel(x + (t - s) * m, y, t - s)
        worst = max(worst, abs(lp_formula - lp_known))
    return worst


def endpoint_density_identity_error(target: TargetDensity, ys) -> float:
    """Max |log p*_{0,1}(0, y) - log(f(y) gamma_d(y))| over test points y."""
    m = _require_shifted_gaussian(target)
    msq = float(m @ m)
    d = target.dim
    worst = 0.0
    for y in ys:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        v_00 = 0.0
        v_y1 = -(float(m @ y) - msq / 2.0)
        lp_star = _log_gauss_kernel(np.zeros(d), y, 1.0) + v_00 - v_y1
        log_f = float(m @ y) - msq / 2.0
        log_gamma = -0.5 * d * math.log(2.0 * math.pi) - 0.5 * float(y @ y)
        worst = max(worst, abs(lp_star - (log_f + log_gamma)))
    return worst


# -- constant-shift line search ---------------------------------------------------


def line_search_constant_shift(base: DriftField, obs: ObservationModel, y,
                               x0, n_steps: int = 200, runs: int = 4096,
                               seed: int = 0, lo: float = -5.0,
                               hi: float = 5.0, evals_per_coord: int = 20):
    """Coordinate-wise golden-section minimization of the free energy over
    constant-shift controls phi in [lo, hi]^d.

    Every free-energy evaluation reuses the same seed (common random
    numbers), so the estimated objective is a deterministic function of phi
    and the search trace decreases monotonically up to MC noise.

    Returns (best_phi, trace) where trace lists (phi_vector, estimate).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    phi = np.zeros(base.dim)
    trace = []

    def objective(vec) -> float:
        control = constant_shift_control(vec, base)
        est = free_energy(control, base, obs, y, x0, n_steps, runs, seed).mean
        trace.append((vec.copy(), est))
        return est

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    for coord in range(base.dim):
        a, b = lo, hi
        def at(v):
            vec = phi.copy()
            vec[coord] = v
            return objective(vec)
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        fc, fd = at(c), at(d)
        budget = max(evals_per_coord - 2, 0)
        for _ in range(budget):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = at(c)
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = at(d)
        phi[coord] = c if fc <= fd else d
    return phi, trace
