"""Minimal-energy bridge drifts and the associated control values.

For a target with density ratio f relative to the standard Gaussian, the
drift ``b(x, t) = grad log Q_{1-t} f(x)`` steers a Brownian motion started
at 0 so that the time-1 law is exactly the target, and it does so with the
least control energy among all drifts reaching that law; the minimal energy
equals the KL divergence from the target to the standard Gaussian.

The drift is evaluated through the target's heat semigroup: closed form for
the Gaussian families (via a softmax over mixture components, which never
divides by a small semigroup value), or through an attached point cloud, in
which case the denominator is floored at ``lower_c / 2`` to guard against
cloud underestimates near the guarantee boundary.
"""

from __future__ import annotations

import numpy as np

from .errors import (ConfigurationError, DomainError, InsufficientDataError,
                     UnsupportedOracleError)
from .fields import DriftField, constant_drift, ou_drift, zero_drift
from .stats import MCStats, mc_accumulate
from .targets import TargetDensity, parse_target


def _gauss_drift_fn(target: TargetDensity):
    """Softmax form of grad log Q_{1-t} f for the Gaussian families.

    logits_i(x, t) = log w_i + m_i . x - t |m_i|^2 / 2, and the drift is the
    softmax-weighted average of the component means.  Uses only elementwise
    operations and last-axis reductions, so each row's value is independent
    of the batch it is computed in.
    """
    means = target.means
    logw = np.log(target.weights)
    half_sq = 0.5 * np.einsum("ij,ij->i", means, means)

    def fn(x, t):
        t_arr = np.asarray(t, dtype=float)
        tcol = t_arr[..., None] if t_arr.ndim else t_arr
        proj = (x[..., None, :] * means).sum(axis=-1)  # (B, k)
        logits = logw + proj - tcol * half_sq
        logits = logits - logits.max(axis=-1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=-1, keepdims=True)
        return (weights[..., None] * means).sum(axis=-2)

    return fn


def _cloud_drift_fn(target: TargetDensity):
    floor = target.lower_c / 2.0

    def eval_scalar_t(x, t):
        val, grad = target._semigroup_batch(x, 1.0 - t)
        return grad / np.maximum(val, floor)[:, None]

    def fn(x, t):
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return eval_scalar_t(x, float(t_arr))
        out = np.empty_like(x)
        for tv in np.unique(t_arr):
            rows = t_arr == tv
            out[rows] = eval_scalar_t(x[rows], float(tv))
        return out

    return fn


def follmer_drift(target: TargetDensity) -> DriftField:
    """The minimal-energy drift grad log Q_{1-t} f for the given target.

    Declared bounds follow the target's regularity certificate: sup norm
    L/c and spatial Lipschitz constant L/c + L^2/c^2.  The time-regularity
    certificate reuses the spatial constant (coarse).  Bounds inherit the
    softness of the target's constants.
    """
    if target.cloud is not None:
        fn = _cloud_drift_fn(target)
    elif target.has_analytic_semigroup:
        fn = _gauss_drift_fn(target)
    else:
        raise ConfigurationError(
            f"target {target.name!r} has no heat-semigroup capability: "
            "attach a point cloud or use a Gaussian-family target")
    ratio = target.lipschitz_L / target.lower_c
    return DriftField(fn=fn, dim=target.dim, sup_norm=ratio,
                      lip_x=ratio + ratio ** 2, holder_t=ratio + ratio ** 2,
                      soft_bound=target.certified_radius is not None,
                      name=f"follmer:{target.name}")


def value_function(g_spec, x, t: float):
    """Cost-to-go ``-log E[g(X_1) | X_t = x]`` for the Brownian base process.

    ``g_spec`` is either a Gaussian-family target density (g = f, evaluated
    through the closed-form semigroup) or a Gaussian observation likelihood
    carrying the observation y (g = q(y | .), for which the conditional
    expectation is N(y; x, (2 - t) I)).
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time t={t} outside [0, 1]")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x

    if isinstance(g_spec, TargetDensity):
        if not g_spec.has_analytic_semigroup:
            raise UnsupportedOracleError(
                f"value function needs an analytic semigroup; target kind "
                f"{g_spec.kind!r} has none")
        means = g_spec.means
        half_sq = 0.5 * np.einsum("ij,ij->i", means, means)
        logits = (np.log(g_spec.weights) + batch @ means.T - t * half_sq)
        peak = logits.max(axis=-1, keepdims=True)
        v = -(peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=-1)))
    elif hasattr(g_spec, "y"):
        y = np.asarray(g_spec.y, dtype=float)
        if y.shape[0] != batch.shape[1]:
            raise ConfigurationError("observation dim does not match state dim")
        var = 2.0 - t
        sq = ((y - batch) ** 2).sum(axis=-1)
        v = 0.5 * y.shape[0] * np.log(2.0 * np.pi * var) + sq / (2.0 * var)
    else:
        raise UnsupportedOracleError(
            f"unsupported terminal-function spec {type(g_spec).__name__}")
    return float(v[0]) if single else v


def path_energy(paths, control=None) -> MCStats:
    """Monte Carlo estimate of the control energy ``(1/2) int |u_t|^2 dt``.

    Left-endpoint quadrature on each path's own partition (matching the
    Euler discretization order).  With ``control=None`` the per-step drift
    evaluations recorded on the paths are used; otherwise ``control`` is
    re-evaluated along the stored states.
    """
    stats = MCStats()
    n = 0
    for p in paths:
        n += 1
        dt = np.diff(p.times)
        if control is not None:
            u = control.fn(p.states[:-1], p.times[:-1])
        elif p.drift_evals is not None:
            u = p.drift_evals
        else:
            raise ConfigurationError(
                "path carries no control evaluations and no control was given")
        energy = 0.5 * float(((u * u).sum(axis=-1) * dt).sum())
        stats = mc_accumulate(stats, energy)
    if n == 0:
        raise InsufficientDataError("no paths supplied")
    return stats


def parse_drift(spec: str, dim: int | None = None) -> DriftField:
    """Parse the drift mini-language.

    Grammar: ``follmer:<target-spec>`` | ``const:v=0.5,0.0`` |
    ``ou:theta=1.0`` | ``zero``.  ``dim`` applies to the kinds that do not
    carry their dimension (``ou``, ``zero``); it defaults to 1.
    """
    head, _, body = spec.partition(":")
    if head == "zero":
        if body:
            raise ConfigurationError(f"zero drift takes no parameters: {spec!r}")
        return zero_drift(dim or 1)
    if head == "const":
        key, eq, value = body.partition("=")
        if key.strip() != "v" or not eq:
            raise ConfigurationError(f"const drift needs v=..., got {spec!r}")
        return constant_drift([float(c) for c in value.split(",")])
    if head == "ou":
        key, eq, value = body.partition("=")
        if key.strip() != "theta" or not eq:
            raise ConfigurationError(f"ou drift needs theta=..., got {spec!r}")
        return ou_drift(float(value), dim or 1)
    if head == "follmer":
        if not body:
            raise ConfigurationError("follmer drift needs a target spec")
        return follmer_drift(parse_target(body))
    raise ConfigurationError(f"unknown drift kind {head!r} in {spec!r}")
