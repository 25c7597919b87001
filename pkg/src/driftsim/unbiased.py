"""Unbiased estimation of E[g(X_1)] on random renewal meshes.

The mesh breakpoints are cumulative sums of i.i.d. interrenewal times
truncated at 1.  An Euler walk on the mesh, reweighted by the product of
per-interval factors

    W_k = (b(X_{T_k}, T_k) - b(X_{T_{k-1}}, T_{k-1})) . (W_{T_{k+1}} - W_{T_k})
          / (T_{k+1} - T_k) / f_tau(T_k - T_{k-1}),

and by the survival factor ``1 / (1 - F_tau(1 - T_N))``, gives an exactly
unbiased estimate of E[g(X_1)]; subtracting the same product applied to
``g(X_{T_N}) 1{N>0}`` (a zero-mean control variate) keeps the variance
finite.

Stream layout (fixed per release): each run draws one block of
``dist.block`` uniforms (interrenewals, inverse-CDF) followed by
``dist.block * d`` ziggurat normals, repeating both blocks while the
cumulative interrenewals have not covered [0, 1].  The block size is a
function of the distribution parameters alone, chosen so a single block is
insufficient with probability below 1e-24; deficient runs fall back to a
scalar replay of the same stream, so results never depend on chunking or
worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ConfigurationError, DomainError, NonConvergenceError
from .fields import DriftField
from .sde import UNIFORM_LO, RngStream, StreamBatch
from .stats import MCStats, map_chunks, mc_merge, mc_from_samples

# Fixed run-chunk size for the batched estimator (a release constant, like
# PATH_CHUNK_RUNS: workers never change chunk boundaries).
UNBIASED_CHUNK_RUNS = 65536

# One-block insufficiency budget for the stream layout.
_BLOCK_TAIL_PROB = 1e-24
_BLOCK_MIN = 8

_MITTAG_LEFFLER_TERM_CAP = 10_000
_MITTAG_LEFFLER_RTOL = 1e-15


# -- interrenewal distributions ---------------------------------------------


def _exp_block(rate: float) -> int:
    k = _BLOCK_MIN
    while sps.poisson.sf(k - 1, rate) > _BLOCK_TAIL_PROB:
        k += 1
    return k


def _uniform_block(horizon: float) -> int:
    k = _BLOCK_MIN
    # P(S_k < 1) = (1/T)^k / k! exactly, since 1/T <= 1.
    while math.exp(-k * math.log(horizon) - math.lgamma(k + 1)) > _BLOCK_TAIL_PROB:
        k += 1
    return k


@dataclass(frozen=True)
class InterrenewalDistribution:
    """Law of the i.i.d. interrenewal times generating the mesh.

    ``weight_C`` and ``weight_a`` certify ``1/f_tau(s) <= C e^{a s}`` on
    (0, 1); ``block`` is the stream-layout block size.
    """

    kind: str              # "exponential" | "uniform"
    rate: float = 0.0      # exponential rate
    horizon: float = 0.0   # uniform upper endpoint T
    weight_C: float = 0.0
    weight_a: float = 0.0
    block: int = 0

    @property
    def name(self) -> str:
        if self.kind == "exponential":
            return f"exp:lambda={self.rate!r}"
        return f"uniform:T={self.horizon!r}"

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return self.rate * np.exp(-self.rate * s)
        return np.where((s >= 0) & (s <= self.horizon), 1.0 / self.horizon, 0.0)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return -np.expm1(-self.rate * s)
        return np.clip(s / self.horizon, 0.0, 1.0)

    def inv_cdf(self, u):
        """Inverse CDF on uniforms already clamped away from 0 and 1."""
        if self.kind == "exponential":
            return -np.log1p(-u) / self.rate
        return u * self.horizon

    def mgf_neg(self, beta: float) -> float:
        """M_tau(-beta) for beta > 0."""
        if self.kind == "exponential":
            return self.rate / (self.rate + beta)
        bt = beta * self.horizon
        return float(-np.expm1(-bt) / bt)

    @property
    def mean_interior(self) -> float:
        """E[N]: exact for both kinds (Poisson count / series in 1/T)."""
        if self.kind == "exponential":
            return self.rate
        return math.expm1(1.0 / self.horizon)

    @property
    def survival_at_1(self) -> float:
        """1 - F_tau(1) = P(N = 0) > 0."""
        if self.kind == "exponential":
            return math.exp(-self.rate)
        return 1.0 - 1.0 / self.horizon


def exponential_interrenewal(rate: float) -> InterrenewalDistribution:
    rate = float(rate)
    if not rate > 0:
        raise DomainError("exponential interrenewal rate must be > 0")
    return InterrenewalDistribution(kind="exponential", rate=rate,
                                    weight_C=1.0 / rate, weight_a=rate,
                                    block=_exp_block(rate))


def uniform_interrenewal(horizon: float) -> InterrenewalDistribution:
    horizon = float(horizon)
    if not horizon > 1.0:
        raise DomainError(
            f"uniform interrenewal horizon T={horizon!r} invalid: "
            "support must contain [0, 1+eps], which requires T > 1")
    return InterrenewalDistribution(kind="uniform", horizon=horizon,
                                    weight_C=horizon, weight_a=0.0,
                                    block=_uniform_block(horizon))


def matched_exponential(dist: InterrenewalDistribution) -> InterrenewalDistribution:
    """Exponential law whose mean interior count matches ``dist`` exactly."""
    return exponential_interrenewal(dist.mean_interior)


def parse_mesh(spec: str) -> InterrenewalDistribution:
    """Parse ``exp:lambda=1`` / ``uniform:T=1.5``."""
    head, _, body = spec.partition(":")
    key, eq, value = body.partition("=")
    if head == "exp":
        if key.strip() != "lambda" or not eq:
            raise ConfigurationError(f"exp mesh needs lambda=..., got {spec!r}")
        return exponential_interrenewal(float(value))
    if head == "uniform":
        if key.strip() != "T" or not eq:
            raise ConfigurationError(f"uniform mesh needs T=..., got {spec!r}")
        return uniform_interrenewal(float(value))
    raise ConfigurationError(f"unknown mesh kind {head!r} in {spec!r}")


# -- scalar-function specs ---------------------------------------------------


@dataclass(frozen=True)
class GFunc:
    """A scalar observable with a declared Lipschitz certificate."""

    kind: str
    lipschitz: float
    soft_bound: bool

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "x":
            return x[..., 0]
        if self.kind == "x2":
            return np.square(x[..., 0])
        return (x * x).sum(axis=-1)

    @property
    def name(self) -> str:
        return self.kind


def parse_g(spec: str) -> GFunc:
    """Parse ``x`` (first coordinate), ``x2`` (its square), ``norm2``.

    The quadratic observables declare Lipschitz constants certified on the
    reference ball of radius 10 and are flagged soft.
    """
    if spec == "x":
        return GFunc("x", 1.0, False)
    if spec == "x2":
        return GFunc("x2", 20.0, True)
    if spec == "norm2":
        return GFunc("norm2", 20.0, True)
    raise ConfigurationError(f"unknown observable {spec!r} (want x, x2, norm2)")


# -- renewal meshes ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RenewalMesh:
    """Random partition 0 = T_0 < ... < T_N < T_{N+1} = 1.

    ``interrenewals`` holds the raw draws tau_1..tau_{N+1} (up to and
    including the draw that crossed 1).
    """

    times: np.ndarray
    interrenewals: np.ndarray

    def __post_init__(self):
        t = self.times
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ConfigurationError("mesh must start at 0 and end at 1")
        if not np.all(np.diff(t) > 0):
            raise ConfigurationError("mesh times must be strictly increasing")
        t.setflags(write=False)
        self.interrenewals.setflags(write=False)

    @property
    def n_interior(self) -> int:
        return self.times.shape[0] - 2

    @classmethod
    def from_interrenewals(cls, taus) -> "RenewalMesh":
        taus = np.array(taus, dtype=float)
        if taus.ndim != 1 or taus.size == 0 or np.any(taus <= 0):
            raise DomainError("interrenewal draws must be positive")
        partial = np.cumsum(taus)
        if partial[-1] < 1.0:
            raise DomainError("interrenewal draws do not cover [0, 1]")
        crossing = int(np.argmax(partial >= 1.0))
        interior = partial[:crossing]
        times = np.concatenate([[0.0], interior, [1.0]])
        return cls(times=times, interrenewals=taus[:crossing + 1])


def _clamped_uniforms(gen, size):
    u = gen.random(size)
    return np.clip(u, UNIFORM_LO, 1.0 - 2.0 ** -53)


def sample_mesh(dist: InterrenewalDistribution, rng: RngStream) -> RenewalMesh:
    """Draw one renewal mesh from the stream's block layout."""
    gen = rng.generator()
    taus = dist.inv_cdf(_clamped_uniforms(gen, dist.block))
    while taus.sum() < 1.0:
        taus = np.concatenate([taus, dist.inv_cdf(_clamped_uniforms(gen, dist.block))])
    return RenewalMesh.from_interrenewals(taus)


# -- the estimator -----------------------------------------------------------


def _mesh_walk(drift: DriftField, dist: InterrenewalDistribution, x0,
               mesh_u: np.ndarray, z: np.ndarray):
    """Vectorized Euler walk + weight product on padded renewal meshes.

    Parameters are per-run uniform draws ``mesh_u`` of shape (R, B) and
    normal draws ``z`` of shape (R, B, d).  Returns the g-independent pieces
    of the estimator: the weight product, the survival factor, the states at
    T_N and at 1, the interior counts, and the mask of runs whose block did
    not cover [0, 1] (to be replayed by the caller).
    """
    r_runs, b_cols = mesh_u.shape
    d = drift.dim
    u = np.clip(mesh_u, UNIFORM_LO, 1.0 - 2.0 ** -53)
    taus = dist.inv_cdf(u)
    partial = np.cumsum(taus, axis=1)
    insufficient = partial[:, -1] < 1.0
    n_interior = (partial < 1.0).sum(axis=1)
    times = np.concatenate([np.zeros((r_runs, 1)), np.minimum(partial, 1.0)],
                           axis=1)
    dt = np.diff(times, axis=1)

    x = np.broadcast_to(np.asarray(x0, dtype=float), (r_runs, d)).copy()
    x_mesh = x.copy()          # becomes X_{T_N} (captured when j == N)
    prod = np.ones(r_runs)
    b_prev = None
    steps = min(int(n_interior.max(initial=0)) + 1, b_cols)
    for j in range(steps):
        b_j = drift.fn(x, times[:, j])
        capture = n_interior == j
        if capture.any():
            x_mesh[capture] = x[capture]
        dw_j = np.sqrt(dt[:, j])[:, None] * z[:, j, :]
        if j >= 1:
            active = j <= n_interior
            num = ((b_j - b_prev) * dw_j).sum(axis=-1)
            den = np.where(active, dt[:, j] * dist.pdf(dt[:, j - 1]), 1.0)
            prod = prod * np.where(active, num / den, 1.0)
        x = x + b_j * dt[:, j][:, None] + dw_j
        b_prev = b_j

    t_last = np.take_along_axis(times, n_interior[:, None], axis=1)[:, 0]
    survival = 1.0 - dist.cdf(1.0 - t_last)
    return dict(prod=prod, survival=survival, x_mesh=x_mesh, x_term=x,
                n_interior=n_interior, insufficient=insufficient)


def _assemble_psi(g: GFunc, walk: dict):
    """psi and the control-variate term from the g-independent walk pieces."""
    tail = 1.0 / walk["survival"]
    gate = walk["n_interior"] > 0
    g_mesh = np.where(gate, g(walk["x_mesh"]), 0.0)
    cv = tail * g_mesh * walk["prod"]
    psi = tail * (g(walk["x_term"]) - g_mesh) * walk["prod"]
    return psi, cv


def _single_walk(drift: DriftField, dist: InterrenewalDistribution, x0,
                 rng: RngStream) -> dict:
    """Scalar-path walk: same block layout, extended until [0,1] is covered."""
    gen = rng.generator()
    d = drift.dim
    mesh_u = gen.random(dist.block)
    z = gen.standard_normal((dist.block, d))
    while dist.inv_cdf(np.clip(mesh_u, UNIFORM_LO, 1.0 - 2.0 ** -53)).sum() < 1.0:
        mesh_u = np.concatenate([mesh_u, gen.random(dist.block)])
        z = np.concatenate([z, gen.standard_normal((dist.block, d))])
    return _mesh_walk(drift, dist, x0, mesh_u[None, :], z[None, :, :])


def unbiased_estimate(drift: DriftField, g: GFunc,
                      dist: InterrenewalDistribution, x0,
                      rng: RngStream) -> float:
    """One draw of the unbiased estimator of E[g(X_1) | X_0 = x0]."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != drift.dim:
        raise ConfigurationError(
            f"x0 has dim {x0.shape[0]}, drift expects {drift.dim}")
    walk = _single_walk(drift, dist, x0, rng)
    psi, _ = _assemble_psi(g, walk)
    return float(psi[0])


def estimator_batch(drift: DriftField, g: GFunc | list,
                    dist: InterrenewalDistribution, x0, n_runs: int,
                    master_seed: int, workers: int = 1):
    """Per-run estimator draws for one or several observables.

    Run r (1-based) uses stream (master_seed, r).  Returns a dict with, per
    observable name, the (n_runs,) arrays of psi draws and control-variate
    terms, plus the interior counts.  Output is identical for every worker
    count: chunk boundaries are fixed and deficient runs replay their own
    stream scalar-wise.
    """
    gs = g if isinstance(g, list) else [g]
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != drift.dim:
        raise ConfigurationError(
            f"x0 has dim {x0.shape[0]}, drift expects {drift.dim}")
    b_cols, d = dist.block, drift.dim

    def chunk(start, stop):
        c = stop - start
        streams = StreamBatch(master_seed)
        mesh_u = np.empty((c, b_cols))
        z = np.empty((c, b_cols * d))
        for i in range(c):
            gen = streams.generator(start + i + 1)
            gen.random(out=mesh_u[i])
            gen.standard_normal(out=z[i])
        walk = _mesh_walk(drift, dist, x0, mesh_u, z.reshape(c, b_cols, d))
        for i in np.flatnonzero(walk["insufficient"]):
            redo = _single_walk(drift, dist, x0,
                                RngStream(master_seed, start + i + 1))
            for key in ("prod", "survival", "n_interior"):
                walk[key][i] = redo[key][0]
            walk["x_mesh"][i] = redo["x_mesh"][0]
            walk["x_term"][i] = redo["x_term"][0]
        out = {"n_interior": walk["n_interior"]}
        for gf in gs:
            psi, cv = _assemble_psi(gf, walk)
            out[gf.name] = psi
            out[gf.name + "/cv"] = cv
        return out

    bounds = [(s, min(s + UNBIASED_CHUNK_RUNS, n_runs))
              for s in range(0, n_runs, UNBIASED_CHUNK_RUNS)]
    parts = map_chunks(chunk, bounds, workers)
    keys = parts[0].keys()
    return {k: np.concatenate([p[k] for p in parts]) for k in keys}


# -- MGF of the interior count ------------------------------------------------


def empirical_mgf(dist: InterrenewalDistribution, theta: float, runs: int,
                  seed: int, workers: int = 1) -> MCStats:
    """MC estimate of E[exp(theta N)] over sampled meshes.

    Uses the mesh block of the per-run stream layout; deficient runs replay
    their stream through ``sample_mesh``.
    """
    b_cols = dist.block

    def chunk(start, stop):
        c = stop - start
        streams = StreamBatch(seed)
        mesh_u = np.empty((c, b_cols))
        for i in range(c):
            streams.generator(start + i + 1).random(out=mesh_u[i])
        taus = dist.inv_cdf(np.clip(mesh_u, UNIFORM_LO, 1.0 - 2.0 ** -53))
        partial = np.cumsum(taus, axis=1)
        n = (partial < 1.0).sum(axis=1).astype(float)
        for i in np.flatnonzero(partial[:, -1] < 1.0):
            n[i] = sample_mesh(dist, RngStream(seed, start + i + 1)).n_interior
        return np.exp(theta * n)

    bounds = [(s, min(s + UNBIASED_CHUNK_RUNS, runs))
              for s in range(0, runs, UNBIASED_CHUNK_RUNS)]
    parts = map_chunks(chunk, bounds, workers)
    out = MCStats()
    for part in parts:
        out = mc_merge(out, mc_from_samples(part))
    return out


def _golden_refine(objective, lo: float, hi: float, iters: int = 80) -> float:
    """Golden-section minimum of ``objective`` on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = objective(d)
    return min(fc, fd)


def mgf_bound(dist: InterrenewalDistribution, theta: float) -> float:
    """Computable upper bound on E[exp(theta N)].

    Exponential meshes use the exact closed form ``exp(rate (e^theta - 1))``
    (the interior count is Poisson).  Otherwise the bound
    ``1 + e^theta inf_beta {(beta+1) e^{theta beta} + sum_k q^k}`` with
    ``q = e^{theta+1} M_tau(-beta)`` is minimized over beta on a log grid in
    (1e-3, 1e3) followed by golden-section refinement; beta with q >= 1 is
    infeasible (the geometric series diverges).  Returns +inf when no beta
    is feasible (a vacuous bound).
    """
    if theta < 0:
        raise DomainError("theta must be >= 0")
    if dist.kind == "exponential":
        log_mgf = dist.rate * math.expm1(theta)
        return math.exp(log_mgf) if log_mgf <= 709.0 else math.inf

    def objective(beta: float) -> float:
        beta = float(beta)
        q = math.exp(theta + 1.0) * dist.mgf_neg(beta)
        if q >= 1.0:
            return math.inf
        log_lead = math.log1p(beta) + theta * beta
        if log_lead > 700.0:
            return math.inf
        return math.exp(log_lead) + 1.0 / (1.0 - q)

    grid = np.logspace(-3.0, 3.0, 200)
    vals = np.array([objective(b) for b in grid])
    if not np.isfinite(vals).any():
        return math.inf
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    best = min(float(vals[i]), _golden_refine(objective, float(lo), float(hi)))
    return 1.0 + math.exp(theta) * best


# -- variance diagnostics ------------------------------------------------------


def chi_moment(dim: int, order: int) -> float:
    """E[|Z|^order] for a standard d-dimensional Gaussian Z (chi moments)."""
    return 2.0 ** (order / 2.0) * math.exp(
        math.lgamma((dim + order) / 2.0) - math.lgamma(dim / 2.0))


def step_weight_moment(dim: int, drift_sup: float) -> float:
    """E[(1 + b_inf + |Z|)^2 |Z|^2], the per-interval weight second moment."""
    a = 1.0 + drift_sup
    return (a * a * chi_moment(dim, 2) + 2.0 * a * chi_moment(dim, 3)
            + chi_moment(dim, 4))


@dataclass(frozen=True)
class VarianceReport:
    """Empirical moments of the estimator next to the assembled bound."""

    dist_name: str
    theta_eff: float
    runs: int
    mean: float
    variance: float
    stderr: float
    second_moment: float
    bound: float
    bound_valid: bool
    hypotheses_verified: bool
    mean_interior: float
    seed: int

    def row(self) -> list:
        return [self.dist_name, self.theta_eff, self.runs, self.mean,
                self.variance, self.stderr, self.bound, self.bound_valid,
                self.seed]


def variance_report(drift: DriftField, g: GFunc,
                    dist: InterrenewalDistribution, x0, runs: int, seed: int,
                    workers: int = 1,
                    samples: np.ndarray | None = None) -> VarianceReport:
    """Empirical mean/variance of the estimator plus its theoretical bound.

    The bound is ``(e^a / (1 - F_tau(1)))^2 K M_N(theta_eff)`` with
    ``K = (|g(x0)| + L (1 + sqrt d))^2``, ``L = max(L_b, L_g)``, and the
    per-interval weight constants folded into the MGF argument
    ``theta_eff = log((C L)^2 kappa)`` where kappa is the closed-form chi
    moment above.  theta_eff is floored at 0 (a smaller argument can only
    shrink the true expectation being bounded).  Soft drift or observable
    bounds mark the report ``hypotheses-not-verified``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if samples is None:
        batch = estimator_batch(drift, g, dist, x0, runs, seed, workers)
        psi = batch[g.name]
        mean_n = float(batch["n_interior"].mean())
    else:
        psi = samples
        mean_n = math.nan
    stats = mc_from_samples(psi).require_clean("unbiased estimator")
    second = float(np.mean(np.square(psi)))

    lip = max(drift.lip_x, g.lipschitz)
    kappa = step_weight_moment(drift.dim, drift.sup_norm)
    theta_eff = max(math.log((dist.weight_C * lip) ** 2 * kappa), 0.0)
    mgf = mgf_bound(dist, theta_eff)
    g0 = float(g(x0[None, :])[0])
    amplitude = (abs(g0) + lip * (1.0 + math.sqrt(drift.dim))) ** 2
    prefactor = (math.exp(dist.weight_a) / dist.survival_at_1) ** 2
    bound = prefactor * amplitude * mgf

    return VarianceReport(
        dist_name=dist.name, theta_eff=theta_eff, runs=int(psi.size),
        mean=stats.mean, variance=stats.variance, stderr=stats.stderr,
        second_moment=second, bound=bound,
        bound_valid=bool(second <= bound),
        hypotheses_verified=not (drift.soft_bound or g.soft_bound),
        mean_interior=mean_n, seed=seed)


# -- special functions ----------------------------------------------------------


def mittag_leffler(alpha: float, beta: float, z: float) -> float:
    """Two-parameter Mittag-Leffler function ``sum_k z^k / Gamma(beta + alpha k)``.

    Terms are summed until the next term falls below 1e-15 of the running
    partial sum in magnitude, with a cap of 1e4 terms.
    """
    if alpha <= 0 or beta <= 0:
        raise DomainError("mittag_leffler requires alpha > 0 and beta > 0")
    total = 1.0 / math.gamma(beta)
    if z == 0.0:
        return total
    log_abs_z = math.log(abs(z))
    sign_z = 1.0 if z > 0 else -1.0
    sign = 1.0
    for k in range(1, _MITTAG_LEFFLER_TERM_CAP + 1):
        sign *= sign_z
        log_term = k * log_abs_z - math.lgamma(beta + alpha * k)
        if log_term > 709.0:
            raise NonConvergenceError(
                f"mittag_leffler({alpha}, {beta}, {z}) exceeds the double "
                f"range at term {k}")
        total += sign * math.exp(log_term)
        if math.exp(log_term) < _MITTAG_LEFFLER_RTOL * abs(total):
            return total
    raise NonConvergenceError(
        f"mittag_leffler({alpha}, {beta}, {z}) hit the "
        f"{_MITTAG_LEFFLER_TERM_CAP}-term cap before converging")


def weight_integrability_certificate(drift: DriftField, g: GFunc,
                                     dist: InterrenewalDistribution) -> float:
    """Finiteness certificate ``sqrt(pi) E_{1/2,1/2}(c sqrt(pi))``.

    The constant folds the weight-density bound C, the Lipschitz scale, and
    the drift/noise amplitudes of one product factor; finiteness of the
    series certifies the integrability of the weight products.
    """
    scale = (dist.weight_C * max(drift.lip_x, g.lipschitz)
             * (1.0 + drift.sup_norm + math.sqrt(drift.dim)))
    root_pi = math.sqrt(math.pi)
    return root_pi * mittag_leffler(0.5, 0.5, scale * root_pi)
