"""Target density ratios f = dmu/dgamma_d with regularity metadata.

Three families ship:

* ``shifted-gaussian``: mu = N(m, I), with the closed form
  ``f(x) = exp(m.x - |m|^2/2)``.
* ``gaussian-mixture``: mu = sum_i w_i N(m_i, I); f is the weighted sum of
  shifted-gaussian terms.  Both Gaussian families admit a closed-form heat
  semigroup, so they double as oracles for everything downstream.
* ``gibbs``: f = exp(-F)/Z for the bounded smooth potential
  ``F(x) = A / (1 + |x - x0|^2)``; Z has no closed form and is estimated
  once by Monte Carlo quadrature under a derived fixed seed.

Regularity metadata: ``lower_c`` bounds f from below and ``lipschitz_L``
bounds the Lipschitz constants of f and its gradient.  For the Gaussian
families these cannot hold globally (f is unbounded), so they are certified
on a reference ball and ``certified_radius`` records where; for gibbs they
are global.

A target may carry a point cloud: the heat semigroup is then evaluated as
the cloud average ``N^-1 sum_n f(x + sqrt(t) z_n)`` instead of the closed
form.  ``build_point_cloud`` draws and validates such clouds against the
analytic oracle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np

from .errors import (ApproximationFailure, ConfigurationError, DomainError,
                     UnsupportedOracleError)
from .sde import RngStream

# Ball radius on which the Gaussian families' regularity constants are
# certified.  The constants are soft bounds in the same sense as unbounded
# drifts': reported and tested on the ball, not enforced globally.
TARGET_REFERENCE_RADIUS = 5.0

# Validation grid: at most this many spatial points, 11 time points.
VALIDATION_GRID_CAP = 100_000
VALIDATION_T_GRID = np.linspace(0.0, 1.0, 11)

# Initial cloud size: ceil(16 d L^2 max(R,1)^2 / eps^2) capped so the first
# attempt stays within memory/runtime budgets; validation doubling takes
# over from there.
CLOUD_INITIAL_CAP = 2 ** 21
CLOUD_MAX_RETRIES = 6

_GAUSS_KINDS = ("shifted-gaussian", "gaussian-mixture")

_MC_QUADRATURE_RUNS = 1_000_000


def _derived_seed(tag: str, *parts) -> int:
    text = tag + "|" + "|".join(repr(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


@lru_cache(maxsize=None)
def _gibbs_normalization(amplitude: float, center: tuple, dim: int):
    """MC estimate of Z = E_gamma[exp(-F)], with its standard error."""
    seed = _derived_seed("gibbs-normalization", amplitude, center, dim)
    gen = RngStream(seed, 0).generator()
    z = gen.standard_normal((_MC_QUADRATURE_RUNS, dim))
    diff = z - np.asarray(center)
    pot = amplitude / (1.0 + np.einsum("ij,ij->i", diff, diff))
    vals = np.exp(-pot)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size))
    return mean, stderr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points z_1..z_N approximating the Gaussian average of f.

    Attributes:
        points: (N, d) array.
        radius_bound: max_n ||z_n||.
        target_eps: accuracy the cloud was built for (inf if never validated).
        valid_radius: ball radius on which validation passed (0 if none).
    """

    points: np.ndarray
    radius_bound: float
    target_eps: float
    valid_radius: float

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ConfigurationError("point cloud needs at least one point")
        self.points.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def draw(cls, dim: int, n_points: int, seed: int) -> "PointCloud":
        """Raw i.i.d. standard-Gaussian cloud with no accuracy certificate."""
        if n_points < 1:
            raise DomainError("n_points must be >= 1")
        pts = RngStream(seed, 0).generator().standard_normal((n_points, dim))
        radius = float(np.linalg.norm(pts, axis=1).max())
        return cls(points=pts, radius_bound=radius, target_eps=math.inf,
                   valid_radius=0.0)

    def to_csv(self, fileobj) -> None:
        fileobj.write(",".join(f"z_{i}" for i in range(self.dim)) + "\n")
        for row in self.points:
            fileobj.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, fileobj) -> "PointCloud":
        header = fileobj.readline().strip().split(",")
        if not header or not header[0].startswith("z_"):
            raise ConfigurationError("point-cloud CSV must start with z_* header")
        pts = np.loadtxt(fileobj, delimiter=",", ndmin=2)
        radius = float(np.linalg.norm(pts, axis=1).max())
        return cls(points=pts, radius_bound=radius, target_eps=math.inf,
                   valid_radius=0.0)


class _GaussCloudEval:
    """Cloud semigroup for the Gaussian families.

    Because each mixture component is log-linear, the cloud average
    factorizes exactly:
    ``N^-1 sum_n f(x + sqrt(t) z_n) = sum_i w_i A_i(x) S_i(sqrt(t))`` with
    ``S_i(s) = N^-1 sum_n exp(s m_i . z_n)``.  The S factors depend only on
    t and are cached, which turns each evaluation into O(components) work.
    This is an algebraically exact regrouping of the defining finite sum.
    """

    _POINT_CHUNK = 1 << 20

    def __init__(self, points: np.ndarray, weights: np.ndarray,
                 means: np.ndarray):
        self._points = points
        self._w = weights
        self._means = means
        self._half_sq = 0.5 * np.einsum("ij,ij->i", means, means)
        self._n = points.shape[0]
        self._cache: dict[float, np.ndarray] = {}

    def factors(self, t: float) -> np.ndarray:
        s = float(math.sqrt(t))
        got = self._cache.get(s)
        if got is not None:
            return got
        acc = np.zeros(self._means.shape[0])
        for lo in range(0, self._n, self._POINT_CHUNK):
            chunk = self._points[lo:lo + self._POINT_CHUNK]
            acc += np.exp(s * (chunk @ self._means.T)).sum(axis=0)
        out = acc / self._n
        self._cache[s] = out
        return out

    def value_and_grad(self, x: np.ndarray, t: float):
        a = np.exp(x @ self._means.T - self._half_sq)  # (B, k)
        ws = self._w * self.factors(t)
        val = a @ ws
        grad = (a * ws) @ self._means
        return val, grad


class _GibbsCloudEval:
    """Direct chunked cloud summation for targets without a factorization."""

    _POINT_CHUNK = 1 << 14

    def __init__(self, points: np.ndarray, target: "TargetDensity"):
        self._points = points
        self._target = target

    def value_and_grad(self, x: np.ndarray, t: float):
        s = math.sqrt(t)
        n = self._points.shape[0]
        val = np.zeros(x.shape[0])
        grad = np.zeros_like(x)
        for lo in range(0, n, self._POINT_CHUNK):
            chunk = self._points[lo:lo + self._POINT_CHUNK]
            shifted = x[:, None, :] + s * chunk[None, :, :]
            flat = shifted.reshape(-1, x.shape[1])
            v, g = self._target._density_batch(flat)
            val += v.reshape(x.shape[0], -1).sum(axis=1)
            grad += g.reshape(x.shape[0], -1, x.shape[1]).sum(axis=1)
        return val / n, grad / n


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """A density ratio f = dmu/dgamma_d with its regularity certificate."""

    kind: str
    dim: int
    lipschitz_L: float
    lower_c: float
    weights: np.ndarray | None = None      # (k,)   Gaussian families
    means: np.ndarray | None = None        # (k, d) Gaussian families
    amplitude: float | None = None         # gibbs
    center: np.ndarray | None = None       # gibbs
    certified_radius: float | None = None  # None = constants hold globally
    cloud: PointCloud | None = None

    def __post_init__(self):
        for arr in (self.weights, self.means, self.center):
            if arr is not None:
                arr.setflags(write=False)
        if self.weights is not None:
            if np.any(self.weights <= 0):
                raise ConfigurationError("mixture weights must be strictly positive")
            if abs(float(self.weights.sum()) - 1.0) > 1e-12:
                raise ConfigurationError("mixture weights must sum to 1")
        if not 0.0 < self.lower_c <= 1.0:
            raise ConfigurationError("lower_c must lie in (0, 1]")
        if self.cloud is not None and self.cloud.dim != self.dim:
            raise ConfigurationError(
                f"cloud dim {self.cloud.dim} does not match target dim {self.dim}")

    # -- construction -----------------------------------------------------

    def with_cloud(self, cloud: PointCloud) -> "TargetDensity":
        """Same target, heat semigroup evaluated through the given cloud."""
        return replace(self, cloud=cloud)

    @property
    def has_analytic_semigroup(self) -> bool:
        return self.kind in _GAUSS_KINDS

    @property
    def name(self) -> str:
        if self.kind == "shifted-gaussian":
            return "gauss:m=" + ",".join(repr(float(v)) for v in self.means[0])
        if self.kind == "gaussian-mixture":
            parts = ["w=" + ",".join(repr(float(v)) for v in self.weights)]
            parts += [f"m{i + 1}=" + ",".join(repr(float(v)) for v in m)
                      for i, m in enumerate(self.means)]
            return "mix:" + ";".join(parts)
        return (f"gibbs:A={self.amplitude!r};x0="
                + ",".join(repr(float(v)) for v in self.center))

    # -- gibbs internals ---------------------------------------------------

    @property
    def normalization(self) -> tuple[float, float]:
        """(Z estimate, standard error); (1, 0) for closed-form kinds."""
        if self.kind != "gibbs":
            return 1.0, 0.0
        return _gibbs_normalization(float(self.amplitude),
                                    tuple(float(v) for v in self.center),
                                    self.dim)

    def _potential(self, x: np.ndarray):
        diff = x - self.center
        r2 = np.einsum("ij,ij->i", diff, diff)
        pot = self.amplitude / (1.0 + r2)
        grad_pot = (-2.0 * self.amplitude) * diff / np.square(1.0 + r2)[:, None]
        return pot, grad_pot

    # -- pointwise evaluation ----------------------------------------------

    def _gauss_value_grad(self, x: np.ndarray, boost: np.ndarray):
        """sum_i w_i boost_i A_i(x) and its gradient; boost_i = 1 gives f."""
        half_sq = 0.5 * np.einsum("ij,ij->i", self.means, self.means)
        logits = x @ self.means.T - half_sq  # (B, k)
        a = np.exp(logits)
        wb = self.weights * boost
        val = (a * wb).sum(axis=1)
        grad = (a * wb) @ self.means
        return val, grad

    def _density_batch(self, x: np.ndarray):
        if self.kind in _GAUSS_KINDS:
            ones = np.ones(self.means.shape[0])
            return self._gauss_value_grad(x, ones)
        z_val, _ = self.normalization
        pot, grad_pot = self._potential(x)
        val = np.exp(-pot) / z_val
        grad = -grad_pot * val[:, None]
        return val, grad

    def _semigroup_batch(self, x: np.ndarray, t: float):
        if t == 0.0:
            return self._density_batch(x)
        if self.cloud is not None:
            return self._cloud_eval.value_and_grad(x, t)
        if self.kind in _GAUSS_KINDS:
            sq = np.einsum("ij,ij->i", self.means, self.means)
            return self._gauss_value_grad(x, np.exp(0.5 * t * sq))
        raise UnsupportedOracleError(
            "gibbs targets have no closed-form heat semigroup; attach a "
            "point cloud to evaluate it")

    @cached_property
    def _cloud_eval(self):
        if self.kind in _GAUSS_KINDS:
            return _GaussCloudEval(self.cloud.points, self.weights, self.means)
        return _GibbsCloudEval(self.cloud.points, self)


# -- public operations ------------------------------------------------------


def _check_states(target: TargetDensity, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[-1] != target.dim:
        raise ConfigurationError(
            f"state dim {batch.shape[-1]} does not match target dim {target.dim}")
    if not np.isfinite(batch).all():
        raise DomainError("states must be finite")
    return batch, single


def density_ratio(target: TargetDensity, x):
    """Evaluate f and its gradient at x ((d,) or (B, d))."""
    batch, single = _check_states(target, x)
    val, grad = target._density_batch(batch)
    if single:
        return float(val[0]), grad[0]
    return val, grad


def heat_semigroup(target: TargetDensity, x, t: float):
    """Evaluate the Gaussian smoothing Q_t f and its gradient.

    Q_0 is the identity; t outside [0, 1] is a domain error.  Uses the
    closed form for the Gaussian families, or the attached point cloud.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"semigroup time t={t} outside [0, 1]")
    batch, single = _check_states(target, x)
    val, grad = target._semigroup_batch(batch, float(t))
    if single:
        return float(val[0]), grad[0]
    return val, grad


def shifted_gaussian(m) -> TargetDensity:
    """Target mu = N(m, I): f(x) = exp(m.x - |m|^2/2)."""
    m = np.atleast_1d(np.array(m, dtype=float))
    return _make_gauss("shifted-gaussian", np.array([1.0]), m[None, :])


def gaussian_mixture(weights, means) -> TargetDensity:
    """Target mu = sum_i w_i N(m_i, I)."""
    w = np.atleast_1d(np.array(weights, dtype=float))
    m = np.atleast_2d(np.array(means, dtype=float))
    if w.shape[0] != m.shape[0]:
        raise ConfigurationError("one weight per component required")
    if np.any(w <= 0):
        raise ConfigurationError("mixture weights must be strictly positive")
    return _make_gauss("gaussian-mixture", w / w.sum(), m)


def _make_gauss(kind: str, weights: np.ndarray, means: np.ndarray) -> TargetDensity:
    r = TARGET_REFERENCE_RADIUS
    norms = np.linalg.norm(means, axis=1)
    peak = np.exp(norms * r - 0.5 * norms ** 2)
    lip_f = float((weights * norms * peak).sum())
    lip_grad = float((weights * norms ** 2 * peak).sum())
    lower = float((weights * np.exp(-norms * r - 0.5 * norms ** 2)).sum())
    return TargetDensity(kind=kind, dim=means.shape[1],
                         lipschitz_L=max(lip_f, lip_grad),
                         lower_c=min(lower, 1.0),
                         weights=weights, means=means,
                         certified_radius=r)


def gibbs_target(amplitude: float, center) -> TargetDensity:
    """Target f = exp(-F)/Z with F(x) = A / (1 + |x - x0|^2), A >= 0.

    F maps into [0, A] with Lipschitz F and grad F, so the lower bound
    c = exp(-A) and the Lipschitz certificate are global (no reference
    ball).  Z is estimated once by MC quadrature under a derived seed.
    """
    amplitude = float(amplitude)
    if amplitude < 0:
        raise ConfigurationError("gibbs amplitude must be >= 0")
    center = np.atleast_1d(np.array(center, dtype=float))
    # Lip(F) = (3 sqrt 3 / 8) A, Lip(grad F) = 2A; the e^A factor bounds 1/Z.
    lip_pot = 2.0 * amplitude
    lip = math.exp(amplitude) * (lip_pot + lip_pot ** 2)
    return TargetDensity(kind="gibbs", dim=center.shape[0],
                         lipschitz_L=lip, lower_c=math.exp(-amplitude),
                         amplitude=amplitude, center=center,
                         certified_radius=None)


# -- point-cloud construction and validation --------------------------------


def cloud_radius_limit(n_points: int, dim: int) -> float:
    """Radius budget 8 sqrt((d+6) log N) every built cloud must satisfy."""
    return 8.0 * math.sqrt((dim + 6) * math.log(max(n_points, 2)))


def _validation_grid(dim: int, radius: float, resolution: int) -> np.ndarray:
    if resolution < 1:
        raise DomainError("grid resolution must be >= 1")
    res = resolution
    while res > 1 and res ** dim > VALIDATION_GRID_CAP:
        res -= 1
    axis = np.linspace(-radius, radius, res)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    keep = np.linalg.norm(pts, axis=1) <= radius + 1e-9
    return pts[keep]


def cloud_sup_error(cloud: PointCloud, target: TargetDensity, radius: float,
                    grid_resolution: int = 9):
    """Grid sup errors of the cloud semigroup against the analytic oracle.

    Maxima over a deterministic tensor grid on the ball of the given radius
    crossed with t in {0, 0.1, ..., 1}: a grid supremum, not the true one.

    Returns (sup_value_err, sup_grad_err).
    """
    if not target.has_analytic_semigroup:
        raise UnsupportedOracleError(
            f"no analytic heat semigroup for target kind {target.kind!r}")
    if cloud.dim != target.dim:
        raise ConfigurationError("cloud and target dimensions differ")
    grid = _validation_grid(target.dim, float(radius), grid_resolution)
    means, weights = target.means, target.weights
    half_sq = 0.5 * np.einsum("ij,ij->i", means, means)
    a = np.exp(grid @ means.T - half_sq)  # (G, k)
    surrogate = _GaussCloudEval(cloud.points, weights, means)

    sup_val, sup_grad = 0.0, 0.0
    for t in VALIDATION_T_GRID:
        exact = np.exp(t * half_sq)
        diff = weights * (surrogate.factors(float(t)) - exact)  # (k,)
        val_err = np.abs(a @ diff).max()
        grad_err = np.linalg.norm((a * diff) @ means, axis=1).max()
        sup_val = max(sup_val, float(val_err))
        sup_grad = max(sup_grad, float(grad_err))
    return sup_val, sup_grad


def build_point_cloud(target: TargetDensity, eps: float, radius: float,
                      seed: int, grid_resolution: int = 9,
                      max_retries: int = CLOUD_MAX_RETRIES) -> PointCloud:
    """Draw a standard-Gaussian cloud and validate it against the oracle.

    The initial size follows the 1/sqrt(N) Monte Carlo rate,
    ``N0 = ceil(16 d L^2 max(R,1)^2 / eps^2)`` (capped); each failed
    validation doubles N under a new derived stream, up to the retry budget.
    """
    if eps <= 0:
        raise DomainError("eps must be > 0")
    if radius <= 0:
        raise DomainError("radius must be > 0")
    if not target.has_analytic_semigroup:
        raise UnsupportedOracleError(
            f"cannot validate clouds for target kind {target.kind!r}: "
            "no analytic oracle")
    d = target.dim
    n0 = math.ceil(16.0 * d * target.lipschitz_L ** 2
                   * max(radius, 1.0) ** 2 / eps ** 2)
    n = max(16, min(n0, CLOUD_INITIAL_CAP))

    last_errs = (math.inf, math.inf)
    for attempt in range(max_retries + 1):
        gen = RngStream(seed, attempt).generator()
        pts = gen.standard_normal((n, d))
        max_norm = float(np.linalg.norm(pts, axis=1).max())
        if max_norm <= cloud_radius_limit(n, d):
            cloud = PointCloud(points=pts, radius_bound=max_norm,
                               target_eps=float(eps),
                               valid_radius=float(radius))
            errs = cloud_sup_error(cloud, target, radius, grid_resolution)
            last_errs = errs
            if errs[0] <= eps and errs[1] <= eps:
                return cloud
        n *= 2
    raise ApproximationFailure(
        f"cloud validation failed after {max_retries + 1} attempts "
        f"(last sup errors: value={last_errs[0]:.3g}, grad={last_errs[1]:.3g})",
        sup_value_err=last_errs[0], sup_grad_err=last_errs[1])


# -- mini-language -----------------------------------------------------------


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse vector {text!r}") from exc


def parse_target(spec: str) -> TargetDensity:
    """Parse the target mini-language.

    Grammar: ``gauss:m=1.0,0.0`` | ``mix:w=0.5,0.5;m1=1,0;m2=-1,0`` |
    ``gibbs:A=2.0;x0=0,0``.
    """
    head, _, body = spec.partition(":")
    fields = {}
    if body:
        for part in body.split(";"):
            key, eq, value = part.partition("=")
            if not eq:
                raise ConfigurationError(f"malformed target field {part!r} in {spec!r}")
            fields[key.strip()] = value.strip()
    if head == "gauss":
        if set(fields) != {"m"}:
            raise ConfigurationError(f"gauss target needs exactly m=..., got {spec!r}")
        return shifted_gaussian(_parse_vector(fields["m"]))
    if head == "mix":
        if "w" not in fields:
            raise ConfigurationError(f"mix target needs w=..., got {spec!r}")
        w = _parse_vector(fields["w"])
        means = []
        for i in range(1, w.shape[0] + 1):
            key = f"m{i}"
            if key not in fields:
                raise ConfigurationError(f"mix target missing {key}= in {spec!r}")
            means.append(_parse_vector(fields[key]))
        extra = set(fields) - ({"w"} | {f"m{i}" for i in range(1, w.shape[0] + 1)})
        if extra:
            raise ConfigurationError(f"unknown mix fields {sorted(extra)} in {spec!r}")
        return gaussian_mixture(w, np.stack(means))
    if head == "gibbs":
        if set(fields) != {"A", "x0"}:
            raise ConfigurationError(f"gibbs target needs A= and x0=, got {spec!r}")
        return gibbs_target(float(fields["A"]), _parse_vector(fields["x0"]))
    raise ConfigurationError(f"unknown target kind {head!r} in {spec!r}")
