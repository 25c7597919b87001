"""Experiment orchestration: validated configs in, provenance-stamped CSV out.

An experiment config is a flat table (kind, seed, workers, out) plus one
nested table of kind-specific parameters; files use TOML.  Validation
failures are collected and reported with full field paths.  Every emitted
row carries the seed, the release build id, and the RNG method tag, and is
byte-identical across repeat runs and worker counts at a fixed config.
"""

from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import BUILD_ID
from .control import (ObservationModel, exact_nll_gaussian, free_energy,
                      girsanov_kl, parse_control)
from .errors import ConfigurationError, NumericalFailureError
from .follmer import follmer_drift, parse_drift
from .sde import RNG_METHOD_TAG, simulate_terminal_batch
from .targets import (build_point_cloud, cloud_radius_limit, cloud_sup_error,
                      parse_target)
from .unbiased import (empirical_mgf, estimator_batch, matched_exponential,
                       mgf_bound, parse_g, parse_mesh, uniform_interrenewal,
                       variance_report)

EXPERIMENT_KINDS = ("sample", "unbiased", "mgf", "variance-sweep", "kl",
                    "vi", "cloud", "check")

_PROVENANCE = ["seed", "build", "rng"]


@dataclass
class ExperimentResult:
    kind: str
    header: list
    rows: list
    cloud: object = None
    failures: int = 0
    check_lines: list = None

    def to_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([_cell(v) for v in row])

    def csv_bytes(self) -> bytes:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue().encode()


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


# -- config validation --------------------------------------------------------


class _Validator:
    def __init__(self):
        self.errors = []

    def fail(self, path: str, message: str):
        self.errors.append(f"{path}: {message}")

    def require(self, table: dict, path: str, key: str, kind, message: str):
        if key not in table:
            self.fail(f"{path}.{key}", "missing required field")
            return None
        value = table[key]
        if kind is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, kind):
            self.fail(f"{path}.{key}", message)
            return None
        return value

    def optional(self, table: dict, path: str, key: str, kind, default,
                 message: str):
        if key not in table:
            return default
        return self.require(table, path, key, kind, message)

    def raise_if_failed(self):
        if self.errors:
            raise ConfigurationError("invalid experiment config:\n"
                                     + "\n".join(sorted(self.errors)))


def _positive_int(val, v: _Validator, path: str):
    if val is not None and val < 1:
        v.fail(path, f"must be >= 1, got {val}")
    return val


def _vector(table, path, key, v: _Validator, default=None):
    if key not in table:
        return default
    raw = table[key]
    if isinstance(raw, str):
        try:
            return [float(x) for x in raw.split(",")]
        except ValueError:
            v.fail(f"{path}.{key}", f"cannot parse vector {raw!r}")
            return default
    if isinstance(raw, list) and all(isinstance(x, (int, float)) for x in raw):
        return [float(x) for x in raw]
    v.fail(f"{path}.{key}", "must be a list of numbers or a comma string")
    return default


def load_config_file(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def validate_config(raw: dict) -> dict:
    """Normalize and validate a raw config mapping.

    Returns {kind, seed, workers, out, params} or raises ConfigurationError
    listing every problem with its field path.
    """
    v = _Validator()
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        v.fail("kind", f"must be one of {', '.join(EXPERIMENT_KINDS)}, got {kind!r}")
        v.raise_if_failed()
    seed = v.require(raw, "", "seed", int, "must be an integer")
    if isinstance(seed, bool):
        v.fail(".seed", "must be an integer")
    workers = v.optional(raw, "", "workers", int, 1, "must be an integer")
    if workers is not None and workers < 1:
        v.fail(".workers", f"must be >= 1, got {workers}")
    out = v.optional(raw, "", "out", str, None, "must be a path string")
    table = raw.get(kind, {})
    if not isinstance(table, dict):
        v.fail(kind, "must be a table of parameters")
        table = {}
    params = _validate_params(kind, table, v)
    v.raise_if_failed()
    return {"kind": kind, "seed": seed, "workers": workers, "out": out,
            "params": params}


def _parse_spec(parser, spec, v: _Validator, path: str):
    if spec is None:
        return None
    try:
        return parser(spec)
    except ConfigurationError as exc:
        v.fail(path, str(exc))
    except Exception as exc:  # DomainError from distribution params, etc.
        v.fail(path, str(exc))
    return None


def _validate_params(kind: str, table: dict, v: _Validator) -> dict:
    p = {}
    if kind == "sample":
        spec = v.require(table, "sample", "target", str, "must be a target spec string")
        p["target"] = _parse_spec(parse_target, spec, v, "sample.target")
        p["steps"] = _positive_int(
            v.optional(table, "sample", "steps", int, 200, "must be an integer"),
            v, "sample.steps")
        p["runs"] = _positive_int(
            v.optional(table, "sample", "runs", int, 100_000, "must be an integer"),
            v, "sample.runs")
    elif kind == "unbiased":
        x0 = _vector(table, "unbiased", "x0", v, default=[1.0])
        p["x0"] = x0
        spec = v.require(table, "unbiased", "drift", str, "must be a drift spec string")
        p["drift"] = _parse_spec(lambda s: parse_drift(s, dim=len(x0)), spec,
                                 v, "unbiased.drift")
        gspec = v.require(table, "unbiased", "g", str, "must be an observable spec")
        p["g"] = _parse_spec(parse_g, gspec, v, "unbiased.g")
        mspec = v.require(table, "unbiased", "mesh", str, "must be a mesh spec")
        p["mesh"] = _parse_spec(parse_mesh, mspec, v, "unbiased.mesh")
        p["runs"] = _positive_int(
            v.optional(table, "unbiased", "runs", int, 100_000, "must be an integer"),
            v, "unbiased.runs")
        if p["drift"] is not None and p["x0"] is not None \
                and p["drift"].dim != len(p["x0"]):
            v.fail("unbiased.x0", f"dim {len(p['x0'])} does not match drift "
                                  f"dim {p['drift'].dim}")
    elif kind == "mgf":
        mspec = v.require(table, "mgf", "mesh", str, "must be a mesh spec")
        p["mesh"] = _parse_spec(parse_mesh, mspec, v, "mgf.mesh")
        theta = v.require(table, "mgf", "theta", float, "must be a number")
        if theta is not None and theta < 0:
            v.fail("mgf.theta", f"must be >= 0, got {theta}")
        p["theta"] = theta
        p["runs"] = _positive_int(
            v.optional(table, "mgf", "runs", int, 100_000, "must be an integer"),
            v, "mgf.runs")
    elif kind == "variance-sweep":
        dims = table.get("dims", [1, 2, 4])
        if not (isinstance(dims, list) and dims
                and all(isinstance(x, int) and x >= 1 for x in dims)):
            v.fail("variance-sweep.dims", "must be a list of positive integers")
            dims = []
        p["dims"] = dims
        horizon = v.optional(table, "variance-sweep", "T", float, 1.5,
                             "must be a number")
        p["uniform"] = _parse_spec(uniform_interrenewal, horizon, v,
                                   "variance-sweep.T")
        p["theta"] = v.optional(table, "variance-sweep", "theta", float, 1.0,
                                "must be a number")
        gspec = v.optional(table, "variance-sweep", "g", str, "x",
                           "must be an observable spec")
        p["g"] = _parse_spec(parse_g, gspec, v, "variance-sweep.g")
        p["runs"] = _positive_int(
            v.optional(table, "variance-sweep", "runs", int, 200_000,
                       "must be an integer"),
            v, "variance-sweep.runs")
    elif kind == "kl":
        pspec = v.require(table, "kl", "drift_p", str, "must be a drift spec")
        qspec = v.require(table, "kl", "drift_q", str, "must be a drift spec")
        drift_p = _parse_spec(lambda s: parse_drift(s, dim=None), pspec, v,
                              "kl.drift_p")
        p["drift_p"] = drift_p
        dim = drift_p.dim if drift_p is not None else 1
        p["drift_q"] = _parse_spec(lambda s: parse_drift(s, dim=dim), qspec,
                                   v, "kl.drift_q")
        p["x0"] = _vector(table, "kl", "x0", v, default=[0.0] * dim)
        p["steps"] = _positive_int(
            v.optional(table, "kl", "steps", int, 200, "must be an integer"),
            v, "kl.steps")
        p["runs"] = _positive_int(
            v.optional(table, "kl", "runs", int, 10_000, "must be an integer"),
            v, "kl.runs")
    elif kind == "vi":
        y = _vector(table, "vi", "y", v, default=[0.0])
        p["y"] = y
        p["x0"] = _vector(table, "vi", "x0", v, default=[0.0] * len(y))
        base_spec = v.optional(table, "vi", "base", str, "zero",
                               "must be a drift spec")
        base = _parse_spec(lambda s: parse_drift(s, dim=len(y)), base_spec, v,
                           "vi.base")
        p["base"] = base
        cspec = v.require(table, "vi", "control", str, "must be a control spec")
        if base is not None:
            p["control"] = _parse_spec(lambda s: parse_control(s, base),
                                       cspec, v, "vi.control")
        p["steps"] = _positive_int(
            v.optional(table, "vi", "steps", int, 200, "must be an integer"),
            v, "vi.steps")
        p["runs"] = _positive_int(
            v.optional(table, "vi", "runs", int, 100_000, "must be an integer"),
            v, "vi.runs")
    elif kind == "cloud":
        spec = v.require(table, "cloud", "target", str, "must be a target spec")
        p["target"] = _parse_spec(parse_target, spec, v, "cloud.target")
        eps = v.require(table, "cloud", "eps", float, "must be a number")
        if eps is not None and eps <= 0:
            v.fail("cloud.eps", f"must be > 0, got {eps}")
        p["eps"] = eps
        radius = v.require(table, "cloud", "radius", float, "must be a number")
        if radius is not None and radius <= 0:
            v.fail("cloud.radius", f"must be > 0, got {radius}")
        p["radius"] = radius
        p["resolution"] = _positive_int(
            v.optional(table, "cloud", "resolution", int, 9,
                       "must be an integer"),
            v, "cloud.resolution")
        retries = v.optional(table, "cloud", "retries", int, 6,
                             "must be an integer")
        if retries is not None and retries < 0:
            v.fail("cloud.retries", f"must be >= 0, got {retries}")
        p["retries"] = retries
        if p["target"] is not None and not p["target"].has_analytic_semigroup:
            v.fail("cloud.target",
                   "cloud validation needs an analytic-oracle target "
                   "(gauss or mix)")
    elif kind == "check":
        scale = v.optional(table, "check", "scale", str, "reduced",
                           "must be 'reduced' or 'full'")
        if scale not in ("reduced", "full"):
            v.fail("check.scale", f"must be 'reduced' or 'full', got {scale!r}")
        p["scale"] = scale
    return p


# -- experiment bodies ---------------------------------------------------------


def _prov(seed) -> list:
    return [seed, BUILD_ID, RNG_METHOD_TAG]


def _run_sample(params, seed, workers) -> ExperimentResult:
    target = params["target"]
    drift = follmer_drift(target)
    d = target.dim
    x = simulate_terminal_batch(drift, params["steps"], np.zeros(d),
                                params["runs"], seed, workers)
    if not np.isfinite(x).all():
        raise NumericalFailureError("sampler produced non-finite states")
    mean_true = (target.weights[:, None] * target.means).sum(axis=0)
    second = np.eye(d) + (target.weights[:, None, None]
                          * target.means[:, :, None]
                          * target.means[:, None, :]).sum(axis=0)
    cov_true = second - np.outer(mean_true, mean_true)

    n = x.shape[0]
    mean_est = x.mean(axis=0)
    se_mean = x.std(axis=0, ddof=1) / math.sqrt(n)
    dev = x - mean_est
    cov_est = (dev.T @ dev) / (n - 1)

    header = ["stat", "i", "j", "estimate", "stderr", "analytic",
              "abs_err", "n_sigmas"] + _PROVENANCE
    rows = []
    for i in range(d):
        err = abs(mean_est[i] - mean_true[i])
        sig = err / se_mean[i] if se_mean[i] > 0 else math.inf
        rows.append(["mean", i, None, float(mean_est[i]), float(se_mean[i]),
                     float(mean_true[i]), float(err), float(sig)]
                    + _prov(seed))
    for i in range(d):
        for j in range(i, d):
            se = math.sqrt(max(float(np.mean(dev[:, i] ** 2 * dev[:, j] ** 2)
                                     - cov_est[i, j] ** 2), 0.0) / n)
            err = abs(cov_est[i, j] - cov_true[i, j])
            sig = err / se if se > 0 else math.inf
            rows.append(["cov", i, j, float(cov_est[i, j]), se,
                         float(cov_true[i, j]), float(err), float(sig)]
                        + _prov(seed))
    return ExperimentResult("sample", header, rows)


def _run_unbiased(params, seed, workers) -> ExperimentResult:
    report = variance_report(params["drift"], params["g"], params["mesh"],
                             params["x0"], params["runs"], seed, workers)
    header = ["dist", "theta_eff", "runs", "mean", "var", "stderr", "bound",
              "bound_valid", "seed", "build", "rng"]
    return ExperimentResult("unbiased", header,
                            [report.row() + [BUILD_ID, RNG_METHOD_TAG]])


def _run_mgf(params, seed, workers) -> ExperimentResult:
    dist, theta = params["mesh"], params["theta"]
    stats = empirical_mgf(dist, theta, params["runs"], seed, workers)
    if dist.kind == "exponential":
        reference, ref_kind = math.exp(dist.rate * math.expm1(theta)), "closed-form"
    else:
        reference, ref_kind = mgf_bound(dist, theta), "bound"
    header = ["dist", "theta", "runs", "empirical", "stderr", "reference",
              "reference_kind"] + _PROVENANCE
    row = [dist.name, theta, stats.count, stats.mean, stats.stderr,
           reference, ref_kind] + _prov(seed)
    return ExperimentResult("mgf", header, [row])


def _variance_stderr(psi: np.ndarray) -> float:
    n = psi.size
    if n < 4:
        return math.inf
    mean = psi.mean()
    dev = psi - mean
    s2 = float(dev @ dev) / (n - 1)
    m4 = float(np.mean(dev ** 4))
    var_of_var = (m4 - s2 * s2 * (n - 3) / (n - 1)) / n
    return math.sqrt(max(var_of_var, 0.0))


def _run_variance_sweep(params, seed, workers) -> ExperimentResult:
    from .fields import ou_drift

    header = ["dim", "dist", "theta_eff", "runs", "mean", "var", "stderr",
              "bound", "bound_valid", "var_stderr", "mean_interior",
              "seed", "build", "rng"]
    rows = []
    uniform = params["uniform"]
    g = params["g"]
    for d in params["dims"]:
        drift = ou_drift(params["theta"], d)
        x0 = np.ones(d)
        for dist in (uniform, matched_exponential(uniform)):
            batch = estimator_batch(drift, g, dist, x0, params["runs"], seed,
                                    workers)
            psi = batch[g.name]
            report = variance_report(drift, g, dist, x0, params["runs"],
                                     seed, samples=psi)
            rows.append([d] + report.row()[:-1]
                        + [_variance_stderr(psi),
                           float(batch["n_interior"].mean()),
                           seed, BUILD_ID, RNG_METHOD_TAG])
    return ExperimentResult("variance-sweep", header, rows)


def _run_kl(params, seed, workers) -> ExperimentResult:
    stats = girsanov_kl(params["drift_p"], params["drift_q"], params["x0"],
                        params["steps"], params["runs"], seed, workers)
    header = ["drift_p", "drift_q", "steps", "runs", "estimate",
              "stderr"] + _PROVENANCE
    row = [params["drift_p"].name, params["drift_q"].name, params["steps"],
           stats.count, stats.mean, stats.stderr] + _prov(seed)
    return ExperimentResult("kl", header, [row])


def _run_vi(params, seed, workers) -> ExperimentResult:
    base, control = params["base"], params["control"]
    y = np.asarray(params["y"])
    obs = ObservationModel(dim=base.dim)
    stats = free_energy(control, base, obs, y, params["x0"], params["steps"],
                        params["runs"], seed, workers)
    if base.name == "zero":
        exact = exact_nll_gaussian(obs, y, params["x0"])
        gap = stats.mean - exact
    else:
        exact, gap = None, None
    header = ["control", "y", "F_estimate", "stderr", "exact_nll",
              "gap"] + _PROVENANCE
    row = [control.name, ",".join(repr(float(v)) for v in y), stats.mean,
           stats.stderr, exact, gap] + _prov(seed)
    return ExperimentResult("vi", header, [row])


def _run_cloud(params, seed, workers) -> ExperimentResult:
    target = params["target"]
    cloud = build_point_cloud(target, params["eps"], params["radius"], seed,
                              params["resolution"],
                              max_retries=params["retries"])
    val_err, grad_err = cloud_sup_error(cloud, target, params["radius"],
                                        params["resolution"])
    header = ["target", "eps", "radius", "n_points", "sup_value_err",
              "sup_grad_err", "radius_bound", "radius_limit"] + _PROVENANCE
    row = [target.name, params["eps"], params["radius"], cloud.n_points,
           val_err, grad_err, cloud.radius_bound,
           cloud_radius_limit(cloud.n_points, target.dim)] + _prov(seed)
    return ExperimentResult("cloud", header, [row], cloud=cloud)


def _run_check(params, seed, workers) -> ExperimentResult:
    from .checks import run_all
    outcomes = run_all(seed, params["scale"], workers=workers)
    header = ["criterion", "passed", "detail"] + _PROVENANCE
    rows = [[o.name, o.passed, o.detail] + _prov(seed) for o in outcomes]
    failures = sum(1 for o in outcomes if not o.passed)
    return ExperimentResult("check", header, rows, failures=failures,
                            check_lines=[o.line() for o in outcomes])


_RUNNERS = {
    "sample": _run_sample,
    "unbiased": _run_unbiased,
    "mgf": _run_mgf,
    "variance-sweep": _run_variance_sweep,
    "kl": _run_kl,
    "vi": _run_vi,
    "cloud": _run_cloud,
    "check": _run_check,
}


def run_experiment(config: dict) -> ExperimentResult:
    """Validate a raw config mapping, dispatch, and return the result."""
    normalized = validate_config(config)
    runner = _RUNNERS[normalized["kind"]]
    return runner(normalized["params"], normalized["seed"],
                  normalized["workers"])
