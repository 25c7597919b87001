"""Euler–Maruyama simulation with reproducible counter-based randomness.

Every Monte Carlo run owns a private random stream identified by
``(master_seed, stream_index)``; streams are Philox(4x64) keyed directly by
that pair, so draws depend only on the pair and never on execution order or
worker count.  Batched simulation consumes each run's stream exactly as a
single-run simulation would, which makes batch and single-run trajectories
bit-identical.

Draw conventions (fixed per release, recorded in output metadata):
Gaussians come from numpy's ziggurat ``standard_normal``; interrenewal
times elsewhere in the package are inverse-CDF transforms of ``random()``
uniforms clamped to ``[1e-12, 1)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .fields import DriftField
from .stats import map_chunks

RNG_METHOD_TAG = "philox4x64-10/ziggurat-normals/invcdf-interrenewals"

# Lower clamp for uniforms fed to inverse-CDF transforms: keeps interrenewal
# draws strictly positive so mesh times stay strictly increasing.
UNIFORM_LO = 1e-12

# Fixed run-chunk size for batched path simulation.  A constant of the
# release: worker counts change who computes a chunk, never its boundaries.
PATH_CHUNK_RUNS = 8192


def _philox_key(master_seed: int, stream_index: int) -> np.ndarray:
    return np.array([int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                     int(stream_index) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)


@dataclass(frozen=True)
class RngStream:
    """A named random stream: (master_seed, stream_index) -> Philox key.

    Distinct stream indices give statistically independent streams; equal
    pairs reproduce identical draws.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(key=_philox_key(self.master_seed,
                                             self.stream_index)))


class StreamBatch:
    """Fast per-run stream access for batched simulation.

    Reuses one Philox bit generator and reassigns its key per run, which is
    bit-identical to constructing a fresh ``RngStream(seed, r).generator()``
    (verified by test) at a fraction of the cost.
    """

    def __init__(self, master_seed: int):
        self._seed = master_seed
        self._bg = np.random.Philox(key=_philox_key(master_seed, 0))
        self._gen = np.random.Generator(self._bg)
        self._template = self._bg.state

    def generator(self, stream_index: int) -> np.random.Generator:
        st = self._template
        st["state"]["key"] = _philox_key(self._seed, stream_index)
        st["state"]["counter"] = np.zeros(4, dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bg.state = st
        return self._gen


@dataclass(frozen=True)
class PathSample:
    """One discretized trajectory with the noise that generated it.

    Satisfies the reconstruction identity
    ``states[k+1] == states[k] + drift_evals[k]*(times[k+1]-times[k])
    + brownian_increments[k]`` exactly, because states are produced by that
    very expression.
    """

    times: np.ndarray               # (K+1,)
    states: np.ndarray              # (K+1, d)
    brownian_increments: np.ndarray  # (K, d)
    drift_evals: np.ndarray | None = None  # (K, d)

    def __post_init__(self):
        k = self.times.shape[0] - 1
        if self.states.shape[0] != k + 1 or self.brownian_increments.shape[0] != k:
            raise ConfigurationError("path arrays have inconsistent lengths")
        for arr in (self.times, self.states, self.brownian_increments,
                    self.drift_evals):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1


def _check_partition(partition) -> np.ndarray:
    t = np.array(partition, dtype=float)
    if t.ndim != 1 or t.shape[0] < 2:
        raise DomainError("partition needs at least two points")
    if t[0] != 0.0 or t[-1] != 1.0:
        raise DomainError("partition must start at 0 and end at 1")
    if not np.all(np.diff(t) > 0):
        raise DomainError("partition must be strictly increasing")
    return t


def euler_maruyama(drift: DriftField, partition, x0, rng: RngStream) -> PathSample:
    """Simulate one trajectory of ``dX = b(X,t) dt + dW`` on a partition.

    Parameters
    ----------
    drift : DriftField
        Drift field b.
    partition : array-like
        Strictly increasing times, starting at 0 and ending at 1.
    x0 : array-like
        Initial state, shape (d,).
    rng : RngStream
        Private stream for this trajectory's Brownian increments.

    Returns
    -------
    PathSample
        Times, states, Brownian increments, and per-step drift evaluations.
    """
    t = _check_partition(partition)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != drift.dim:
        raise ConfigurationError(
            f"x0 has dim {x0.shape[0]}, drift expects {drift.dim}")
    k_steps = t.shape[0] - 1
    d = drift.dim
    gen = rng.generator()
    z = gen.standard_normal((k_steps, d))
    dt = np.diff(t)
    dw = z * np.sqrt(dt)[:, None]

    states = np.empty((k_steps + 1, d))
    evals = np.empty((k_steps, d))
    states[0] = x0
    x = x0
    for k in range(k_steps):
        b = drift.fn(x[None, :], t[k])[0]
        evals[k] = b
        x = x + b * dt[k] + dw[k]
        states[k + 1] = x
    return PathSample(times=t, states=states, brownian_increments=dw,
                      drift_evals=evals)


def simulate_terminal_batch(drift: DriftField, n_steps: int, x0,
                            n_runs: int, master_seed: int,
                            workers: int = 1) -> np.ndarray:
    """Terminal states of ``n_runs`` independent trajectories.

    Run ``r`` (1-based) draws from stream ``(master_seed, r)``; the output
    row order follows the run index for every worker count, and each row is
    bit-identical to ``euler_maruyama`` on the uniform ``n_steps`` partition
    with the same stream.
    """
    if n_steps < 1 or n_runs < 1:
        raise DomainError("n_steps and n_runs must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != drift.dim:
        raise ConfigurationError(
            f"x0 has dim {x0.shape[0]}, drift expects {drift.dim}")
    t = np.linspace(0.0, 1.0, n_steps + 1)
    dt = np.diff(t)
    d = drift.dim

    def chunk(start, stop):
        c = stop - start
        streams = StreamBatch(master_seed)
        z = np.empty((c, n_steps * d))
        for i in range(c):
            streams.generator(start + i + 1).standard_normal(out=z[i])
        z = z.reshape(c, n_steps, d)
        x = np.broadcast_to(x0, (c, d)).copy()
        sqdt = np.sqrt(dt)
        for k in range(n_steps):
            b = drift.fn(x, t[k])
            x = x + b * dt[k] + z[:, k, :] * sqdt[k]
        return x

    bounds = [(s, min(s + PATH_CHUNK_RUNS, n_runs))
              for s in range(0, n_runs, PATH_CHUNK_RUNS)]
    parts = map_chunks(chunk, bounds, workers)
    return np.concatenate(parts, axis=0)


def path_to_csv(path: PathSample, fileobj: io.TextIOBase) -> None:
    """Write a trajectory as CSV rows ``t, x_*, dW_*``.

    Row k holds state X_{t_k}; the dW columns of row k hold the increment
    that produced it (zeros in row 0).
    """
    d = path.dim
    header = (["t"] + [f"x_{i}" for i in range(d)]
              + [f"dW_{i}" for i in range(d)])
    fileobj.write(",".join(header) + "\n")
    for k in range(path.n_steps + 1):
        dw = np.zeros(d) if k == 0 else path.brownian_increments[k - 1]
        cells = [repr(float(path.times[k]))]
        cells += [repr(float(v)) for v in path.states[k]]
        cells += [repr(float(v)) for v in dw]
        fileobj.write(",".join(cells) + "\n")
