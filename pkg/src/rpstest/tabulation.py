"""Monte Carlo null distributions and analytic-bootstrap quantile moments.

Simulation draws ``N`` uniform samples of size ``n``, evaluates a statistic on
each and keeps the sorted results.  Trials are split into chunks; chunk ``c``
for sample size ``n`` always uses the Philox stream keyed by
``(seed, n, c)``, so the output does not depend on how many worker
processes evaluate the chunks.

The quantile at ``p = k/N`` is then estimated by its infinite-resample
bootstrap mean and standard deviation: the ``k``-th smallest of ``N``
resampled values is ``x_i`` with probability ``pi_{k,i}``, the mass a
``Beta(k, N+1-k)`` variate puts on ``((i-1)/N, i/N]``.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from rpstest.batch import STATISTIC_CODES, STATISTICS, batch_statistic
from rpstest.special import beta_cdf, beta_sf

MIN_TRIALS = 1000
DEFAULT_CHUNK_SIZE = 50_000
WEIGHT_FLOOR = 1e-16

SIM_MAGIC = b"RPSTSIM\x00"
SIM_VERSION = 1
# magic, version, statistic code, n, N, seed, chunk count, reserved
_HEADER = struct.Struct("<8sHHIQQII")

_CODE_TO_STAT = {code: name for name, code in STATISTIC_CODES.items()}


class SimulationError(RuntimeError):
    """Simulation stopped early; ``completed`` holds the finished chunks."""

    def __init__(self, message: str, completed: list[np.ndarray]):
        super().__init__(message)
        self.completed = completed


@dataclass
class SimulationSet:
    statistic: str
    n: int
    N: int
    seed: int
    chunks: int
    sorted_values: np.ndarray = field(repr=False)

    def header(self) -> dict:
        return {
            "statistic": self.statistic,
            "n": self.n,
            "N": self.N,
            "seed": self.seed,
            "chunks": self.chunks,
        }


@dataclass
class QuantileMoments:
    statistic: str
    n: int
    N: int
    k: np.ndarray
    p_grid: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }


def default_chunks(N: int) -> int:
    return max(1, math.ceil(N / DEFAULT_CHUNK_SIZE))


def _chunk_bounds(N: int, chunks: int) -> list[tuple[int, int]]:
    size = math.ceil(N / chunks)
    return [(c * size, min(N, (c + 1) * size)) for c in range(chunks) if c * size < N]


def chunk_generator(seed: int, n: int, chunk: int) -> np.random.Generator:
    """Independent Philox stream for one chunk of trials."""
    ss = np.random.SeedSequence(seed, spawn_key=(n, chunk))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_chunk(args) -> np.ndarray:
    statistic, n, seed, chunk, size = args
    rng = chunk_generator(seed, n, chunk)
    u = np.sort(rng.random((size, n)), axis=1)
    return batch_statistic(statistic, u)


def simulate(
    statistic: str,
    n: int,
    N: int,
    seed: int,
    chunks: int | None = None,
    workers: int = 1,
) -> SimulationSet:
    """Sorted values of `statistic` over `N` uniform samples of size `n`."""
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    if N < MIN_TRIALS:
        raise ValueError(f"N={N} is below the minimum of {MIN_TRIALS} trials")
    if n < 1:
        raise ValueError("n must be at least 1")
    chunks = default_chunks(N) if chunks is None else int(chunks)
    bounds = _chunk_bounds(N, chunks)
    tasks = [(statistic, n, seed, c, hi - lo) for c, (lo, hi) in enumerate(bounds)]
    done: list[np.ndarray] = []
    try:
        if workers > 1:
            # spawn: forking after the OpenMP runtime has started is unsafe
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                for values in pool.map(_simulate_chunk, tasks):
                    done.append(values)
        else:
            for task in tasks:
                done.append(_simulate_chunk(task))
    except MemoryError as exc:
        raise SimulationError(
            f"out of memory after {len(done)} of {len(tasks)} chunks", done
        ) from exc
    values = np.sort(np.concatenate(done))
    return SimulationSet(statistic, n, N, seed, chunks, values)


def save_simulation(path, sim: SimulationSet) -> None:
    """Write a checkpoint: fixed little-endian header followed by float64 values."""
    header = _HEADER.pack(
        SIM_MAGIC,
        SIM_VERSION,
        STATISTIC_CODES[sim.statistic],
        sim.n,
        sim.N,
        sim.seed,
        sim.chunks,
        0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(sim.sorted_values, dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, code, n, N, seed, chunks, _ = _HEADER.unpack(raw)
    if magic != SIM_MAGIC:
        raise ValueError(f"{path}: not a simulation checkpoint")
    if version != SIM_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if code not in _CODE_TO_STAT:
        raise ValueError(f"{path}: unknown statistic code {code}")
    return {
        "statistic": _CODE_TO_STAT[code],
        "n": n,
        "N": N,
        "seed": seed,
        "chunks": chunks,
    }


def load_simulation(path) -> SimulationSet:
    h = read_header(path)
    values = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    if values.size != h["N"]:
        raise ValueError(f"{path}: expected {h['N']} values, found {values.size}")
    return SimulationSet(sorted_values=values.astype(np.float64), **h)


def order_statistic_weights(k: int, N: int, i: int) -> float:
    """Probability that the ``k``-th smallest of ``N`` resampled values is ``x_i``."""
    if not (1 <= k <= N and 1 <= i <= N):
        raise ValueError(f"indices out of range: k={k}, i={i}, N={N}")
    a, b = k, N + 1 - k
    return float(beta_cdf(a, b, i / N) - beta_cdf(a, b, (i - 1) / N))


@lru_cache(maxsize=4096)
def _window(k: int, N: int) -> tuple[int, np.ndarray]:
    a, b = float(k), float(N + 1 - k)
    mean = a / (a + b)
    sd_index = N * math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))
    half = int(math.ceil(12.0 * sd_index)) + 10
    while True:
        lo = max(1, k - half)
        hi = min(N, k + half)
        below = beta_cdf(a, b, (lo - 1) / N) if lo > 1 else 0.0
        above = beta_sf(a, b, hi / N) if hi < N else 0.0
        if (below < 0.1 * WEIGHT_FLOOR and above < 0.1 * WEIGHT_FLOOR) or (
            lo == 1 and hi == N
        ):
            break
        half *= 2
    edges = np.arange(lo - 1, hi + 1) / N
    cdf = beta_cdf(a, b, edges)
    sf = beta_sf(a, b, edges)
    # difference whichever tail is small at the segment's far edge
    w = np.where(edges[1:] <= mean, np.diff(cdf), -np.diff(sf))
    w[w < WEIGHT_FLOOR] = 0.0
    w /= w.sum()
    w.flags.writeable = False
    return lo, w


def order_statistic_window(k: int, N: int) -> tuple[int, np.ndarray]:
    """Non-negligible weights ``pi_{k,i}`` as ``(first index i, weights)``.

    Weights below 1e-16 are dropped and the rest renormalised to sum to one.
    Indices are 1-based, matching ``x_1 <= ... <= x_N``.
    """
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    return _window(int(k), int(N))


def snap_p_grid(p_grid, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Round quantiles to ``k/N``; returns the distinct ``k`` and exact ``k/N``."""
    p = np.asarray(p_grid, dtype=np.float64)
    k = np.unique(np.rint(p * N).astype(np.int64))
    if k[0] < 1 or k[-1] > N - 1:
        raise ValueError(
            f"quantiles outside [1/N, 1-1/N] are not estimable with N={N}"
        )
    return k, k / N


def bootstrap_moments(sim: SimulationSet, p_grid) -> QuantileMoments:
    """Analytic-bootstrap mean and standard deviation of each quantile."""
    k, p = snap_p_grid(p_grid, sim.N)
    x = sim.sorted_values
    mu = np.empty(k.size)
    sigma = np.empty(k.size)
    for j, kk in enumerate(k):
        lo, w = order_statistic_window(int(kk), sim.N)
        xs = x[lo - 1 : lo - 1 + w.size]
        m = float(np.dot(w, xs))
        mu[j] = m
        sigma[j] = math.sqrt(max(0.0, float(np.dot(w, (xs - m) ** 2))))
    return QuantileMoments(sim.statistic, sim.n, sim.N, k, p, mu, sigma)


def make_ngrid(count: int, n_min: int = 2, n_max: int = 1000) -> list[int]:
    """`count` distinct integers from `n_min` to `n_max`, close to log-spaced."""
    if count < 2:
        raise ValueError("count must be at least 2")
    if n_min < 1 or n_max <= n_min:
        raise ValueError("need 1 <= n_min < n_max")
    if count > n_max - n_min + 1:
        raise ValueError(f"cannot place {count} distinct values in [{n_min}, {n_max}]")
    out = [n_min]
    for i in range(1, count):
        remaining = count - i
        last = out[-1]
        nxt = round(last * (n_max / last) ** (1.0 / remaining))
        nxt = min(max(nxt, last + 1), n_max - (remaining - 1))
        out.append(int(nxt))
    return out


def default_p_grid(p_min: float = 1e-4, tail_points: int = 50, central_points: int = 19):
    """Log-spaced tails towards `p_min` and ``1 - p_min`` plus a linear centre."""
    lower = np.geomspace(p_min, 0.05, tail_points)
    central = np.linspace(0.05, 0.95, central_points + 2)[1:-1]
    upper = 1.0 - lower[::-1]
    return np.concatenate([lower, central, upper])


MOMENTS_VERSION = "1.0"


def save_moments(path, moments: list[QuantileMoments], seed: int) -> None:
    first = moments[0]
    doc = {
        "format_version": MOMENTS_VERSION,
        "statistic": first.statistic,
        "N": first.N,
        "seed": seed,
        "k": first.k.tolist(),
        "p_grid": first.p_grid.tolist(),
        "entries": [m.to_dict() for m in sorted(moments, key=lambda m: m.n)],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_moments(path) -> tuple[list[QuantileMoments], dict]:
    doc = json.loads(Path(path).read_text())
    major = str(doc.get("format_version", "")).split(".")[0]
    if major != MOMENTS_VERSION.split(".")[0]:
        raise ValueError(f"{path}: unsupported moments format {doc.get('format_version')}")
    k = np.asarray(doc["k"], dtype=np.int64)
    p = np.asarray(doc["p_grid"], dtype=np.float64)
    out = [
        QuantileMoments(
            doc["statistic"],
            int(e["n"]),
            int(doc["N"]),
            k,
            p,
            np.asarray(e["mu"], dtype=np.float64),
            np.asarray(e["sigma"], dtype=np.float64),
        )
        for e in doc["entries"]
    ]
    return out, doc


def checkpoint_name(statistic: str, n: int) -> str:
    return f"{statistic}_n{n:04d}.sim"


def moments_name(statistic: str) -> str:
    return f"moments_{statistic}.json"


def tabulate(
    statistic: str,
    n_values,
    N: int,
    seed: int,
    out_dir,
    p_grid=None,
    chunks: int | None = None,
    workers: int = 1,
    force: bool = False,
    log=None,
) -> list[QuantileMoments]:
    """Simulate and summarise every `n`, reusing matching checkpoints.

    An existing checkpoint whose header disagrees with the request is an
    error unless `force` is set.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p_grid = default_p_grid() if p_grid is None else p_grid
    chunks = default_chunks(N) if chunks is None else chunks
    moments = []
    for n in sorted(set(int(v) for v in n_values)):
        path = out_dir / checkpoint_name(statistic, n)
        wanted = {"statistic": statistic, "n": n, "N": N, "seed": seed, "chunks": chunks}
        sim = None
        if path.exists():
            try:
                have = read_header(path)
            except ValueError:
                have = None
            if have == wanted:
                sim = load_simulation(path)
            elif not force:
                raise FileExistsError(
                    f"{path} exists with header {have}, requested {wanted}; use --force"
                )
        if sim is None:
            if log:
                log(f"simulating {statistic} n={n} N={N}")
            sim = simulate(statistic, n, N, seed, chunks=chunks, workers=workers)
            save_simulation(path, sim)
        moments.append(bootstrap_moments(sim, p_grid))
    save_moments(out_dir / moments_name(statistic), moments, seed)
    return moments
