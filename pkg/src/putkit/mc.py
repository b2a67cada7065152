"""Monte Carlo checks of the leakage-density concentration step.

Blocks of ``k`` i.i.d. pairs ``(U, Z) ~ P_U x P_Z|U`` are drawn by
inverse-CDF sampling on the flattened joint table. Work is split into
fixed-size chunks, each with its own PCG64 stream spawned from
``SeedSequence(seed)``, so results depend only on the seed and never on
the number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _ascent
from .bound import berry_esseen_margin
from ._info import mi_joint
from .prob import as_conditional, as_finite, density_moments

BLOCKS_PER_CHUNK = 1000
SAMPLES_PER_CHUNK = 1_000_000


@dataclass(frozen=True)
class McConfig:
    k: int
    n_blocks: int
    seed: int = 0
    delta: float = 0.1

    def __post_init__(self):
        for name in ("k", "n_blocks"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.seed) != self.seed or self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be an integer in [0, 2^64), got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class McReport:
    empirical_tail: float
    threshold: float
    std_error: float
    passed: bool
    exceedances: int
    n_blocks: int
    k: int
    delta: float

    def to_dict(self):
        return asdict(self)


def _joint_table(p_u, p_z_given_u):
    p = as_finite(p_u).probs
    w = as_conditional(p_z_given_u).matrix
    if w.shape[0] != p.size:
        raise ValueError(f"P_U has {p.size} symbols but the mechanism has {w.shape[0]} rows")
    return p[:, None] * w


def _density_cells(p_u, p_z_given_u):
    """Information density of every (u, z) cell, row-major; cells with zero mass get 0."""
    joint = _joint_table(p_u, p_z_given_u)
    w = as_conditional(p_z_given_u).matrix
    p_z = joint.sum(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(joint > 0, np.log(w) - np.log(p_z)[None, :], 0.0)
    return joint.ravel(), dens.ravel()


def sample_cells(rng, cdf, n):
    """``n`` cell indices by inverse CDF; a draw on a boundary goes to the lower-index cell.

    Draws are taken in (0, 1] and cell ``i`` owns ``(cdf[i-1], cdf[i]]``, so
    cells with zero mass are never selected.
    """
    idx = np.searchsorted(cdf, 1.0 - rng.random(n), side="left")
    return np.minimum(idx, len(cdf) - 1)


def _cdf(probs):
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return cdf


def simulate_density_tail(p_u, p_z_given_u, cfg: McConfig) -> McReport:
    """Fraction of blocks whose summed density exceeds ``k I + sqrt(k) margin(delta)``.

    The check passes when that fraction is at most ``delta`` plus three
    standard errors.

    Raises
    ------
    VacuousBound
        When the Berry-Esseen margin is undefined at ``(delta, k)``.
    """
    info, _, _ = density_moments(p_u, p_z_given_u)
    margin = berry_esseen_margin(p_u, p_z_given_u, cfg.delta, cfg.k)
    threshold = cfg.k * info + math.sqrt(cfg.k) * margin
    probs, dens = _density_cells(p_u, p_z_given_u)
    cdf = _cdf(probs)
    # rounding slack so that a constant density equal to its mean never "exceeds"
    slack = 1e-9 * cfg.k * max(1.0, float(np.abs(dens).max()))

    n_chunks = -(-cfg.n_blocks // BLOCKS_PER_CHUNK)
    streams = np.random.SeedSequence(cfg.seed).spawn(n_chunks)

    def chunk(i):
        rng = np.random.Generator(np.random.PCG64(streams[i]))
        m = min(BLOCKS_PER_CHUNK, cfg.n_blocks - i * BLOCKS_PER_CHUNK)
        total = np.zeros(m)
        # bound memory: draw at most SAMPLES_PER_CHUNK pairs at a time
        step = max(1, SAMPLES_PER_CHUNK // m)
        for start in range(0, cfg.k, step):
            n = min(step, cfg.k - start)
            cells = sample_cells(rng, cdf, m * n).reshape(m, n)
            total += dens[cells].sum(1)
        return int(np.count_nonzero(total > threshold + slack))

    count = sum(_ascent.run_all(chunk, range(n_chunks)))
    tail = count / cfg.n_blocks
    se = math.sqrt(tail * (1.0 - tail) / cfg.n_blocks)
    return McReport(tail, threshold, se, bool(tail <= cfg.delta + 3.0 * se), count,
                    cfg.n_blocks, cfg.k, float(cfg.delta))


def empirical_leakage(p_u, p_z_given_u, n_samples: int, seed: int = 0) -> float:
    """Plug-in mutual information of ``n_samples`` simulated (U, Z) pairs."""
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    joint = _joint_table(p_u, p_z_given_u)
    cdf = _cdf(joint.ravel())
    n_chunks = -(-int(n_samples) // SAMPLES_PER_CHUNK)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)

    def chunk(i):
        rng = np.random.Generator(np.random.PCG64(streams[i]))
        n = min(SAMPLES_PER_CHUNK, int(n_samples) - i * SAMPLES_PER_CHUNK)
        return np.bincount(sample_cells(rng, cdf, n), minlength=joint.size)

    counts = sum(_ascent.run_all(chunk, range(n_chunks))).reshape(joint.shape)
    return mi_joint(counts / counts.sum())
