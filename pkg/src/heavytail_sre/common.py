"""Shared result containers, error types, and RNG stream derivation."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

# Two-sided 95% normal quantile, used for every confidence interval.
Z95 = 1.959963984540054

# Relative change under sample doubling below which a Monte Carlo mean is
# considered stabilized.  A heuristic, not a proof of finiteness.
STABLE_REL_CHANGE = 0.05


class ConfigurationError(ValueError):
    """Invalid model parameters or run configuration."""


class TailIndexError(RuntimeError):
    """The moment equation kappa(s) = 1 has no admissible positive root."""


class NonContractiveError(RuntimeError):
    """A simulation was requested for a model without negative log drift."""


class DivergenceError(RuntimeError):
    """A simulated trajectory left the representable range."""

    def __init__(self, message: str, step: int | None = None, chain: int | None = None):
        super().__init__(message)
        self.step = step
        self.chain = chain


class LadderError(ValueError):
    """A threshold ladder leaves too few exceedances to estimate from."""


class AmbiguousPartitionError(RuntimeError):
    """Sample-path and moment evidence disagree about coordinate blocks."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class TauHeavinessError(RuntimeError):
    """A weight function has no finite moment at the smallest probed exponent."""


@dataclasses.dataclass(frozen=True)
class Estimate:
    """Point estimate with a two-sided 95% confidence interval.

    Closed-form values carry a degenerate interval (ci_lo == ci_hi == value)
    and n == 0.  ``method`` is "closed-form" or "monte-carlo"; ``flag``
    records soft diagnostics such as "possibly-infinite" or "unstable".
    """

    value: float
    ci_lo: float
    ci_hi: float
    n: int
    method: str
    flag: str | None = None

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_hi - self.ci_lo)

    def contains(self, x: float) -> bool:
        return self.ci_lo <= x <= self.ci_hi

    def to_dict(self) -> dict:
        out = {
            "value": float(self.value),
            "ci_lo": float(self.ci_lo),
            "ci_hi": float(self.ci_hi),
            "n": int(self.n),
            "method": self.method,
        }
        if self.flag is not None:
            out["flag"] = self.flag
        return out


def exact(value: float, flag: str | None = None) -> Estimate:
    """Wrap a closed-form value as a degenerate Estimate."""
    v = float(value)
    return Estimate(v, v, v, 0, "closed-form", flag)


def mean_estimate(samples: np.ndarray, flag: str | None = None) -> Estimate:
    """Sample mean with a normal-approximation interval."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    m = float(x.mean())
    if not math.isfinite(m):
        return Estimate(m, m, m, x.size, "monte-carlo", flag or "possibly-infinite")
    hw = Z95 * float(x.std()) / math.sqrt(x.size)
    return Estimate(m, m - hw, m + hw, x.size, "monte-carlo", flag)


def doubling_change(samples: np.ndarray) -> float:
    """Relative change of the sample mean when the sample doubles.

    Compares the mean over the first half against the mean over the whole
    array.  Returns inf when either mean is not finite.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    half = float(x[: x.size // 2].mean())
    full = float(x.mean())
    if not (math.isfinite(half) and math.isfinite(full)):
        return math.inf
    scale = max(abs(full), abs(half))
    if scale == 0.0:
        return 0.0
    return abs(full - half) / scale


def binomial_ci(k: int, n: int) -> Estimate:
    """Normal-approximation interval for a binomial proportion.

    A zero count falls back to the rule-of-three upper bound so empty rungs
    still carry a usable one-sided bound.
    """
    if n <= 0:
        raise ValueError("need n > 0")
    p = k / n
    if k == 0:
        return Estimate(0.0, 0.0, min(1.0, 3.0 / n), n, "binomial", "rule-of-three")
    if k == n:
        return Estimate(1.0, max(0.0, 1.0 - 3.0 / n), 1.0, n, "binomial", "rule-of-three")
    hw = Z95 * math.sqrt(p * (1.0 - p) / n)
    return Estimate(p, max(0.0, p - hw), min(1.0, p + hw), n, "binomial")


# Spawn-key namespaces.  Chain streams, stage streams, and diagnostic
# streams must never collide for one master seed.
_NS_CHAIN = 0
_NS_STAGE = 1
_NS_DIAG = 2


def chain_stream(seed: int, chain: int) -> np.random.Generator:
    """Generator for one chain, derived from the master seed by chain index.

    The derivation depends only on (seed, chain), never on how chains are
    grouped into workers, so pooled output is invariant under the worker
    count.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_NS_CHAIN, int(chain)))
    return np.random.default_rng(ss)


def stage_stream(seed: int, stage_id: int) -> np.random.Generator:
    """Generator for one pipeline stage, independent of the chain streams."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_NS_STAGE, int(stage_id)))
    return np.random.default_rng(ss)


def diagnostic_stream(seed: int) -> np.random.Generator:
    """Generator reserved for internal validation draws (drift checks)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_NS_DIAG,))
    return np.random.default_rng(ss)
