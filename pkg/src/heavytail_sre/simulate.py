"""Trajectory iteration and stationary sample pools.

A pool row records one transition of one chain: (x_pre, a, b, x_post) with
x_post = a * x_pre + b componentwise, where x_pre is the chain state just
before the step.  Coefficients are i.i.d. across steps, so x_pre is
independent of (a, b) within a row; several estimators rely on exactly
this independence and must use x_pre, never x_post.

Chain c draws from a generator derived from (master seed, c) alone.  The
pooled records are therefore a pure function of the arguments, independent
of worker count or chain batching, and a pool with more chains extends a
pool with fewer chains record for record.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .common import DivergenceError, NonContractiveError, chain_stream, diagnostic_stream
from .geometry import alpha_norm
from .model import LogMoment, ModelSpec, log_moment

POOL_SCHEMA = "pool-columnar-v1"
_FLOAT_GROUPS = ("x_pre", "a", "b", "x_post")

# Chain blocks are sized so the per-block coefficient draws stay around
# ~50 MB regardless of steps per chain.
_BLOCK_TARGET_FLOATS = 6_000_000


@dataclasses.dataclass
class SamplePool:
    """Columnar record pool with provenance metadata."""

    x_pre: np.ndarray
    a: np.ndarray
    b: np.ndarray
    x_post: np.ndarray
    chain: np.ndarray
    step: np.ndarray
    meta: dict

    def __len__(self) -> int:
        return self.x_post.shape[0]

    @property
    def d(self) -> int:
        return self.x_post.shape[1]

    def column_names(self) -> list[str]:
        names = ["chain", "step"]
        for group in _FLOAT_GROUPS:
            names.extend(f"{group}_{j}" for j in range(self.d))
        return names

    def select(self, index) -> "SamplePool":
        """Sub-pool at the given row mask or index array (copies)."""
        return SamplePool(
            self.x_pre[index],
            self.a[index],
            self.b[index],
            self.x_post[index],
            self.chain[index],
            self.step[index],
            dict(self.meta),
        )

    def save(self, bin_path, meta_path=None) -> None:
        """Write raw little-endian columns plus a JSON sidecar.

        Layout: chain and step as int64, then each float64 group
        coordinate by coordinate, every column contiguous.
        """
        bin_path = str(bin_path)
        meta_path = _sidecar_path(bin_path) if meta_path is None else str(meta_path)
        with open(bin_path, "wb") as fh:
            fh.write(np.ascontiguousarray(self.chain, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(self.step, dtype="<i8").tobytes())
            for group in _FLOAT_GROUPS:
                arr = getattr(self, group)
                for j in range(self.d):
                    fh.write(np.ascontiguousarray(arr[:, j], dtype="<f8").tobytes())
        doc = {
            "format": POOL_SCHEMA,
            "n_records": len(self),
            "d": self.d,
            "columns": self.column_names(),
            "byte_order": "little",
            "meta": self.meta,
        }
        with open(meta_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, bin_path, meta_path=None) -> "SamplePool":
        bin_path = str(bin_path)
        meta_path = _sidecar_path(bin_path) if meta_path is None else str(meta_path)
        with open(meta_path) as fh:
            doc = json.load(fh)
        if doc.get("format") != POOL_SCHEMA:
            raise ValueError(f"unsupported pool format {doc.get('format')!r}")
        n, d = int(doc["n_records"]), int(doc["d"])
        raw = np.fromfile(bin_path, dtype=np.uint8)
        expected = n * 8 * (2 + 4 * d)
        if raw.size != expected:
            raise ValueError(f"pool file has {raw.size} bytes, expected {expected}")
        off = 0

        def take(dtype):
            nonlocal off
            col = np.frombuffer(raw, dtype=dtype, count=n, offset=off).copy()
            off += n * 8
            return col

        chain = take("<i8")
        step = take("<i8")
        groups = {}
        for group in _FLOAT_GROUPS:
            cols = [take("<f8") for _ in range(d)]
            groups[group] = np.column_stack(cols) if d > 1 else cols[0].reshape(-1, 1)
        return cls(
            groups["x_pre"], groups["a"], groups["b"], groups["x_post"],
            chain, step, doc.get("meta", {}),
        )

    def to_csv(self, path) -> None:
        """RFC 4180 export (CRLF, header row, full float precision)."""
        data = np.column_stack(
            [self.chain.astype(float), self.step.astype(float)]
            + [getattr(self, g)[:, j] for g in _FLOAT_GROUPS for j in range(self.d)]
        )
        fmt = ["%d", "%d"] + ["%.17g"] * (4 * self.d)
        with open(path, "w", newline="") as fh:
            np.savetxt(
                fh, data, fmt=fmt, delimiter=",", newline="\r\n",
                header=",".join(self.column_names()), comments="",
            )


def _sidecar_path(bin_path: str) -> str:
    base = bin_path[:-4] if bin_path.endswith(".bin") else bin_path
    return base + ".meta.json"


def iterate(spec: ModelSpec, x0, n: int, rng: np.random.Generator) -> np.ndarray:
    """Run x_t = a_t * x_{t-1} + b_t for t = 1..n, returning the n states.

    All coefficients are drawn up front in one call, so a chain generator
    advanced here matches the pooled simulation step for step.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.d,):
        raise ValueError(f"x0 must have shape ({spec.d},)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if n < 1:
        raise ValueError("n must be positive")
    a, b = spec.sample_coeffs(rng, n)
    out = np.empty((n, spec.d))
    x = x0
    for t in range(n):
        # overflow here is the divergence being detected, not an anomaly
        with np.errstate(over="ignore", invalid="ignore"):
            x = a[t] * x + b[t]
        if not np.isfinite(x).all():
            raise DivergenceError(
                f"trajectory left the representable range at step {t + 1}", step=t + 1
            )
        out[t] = x
    return out


def default_burn_in(drifts) -> int:
    """ceil(20 / |median log drift|), at least 1.

    Coordinates with mass at A_j = 0 enter as a drift of -inf.
    """
    med = float(np.median(np.asarray(drifts, dtype=float)))
    if med == 0.0 or not med < 0.0:
        raise ValueError("burn-in default needs a negative median drift")
    if math.isinf(med):
        return 1
    return max(1, math.ceil(20.0 / abs(med)))


def drift_diagnostics(
    spec: ModelSpec, seed: int, n: int = 100_000
) -> tuple[LogMoment, ...]:
    """Per-coordinate log-drift checks on a dedicated diagnostic stream."""
    rng = diagnostic_stream(seed)
    return tuple(log_moment(spec, j, n=n, rng=rng) for j in range(spec.d))


def stationary_pool(
    spec: ModelSpec,
    seed: int,
    chains: int,
    n_per_chain: int,
    burn_in: int | None = None,
    thin: int = 10,
    x0=None,
    workers: int = 1,
    contractivity: tuple[LogMoment, ...] | None = None,
    drift_check_n: int = 100_000,
) -> SamplePool:
    """Simulate independent chains and pool their post-burn-in records.

    Record k of chain c is the transition at step t = burn_in + (k+1)*thin.
    Refuses to run unless every coordinate has a certified negative log
    drift (pass ``contractivity`` to reuse a previous check).  The default
    burn-in is ceil(20 / |median_j E log|A_j||).

    ``workers`` only batches the chain blocks across threads; the output
    is byte-identical for every value.
    """
    if chains < 1 or n_per_chain < 1 or thin < 1:
        raise ValueError("chains, n_per_chain, and thin must be positive")
    if workers < 1:
        raise ValueError("workers must be positive")
    d = spec.d
    if x0 is None:
        x0 = np.zeros(d)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of length {d}")

    diags = contractivity if contractivity is not None else drift_diagnostics(spec, seed, drift_check_n)
    if len(diags) != d:
        raise ValueError("contractivity diagnostics must cover every coordinate")
    bad = [j for j, lm in enumerate(diags) if not lm.contractive]
    if bad:
        raise NonContractiveError(
            f"negative log drift not certified for coordinates {bad}; refusing to simulate"
        )
    if burn_in is None:
        drifts = [
            -math.inf if lm.zero_mass > 0.0 else lm.mean_given_nonzero.value for lm in diags
        ]
        burn_in = default_burn_in(drifts)
    burn_in = int(burn_in)
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")

    steps = burn_in + n_per_chain * thin
    n_records = chains * n_per_chain
    x_pre = np.empty((n_records, d))
    a_rec = np.empty((n_records, d))
    b_rec = np.empty((n_records, d))
    x_post = np.empty((n_records, d))
    chain_col = np.empty(n_records, dtype=np.int64)
    step_col = np.empty(n_records, dtype=np.int64)

    block = max(1, min(chains, _BLOCK_TARGET_FLOATS // (steps * d) + 1))
    rec_steps = burn_in + thin * np.arange(1, n_per_chain + 1)

    def run_block(c0: int, nb: int) -> None:
        a_blk = np.empty((steps, nb, d))
        b_blk = np.empty((steps, nb, d))
        for c in range(nb):
            rng = chain_stream(seed, c0 + c)
            a_c, b_c = spec.sample_coeffs(rng, steps)
            a_blk[:, c, :] = a_c
            b_blk[:, c, :] = b_c
        xp = np.empty((n_per_chain, nb, d))
        ar = np.empty((n_per_chain, nb, d))
        br = np.empty((n_per_chain, nb, d))
        xq = np.empty((n_per_chain, nb, d))
        x = np.broadcast_to(x0, (nb, d)).copy()
        k = 0
        for i in range(steps):
            a_t = a_blk[i]
            b_t = b_blk[i]
            with np.errstate(over="ignore", invalid="ignore"):
                x_new = a_t * x + b_t
            if not np.isfinite(x_new).all():
                t = i + 1
                bad_chain = int(np.argwhere(~np.isfinite(x_new).all(axis=1))[0, 0])
                raise DivergenceError(
                    f"chain {c0 + bad_chain} left the representable range at step {t}",
                    step=t,
                    chain=c0 + bad_chain,
                )
            t = i + 1
            if t > burn_in and (t - burn_in) % thin == 0:
                xp[k] = x
                ar[k] = a_t
                br[k] = b_t
                xq[k] = x_new
                k += 1
            x = x_new
        lo, hi = c0 * n_per_chain, (c0 + nb) * n_per_chain
        x_pre[lo:hi] = xp.transpose(1, 0, 2).reshape(-1, d)
        a_rec[lo:hi] = ar.transpose(1, 0, 2).reshape(-1, d)
        b_rec[lo:hi] = br.transpose(1, 0, 2).reshape(-1, d)
        x_post[lo:hi] = xq.transpose(1, 0, 2).reshape(-1, d)
        chain_col[lo:hi] = np.repeat(np.arange(c0, c0 + nb, dtype=np.int64), n_per_chain)
        step_col[lo:hi] = np.tile(rec_steps.astype(np.int64), nb)

    jobs = [(c0, min(block, chains - c0)) for c0 in range(0, chains, block)]
    if workers == 1 or len(jobs) == 1:
        for c0, nb in jobs:
            run_block(c0, nb)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_block, c0, nb) for c0, nb in jobs]
            for fut in futures:
                fut.result()

    meta = {
        "burn_in": burn_in,
        "chains": chains,
        "d": d,
        "n_per_chain": n_per_chain,
        "seed": int(seed),
        "spec_fingerprint": spec.fingerprint(),
        "thin": thin,
        "x0": x0.tolist(),
    }
    return SamplePool(x_pre, a_rec, b_rec, x_post, chain_col, step_col, meta)


def exceedance_filter(pool: SamplePool, alphas, t: float) -> SamplePool:
    """Records whose post-update state exceeds t in the weighted max norm.

    t = 0 keeps everything except exact zeros.  The returned pool records
    the parent size and the exceedance fraction in its meta.
    """
    t = float(t)
    if not (math.isfinite(t) and t >= 0.0):
        raise ValueError("threshold t must be finite and nonnegative")
    norms = alpha_norm(pool.x_post, alphas)
    mask = norms > t
    sub = pool.select(mask)
    sub.meta.update(
        {
            "filter_threshold": t,
            "parent_records": len(pool),
            "exceedance_fraction": float(mask.mean()) if len(pool) else 0.0,
        }
    )
    return sub
