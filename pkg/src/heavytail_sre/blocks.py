"""Coordinate grouping by almost-sure equality of |A_j|^alpha_j.

Two coordinates belong to the same class when |A_i|^alpha_i and
|A_j|^alpha_j agree almost surely; the tail limit then concentrates on
the corresponding coordinate subspaces.  Sample agreement alone is not
trusted: every pairwise grouping decision is cross-checked against the
mixed moment E |A_i|^{alpha_i xi} |A_j|^{alpha_j (1-xi)}, which equals 1
on a shared class and falls strictly below 1 across classes.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .common import AmbiguousPartitionError, Estimate
from .model import ModelSpec
from .moments import cross_kappa

DEFAULT_XI_PROBES = (0.25, 0.5, 0.75)


@dataclasses.dataclass(frozen=True)
class BlockPartition:
    """Ordered coordinate classes plus the pairwise evidence behind them.

    classes are each sorted and ordered by smallest member, so the
    permutation (their concatenation) is a deterministic function of the
    grouping.
    """

    classes: tuple[tuple[int, ...], ...]
    permutation: tuple[int, ...]
    evidence: dict

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def d(self) -> int:
        return len(self.permutation)

    def class_of(self, j: int) -> int:
        for l, cls in enumerate(self.classes):
            if j in cls:
                return l
        raise IndexError(f"coordinate {j} not covered by the partition")

    def to_json(self) -> str:
        doc = {
            "classes": [list(c) for c in self.classes],
            "permutation": list(self.permutation),
            "evidence": self.evidence,
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BlockPartition":
        doc = json.loads(text)
        classes = tuple(tuple(int(j) for j in c) for c in doc["classes"])
        perm = tuple(int(j) for j in doc["permutation"])
        got = tuple(j for c in classes for j in c)
        if got != perm:
            raise ValueError("permutation does not match the classes")
        if sorted(perm) != list(range(len(perm))):
            raise ValueError("classes must partition 0..d-1")
        return cls(classes, perm, doc.get("evidence", {}))


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def detect_blocks(
    spec: ModelSpec,
    alphas,
    rng: np.random.Generator,
    n: int = 100_000,
    tol_rel: float = 1e-9,
    xi_probes=DEFAULT_XI_PROBES,
    cross_method: str = "auto",
    cross_n: int = 200_000,
    cross_tol: float = 5e-3,
) -> BlockPartition:
    """Group coordinates by sampled agreement of |A_j|^alpha_j.

    A pair is grouped when the worst relative deviation
    max_k |v_i - v_j| / (1 + v_i) over n draws stays within tol_rel.
    Every pair is then validated through cross_kappa at each xi probe:
    grouped pairs must be consistent with the value 1, split pairs must
    have the whole confidence interval strictly below 1.  Disagreement
    raises AmbiguousPartitionError naming the pair.
    """
    alphas = np.asarray(alphas, dtype=float)
    d = spec.d
    if alphas.shape != (d,):
        raise ValueError(f"alphas must have shape ({d},)")
    if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0.0):
        raise ValueError("alphas must be positive and finite")
    if n < 2:
        raise ValueError("n must be at least 2")
    xi_probes = tuple(float(x) for x in xi_probes)
    if not xi_probes or any(not 0.0 < x < 1.0 for x in xi_probes):
        raise ValueError("xi probes must lie strictly inside (0, 1)")

    a, _ = spec.sample_coeffs(rng, n)
    v = np.abs(a) ** alphas

    parent = list(range(d))
    deviations: dict[tuple[int, int], float] = {}
    for i in range(d):
        for j in range(i + 1, d):
            dev = float(np.max(np.abs(v[:, i] - v[:, j]) / (1.0 + v[:, i])))
            deviations[(i, j)] = dev
            if dev <= tol_rel:
                ri, rj = _find(parent, i), _find(parent, j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for j in range(d):
        groups.setdefault(_find(parent, j), []).append(j)
    classes = tuple(tuple(sorted(groups[r])) for r in sorted(groups))
    perm = tuple(j for c in classes for j in c)
    class_of = {j: l for l, c in enumerate(classes) for j in c}

    evidence: dict[str, dict] = {}
    for (i, j), dev in deviations.items():
        same = class_of[i] == class_of[j]
        probes: dict[str, dict] = {}
        for xi in xi_probes:
            est = cross_kappa(
                spec, i, j, alphas[i], alphas[j], xi=xi,
                method=cross_method, n=cross_n, rng=rng,
            )
            probes[repr(xi)] = est.to_dict()
            _validate_pair(i, j, same, xi, est, cross_tol)
        evidence[f"{i}-{j}"] = {
            "max_rel_dev": dev,
            "same_class": same,
            "cross_kappa": probes,
        }
    return BlockPartition(classes, perm, evidence)


def _validate_pair(
    i: int, j: int, same: bool, xi: float, est: Estimate, cross_tol: float
) -> None:
    if same:
        ok = est.contains(1.0) or abs(est.value - 1.0) <= cross_tol
        if not ok:
            raise AmbiguousPartitionError(
                f"coordinates {i} and {j} agree on samples but the mixed moment "
                f"at xi={xi} is {est.value:.6g}, not 1",
                pair=(i, j),
            )
    else:
        if not est.ci_hi < 1.0:
            raise AmbiguousPartitionError(
                f"coordinates {i} and {j} were split but the mixed moment at "
                f"xi={xi} is not certified below 1 (interval "
                f"[{est.ci_lo:.6g}, {est.ci_hi:.6g}])",
                pair=(i, j),
            )


def project_block(pool, partition: BlockPartition, l: int):
    """Restrict a pool to the coordinates of class l (records unchanged)."""
    if not 0 <= l < partition.n_classes:
        raise IndexError(f"class index {l} out of range")
    coords = list(partition.classes[l])
    sub = pool.select(slice(None))
    sub.x_pre = sub.x_pre[:, coords]
    sub.a = sub.a[:, coords]
    sub.b = sub.b[:, coords]
    sub.x_post = sub.x_post[:, coords]
    sub.meta.update(
        {"block_index": l, "block_coords": coords, "parent_d": pool.d}
    )
    return sub
