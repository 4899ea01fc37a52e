"""Coefficient models for diagonal affine recursions.

A model describes the i.i.d. coefficient pairs (A, B) of the d-dimensional
recursion X_n = A_n * X_{n-1} + B_n (componentwise product, A diagonal).
Built-in families:

* ``TwoPoint``   A_j = up_j with probability p_j, else down_j.
* ``LogNormal``  A_j = exp(mu_j + sigma_j N_j), N multivariate normal.
* ``CCCGarch``   A_j = arch_j Z_j^2 + garch_j with standard normal factors
                 Z; coordinates may share a factor through ``z_map``.
* ``BekkDiag``   A_j = sum_i m_i coeff[i, j] with i.i.d. standard normal m.
* ``Custom``     finite atom table (JSON-able) or a user callable.

The noise B is described by a per-coordinate distribution spec under the
``"b"`` key (constant, exponential, pareto, uniform, normal, lognormal),
drawn independently across coordinates unless ``"shared": true``.  Custom
atom tables carry their own joint (a, b) columns instead.

Closed-form moment hooks return None when the family cannot provide the
quantity analytically; callers then fall back to Monte Carlo.  For the
CCCGarch family the hooks are deterministic Gaussian quadratures, reported
under the "closed-form" method tag.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

import numpy as np
from scipy import integrate, special

from .common import ConfigurationError, Estimate, exact, mean_estimate, chain_stream

_SQRT_2PI = math.sqrt(2.0 * math.pi)

FAMILIES = ("TwoPoint", "LogNormal", "CCCGarch", "BekkDiag", "Custom")


def _phi(z: float) -> float:
    return math.exp(-0.5 * z * z) / _SQRT_2PI


def _quad(f, lo, hi):
    val, _err = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def _abs_normal_moment(s: float) -> float:
    """E|N|^s for standard normal N, s > -1."""
    return math.exp(0.5 * s * math.log(2.0) + special.gammaln(0.5 * (s + 1.0)) - special.gammaln(0.5))


def _pow_abs(v: float, s: float) -> float:
    """|v|^s with 0^s = 0 for every s >= 0 (zero mass excluded)."""
    if v == 0.0:
        return 0.0
    return abs(v) ** s


def _pow_abs1(v: float, s: float) -> float:
    """|v|^s with the factor convention 0^0 = 1 (used in joint moments)."""
    if s == 0.0:
        return 1.0
    if v == 0.0:
        return 0.0
    return abs(v) ** s


def _as_vector(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ConfigurationError(f"{name} must be a scalar or length-{d} sequence")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} must be finite")
    return arr


def _corr_factor(corr, k: int, name: str) -> np.ndarray:
    """Validate a correlation matrix and factor it once (Cholesky, else
    spectral for PSD-singular input).  Non-PSD input is a hard error."""
    c = np.asarray(corr, dtype=float)
    if c.shape != (k, k):
        raise ConfigurationError(f"{name} must be a {k}x{k} matrix")
    if not np.all(np.isfinite(c)):
        raise ConfigurationError(f"{name} must be finite")
    if not np.allclose(c, c.T, atol=1e-12):
        raise ConfigurationError(f"{name} must be symmetric")
    if not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise ConfigurationError(f"{name} must have unit diagonal")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(c)
        if w.min() < -1e-10:
            raise ConfigurationError(f"{name} is not positive semidefinite") from None
        return v * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# Noise (B) distribution specs


class _BDist:
    """One scalar noise distribution with closed-form absolute moments."""

    def __init__(self, doc: dict):
        if not isinstance(doc, dict) or "dist" not in doc:
            raise ConfigurationError("noise spec must be a dict with a 'dist' key")
        self.doc = dict(doc)
        kind = doc["dist"]
        p = doc
        if kind == "constant":
            self.value = float(p.get("value", 0.0))
        elif kind == "exponential":
            self.rate = float(p.get("rate", 1.0))
            if self.rate <= 0:
                raise ConfigurationError("exponential rate must be positive")
        elif kind == "pareto":
            self.index = float(p.get("index", 1.0))
            self.scale = float(p.get("scale", 1.0))
            if self.index <= 0 or self.scale <= 0:
                raise ConfigurationError("pareto index and scale must be positive")
        elif kind == "uniform":
            self.low = float(p.get("low", 0.0))
            self.high = float(p.get("high", 1.0))
            if not self.low < self.high:
                raise ConfigurationError("uniform needs low < high")
        elif kind == "normal":
            self.mean = float(p.get("mean", 0.0))
            self.std = float(p.get("std", 1.0))
            if self.std < 0:
                raise ConfigurationError("normal std must be nonnegative")
        elif kind == "lognormal":
            self.mu = float(p.get("mu", 0.0))
            self.sigma = float(p.get("sigma", 1.0))
            if self.sigma < 0:
                raise ConfigurationError("lognormal sigma must be nonnegative")
        else:
            raise ConfigurationError(f"unknown noise dist {kind!r}")
        self.kind = kind

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = self.kind
        if k == "constant":
            return np.full(n, self.value)
        if k == "exponential":
            return rng.exponential(scale=1.0 / self.rate, size=n)
        if k == "pareto":
            return self.scale * rng.random(n) ** (-1.0 / self.index)
        if k == "uniform":
            return rng.uniform(self.low, self.high, size=n)
        if k == "normal":
            return rng.normal(self.mean, self.std, size=n)
        return np.exp(rng.normal(self.mu, self.sigma, size=n))

    def abs_moment(self, s: float) -> float:
        """E|B|^s; may be math.inf."""
        k = self.kind
        if s == 0.0:
            return 1.0
        if k == "constant":
            return _pow_abs(self.value, s)
        if k == "exponential":
            return math.exp(special.gammaln(s + 1.0)) / self.rate ** s
        if k == "pareto":
            if s >= self.index:
                return math.inf
            return self.index * self.scale ** s / (self.index - s)
        if k == "uniform":
            lo, hi = self.low, self.high
            if lo >= 0.0:
                return (hi ** (s + 1.0) - lo ** (s + 1.0)) / ((s + 1.0) * (hi - lo))
            if hi <= 0.0:
                return ((-lo) ** (s + 1.0) - (-hi) ** (s + 1.0)) / ((s + 1.0) * (hi - lo))
            return (hi ** (s + 1.0) + (-lo) ** (s + 1.0)) / ((s + 1.0) * (hi - lo))
        if k == "normal":
            if self.std == 0.0:
                return _pow_abs(self.mean, s)
            if self.mean == 0.0:
                return self.std ** s * _abs_normal_moment(s)
            mu, sd = self.mean, self.std
            f = lambda x: abs(x) ** s * _phi((x - mu) / sd) / sd
            return _quad(f, -math.inf, 0.0) + _quad(f, 0.0, math.inf)
        return math.exp(self.mu * s + 0.5 * self.sigma ** 2 * s ** 2)

    def abscissa(self) -> float:
        return self.index if self.kind == "pareto" else math.inf

    def is_zero(self) -> bool:
        return self.kind == "constant" and self.value == 0.0


class _BSpec:
    """Per-coordinate noise description with an optional shared draw."""

    def __init__(self, doc, d: int):
        if doc is None:
            doc = {"dist": "constant", "value": 0.0}
        if isinstance(doc, dict):
            self.shared = bool(doc.get("shared", False))
            body = {k: v for k, v in doc.items() if k != "shared"}
            self.dists = [_BDist(body) for _ in range(d)]
        elif isinstance(doc, list):
            if len(doc) != d:
                raise ConfigurationError(f"per-coordinate noise spec needs {d} entries")
            self.shared = False
            self.dists = [_BDist(entry) for entry in doc]
        else:
            raise ConfigurationError("noise spec must be a dict or a list of dicts")
        self.d = d

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.shared:
            col = self.dists[0].sample(rng, n)
            return np.tile(col[:, None], (1, self.d))
        out = np.empty((n, self.d))
        for j, dist in enumerate(self.dists):
            out[:, j] = dist.sample(rng, n)
        return out

    def to_doc(self):
        if self.shared:
            doc = dict(self.dists[0].doc)
            doc["shared"] = True
            return doc
        docs = [dict(d.doc) for d in self.dists]
        if all(d == docs[0] for d in docs):
            return docs[0]
        return docs


# ---------------------------------------------------------------------------
# Families


class _TwoPoint:
    name = "TwoPoint"

    def __init__(self, d: int, params: dict):
        self.d = d
        self.p = _as_vector(params.get("p"), d, "p")
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise ConfigurationError("p must lie in [0, 1]")
        self.up = _as_vector(params.get("up"), d, "up")
        self.down = _as_vector(params.get("down"), d, "down")
        self.comonotone = bool(params.get("comonotone", False))
        self.b = _BSpec(params.get("b"), d)

    def params_doc(self) -> dict:
        return {
            "p": self.p.tolist(),
            "up": self.up.tolist(),
            "down": self.down.tolist(),
            "comonotone": self.comonotone,
            "b": self.b.to_doc(),
        }

    def sample_a(self, rng, n):
        shape = (n, 1) if self.comonotone else (n, self.d)
        u = rng.random(shape)
        return np.where(u < self.p, self.up, self.down)

    def _atoms(self, j):
        return ((self.p[j], self.up[j]), (1.0 - self.p[j], self.down[j]))

    def kappa_exact(self, j, s):
        return sum(w * _pow_abs(v, s) for w, v in self._atoms(j))

    def zero_mass_exact(self, j):
        return sum(w for w, v in self._atoms(j) if v == 0.0)

    def log_abs_mean_exact(self, j):
        zm = self.zero_mass_exact(j)
        if zm >= 1.0:
            return None
        tot = sum(w * math.log(abs(v)) for w, v in self._atoms(j) if v != 0.0 and w > 0.0)
        return tot / (1.0 - zm)

    def goldie_mean_exact(self, j, alpha):
        return sum(
            w * abs(v) ** alpha * math.log(abs(v))
            for w, v in self._atoms(j)
            if v != 0.0 and w > 0.0
        )

    def joint_moment_exact(self, i, j, s, u):
        if not self.comonotone:
            return self.kappa_joint_factor(i, s) * self.kappa_joint_factor(j, u)
        pi, pj = self.p[i], self.p[j]
        q1, q2 = min(pi, pj), max(pi, pj)
        ai_mid = self.up[i] if pi > pj else self.down[i]
        aj_mid = self.up[j] if pj > pi else self.down[j]
        pieces = (
            (q1, self.up[i], self.up[j]),
            (q2 - q1, ai_mid, aj_mid),
            (1.0 - q2, self.down[i], self.down[j]),
        )
        return sum(w * _pow_abs1(vi, s) * _pow_abs1(vj, u) for w, vi, vj in pieces if w > 0.0)

    def kappa_joint_factor(self, j, s):
        return sum(w * _pow_abs1(v, s) for w, v in self._atoms(j))

    def constant_magnitude_exact(self, j):
        mags = {abs(v) for w, v in self._atoms(j) if w > 0.0}
        return len(mags) <= 1

    def a_abscissa(self, j):
        return math.inf


class _LogNormal:
    name = "LogNormal"

    def __init__(self, d: int, params: dict):
        self.d = d
        self.mu = _as_vector(params.get("mu"), d, "mu")
        self.sigma = _as_vector(params.get("sigma"), d, "sigma")
        if np.any(self.sigma < 0):
            raise ConfigurationError("sigma must be nonnegative")
        corr = params.get("corr")
        self.corr = np.eye(d) if corr is None else np.asarray(corr, dtype=float)
        self.factor = _corr_factor(self.corr, d, "corr")
        self.b = _BSpec(params.get("b"), d)

    def params_doc(self):
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "corr": self.corr.tolist(),
            "b": self.b.to_doc(),
        }

    def sample_a(self, rng, n):
        z = rng.standard_normal((n, self.d)) @ self.factor.T
        return np.exp(self.mu + self.sigma * z)

    def kappa_exact(self, j, s):
        return math.exp(self.mu[j] * s + 0.5 * (self.sigma[j] * s) ** 2)

    def zero_mass_exact(self, j):
        return 0.0

    def log_abs_mean_exact(self, j):
        return float(self.mu[j])

    def goldie_mean_exact(self, j, alpha):
        return (self.mu[j] + self.sigma[j] ** 2 * alpha) * self.kappa_exact(j, alpha)

    def joint_moment_exact(self, i, j, s, u):
        rho = self.corr[i, j]
        si, sj = self.sigma[i], self.sigma[j]
        quad_form = (si * s) ** 2 + 2.0 * rho * si * sj * s * u + (sj * u) ** 2
        return math.exp(self.mu[i] * s + self.mu[j] * u + 0.5 * quad_form)

    def constant_magnitude_exact(self, j):
        return self.sigma[j] == 0.0

    def a_abscissa(self, j):
        return math.inf


class _CCCGarch:
    name = "CCCGarch"

    def __init__(self, d: int, params: dict):
        self.d = d
        self.arch = _as_vector(params.get("arch"), d, "arch")
        self.garch = _as_vector(params.get("garch"), d, "garch")
        if np.any(self.arch < 0) or np.any(self.garch < 0):
            raise ConfigurationError("arch and garch coefficients must be nonnegative")
        z_map = params.get("z_map")
        if z_map is None:
            z_map = list(range(d))
        self.z_map = [int(v) for v in z_map]
        if len(self.z_map) != d or min(self.z_map) < 0:
            raise ConfigurationError(f"z_map must be {d} nonnegative factor indices")
        self.n_factors = max(self.z_map) + 1
        corr = params.get("corr")
        self.corr = np.eye(self.n_factors) if corr is None else np.asarray(corr, dtype=float)
        self.factor = _corr_factor(self.corr, self.n_factors, "corr")
        self.b = _BSpec(params.get("b"), d)

    def params_doc(self):
        return {
            "arch": self.arch.tolist(),
            "garch": self.garch.tolist(),
            "z_map": list(self.z_map),
            "corr": self.corr.tolist(),
            "b": self.b.to_doc(),
        }

    def sample_a(self, rng, n):
        f = rng.standard_normal((n, self.n_factors)) @ self.factor.T
        z = f[:, self.z_map]
        return self.arch * z * z + self.garch

    def kappa_exact(self, j, s):
        a, g = self.arch[j], self.garch[j]
        if s == 0.0:
            return 1.0 if (a > 0.0 or g > 0.0) else 0.0
        if a == 0.0:
            return _pow_abs(g, s)
        if g == 0.0:
            return a ** s * _abs_normal_moment(2.0 * s)
        return 2.0 * _quad(lambda z: (a * z * z + g) ** s * _phi(z), 0.0, math.inf)

    def zero_mass_exact(self, j):
        return 1.0 if (self.arch[j] == 0.0 and self.garch[j] == 0.0) else 0.0

    def log_abs_mean_exact(self, j):
        a, g = self.arch[j], self.garch[j]
        if a == 0.0:
            return math.log(g) if g > 0.0 else None
        if g == 0.0:
            return math.log(a) + special.digamma(0.5) + math.log(2.0)
        return 2.0 * _quad(lambda z: math.log(a * z * z + g) * _phi(z), 0.0, math.inf)

    def goldie_mean_exact(self, j, alpha):
        a, g = self.arch[j], self.garch[j]
        if a == 0.0:
            return _pow_abs(g, alpha) * math.log(g) if g > 0.0 else 0.0
        if g == 0.0:
            kap = self.kappa_exact(j, alpha)
            return kap * (math.log(a) + math.log(2.0) + special.digamma(alpha + 0.5))
        return 2.0 * _quad(
            lambda z: (a * z * z + g) ** alpha * math.log(a * z * z + g) * _phi(z),
            0.0,
            math.inf,
        )

    def joint_moment_exact(self, i, j, s, u):
        ai, gi = self.arch[i], self.garch[i]
        aj, gj = self.arch[j], self.garch[j]
        fi, fj = self.z_map[i], self.z_map[j]
        if fi == fj:
            f = lambda z: _pow_abs1(ai * z * z + gi, s) * _pow_abs1(aj * z * z + gj, u) * _phi(z)
            return 2.0 * _quad(f, 0.0, math.inf)
        if self.corr[fi, fj] == 0.0:
            ki = self.kappa_exact(i, s) if s > 0.0 else 1.0
            kj = self.kappa_exact(j, u) if u > 0.0 else 1.0
            return ki * kj
        return None

    def constant_magnitude_exact(self, j):
        return self.arch[j] == 0.0

    def a_abscissa(self, j):
        return math.inf


class _BekkDiag:
    name = "BekkDiag"

    def __init__(self, d: int, params: dict):
        self.d = d
        coeff = np.asarray(params.get("coeff"), dtype=float)
        if coeff.ndim != 2 or coeff.shape[1] != d:
            raise ConfigurationError(f"coeff must be a (factors x {d}) matrix")
        if not np.all(np.isfinite(coeff)):
            raise ConfigurationError("coeff must be finite")
        self.coeff = coeff
        self.n_factors = coeff.shape[0]
        self.sigma = np.sqrt((coeff ** 2).sum(axis=0))
        self.b = _BSpec(params.get("b"), d)

    def params_doc(self):
        return {"coeff": self.coeff.tolist(), "b": self.b.to_doc()}

    def sample_a(self, rng, n):
        return rng.standard_normal((n, self.n_factors)) @ self.coeff

    def kappa_exact(self, j, s):
        sig = self.sigma[j]
        if sig == 0.0:
            return 0.0
        if s == 0.0:
            return 1.0
        return sig ** s * _abs_normal_moment(s)

    def zero_mass_exact(self, j):
        return 1.0 if self.sigma[j] == 0.0 else 0.0

    def log_abs_mean_exact(self, j):
        sig = self.sigma[j]
        if sig == 0.0:
            return None
        return math.log(sig) + 0.5 * (special.digamma(0.5) + math.log(2.0))

    def goldie_mean_exact(self, j, alpha):
        sig = self.sigma[j]
        if sig == 0.0:
            return 0.0
        kap = self.kappa_exact(j, alpha)
        return kap * (math.log(sig) + 0.5 * (math.log(2.0) + special.digamma(0.5 * (alpha + 1.0))))

    def joint_moment_exact(self, i, j, s, u):
        fi = 1.0 if s == 0.0 else self.kappa_exact(i, s)
        fj = 1.0 if u == 0.0 else self.kappa_exact(j, u)
        si, sj = self.sigma[i], self.sigma[j]
        if si == 0.0 or sj == 0.0:
            return fi * fj
        rho = float(self.coeff[:, i] @ self.coeff[:, j]) / (si * sj)
        if rho == 0.0:
            return fi * fj
        if abs(abs(rho) - 1.0) <= 1e-12:
            if s == 0.0 or u == 0.0:
                return fi * fj
            return si ** s * sj ** u * _abs_normal_moment(s + u)
        return None

    def constant_magnitude_exact(self, j):
        return self.sigma[j] == 0.0

    def a_abscissa(self, j):
        return math.inf


class _CustomAtoms:
    name = "Custom"

    def __init__(self, d: int, params: dict):
        atoms = params.get("atoms")
        if not isinstance(atoms, dict):
            raise ConfigurationError("Custom atoms spec needs an 'atoms' dict")
        prob = np.asarray(atoms.get("prob"), dtype=float)
        a = np.asarray(atoms.get("a"), dtype=float)
        bvals = np.asarray(atoms.get("b"), dtype=float)
        if prob.ndim != 1 or prob.size == 0:
            raise ConfigurationError("atom probabilities must be a nonempty vector")
        if np.any(prob < 0) or abs(prob.sum() - 1.0) > 1e-9:
            raise ConfigurationError("atom probabilities must be nonnegative and sum to 1")
        k = prob.size
        if a.shape != (k, d) or bvals.shape != (k, d):
            raise ConfigurationError(f"atom tables must have shape ({k}, {d})")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(bvals))):
            raise ConfigurationError("atom tables must be finite")
        self.d = d
        self.prob = prob / prob.sum()
        self.a = a
        self.bvals = bvals
        self.cum = np.cumsum(self.prob)
        self.cum[-1] = 1.0

    def params_doc(self):
        return {
            "atoms": {
                "prob": self.prob.tolist(),
                "a": self.a.tolist(),
                "b": self.bvals.tolist(),
            }
        }

    def sample_joint(self, rng, n):
        idx = np.searchsorted(self.cum, rng.random(n), side="right")
        return self.a[idx], self.bvals[idx]

    def kappa_exact(self, j, s):
        return float(sum(w * _pow_abs(v, s) for w, v in zip(self.prob, self.a[:, j])))

    def zero_mass_exact(self, j):
        return float(self.prob[self.a[:, j] == 0.0].sum())

    def log_abs_mean_exact(self, j):
        zm = self.zero_mass_exact(j)
        if zm >= 1.0:
            return None
        mask = self.a[:, j] != 0.0
        tot = float((self.prob[mask] * np.log(np.abs(self.a[mask, j]))).sum())
        return tot / (1.0 - zm)

    def goldie_mean_exact(self, j, alpha):
        mask = self.a[:, j] != 0.0
        vals = np.abs(self.a[mask, j])
        return float((self.prob[mask] * vals ** alpha * np.log(vals)).sum())

    def joint_moment_exact(self, i, j, s, u):
        wi = np.array([_pow_abs1(v, s) for v in self.a[:, i]])
        wj = np.array([_pow_abs1(v, u) for v in self.a[:, j]])
        return float((self.prob * wi * wj).sum())

    def constant_magnitude_exact(self, j):
        mags = np.abs(self.a[self.prob > 0.0, j])
        return bool(np.all(mags == mags[0]))

    def a_abscissa(self, j):
        return math.inf

    def b_moment_exact(self, j, s):
        return float(sum(w * _pow_abs1(v, s) for w, v in zip(self.prob, self.bvals[:, j])))

    def b_abscissa(self, j):
        return math.inf

    def b_is_zero(self, j):
        return bool(np.all(self.bvals[self.prob > 0.0, j] == 0.0))


class _CustomCallable:
    name = "Custom"

    def __init__(self, d: int, params: dict):
        sampler = params.get("sampler")
        if not callable(sampler):
            raise ConfigurationError("Custom callable spec needs a callable 'sampler'")
        self.d = d
        self.sampler = sampler
        self.label = str(params.get("name", getattr(sampler, "__name__", "sampler")))

    def sample_joint(self, rng, n):
        a, b = self.sampler(rng, n)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != (n, self.d) or b.shape != (n, self.d):
            raise ConfigurationError(
                f"custom sampler must return arrays of shape ({n}, {self.d})"
            )
        return a, b


# ---------------------------------------------------------------------------
# Facade


class ModelSpec:
    """Validated coefficient model.

    Parameters are checked at construction and correlation matrices are
    factorized once here; non-PSD input is a hard error.  ``sigma_margin``
    is the extra noise-moment margin probed by the moment diagnostics
    (E|B_j|^(alpha_j + sigma_margin) must be finite for the tail limits to
    apply).

    Whether the model is contractive on average (E log|A_j| < 0) is not a
    construction requirement; it is checked by ``log_moment`` and enforced
    by the simulation entry points.
    """

    def __init__(self, family: str, d: int, params: dict, sigma_margin: float = 0.5):
        if family not in FAMILIES:
            raise ConfigurationError(f"unknown family {family!r}; expected one of {FAMILIES}")
        if int(d) < 1:
            raise ConfigurationError("d must be a positive integer")
        if sigma_margin <= 0:
            raise ConfigurationError("sigma_margin must be positive")
        if not isinstance(params, dict):
            raise ConfigurationError("params must be a dict")
        self.family = family
        self.d = int(d)
        self.sigma_margin = float(sigma_margin)
        if family == "TwoPoint":
            self._impl = _TwoPoint(self.d, params)
        elif family == "LogNormal":
            self._impl = _LogNormal(self.d, params)
        elif family == "CCCGarch":
            self._impl = _CCCGarch(self.d, params)
        elif family == "BekkDiag":
            self._impl = _BekkDiag(self.d, params)
        elif "sampler" in params:
            self._impl = _CustomCallable(self.d, params)
        else:
            self._impl = _CustomAtoms(self.d, params)

    # -- sampling -----------------------------------------------------------

    def sample_coeffs(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw n i.i.d. coefficient pairs; returns (a, b) of shape (n, d).

        The internal draw order is fixed (A block first, then B block) so a
        given generator state always yields the same pairs.
        """
        if n < 1:
            raise ValueError("n must be positive")
        impl = self._impl
        if hasattr(impl, "sample_joint"):
            return impl.sample_joint(rng, n)
        a = impl.sample_a(rng, n)
        b = impl.b.sample(rng, n)
        return a, b

    # -- closed-form hooks (None when unavailable) ---------------------------

    def kappa_exact(self, j: int, s: float) -> float | None:
        self._check_j(j)
        fn = getattr(self._impl, "kappa_exact", None)
        return None if fn is None else fn(j, float(s))

    def zero_mass_exact(self, j: int) -> float | None:
        self._check_j(j)
        fn = getattr(self._impl, "zero_mass_exact", None)
        return None if fn is None else fn(j)

    def log_abs_mean_exact(self, j: int) -> float | None:
        """E[log|A_j| given A_j != 0], or None when unknown/undefined."""
        self._check_j(j)
        fn = getattr(self._impl, "log_abs_mean_exact", None)
        return None if fn is None else fn(j)

    def goldie_mean_exact(self, j: int, alpha: float) -> float | None:
        self._check_j(j)
        fn = getattr(self._impl, "goldie_mean_exact", None)
        return None if fn is None else fn(j, float(alpha))

    def joint_moment_exact(self, i: int, j: int, s: float, u: float) -> float | None:
        """E |A_i|^s |A_j|^u, or None when no closed form is available."""
        self._check_j(i)
        self._check_j(j)
        fn = getattr(self._impl, "joint_moment_exact", None)
        return None if fn is None else fn(i, j, float(s), float(u))

    def constant_magnitude_exact(self, j: int) -> bool | None:
        self._check_j(j)
        fn = getattr(self._impl, "constant_magnitude_exact", None)
        return None if fn is None else fn(j)

    def a_abscissa(self, j: int) -> float | None:
        self._check_j(j)
        fn = getattr(self._impl, "a_abscissa", None)
        return None if fn is None else fn(j)

    def b_moment_exact(self, j: int, s: float) -> float | None:
        self._check_j(j)
        impl = self._impl
        if hasattr(impl, "b_moment_exact"):
            return impl.b_moment_exact(j, float(s))
        if hasattr(impl, "b"):
            return impl.b.dists[j].abs_moment(float(s))
        return None

    def b_abscissa(self, j: int) -> float | None:
        self._check_j(j)
        impl = self._impl
        if hasattr(impl, "b_abscissa"):
            return impl.b_abscissa(j)
        if hasattr(impl, "b"):
            return impl.b.dists[j].abscissa()
        return None

    def b_is_zero(self, j: int) -> bool | None:
        self._check_j(j)
        impl = self._impl
        if hasattr(impl, "b_is_zero"):
            return impl.b_is_zero(j)
        if hasattr(impl, "b"):
            return impl.b.dists[j].is_zero()
        return None

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        if isinstance(self._impl, _CustomCallable):
            raise ConfigurationError("callable Custom models are not JSON-serializable")
        return {
            "family": self.family,
            "d": self.d,
            "params": self._impl.params_doc(),
            "sigma_margin": self.sigma_margin,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelSpec":
        if not isinstance(doc, dict):
            raise ConfigurationError("model document must be a dict")
        for key in ("family", "d", "params"):
            if key not in doc:
                raise ConfigurationError(f"model document is missing {key!r}")
        return cls(
            doc["family"],
            doc["d"],
            doc["params"],
            sigma_margin=doc.get("sigma_margin", 0.5),
        )

    def fingerprint(self) -> str:
        """Stable hash of the model; callable Custom models get a label-based
        fingerprint that is not portable across processes."""
        try:
            payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        except ConfigurationError:
            payload = f"custom-callable:{self._impl.label}:d={self.d}"
        return hashlib.sha256(payload.encode()).hexdigest()

    def _check_j(self, j: int) -> None:
        if not 0 <= int(j) < self.d:
            raise ValueError(f"coordinate index {j} out of range for d={self.d}")

    def __repr__(self):
        return f"ModelSpec(family={self.family!r}, d={self.d})"


def sample_pair(spec: ModelSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one coefficient pair (a, b), each of shape (d,)."""
    a, b = spec.sample_coeffs(rng, 1)
    return a[0], b[0]


@dataclasses.dataclass(frozen=True)
class LogMoment:
    """Drift diagnostics for one coordinate.

    ``mean_given_nonzero`` is E[log|A_j| | A_j != 0] (None when A_j = 0
    a.s.); ``zero_mass`` is P(A_j = 0), reported separately because any
    mass at zero sends the unconditional mean to -inf and certifies
    contraction by itself.  ``constant_magnitude`` flags |A_j| being a.s.
    constant, in which case log|A_j| is concentrated on a single point and
    renewal-type tail behaviour cannot be taken for granted; the flag is
    informational, not an error.
    """

    mean_given_nonzero: Estimate | None
    zero_mass: float
    contractive: bool
    constant_magnitude: bool

    def to_dict(self) -> dict:
        return {
            "mean_given_nonzero": None
            if self.mean_given_nonzero is None
            else self.mean_given_nonzero.to_dict(),
            "zero_mass": float(self.zero_mass),
            "contractive": bool(self.contractive),
            "constant_magnitude": bool(self.constant_magnitude),
        }


def log_moment(
    spec: ModelSpec,
    j: int,
    n: int = 100_000,
    rng: np.random.Generator | None = None,
    method: str = "auto",
) -> LogMoment:
    """Estimate E log|A_j| and certify the negative-drift condition.

    Closed-form families return exact values with degenerate intervals.
    The Monte Carlo route certifies contraction only when the 95% interval
    lies strictly below zero (or when mass at zero is observed).
    """
    if method not in ("auto", "closed-form", "monte-carlo"):
        raise ValueError("method must be auto, closed-form, or monte-carlo")
    exact_mean = spec.log_abs_mean_exact(j)
    exact_zero = spec.zero_mass_exact(j)
    have_exact = exact_zero is not None and (exact_mean is not None or exact_zero == 1.0)
    if method == "closed-form" and not have_exact:
        raise ValueError("no closed form for E log|A_j| in this model")
    if method != "monte-carlo" and have_exact:
        const = spec.constant_magnitude_exact(j)
        if exact_zero == 1.0:
            return LogMoment(None, 1.0, True, True)
        return LogMoment(
            exact(float(exact_mean)),
            float(exact_zero),
            bool(exact_zero > 0.0 or exact_mean < 0.0),
            bool(const) if const is not None else False,
        )
    if rng is None:
        raise ValueError("Monte Carlo log_moment needs an rng")
    a, _ = spec.sample_coeffs(rng, n)
    col = np.abs(a[:, j])
    nonzero = col[col > 0.0]
    zero_mass = 1.0 - nonzero.size / n
    if nonzero.size == 0:
        return LogMoment(None, 1.0, True, True)
    logs = np.log(nonzero)
    est = mean_estimate(logs)
    spread = float(logs.max() - logs.min())
    return LogMoment(
        est,
        float(zero_mass),
        bool(zero_mass > 0.0 or est.ci_hi < 0.0),
        bool(spread <= 1e-12),
    )
