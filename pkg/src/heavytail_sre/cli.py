"""Command-line pipeline over JSON model configs.

Stages write machine-readable artifacts into one output directory:
<stage>.report.json files are byte-identical across reruns with the same
config and seed (wall-clock state lives only in manifest.json), pools go
to pool.bin plus pool.meta.json, and tabular series to <stage>.<name>.csv.
Exit code 2 flags configuration problems before any stage runs; exit
code 1 flags a runtime failure and names the stage on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .blocks import BlockPartition, detect_blocks
from .common import (
    AmbiguousPartitionError,
    ConfigurationError,
    DivergenceError,
    Estimate,
    LadderError,
    NonContractiveError,
    TailIndexError,
    TauHeavinessError,
    binomial_ci,
    stage_stream,
)
from .geometry import alpha_norm
from .independence import (
    build_tau,
    decay_rate_fit,
    joint_exceedance,
    submultiplicativity_check,
    tau_gamma_bound,
)
from .model import ModelSpec, log_moment
from .moments import goldie_mean, moment_abscissa, positivity_check, solve_alpha
from .simulate import SamplePool, stationary_pool
from .tails import (
    TailConstants,
    block_tail_constant,
    empirical_tail_constant,
    goldie_constant,
    hill_estimate,
    moment_estimate,
    quantile_ladder,
    spectral_measure,
)

STAGE_ORDER = (
    "solve-alpha",
    "simulate",
    "blocks",
    "tails",
    "spectral",
    "independence",
    "report",
)
STAGE_IDS = {name: k + 1 for k, name in enumerate(STAGE_ORDER)}
STAGE_DEPS = {
    "solve-alpha": (),
    "simulate": ("solve-alpha",),
    "blocks": ("solve-alpha",),
    "tails": ("solve-alpha", "simulate"),
    "spectral": ("solve-alpha", "simulate", "blocks"),
    "independence": ("solve-alpha", "simulate"),
    "report": (),
}

_RUNTIME_ERRORS = (
    TailIndexError,
    NonContractiveError,
    DivergenceError,
    LadderError,
    AmbiguousPartitionError,
    TauHeavinessError,
)


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("heavytail-sre")
    except Exception:
        return "unknown"


def _jsonable(obj):
    """Coerce numpy scalars and non-finite floats into portable JSON."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if f == math.inf:
            return "inf"
        if f == -math.inf:
            return "-inf"
        return f
    return obj


def _dump_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _csv_cell(v) -> str:
    if isinstance(v, str):
        if any(ch in v for ch in (",", '"', "\r", "\n")):
            return '"' + v.replace('"', '""') + '"'
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\r\n")


class _DirLock:
    """Exclusive .lock file so two runs never share an output directory."""

    def __init__(self, out: Path):
        self.path = out / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run ({self.path} exists)"
            ) from None
        os.write(self.fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass
        return False


@dataclasses.dataclass
class _RunPlan:
    model: ModelSpec
    seed: int
    out: Path
    pipeline: list[tuple[str, dict]]
    workers: int | None
    config_sha: str


def _normalize_pipeline(raw, subcommand: str) -> list[tuple[str, dict]]:
    if subcommand != "run":
        params = {}
        if isinstance(raw, list):
            for entry in raw:
                name, p = _pipeline_entry(entry)
                if name == subcommand:
                    params = p
        return [(subcommand, params)]
    if not isinstance(raw, list) or not raw:
        raise ConfigurationError("run needs a non-empty 'pipeline' list in the config")
    plan = [_pipeline_entry(entry) for entry in raw]
    seen = set()
    for name, _ in plan:
        if name in seen:
            raise ConfigurationError(f"stage {name!r} appears twice in the pipeline")
        seen.add(name)
    return plan


def _pipeline_entry(entry) -> tuple[str, dict]:
    if isinstance(entry, str):
        name, params = entry, {}
    elif isinstance(entry, dict) and "stage" in entry:
        name = entry["stage"]
        params = entry.get("params", {})
        if not isinstance(params, dict):
            raise ConfigurationError(f"params of stage {name!r} must be an object")
    else:
        raise ConfigurationError(
            "pipeline entries must be stage names or {stage, params} objects"
        )
    if name not in STAGE_IDS:
        raise ConfigurationError(
            f"unknown stage {name!r}; valid stages: {', '.join(STAGE_ORDER)}"
        )
    return name, dict(params)


def _load_plan(args) -> _RunPlan:
    cfg_path = Path(args.config)
    try:
        raw = cfg_path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {cfg_path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    if "model" not in doc:
        raise ConfigurationError("config is missing the 'model' entry")
    model = ModelSpec.from_json(doc["model"])

    seed = args.seed if args.seed is not None else doc.get("seed")
    if seed is None:
        raise ConfigurationError("a seed is required (config 'seed' or --seed)")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError("seed must be a nonnegative integer")

    out = args.out if args.out is not None else doc.get("out")
    if out is None:
        raise ConfigurationError("an output directory is required (config 'out' or --out)")

    pipeline = _normalize_pipeline(doc.get("pipeline"), args.command)

    # stages listed out of dependency order are a config error even when
    # artifacts could fill the gap
    position = {name: k for k, (name, _) in enumerate(pipeline)}
    for name, k in position.items():
        for dep in STAGE_DEPS[name]:
            if dep in position and position[dep] > k:
                raise ConfigurationError(
                    f"stage {name!r} must run after {dep!r}; fix the pipeline order"
                )

    if any(name == "independence" for name, _ in pipeline) and model.d < 2:
        raise ConfigurationError("independence analysis needs at least two coordinates")

    sha = hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    return _RunPlan(model, int(seed), Path(out), pipeline, args.workers, sha)


class _Runner:
    def __init__(self, plan: _RunPlan):
        self.plan = plan
        self.spec = plan.model
        self.seed = plan.seed
        self.out = plan.out
        self.current_stage: str | None = None
        self._alphas: np.ndarray | None = None
        self._goldie: list[float] | None = None
        self._pool: SamplePool | None = None
        self._partition: BlockPartition | None = None
        self._manifest_stages: dict = {}

    # ---- artifact plumbing -------------------------------------------

    def _report_path(self, stage: str) -> Path:
        return self.out / f"{stage}.report.json"

    def _has_artifact(self, stage: str) -> bool:
        if stage == "simulate":
            return (self.out / "pool.bin").exists() and (
                self.out / "pool.meta.json"
            ).exists()
        return self._report_path(stage).exists()

    def preflight(self) -> None:
        produced = set()
        for name, _ in self.plan.pipeline:
            for dep in STAGE_DEPS[name]:
                if dep not in produced and not self._has_artifact(dep):
                    raise ConfigurationError(
                        f"stage {name!r} needs {dep!r} first; add it to the "
                        f"pipeline or point --out at a directory holding its artifacts"
                    )
            produced.add(name)

    def _load_report(self, stage: str) -> dict:
        path = self._report_path(stage)
        if not path.exists():
            raise ConfigurationError(f"missing artifact {path.name}; run {stage!r} first")
        with open(path) as fh:
            return json.load(fh)

    def _get_alphas(self) -> np.ndarray:
        if self._alphas is None:
            doc = self._load_report("solve-alpha")
            self._alphas = np.asarray(doc["alphas"], dtype=float)
            self._goldie = [float(c["goldie_mean"]["value"]) for c in doc["coordinates"]]
        return self._alphas

    def _get_goldie(self) -> list[float]:
        self._get_alphas()
        return self._goldie

    def _get_pool(self) -> SamplePool:
        if self._pool is None:
            self._pool = SamplePool.load(self.out / "pool.bin")
        return self._pool

    def _get_partition(self, required: bool) -> BlockPartition | None:
        if self._partition is None:
            path = self._report_path("blocks")
            if not path.exists():
                if required:
                    raise ConfigurationError("missing blocks artifact; run 'blocks' first")
                return None
            self._partition = BlockPartition.from_json(path.read_text())
        return self._partition

    def _finish_stage(self, stage: str, params: dict, artifacts: list[str]) -> None:
        self._manifest_stages[stage] = {
            "artifacts": sorted(artifacts),
            "completed_utc": datetime.now(timezone.utc).isoformat(),
            "params": params,
        }
        manifest = {
            "config_sha256": self.plan.config_sha,
            "model_fingerprint": self.spec.fingerprint(),
            "seed": self.seed,
            "stages": self._manifest_stages,
            "versions": {
                "numpy": np.__version__,
                "package": _package_version(),
                "python": sys.version.split()[0],
            },
        }
        _dump_json(self.out / "manifest.json", manifest)

    # ---- stages -------------------------------------------------------

    def execute(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.preflight()
        with _DirLock(self.out):
            existing = self.out / "manifest.json"
            if existing.exists():
                try:
                    self._manifest_stages = json.loads(existing.read_text()).get(
                        "stages", {}
                    )
                except (OSError, json.JSONDecodeError):
                    self._manifest_stages = {}
            for name, params in self.plan.pipeline:
                self.current_stage = name
                getattr(self, "_stage_" + name.replace("-", "_"))(dict(params))
            self.current_stage = None

    def _stage_solve_alpha(self, params: dict) -> None:
        rng = stage_stream(self.seed, STAGE_IDS["solve-alpha"])
        method = params.get("method", "auto")
        tol = params.get("tol")
        n = int(params.get("n", 1_000_000))
        scan_n = int(params.get("abscissa_n", 200_000))
        spec = self.spec
        coords = []
        alphas = []
        for j in range(spec.d):
            drift = log_moment(spec, j, n=min(n, 200_000), rng=rng, method=method)
            root = solve_alpha(spec, j, tol=tol, method=method, n=n, rng=rng)
            gm = goldie_mean(spec, j, root.alpha, method=method, n=n, rng=rng)
            scan = moment_abscissa(spec, j, n=scan_n, rng=rng, method=method)
            pos = positivity_check(spec, j, root.alpha, n=scan_n, rng=rng)
            probe = root.alpha + spec.sigma_margin
            closed_b = spec.b_moment_exact(j, probe)
            if closed_b is not None:
                margin_ok = bool(math.isfinite(closed_b))
            else:
                _, b = spec.sample_coeffs(rng, scan_n)
                cb = np.abs(b[:, j])
                with np.errstate(over="ignore"):
                    w = np.where(cb > 0.0, cb**probe, 0.0)
                half = float(w[: w.size // 2].mean())
                full = float(w.mean())
                margin_ok = bool(
                    np.isfinite(full)
                    and abs(full - half) <= 0.05 * max(abs(full), 1e-300)
                )
            alphas.append(root.alpha)
            coords.append(
                {
                    "abscissa": scan.to_dict(),
                    "alpha": root.alpha,
                    "alpha_solver": root.to_dict(),
                    "goldie_mean": gm.to_dict(),
                    "log_moment": drift.to_dict(),
                    "margin_ok": margin_ok,
                    "positivity": pos.to_dict(),
                }
            )
        doc = {
            "alphas": alphas,
            "coordinates": coords,
            "model_fingerprint": spec.fingerprint(),
            "sigma_margin": spec.sigma_margin,
            "stage": "solve-alpha",
        }
        _dump_json(self._report_path("solve-alpha"), doc)
        self._alphas = np.asarray(alphas, dtype=float)
        self._goldie = [float(c["goldie_mean"]["value"]) for c in coords]
        self._finish_stage("solve-alpha", params, ["solve-alpha.report.json"])

    def _stage_simulate(self, params: dict) -> None:
        workers = params.get("workers", self.plan.workers) or 1
        pool = stationary_pool(
            self.spec,
            seed=self.seed,
            chains=int(params.get("chains", 1000)),
            n_per_chain=int(params.get("n_per_chain", 1000)),
            burn_in=params.get("burn_in"),
            thin=int(params.get("thin", 10)),
            x0=params.get("x0"),
            workers=int(workers),
        )
        pool.save(self.out / "pool.bin", self.out / "pool.meta.json")
        doc = {
            "burn_in": pool.meta["burn_in"],
            "chains": pool.meta["chains"],
            "column_mean_x_post": [float(v) for v in pool.x_post.mean(axis=0)],
            "d": pool.d,
            "model_fingerprint": self.spec.fingerprint(),
            "n_per_chain": pool.meta["n_per_chain"],
            "n_records": len(pool),
            "stage": "simulate",
            "thin": pool.meta["thin"],
        }
        _dump_json(self._report_path("simulate"), doc)
        self._pool = pool
        self._finish_stage(
            "simulate", params, ["pool.bin", "pool.meta.json", "simulate.report.json"]
        )

    def _stage_blocks(self, params: dict) -> None:
        rng = stage_stream(self.seed, STAGE_IDS["blocks"])
        alphas = self._get_alphas()
        part = detect_blocks(
            self.spec,
            alphas,
            rng=rng,
            n=int(params.get("n", 100_000)),
            tol_rel=float(params.get("tol_rel", 1e-9)),
            xi_probes=tuple(params.get("xi_probes", (0.25, 0.5, 0.75))),
            cross_method=params.get("cross_method", "auto"),
            cross_n=int(params.get("cross_n", 200_000)),
            cross_tol=float(params.get("cross_tol", 5e-3)),
        )
        doc = json.loads(part.to_json())
        doc["stage"] = "blocks"
        _dump_json(self._report_path("blocks"), doc)
        self._partition = part
        self._finish_stage("blocks", params, ["blocks.report.json"])

    def _stage_tails(self, params: dict) -> None:
        pool = self._get_pool()
        alphas = self._get_alphas()
        goldie = self._get_goldie()
        part = self._get_partition(required=False)
        min_top = int(params.get("min_top", 50))
        hill_k = params.get("hill_k")
        ladder_param = params.get("ladder")
        csv_rows = []
        coord_docs = []
        c_plus, c_minus = [], []
        for j in range(pool.d):
            mag = np.abs(pool.x_post[:, j])
            pos = mag[mag > 0.0]
            k = int(hill_k) if hill_k is not None else max(10, int(pos.size**0.6))
            k = min(k, pos.size - 1)
            hill = hill_estimate(pos, k)
            ladder = empirical_tail_constant(
                pool, j, alphas[j], ladder=ladder_param, min_top=min_top
            )
            gold = goldie_constant(pool, j, alphas[j], goldie[j])
            checks = [
                moment_estimate(pool, j, s).to_dict()
                for s in (0.5 * alphas[j], 2.0 * alphas[j])
            ]
            c_plus.append(ladder.c_plus)
            c_minus.append(ladder.c_minus)
            coord_docs.append(
                {
                    "coordinate": j,
                    "goldie_constant": gold.to_dict(),
                    "hill": hill.to_dict(),
                    "ladder": ladder.to_dict(),
                    "moment_checks": checks,
                }
            )
            for r, t in enumerate(ladder.thresholds):
                for label, series in (
                    ("plus", ladder.plus),
                    ("minus", ladder.minus),
                    ("total", ladder.total),
                ):
                    e = series[r]
                    csv_rows.append(
                        (f"coord{j}_{label}", t, e.value, e.ci_lo, e.ci_hi)
                    )
        doc = {
            "coordinates": coord_docs,
            "model_fingerprint": self.spec.fingerprint(),
            "stage": "tails",
        }
        block_ladder = None
        if part is not None:
            block_ladder = block_tail_constant(pool, part, alphas, min_top=min_top)
            doc["blocks"] = block_ladder.to_dict()
            for r, t in enumerate(block_ladder.thresholds):
                for l, series in enumerate(block_ladder.block):
                    e = series[r]
                    csv_rows.append((f"block{l}", t, e.value, e.ci_lo, e.ci_hi))
                e = block_ladder.c_inf[r]
                csv_rows.append(("c_inf", t, e.value, e.ci_lo, e.ci_hi))
            constants = TailConstants(
                tuple(c_plus),
                tuple(c_minus),
                block_ladder.block_top,
                block_ladder.c_inf_top,
            )
        else:
            s_full = alpha_norm(pool.x_post, alphas)
            full_ladder = quantile_ladder(s_full, min_top=min_top)
            t_top = float(full_ladder[-1])
            k_top = int((s_full > t_top).sum())
            est = binomial_ci(k_top, s_full.size)
            c_inf = Estimate(
                t_top * est.value,
                t_top * est.ci_lo,
                t_top * est.ci_hi,
                s_full.size,
                est.method,
                est.flag,
            )
            constants = TailConstants(tuple(c_plus), tuple(c_minus), (), c_inf)
        doc["tail_constants"] = constants.to_dict()
        _dump_json(self._report_path("tails"), doc)
        _write_csv(
            self.out / "tails.ladders.csv",
            ["series", "threshold", "value", "ci_lo", "ci_hi"],
            csv_rows,
        )
        self._finish_stage(
            "tails", params, ["tails.report.json", "tails.ladders.csv"]
        )

    def _stage_spectral(self, params: dict) -> None:
        pool = self._get_pool()
        alphas = self._get_alphas()
        part = self._get_partition(required=True)
        est = spectral_measure(
            pool,
            part,
            alphas,
            ladder=params.get("ladder"),
            bins=int(params.get("bins", 16)),
            eps=float(params.get("eps", 0.05)),
            min_top=int(params.get("min_top", 100)),
        )
        doc = est.to_dict()
        doc["stage"] = "spectral"
        doc["model_fingerprint"] = self.spec.fingerprint()
        _dump_json(self._report_path("spectral"), doc)
        rows = []
        edges = est.bin_edges
        for r, t in enumerate(est.thresholds):
            for j, hist in enumerate(est.marginals[r]):
                for b, mass in enumerate(hist):
                    rows.append((t, j, edges[b], edges[b + 1], mass))
        _write_csv(
            self.out / "spectral.angular.csv",
            ["threshold", "coordinate", "bin_lo", "bin_hi", "mass"],
            rows,
        )
        self._finish_stage(
            "spectral", params, ["spectral.report.json", "spectral.angular.csv"]
        )

    def _stage_independence(self, params: dict) -> None:
        rng = stage_stream(self.seed, STAGE_IDS["independence"])
        pool = self._get_pool()
        alphas = self._get_alphas()
        part = self._get_partition(required=False)
        pairs = params.get("pairs")
        if pairs is None:
            if part is not None and part.n_classes >= 2:
                pairs = [[part.classes[0][0], part.classes[1][0]]]
            else:
                pairs = [[0, 1]]
        tau_doc = params.get("tau", {"kind": "log", "beta": 1.0})
        tau = build_tau(tau_doc)
        xi = float(params.get("xi", 0.5))
        n = int(params.get("n", 1_000_000))
        check = submultiplicativity_check(
            tau, rng, n=int(params.get("submult_n", 50_000))
        )
        pair_docs = []
        artifacts = ["independence.report.json"]
        for i, j in (tuple(int(v) for v in p) for p in pairs):
            joint = joint_exceedance(
                pool,
                i,
                j,
                alphas,
                r1=float(params.get("r1", 1.0)),
                r2=float(params.get("r2", 1.0)),
                ladder=params.get("ladder"),
                min_top=int(params.get("min_top", 50)),
            )
            try:
                fit = decay_rate_fit(joint.thresholds, joint.normalized).to_dict()
            except ValueError:
                fit = None
            bound = tau_gamma_bound(
                self.spec,
                i,
                j,
                alphas[i],
                alphas[j],
                tau,
                rng=rng,
                xi=xi,
                gammas=params.get("gammas"),
                n=n,
            )
            pair_docs.append(
                {
                    "decay_fit": fit,
                    "gamma_bound": bound.to_dict(),
                    "i": i,
                    "j": j,
                    "joint": joint.to_dict(),
                }
            )
            name = f"independence.pair_{i}_{j}.csv"
            _write_csv(
                self.out / name,
                ["threshold", "count", "prob", "normalized", "ci_lo", "ci_hi"],
                [
                    (t, joint.counts[r], joint.prob[r], e.value, e.ci_lo, e.ci_hi)
                    for r, (t, e) in enumerate(zip(joint.thresholds, joint.normalized))
                ],
            )
            artifacts.append(name)
        doc = {
            "model_fingerprint": self.spec.fingerprint(),
            "pairs": pair_docs,
            "stage": "independence",
            "submultiplicativity": check.to_dict(),
            "tau": tau_doc,
            "xi": xi,
        }
        _dump_json(self._report_path("independence"), doc)
        self._finish_stage("independence", params, artifacts)

    def _stage_report(self, params: dict) -> None:
        stages = {}
        for name in STAGE_ORDER:
            if name == "report":
                continue
            path = self._report_path(name)
            if path.exists():
                with open(path) as fh:
                    stages[name] = json.load(fh)
        doc = {
            "model_fingerprint": self.spec.fingerprint(),
            "seed": self.seed,
            "stage": "report",
            "stages": stages,
        }
        _dump_json(self.out / "report.json", doc)
        self._finish_stage("report", params, ["report.json"])


def _emit_error(kind: str, stage: str | None, exc: BaseException) -> None:
    doc = {"error": kind, "detail": str(exc)}
    if stage is not None:
        doc["stage"] = stage
    json.dump(doc, sys.stderr, sort_keys=True)
    sys.stderr.write("\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heavytail-sre",
        description="Simulation and tail analysis pipeline for diagonal "
        "stochastic recurrence equations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + STAGE_ORDER:
        p = sub.add_parser(
            name,
            help="run the configured pipeline" if name == "run" else f"run the {name} stage",
        )
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--workers", type=int, default=None, help="worker threads for simulation"
        )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        plan = _load_plan(args)
        runner = _Runner(plan)
    except ConfigurationError as exc:
        _emit_error("validation", None, exc)
        return 2
    try:
        runner.execute()
    except ConfigurationError as exc:
        _emit_error("validation", runner.current_stage, exc)
        return 2
    except _RUNTIME_ERRORS as exc:
        _emit_error(type(exc).__name__, runner.current_stage, exc)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        _emit_error(type(exc).__name__, runner.current_stage, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
