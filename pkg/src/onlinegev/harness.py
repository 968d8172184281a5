"""Synthetic settings and multi-seed experiment sweeps.

Outputs are plain CSV with 17 significant digits so that a replayed
configuration reproduces every file byte for byte. Wall-clock numbers are
kept out of the CSVs and written only to the JSON sidecar.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import DivergenceError, ValidationError
from .oracle import OracleSpec, spec_from_config
from .problem import GevProblem, ground_truth
from .sgha import Mode, SghaConfig, alignment, run

log = logging.getLogger(__name__)

ROLE_PROBLEM, ROLE_ORACLE, ROLE_INIT = 0, 1, 2
TRAJ_COLUMNS = ("iter", "error", "lagrangian", "feasibility", "wallclock_ns")
SUMMARY_COLUMNS = ("iter", "median_error", "q25", "q75", "min", "max")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def derive_seed(seed: int, role: int) -> int:
    """Stable 63-bit child seed for ``(seed, role)``."""
    state = np.random.SeedSequence([int(seed), int(role)]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


def master_seeds(master: int, n: int) -> list[int]:
    """Counter-derived seeds; seed i does not depend on n."""
    return [derive_seed(master, 1000 + i) for i in range(n)]


def setting_matrices(setting: int, d: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if setting == 1:
        idx = np.arange(d)
        A = np.full((d, d), 0.05)
        np.fill_diagonal(A, 0.01)
        # the diagonal of B follows the same formula, giving B_ii = 1/3
        B = 0.5 ** np.abs(idx[:, None] - idx[None, :]) / 3.0
        return A, B
    if setting in (2, 3):
        if d < 6:
            raise ValidationError("settings 2 and 3 need d >= 6")
        rng = np.random.default_rng(seed)
        a = np.r_[np.ones(3), np.full(d - 3, 0.1)]
        b = np.r_[np.full(3, 2.0), np.ones(d - 3)]
        U = linalg.random_orthogonal(d, rng)
        V = U if setting == 2 else linalg.random_orthogonal(d, rng)
        A = (U * a) @ U.T
        B = (V * b) @ V.T
        return 0.5 * (A + A.T), 0.5 * (B + B.T)
    raise ValidationError(f"unknown setting {setting!r}; expected 1, 2 or 3")


def build_setting(setting: int, d: int, seed: int = 0, r: int | None = None) -> GevProblem:
    """Setting 1 defaults to r = 1, settings 2 and 3 to r = 3."""
    A, B = setting_matrices(setting, d, seed)
    if r is None:
        r = 1 if setting == 1 else 3
    return GevProblem(A, B, r)


def load_problem(obj) -> GevProblem:
    """Problem from a dict or JSON path.

    Either ``{"A": [[..]] | "a.csv", "B": ..., "r": int}`` (CSV paths are
    relative to the JSON file) or ``{"setting": 1|2|3, "d": int, "seed": int}``.
    """
    base = Path(".")
    if not isinstance(obj, dict):
        base = Path(obj).parent
        obj = json.loads(Path(obj).read_text())
    if "setting" in obj and "A" not in obj:
        return build_setting(int(obj["setting"]), int(obj["d"]), int(obj.get("seed", 0)),
                             obj.get("r"))

    def mat(v):
        if isinstance(v, str):
            return linalg.load_matrix_csv(base / v)
        return np.asarray(v, dtype=float)

    return GevProblem(mat(obj["A"]), mat(obj["B"]), int(obj.get("r", 1)))


@dataclass
class RunConfig:
    setting: int | str = 1
    d: int = 50
    r: int | None = None
    eta: float = 1e-3
    iters: int = 20_000
    n_draws: int = 40
    seeds: list[int] = field(default_factory=lambda: master_seeds(0, 20))
    output_dir: str = "runs"
    oracle: dict = field(default_factory=lambda: {"kind": "gauss_cov"})
    mode: str = "combined"
    record_stride: int = 100
    init: str = "random"
    problem: dict | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        if self.r is not None and not self.d >= self.r >= 1:
            raise ValidationError("need d >= r >= 1")
        if self.init not in ("random", "optimum"):
            raise ValidationError("init must be 'random' or 'optimum'")
        Mode(self.mode)

    @classmethod
    def from_dict(cls, cfg: dict) -> "RunConfig":
        cfg = dict(cfg)
        if "seeds" not in cfg:
            cfg["seeds"] = master_seeds(int(cfg.pop("master_seed", 0)), int(cfg.pop("n_seeds", 20)))
        else:
            cfg.pop("master_seed", None)
            cfg.pop("n_seeds", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**cfg)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def problem_for(self, seed: int) -> GevProblem:
        if self.setting == "custom":
            if self.problem is None:
                raise ValidationError("custom setting needs a 'problem' entry")
            return load_problem(self.problem)
        return build_setting(int(self.setting), self.d, derive_seed(seed, ROLE_PROBLEM), self.r)

    def oracles_for(self, p: GevProblem, seed: int) -> tuple[OracleSpec, OracleSpec]:
        cfg = {"n_draws": self.n_draws, **self.oracle}
        s = derive_seed(seed, ROLE_ORACLE)
        return spec_from_config(cfg, p.A, s), spec_from_config(cfg, p.B, s)


@dataclass
class SeedResult:
    seed: int
    derived: dict
    initial_error: float
    final_error: float
    final_alignment: float
    diverged: bool
    message: str
    wall_s: float
    records: list = field(repr=False, default_factory=list)


def run_seed(config: RunConfig, seed: int) -> SeedResult:
    p = config.problem_for(seed)
    specA, specB = config.oracles_for(p, seed)
    init_seed = derive_seed(seed, ROLE_INIT)
    scfg = SghaConfig(eta=config.eta, max_iters=config.iters, mode=config.mode,
                      record_stride=config.record_stride, init_seed=init_seed)
    X0 = ground_truth(p).X if config.init == "optimum" else None
    derived = {"problem": derive_seed(seed, ROLE_PROBLEM), "oracle": specA.seed, "init": init_seed}
    t0 = time.perf_counter()
    try:
        traj, state = run(p, specA, specB, scfg, X0=X0)
    except DivergenceError as exc:
        last = exc.last_record
        return SeedResult(seed, derived, math.nan, math.nan, math.nan, True,
                          f"diverged at k={exc.k}: {exc}; last record {last}",
                          time.perf_counter() - t0, [])
    wall = time.perf_counter() - t0
    return SeedResult(seed, derived, traj.records[0].error, traj.records[-1].error,
                      alignment(p, state.X), False, "", wall, traj.records)


@dataclass
class SweepSummary:
    config: RunConfig
    results: list[SeedResult]
    iters: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def ok(self) -> bool:
        return not any(r.diverged for r in self.results)

    @property
    def final_errors(self) -> np.ndarray:
        return np.array([r.final_error for r in self.results])


def aggregate(config: RunConfig, results: list[SeedResult]) -> SweepSummary:
    good = [r for r in results if not r.diverged]
    if not good:
        empty = np.zeros(0)
        return SweepSummary(config, results, empty.astype(int), empty, empty, empty, empty, empty)
    n = min(len(r.records) for r in good)
    iters = np.array([rec.k for rec in good[0].records[:n]], dtype=np.int64)
    E = np.array([[rec.error for rec in r.records[:n]] for r in good])
    q = np.quantile(E, [0.25, 0.5, 0.75], axis=0)
    return SweepSummary(config, results, iters, q[1], q[0], q[2], E.min(axis=0), E.max(axis=0))


def write_trajectory_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        for rec in records:
            w.writerow([fmt(rec.k), fmt(rec.error), fmt(rec.lagrangian), fmt(rec.feasibility),
                        fmt(rec.wallclock_ns)])


def version_string() -> str:
    try:
        from importlib.metadata import version

        base = version("artifact")
    except Exception:
        base = "0.0.0"
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              capture_output=True, text=True, timeout=5,
                              cwd=Path(__file__).resolve().parent)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def emit_summary(summary: SweepSummary, path) -> Path:
    """Write the quantile CSV at ``path`` and a JSON sidecar next to it."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in zip(summary.iters, summary.median, summary.q25, summary.q75,
                       summary.lo, summary.hi):
            w.writerow([fmt(v) for v in row])
    walls = np.array([r.wall_s for r in summary.results])
    side = {
        "version": version_string(),
        "config": asdict(summary.config),
        "ok": summary.ok,
        "seeds": [
            {"seed": r.seed, "derived": r.derived, "initial_error": r.initial_error,
             "final_error": r.final_error, "final_alignment": r.final_alignment,
             "diverged": r.diverged, "message": r.message}
            for r in summary.results
        ],
        "wallclock_s": {"total": float(walls.sum()), "mean": float(walls.mean()),
                        "max": float(walls.max())} if walls.size else {},
    }
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(side, indent=2, default=_json_default) + "\n")
    return sidecar


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))


def run_experiment(config: RunConfig, jobs: int = 1, write: bool = True) -> SweepSummary:
    """One SGHA run per seed, then aggregate; results are ordered as ``config.seeds``."""
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        results = [run_seed(config, s) for s in config.seeds]
    for r in results:
        if r.diverged:
            log.error("seed %d: %s", r.seed, r.message)
    summary = aggregate(config, results)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            write_trajectory_csv(out / f"traj_seed{r.seed}.csv", r.records)
        emit_summary(summary, out / "summary.csv")
    return summary
