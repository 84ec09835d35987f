"""Experiment runner: optimizer x seed grids over a synthetic problem.

An experiment is described by a JSON document::

    {
      "name": "rate",
      "problem": {"kind": "point_mass_abs", "dim": 2, "w_star_norm": 1.0},
      "noise": {"kind": "laplace", "epsilon": 1.0},
      "optimizers": [{"kind": "banco"}, {"kind": "sgd", "eta": 0.003},
                     {"kind": "sgd-adaptive", "radius": 1.0},
                     {"kind": "sgd-grid", "grid": [1e-4, 1e-3, 1e-2]}],
      "T": [1000, 10000, 100000],
      "n_seeds": 10,
      "checkpoints": [100, 1000]
    }

``problem.dim``, ``T`` and the noise parameter (``epsilon`` for Laplace,
``scale`` for Gaussian) have no defaults. Replica ``i`` uses seed
``seed_base + i``, and every optimizer on that replica sees the same data and
noise stream.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .banco import RunConfig, banco_run, regret_decomposition_check
from .baselines import SgdConfig, default_grid, sgd_run
from .ledger import BudgetExceededError, PrivacyLedger
from .magnitude import magnitude_quadrature_oracle
from .noise import MechanismKind, derive_params
from .problems import ProblemKind, SanitizedOracle, make_problem, risk

OPTIMIZER_KINDS = ("banco", "sgd", "sgd-adaptive", "sgd-grid")


class ConfigError(ValueError):
    """The experiment description is invalid."""


@dataclass
class OptimizerSpec:
    kind: str
    eta: float | None = None
    radius: float | None = None
    grid: list | None = None

    @property
    def label(self):
        if self.kind == "sgd":
            return f"sgd(eta={self.eta:.6g})"
        if self.kind == "sgd-adaptive":
            return f"sgd-adaptive(D={self.radius:.6g})"
        return self.kind

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class ExperimentSpec:
    problem: dict
    noise: dict
    optimizers: list
    T: list
    n_seeds: int
    checkpoints: list | None = None
    seed_base: int = 0
    budget: int | None = None
    G: float | None = None
    n_mc: int = 20_000
    name: str = "experiment"
    output: str | None = None

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for req in ("problem", "noise", "optimizers", "T", "n_seeds"):
            if req not in raw:
                raise ConfigError(f"missing required field {req!r}")
        data = dict(raw)
        T = data["T"]
        data["T"] = [T] if isinstance(T, int) else list(T)
        data["optimizers"] = [
            o if isinstance(o, OptimizerSpec) else OptimizerSpec(**o) for o in data["optimizers"]]
        spec = cls(**data)
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        if "dim" not in self.problem:
            raise ConfigError("problem.dim is required")
        if "kind" not in self.problem:
            raise ConfigError("problem.kind is required")
        try:
            ProblemKind(self.problem["kind"])
            kind = MechanismKind(self.noise.get("kind"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if kind is MechanismKind.LAPLACE and "epsilon" not in self.noise:
            raise ConfigError("noise.epsilon is required for the Laplace mechanism")
        if kind is MechanismKind.GAUSSIAN and "scale" not in self.noise:
            raise ConfigError("noise.scale is required for the Gaussian mechanism")
        if "w_star" not in self.problem and "w_star_norm" not in self.problem:
            raise ConfigError("problem needs w_star or w_star_norm")
        if not self.T or any(isinstance(t, bool) or int(t) != t or t < 1 for t in self.T):
            raise ConfigError(f"T must be positive integers, got {self.T}")
        self.T = sorted(int(t) for t in self.T)
        if len(set(self.T)) != len(self.T):
            raise ConfigError("T values must be distinct")
        if isinstance(self.n_seeds, bool) or int(self.n_seeds) != self.n_seeds or self.n_seeds < 1:
            raise ConfigError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if self.checkpoints is not None:
            cps = [int(c) for c in self.checkpoints]
            if any(c < 1 or c > max(self.T) for c in cps):
                raise ConfigError(f"checkpoints must lie in [1, {max(self.T)}]")
            self.checkpoints = sorted(set(cps))
        if self.budget is not None and self.budget < 0:
            raise ConfigError("budget must be non-negative")
        if not self.optimizers:
            raise ConfigError("at least one optimizer is required")
        for opt in self.optimizers:
            if opt.kind not in OPTIMIZER_KINDS:
                raise ConfigError(f"unknown optimizer {opt.kind!r}; expected one of {OPTIMIZER_KINDS}")
            if opt.kind == "sgd" and not (opt.eta and opt.eta > 0):
                raise ConfigError("sgd needs a positive eta")
            if opt.kind == "sgd-adaptive" and not (opt.radius and opt.radius > 0):
                raise ConfigError("sgd-adaptive needs a positive radius")
            if opt.kind == "sgd-grid" and opt.grid is not None:
                if not opt.grid or any(not e > 0 for e in opt.grid):
                    raise ConfigError("sgd-grid needs a nonempty grid of positive steps")
        labels = [o.label for o in self.optimizers]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate optimizers: {labels}")

    def build_problem(self):
        p = dict(self.problem)
        kind = p.pop("kind")
        dim = p.pop("dim")
        seed = p.pop("seed", 0)
        return make_problem(kind, dim, seed=seed, **p)

    def build_noise(self):
        kind = MechanismKind(self.noise["kind"])
        param = self.noise.get("epsilon") if kind is MechanismKind.LAPLACE else self.noise.get("scale")
        return derive_params(kind, param, int(self.problem["dim"]))

    def checkpoints_for(self, T):
        cps = [c for c in (self.checkpoints or []) if c <= T]
        return sorted(set(cps) | {T})

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["optimizers"] = [o.to_dict() for o in self.optimizers]
        return out


@dataclass
class ResultRow:
    optimizer: str
    problem: str
    d: int
    epsilon: float | None
    w_star_norm: float
    T: int
    seed: int
    checkpoint: int
    risk: float
    risk_se: float
    requests: int
    wall_time: float


ROW_FIELDS = [f.name for f in fields(ResultRow)]


@dataclass
class _Unit:
    index: int
    optimizer: str
    group: str
    kind: str
    T: int
    seed: int
    oracle_seed: int
    eta: float | None
    radius: float | None
    shard_budget: int | None
    checkpoints: list


@dataclass
class _UnitResult:
    index: int
    averages: dict
    calls: int
    wall_time: float
    error: str | None
    checks: list = field(default_factory=list)


def _live_checks(trace, coin_y, a, rng, n_comparators=10, n_magnitude=8):
    # Pathwise regret split and closed form vs quadrature on the magnitudes actually played.
    out = []
    T, d = trace.gradients.shape
    worst = 0.0
    for _ in range(n_comparators):
        u = rng.standard_normal(d) * rng.uniform(0.0, 10.0)
        lhs, rm, rd = regret_decomposition_check(trace.gradients, trace.magnitudes, trace.directions, u)
        worst = max(worst, abs(lhs - rm - rd) / (1.0 + abs(lhs)))
    out.append({"name": "regret_decomposition", "value": float(worst), "passed": bool(worst <= 1e-9)})
    coin_sums = np.cumsum(trace.coins)
    worst = 0.0
    for t in rng.choice(np.arange(1, T), size=min(n_magnitude, max(T - 1, 0)), replace=False):
        # trace.magnitudes[t] is the bet after t coins.
        expected = magnitude_quadrature_oracle(coin_sums[t - 1], t * coin_y, a, tol=1e-12)
        got = trace.magnitudes[t]
        if expected != 0.0 and math.isfinite(expected):
            worst = max(worst, abs(got - expected) / abs(expected))
    out.append({"name": "magnitude_vs_quadrature", "value": float(worst), "passed": bool(worst <= 1e-8)})
    return out


def _execute(args):
    unit, problem, noise, G, trace = args
    shard = PrivacyLedger(noise.epsilon, unit.shard_budget)
    oracle = SanitizedOracle(problem, noise, shard, seed=unit.oracle_seed, run_label=unit.group)
    checks = []
    if unit.kind == "banco":
        cfg = RunConfig(problem.dim, G, noise, unit.T, unit.seed)
        res = banco_run(cfg, oracle, unit.checkpoints, trace=trace, stop_on=(BudgetExceededError,))
        if trace and res.trace is not None and res.calls > 1:
            from .magnitude import BettingState

            bs = BettingState.from_noise(G, noise.sigma_sq, noise.b)
            checks = _live_checks(res.trace, bs.y_per_step, bs.a, np.random.default_rng(unit.seed))
    else:
        cfg = SgdConfig(problem.dim, unit.T, eta=unit.eta, adaptive=unit.kind == "sgd-adaptive",
                        radius=unit.radius, seed=unit.seed)
        res = sgd_run(cfg, oracle, unit.checkpoints, stop_on=(BudgetExceededError,))
    averages = dict(res.checkpoints)
    if res.truncated and res.calls > 0 and res.calls not in averages:
        averages[res.calls] = res.average
    return _UnitResult(unit.index, averages, res.calls, res.wall_time,
                       None if res.error is None else str(res.error), checks), shard


def _plan(spec, noise):
    units = []
    remaining = spec.budget
    for T in spec.T:
        cps = spec.checkpoints_for(T)
        for opt in spec.optimizers:
            for i in range(spec.n_seeds):
                seed = spec.seed_base + i
                if opt.kind == "sgd-grid":
                    grid = opt.grid if opt.grid is not None else default_grid(
                        noise.epsilon or 1.0, noise.dim, T)
                    members = [(f"sgd-grid[eta={eta:.6g}]", eta,
                                int(np.random.SeedSequence([seed, k + 1]).generate_state(1)[0]))
                               for k, eta in enumerate(grid)]
                else:
                    members = [(opt.label, opt.eta, seed)]
                for label, eta, oseed in members:
                    shard = None
                    if remaining is not None:
                        shard = min(T, remaining)
                        remaining -= shard
                    units.append(_Unit(len(units), label, opt.label, opt.kind, T, seed, oseed,
                                       eta, opt.radius, shard, cps))
    return units


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list
    summary: dict
    ledger: PrivacyLedger

    @property
    def ok(self):
        return self.summary["ok"]


def run_experiment(spec, workers=1, trace=False, record_timing=True):
    """Run every (T, optimizer, seed) combination and evaluate checkpoints.

    Budget is reserved run by run in a fixed order before anything executes,
    so truncation does not depend on ``workers``.
    """
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    problem = spec.build_problem()
    noise = spec.build_noise()
    G = spec.G if spec.G is not None else problem.G
    units = _plan(spec, noise)
    jobs = [(u, problem, noise, G, trace) for u in units]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_execute, jobs))
    else:
        outcomes = [_execute(j) for j in jobs]

    ledger = PrivacyLedger(noise.epsilon, spec.budget)
    for _, shard in outcomes:
        ledger.merge(shard)

    eval_sample = select_sample = None
    if problem.has_data:
        eval_sample = problem.sample(np.random.default_rng([spec.seed_base, 1_000_003]), spec.n_mc)
        select_sample = problem.sample(np.random.default_rng([spec.seed_base, 2_000_003]), spec.n_mc)
    risk_star, risk_star_se = risk(problem, problem.w_star, sample=eval_sample)

    rows = []
    by_unit = {}
    checks = []
    truncated = []
    for unit, (res, _) in zip(units, outcomes):
        prev = 0
        unit_rows = []
        for t in sorted(res.averages):
            r, se = risk(problem, res.averages[t], sample=eval_sample)
            unit_rows.append(ResultRow(
                unit.optimizer, problem.kind.value, problem.dim, noise.epsilon, problem.w_star_norm,
                unit.T, unit.seed, t, r, se, t - prev, res.wall_time if record_timing else 0.0))
            prev = t
        rows.extend(unit_rows)
        by_unit[unit.index] = (unit, res, unit_rows)
        for c in res.checks:
            checks.append({"optimizer": unit.optimizer, "T": unit.T, "seed": unit.seed, **c})
        if res.error is not None:
            truncated.append({"optimizer": unit.optimizer, "T": unit.T, "seed": unit.seed,
                              "calls": res.calls, "error": res.error})

    summary = _summarize(spec, problem, by_unit, risk_star, select_sample)
    summary["risk_at_w_star"] = risk_star
    summary["risk_at_w_star_se"] = risk_star_se
    summary["truncated"] = truncated
    row_total = sum(r.requests for r in rows)
    checks.append({"name": "ledger_consistency", "value": row_total,
                   "passed": bool(row_total == ledger.request_count)})
    summary["checks"] = checks
    summary["ok"] = not truncated and all(c["passed"] for c in checks)
    return ExperimentResult(spec, rows, summary, ledger)


def _stats(values):
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "n": int(arr.size)}


def _summarize(spec, problem, by_unit, risk_star, select_sample):
    per_opt = {}
    for opt in spec.optimizers:
        entry = {}
        for T in spec.T:
            units = [(u, res, rows) for u, res, rows in by_unit.values()
                     if u.group == opt.label and u.T == T]
            if opt.kind == "sgd-grid":
                entry[str(T)] = _summarize_grid(problem, units, risk_star, select_sample)
                continue
            finals = [rows[-1].risk - risk_star for _, res, rows in units
                      if rows and rows[-1].checkpoint == T]
            per_cp = {}
            for cp in spec.checkpoints_for(T):
                vals = [r.risk - risk_star for _, _, rows in units for r in rows if r.checkpoint == cp]
                if vals:
                    per_cp[str(cp)] = _stats(vals)
            entry[str(T)] = {
                "final_suboptimality": _stats(finals) if finals else None,
                "checkpoints": per_cp,
                "requests": sum(res.calls for _, res, _ in units),
            }
        per_opt[opt.label] = entry

    slopes = {}
    if len(spec.T) >= 3:
        for label, entry in per_opt.items():
            pts = [(int(T), e["final_suboptimality"]["mean"]) for T, e in entry.items()
                   if e.get("final_suboptimality")]
            try:
                slopes[label] = fit_rate_slope(pts)
            except ValueError as exc:
                slopes[label] = {"error": str(exc)}
    return {"optimizers": per_opt, "rate_slopes": slopes}


def _summarize_grid(problem, units, risk_star, select_sample):
    # Best eta per seed, chosen on a selection sample separate from the reported risk.
    by_seed = {}
    for u, res, rows in units:
        by_seed.setdefault(u.seed, []).append((u, res, rows))
    chosen = []
    best_etas = []
    per_eta = {}
    for seed in sorted(by_seed):
        best = None
        for u, res, rows in by_seed[seed]:
            if not rows or rows[-1].checkpoint != u.T:
                continue
            sel, _ = risk(problem, res.averages[u.T], sample=select_sample)
            per_eta.setdefault(f"{u.eta:.6g}", []).append(rows[-1].risk - risk_star)
            if best is None or sel < best[0]:
                best = (sel, u.eta, rows[-1].risk - risk_star)
        if best is not None:
            chosen.append(best[2])
            best_etas.append(best[1])
    return {
        "final_suboptimality": _stats(chosen) if chosen else None,
        "best_eta": best_etas,
        "per_eta_suboptimality": {k: _stats(v) for k, v in per_eta.items()},
        "requests": sum(res.calls for _, res, _ in units),
    }


def fit_rate_slope(points):
    """Least-squares fit of ``log(subopt) = intercept + slope * log(T)``."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    T = np.array([p[0] for p in pts], dtype=float)
    s = np.array([p[1] for p in pts], dtype=float)
    if np.any(T <= 0) or np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValueError("T and suboptimality values must be positive and finite")
    lx, ly = np.log(T), np.log(s)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (intercept + slope * lx)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])
    return buf.getvalue()


def emit_results(rows, summary, fmt, path, spec=None, ledger=None):
    """Write rows as CSV or the whole result as JSON; returns the path."""
    if fmt == "csv":
        text = rows_to_csv(rows)
    elif fmt == "json":
        doc = {
            "spec": spec.to_dict() if hasattr(spec, "to_dict") else spec,
            "rows": [asdict(r) for r in rows],
            "summary": summary,
            "ledger": ledger.report() if hasattr(ledger, "report") else ledger,
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def rows_from_json(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [ResultRow(**r) for r in doc["rows"]]
