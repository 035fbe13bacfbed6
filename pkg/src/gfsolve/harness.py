"""Monte-Carlo experiment driver: random injections, gap statistics, reports.

Randomness is reproducible by construction: each sample gets its own
generator seeded from (seed, sample_id), so batch parallelism cannot change
the draws, and normals come from a Box-Muller transform of the uniform
stream rather than a platform-dependent sampler.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .misocp import SolveResult, solve_gf
from .network import GasNetwork, NetworkError
from .tolerances import DEFAULT_BIG_M, EPS_EXACT

CSV_HEADER = "sample_id,status,gap,objective,runtime_ms"

# Reporting label for gaps above the exactness threshold but at most this.
MINOR_GAP = 1e-3


@dataclass(frozen=True)
class McConfig:
    q0: np.ndarray
    n_samples: int
    balancing_node: int
    sigma: float = 1.0
    seed: int = 0
    big_m: float = DEFAULT_BIG_M
    time_limit: float | None = None
    jobs: int = 1
    measure_runtime: bool = True

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass
class SampleRecord:
    sample_id: int
    status: str          # solved | inexact-minor | inexact | infeasible | timeout
    feasible: bool
    gap: float | None
    objective: float | None
    runtime_ms: float
    certificate: dict | None = None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "status": self.status,
            "feasible": self.feasible,
            "gap": self.gap,
            "objective": self.objective,
            "runtime_ms": self.runtime_ms,
            "certificate": self.certificate,
        }


@dataclass
class McReport:
    records: list[SampleRecord]
    aggregates: dict | None
    seed: int
    sigma: float
    n_samples: int

    def ranked_gaps(self) -> list[float]:
        return sorted(r.gap for r in self.records if r.feasible and r.gap is not None)

    def to_dict(self) -> dict:
        return {
            "config": {"seed": self.seed, "sigma": self.sigma,
                       "n_samples": self.n_samples},
            "records": [r.to_dict() for r in self.records],
            "aggregates": self.aggregates,
            "series": {
                "ranked_gap": self.ranked_gaps(),
                "runtime_ms": [r.runtime_ms for r in self.records],
            },
        }


def sample_generator(seed: int, sample_id: int) -> np.random.Generator:
    """Independent substream for one sample, keyed by (seed, sample_id)."""
    return np.random.default_rng(np.random.SeedSequence([seed, sample_id]))


def _gaussians(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard normals via Box-Muller on the uniform stream."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)          # in (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(2.0 * math.pi * u2)
    out[1::2] = r * np.sin(2.0 * math.pi * u2)
    return out[:n]


def perturb_injections(q0: np.ndarray, sigma: float, balancing_node: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Add N(0, sigma^2) noise everywhere but the balancing node, then set
    that node to the negative sum of the rest so the draw balances exactly."""
    q0 = np.asarray(q0, dtype=float)
    n = q0.size
    if not 0 <= balancing_node < n:
        raise NetworkError("balancing node index out of range")
    others = [i for i in range(n) if i != balancing_node]
    q = q0.copy()
    noise = _gaussians(rng, len(others))
    for k, i in enumerate(others):
        q[i] = q0[i] + sigma * noise[k]
    q[balancing_node] = -math.fsum(q[i] for i in others)
    return q


def _classify(result: SolveResult) -> tuple[str, bool]:
    if result.status == "infeasible":
        return "infeasible", False
    if result.status == "timeout":
        return "timeout", False
    if result.status == "solved":
        return "solved", True
    label = "inexact-minor" if (result.gap is not None
                                and result.gap <= MINOR_GAP) else "inexact"
    return label, True


def _run_sample(args) -> SampleRecord:
    net, cfg, sample_id = args
    rng = sample_generator(cfg.seed, sample_id)
    q = perturb_injections(cfg.q0, cfg.sigma, cfg.balancing_node, rng)
    t0 = time.perf_counter()
    result = solve_gf(net, q, big_m=cfg.big_m, time_limit=cfg.time_limit)
    runtime_ms = (time.perf_counter() - t0) * 1000.0 if cfg.measure_runtime else 0.0
    status, feasible = _classify(result)
    return SampleRecord(
        sample_id=sample_id, status=status, feasible=feasible,
        gap=result.gap, objective=result.objective, runtime_ms=runtime_ms,
        certificate=result.certificate)


def run_monte_carlo(net: GasNetwork, cfg: McConfig) -> McReport:
    """Solve every perturbed sample; never aborts the batch on one failure."""
    q0 = np.asarray(cfg.q0, dtype=float)
    if q0.shape != (net.n_nodes,):
        raise NetworkError("base injections do not match the node count")
    tasks = [(net, cfg, i) for i in range(cfg.n_samples)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(_run_sample, tasks))
    else:
        records = [_run_sample(t) for t in tasks]
    records.sort(key=lambda r: r.sample_id)
    return McReport(records=records, aggregates=_aggregate(records),
                    seed=cfg.seed, sigma=cfg.sigma, n_samples=cfg.n_samples)


def _aggregate(records: list[SampleRecord]) -> dict:
    feasible = [r for r in records if r.feasible]
    out: dict = {
        "n_samples": len(records),
        "feasible": len(feasible),
        "infeasible": sum(1 for r in records if r.status == "infeasible"),
        "timeout": sum(1 for r in records if r.status == "timeout"),
    }
    if feasible:
        gaps = np.sort([r.gap for r in feasible])
        out["gap_quantiles"] = {
            "p50": float(np.quantile(gaps, 0.5)),
            "p90": float(np.quantile(gaps, 0.9)),
            "p95": float(np.quantile(gaps, 0.95)),
            "max": float(gaps[-1]),
        }
        out["frac_gap_below_1e-4"] = float(np.mean(gaps < EPS_EXACT))
        out["frac_gap_below_1e-3"] = float(np.mean(gaps < MINOR_GAP))
        runtimes = np.array([r.runtime_ms for r in feasible])
        out["runtime_ms"] = {
            "mean": float(np.mean(runtimes)),
            "median": float(np.median(runtimes)),
        }
    else:
        out["gap_quantiles"] = None
        out["frac_gap_below_1e-4"] = None
        out["frac_gap_below_1e-3"] = None
        out["runtime_ms"] = None
    return out


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_to_csv(report: McReport) -> str:
    lines = [CSV_HEADER]
    for r in report.records:
        lines.append(",".join([
            str(r.sample_id), r.status, _csv_cell(r.gap),
            _csv_cell(r.objective), _csv_cell(r.runtime_ms)]))
    return "\n".join(lines) + "\n"


def report_to_json(report: McReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)


def report_from_json(text: str) -> McReport:
    doc = json.loads(text)
    records = [SampleRecord(
        sample_id=r["sample_id"], status=r["status"], feasible=r["feasible"],
        gap=r["gap"], objective=r["objective"], runtime_ms=r["runtime_ms"],
        certificate=r.get("certificate")) for r in doc["records"]]
    cfg = doc["config"]
    return McReport(records=records, aggregates=doc["aggregates"],
                    seed=cfg["seed"], sigma=cfg["sigma"],
                    n_samples=cfg["n_samples"])


def emit_report(report: McReport, fmt: str, path) -> None:
    """Write the report; CSV carries the per-sample rows, JSON everything."""
    if fmt == "csv":
        payload = report_to_csv(report)
    elif fmt == "json":
        payload = report_to_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
