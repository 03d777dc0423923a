"""Experiment grids: replicated certificate-vs-truth runs over (d, n, sigma0).

A spec lists rows of problem sizes, a replicate count and a base seed; each
(row, replicate) cell derives its own data/audit/chain seeds from the base
through spawn keys, so results do not depend on execution order or worker
count. Reports carry the full config echo plus a content hash of the spec so
each number stays attributable.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .bound import AuditConfig, audit
from .errors import AssumptionViolationError, MapNotConvergedError, NonFiniteObjectiveError
from .laplace import fit_laplace
from .mcmc import estimate_true_kl, get_preset
from .models import SyntheticDatasetConfig, generate_dataset, random_gaussian_model

_DATA_STREAM = 0
_AUDIT_STREAM = 1
_CHAIN_STREAM = 2

CSV_COLUMNS = (
    "row",
    "replicate",
    "model",
    "d",
    "n",
    "sigma0",
    "seed",
    "kl",
    "kl_se",
    "approx_bound",
    "detailed_bound",
    "efficiency",
    "status",
)


@dataclass(frozen=True)
class ExperimentRow:
    d: int
    n: int
    sigma0: float
    model: str = "logistic"

    def validate(self) -> None:
        if self.model not in ("logistic", "gaussian"):
            raise ValueError(f"row model must be 'logistic' or 'gaussian', got {self.model!r}")
        if self.d < 1:
            raise ValueError("row d must be >= 1")
        if self.n < 0:
            raise ValueError("row n must be >= 0")
        if not self.sigma0 > 0:
            raise ValueError("row sigma0 must be positive")


@dataclass(frozen=True)
class ExperimentSpec:
    rows: tuple
    replicates: int
    seed: int
    n_directions: int = 256
    quadrature_nodes: int = 64
    delta4_mode: str = "analytic"
    bound_form: str = "both"
    mcmc_preset: str = "desk"
    estimate_truth: bool = True

    def validate(self) -> None:
        if not self.rows:
            raise ValueError("spec needs at least one row")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        for row in self.rows:
            row.validate()

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["rows"] = [asdict(r) for r in self.rows]
        return out

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentSpec":
        rows = tuple(ExperimentRow(**row) for row in payload["rows"])
        kwargs = {k: v for k, v in payload.items() if k != "rows"}
        spec = cls(rows=rows, **kwargs)
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json_dict(json.load(handle))


@dataclass(frozen=True)
class ReplicateResult:
    row: int
    replicate: int
    model: str
    d: int
    n: int
    sigma0: float
    seed: int
    kl: float
    kl_se: float
    approx_bound: float
    detailed_bound: float
    efficiency: float
    status: str
    error: str | None = None


@dataclass(frozen=True)
class RowAggregate:
    row: int
    model: str
    d: int
    n: int
    sigma0: float
    replicates: int
    n_failed: int
    median_kl: float
    median_kl_se: float
    median_approx_bound: float
    median_detailed_bound: float
    median_efficiency: float


def _cell_seed(base: int, row: int, replicate: int, stream: int) -> int:
    ss = np.random.SeedSequence(base, spawn_key=(row, replicate, stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_cell(spec: ExperimentSpec, row_idx: int, replicate: int) -> ReplicateResult:
    row = spec.rows[row_idx]
    data_seed = _cell_seed(spec.seed, row_idx, replicate, _DATA_STREAM)
    audit_seed = _cell_seed(spec.seed, row_idx, replicate, _AUDIT_STREAM)
    chain_seed = _cell_seed(spec.seed, row_idx, replicate, _CHAIN_STREAM)
    nan = float("nan")
    try:
        if row.model == "gaussian":
            model = random_gaussian_model(row.d, data_seed)
        else:
            dataset = generate_dataset(SyntheticDatasetConfig(d=row.d, n=row.n, seed=data_seed))
            model = dataset.model(row.sigma0)
        fit = fit_laplace(model)
        report = audit(
            model,
            AuditConfig(
                n_directions=spec.n_directions,
                quadrature_nodes=spec.quadrature_nodes,
                seed=audit_seed,
                delta4_mode=spec.delta4_mode,
                bound_form=spec.bound_form,
            ),
            fit=fit,
        )
        kl = kl_se = nan
        if spec.estimate_truth:
            estimate = estimate_true_kl(model, fit, get_preset(spec.mcmc_preset, chain_seed))
            kl, kl_se = estimate.kl, estimate.standard_error
        approx = report.approx_bound if report.approx_bound is not None else nan
        detailed = report.detailed_bound if report.detailed_bound is not None else nan
        efficiency = kl / approx if (approx and approx > 0 and math.isfinite(kl)) else nan
        return ReplicateResult(
            row=row_idx,
            replicate=replicate,
            model=row.model,
            d=row.d,
            n=row.n,
            sigma0=row.sigma0,
            seed=data_seed,
            kl=kl,
            kl_se=kl_se,
            approx_bound=approx,
            detailed_bound=detailed,
            efficiency=efficiency,
            status="ok",
        )
    except (AssumptionViolationError, MapNotConvergedError, NonFiniteObjectiveError) as exc:
        return ReplicateResult(
            row=row_idx,
            replicate=replicate,
            model=row.model,
            d=row.d,
            n=row.n,
            sigma0=row.sigma0,
            seed=data_seed,
            kl=nan,
            kl_se=nan,
            approx_bound=nan,
            detailed_bound=nan,
            efficiency=nan,
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
        )


def _median(values) -> float:
    vals = [v for v in values if math.isfinite(v)]
    return float(np.median(vals)) if vals else float("nan")


@dataclass(frozen=True)
class ExperimentReport:
    spec: dict
    spec_sha256: str
    replicates: tuple
    aggregates: tuple

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec,
            "spec_sha256": self.spec_sha256,
            "replicates": [asdict(r) for r in self.replicates],
            "aggregates": [asdict(a) for a in self.aggregates],
        }

    def to_csv(self, pretty: bool = False) -> str:
        def fmt(value) -> str:
            if value is None or (isinstance(value, float) and not math.isfinite(value)):
                return "NA"
            if isinstance(value, float):
                return f"{value:.6g}" if pretty else f"{value:.17g}"
            return str(value)

        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.replicates:
            cells = (
                r.row, r.replicate, r.model, r.d, r.n, r.sigma0, r.seed,
                r.kl, r.kl_se, r.approx_bound, r.detailed_bound, r.efficiency, r.status,
            )
            buf.write(",".join(fmt(c) for c in cells) + "\n")
        for a in self.aggregates:
            cells = (
                a.row, "median", a.model, a.d, a.n, a.sigma0, "NA",
                a.median_kl, a.median_kl_se, a.median_approx_bound,
                a.median_detailed_bound, a.median_efficiency,
                f"ok:{a.replicates - a.n_failed}/failed:{a.n_failed}",
            )
            buf.write(",".join(fmt(c) for c in cells) + "\n")
        return buf.getvalue()


def spec_content_hash(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec.to_json_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """Run every (row, replicate) cell and aggregate per-row medians.

    Cells are independent and individually seeded, so ``jobs > 1`` fans them
    out over threads without changing any output; results are emitted in
    (row, replicate) order regardless of completion order. Per-cell failures
    are recorded in the report and do not stop the run.
    """
    spec.validate()
    cells = [(r, k) for r in range(len(spec.rows)) for k in range(spec.replicates)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda cell: _run_cell(spec, *cell), cells))
    else:
        results = [_run_cell(spec, *cell) for cell in cells]
    results.sort(key=lambda r: (r.row, r.replicate))

    aggregates = []
    for row_idx, row in enumerate(spec.rows):
        mine = [r for r in results if r.row == row_idx]
        ok = [r for r in mine if r.status == "ok"]
        aggregates.append(
            RowAggregate(
                row=row_idx,
                model=row.model,
                d=row.d,
                n=row.n,
                sigma0=row.sigma0,
                replicates=len(mine),
                n_failed=len(mine) - len(ok),
                median_kl=_median([r.kl for r in ok]),
                median_kl_se=_median([r.kl_se for r in ok]),
                median_approx_bound=_median([r.approx_bound for r in ok]),
                median_detailed_bound=_median([r.detailed_bound for r in ok]),
                median_efficiency=_median([r.efficiency for r in ok]),
            )
        )
    return ExperimentReport(
        spec=spec.to_json_dict(),
        spec_sha256=spec_content_hash(spec),
        replicates=tuple(results),
        aggregates=tuple(aggregates),
    )
