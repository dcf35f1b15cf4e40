"""Experiment pipeline: dataset generation, constant-space and parametric
benchmarks, SY-RMI mining and report emission."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .metrics import oracle_checksum, reduction_factor, space_pct, time_queries, time_training
from .models import (
    BiCriteriaConfig,
    BudgetError,
    FullRange,
    bicriteria_pgm,
    build_candidate_grid,
    build_pgm,
    build_radix_spline,
    composed_checksum,
    instantiate_sy_rmi,
    mine_sy_rmi,
    train_atomic,
    train_ko,
)
from .models.rmi import (
    DEFAULT_BUDGETS,
    calibration_batch,
    load_spec,
    save_pool,
    save_spec,
    time_model,
)
from .search import KERNELS, eytzinger_kernel, eytzinger_params, search_checksum
from .tables import (
    LEVEL_SIZES,
    DESK_L4_SIZE,
    QueryBatch,
    SortedTable,
    build_eytzinger,
    load_keys,
    make_query_batch,
    sample_from_keys,
    store_keys,
    synthetic_keys,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
THREADS_ENV = "LEARNED_STS_THREADS"
DEFAULT_QUERIES = 1_000_000
DEFAULT_CUTOFF_PCT = 10.0
DEFAULT_A_VALUES = (0.5, 1.0, 1.5, 2.0)
CONSTANT_METHODS = ("BBS", "BFS", "K-BBS", "K-BFS", "BFE", "IBS", "TIP")
CONSTANT_MODELS = ("none", "L", "Q", "C", "KO")
# BFE searches the Eytzinger layout, which has no sorted ranges to narrow.
MODEL_METHODS = {
    "none": CONSTANT_METHODS,
    "L": ("BBS", "BFS", "K-BBS", "K-BFS", "IBS", "TIP"),
    "Q": ("BBS", "BFS", "K-BBS", "K-BFS", "IBS", "TIP"),
    "C": ("BBS", "BFS", "K-BBS", "K-BFS", "IBS", "TIP"),
    "KO": ("BBS", "BFS"),
}
PGM_EPS_GRID = (16, 32, 64, 128, 256, 512, 1024, 2048)
RS_EPS_GRID = (16, 32, 64, 128, 256, 512)


class BenchError(RuntimeError):
    pass


def worker_count() -> int:
    """Training threads, capped by ``LEARNED_STS_THREADS`` (default: CPU count)."""
    cap = os.environ.get(THREADS_ENV)
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            raise BenchError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


@dataclass
class RunConfig:
    data: list = field(default_factory=list)
    levels: tuple = tuple(LEVEL_SIZES)
    methods: tuple = CONSTANT_METHODS
    models: tuple = CONSTANT_MODELS
    k_values: tuple = (15,)
    kary_k: int = 6
    tip_guard: int = 8
    budgets: tuple = DEFAULT_BUDGETS
    cutoff_pct: float = DEFAULT_CUTOFF_PCT
    a_values: tuple = DEFAULT_A_VALUES
    seed: int = 0
    queries: int = DEFAULT_QUERIES
    reps: int = 1
    train_reps: int = 5
    out: Path = Path("out")
    syrmi: Optional[Path] = None

    def __post_init__(self):
        if any(not b > 0 for b in self.budgets):
            raise BenchError("budgets must be positive")
        if not self.cutoff_pct > 0:
            raise BenchError("cutoff must be positive")
        if self.queries < 1:
            raise BenchError("need at least one query")
        for m in self.methods:
            if m not in CONSTANT_METHODS:
                raise BenchError(f"unknown method {m!r}")
        for m in self.models:
            if m not in CONSTANT_MODELS:
                raise BenchError(f"unknown model {m!r}")
        for lv in self.levels:
            if lv not in LEVEL_SIZES:
                raise BenchError(f"unknown level {lv!r}")
        self.out = Path(self.out)


@dataclass
class BenchRow:
    dataset: str
    level: str
    method: str
    model: str
    n: int
    model_space_bytes: int
    space_pct: float
    rf_pct: float
    train_ns_per_elem: float
    query_ns_avg: float
    seed: int
    kind: str = "constant"
    budget_pct: float = float("nan")
    params: str = ""
    checksum_ok: bool = True
    flag: str = ""


ROW_FIELDS = [f.name for f in fields(BenchRow)]
CSV_FIELDS = ["schema_version"] + ROW_FIELDS


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "meta": self.meta,
            "rows": [_jsonable(asdict(r)) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d) -> "BenchReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise BenchError(f"schema mismatch: expected {SCHEMA_VERSION}, got {d.get('schema_version')}")
        rows = []
        for r in d["rows"]:
            if set(r) != set(ROW_FIELDS):
                raise BenchError(f"schema mismatch in row fields: {sorted(set(r) ^ set(ROW_FIELDS))}")
            rows.append(BenchRow(**{k: _from_json(v) for k, v in r.items()}))
        return cls(rows, d.get("meta", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "BenchReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def all_verified(self) -> bool:
        return all(r.checksum_ok for r in self.rows)


def _jsonable(d):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _from_json(v):
    return float("nan") if v is None else v


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    name: str
    level: str
    table: SortedTable
    path: Optional[Path] = None


_NAME_RE = re.compile(r"^(?P<name>.+)_(?P<level>L[1-4])$")


def dataset_meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".ks.json")


def open_dataset(path, width: Optional[int] = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise BenchError(f"missing dataset {path}")
    meta = {}
    mp = dataset_meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    w = width or int(meta.get("width", 64))
    m = _NAME_RE.match(path.stem)
    name = meta.get("dataset") or (m.group("name") if m else path.stem)
    level = meta.get("level") or (m.group("level") if m else "L1")
    return Dataset(name, level, load_keys(path, width=w), path)


def cmd_synth_source(kind: str, n: int, out, seed: int = 0, width: int = 64) -> Path:
    """Write a synthetic SOSD source file."""
    t = synthetic_keys(kind, n, seed=seed, width=width)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store_keys(t, out)
    return out


def cmd_gen(
    source,
    level: str,
    out_dir,
    name: Optional[str] = None,
    seed: int = 0,
    trials: int = 100,
    ks_alpha: float = 0.05,
    bins: int = 64,
    width: int = 64,
    target_n: Optional[int] = None,
    full_scale: bool = False,
):
    """Sample a level-sized table from ``source`` and write it with its KS/KL report.

    L4 uses the whole source at full scale, otherwise a 2e6-key sample.
    """
    src = load_keys(source, width=width)
    if target_n is None:
        size = LEVEL_SIZES[level]
        if size is None:
            size = src.n if full_scale else min(src.n, DESK_L4_SIZE)
        target_n = size
    if target_n > src.n:
        raise BenchError(f"{level} needs {target_n} keys but the source has {src.n}")
    table, report = sample_from_keys(src, target_n, trials, ks_alpha, bins, seed, level)
    name = name or Path(source).stem
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}_{level}.bin"
    store_keys(table, path)
    meta = report.to_dict()
    meta.update({"dataset": name, "width": width, "seed": seed, "source": str(source)})
    dataset_meta_path(path).write_text(json.dumps(meta, indent=2))
    return path, report


# ---------------------------------------------------------------------------
# measurement


def method_label(method: str, cfg: RunConfig) -> str:
    return f"{method}-{cfg.kary_k}" if method.startswith("K-") else method


def _method_arg(method: str, cfg: RunConfig) -> int:
    if method.startswith("K-"):
        return cfg.kary_k
    if method == "TIP":
        return cfg.tip_guard
    return KERNELS[method][1]


def _search_fn(model, method, keys, cfg, eytz=None):
    """``queries -> checksum`` closure for a model composed with a search method."""
    n = keys.size
    if method == "BFE":
        params = eytzinger_params(eytz)
        return lambda xs: search_checksum(eytzinger_kernel, params, xs, 0, n, 0)
    kernel = KERNELS[method][0]
    arg = _method_arg(method, cfg)
    if model is None:
        return lambda xs: search_checksum(kernel, keys, xs, 0, n, arg)
    k, p = model.kernel, model.params
    return lambda xs: composed_checksum(k, p, kernel, keys, arg, xs)


def measure(
    ds: Dataset,
    q: QueryBatch,
    oracle: int,
    cfg: RunConfig,
    model,
    model_name: str,
    method: str,
    train_ns: float,
    kind: str = "constant",
    budget_pct: float = float("nan"),
    params: str = "",
    eytz=None,
) -> BenchRow:
    """Verify the composed search against the oracle checksum, then time it."""
    keys = ds.table.keys
    fn = _search_fn(model, method, keys, cfg, eytz)
    got = int(fn(q.queries))  # also compiles and warms up
    size = 0 if model is None else model.size_bytes()
    rf = reduction_factor(model if model is not None else FullRange(ds.table.n, keys.dtype), ds.table, q)
    row = BenchRow(
        dataset=ds.name,
        level=ds.level,
        method=method_label(method, cfg),
        model=model_name,
        n=ds.table.n,
        model_space_bytes=size,
        space_pct=space_pct(size, ds.table.n, ds.table.width),
        rf_pct=rf.mean_rf,
        train_ns_per_elem=train_ns,
        query_ns_avg=float("nan"),
        seed=cfg.seed,
        kind=kind,
        budget_pct=budget_pct,
        params=params,
    )
    if got != oracle:
        log.error("%s %s/%s: checksum %d != oracle %d", ds.name, model_name, method, got, oracle)
        row.checksum_ok = False
        row.flag = "mismatch"
        return row
    rec = time_queries(fn, q, repetitions=cfg.reps, warmup=False)
    row.query_ns_avg = rec.per_op_ns
    return row


def _queries_for(ds: Dataset, cfg: RunConfig) -> QueryBatch:
    return make_query_batch(ds.table, cfg.queries, seed=cfg.seed)


def _train(build, n, cfg):
    rec, model = time_training(build, n, cfg.train_reps)
    return model, rec.per_op_ns


def cmd_bench_constant(cfg: RunConfig, datasets: Optional[Sequence[Dataset]] = None) -> BenchReport:
    """Every registered (model, method) pair of the constant-space grid, per dataset."""
    datasets = list(datasets) if datasets is not None else [open_dataset(p) for p in cfg.data]
    if not datasets:
        raise BenchError("no datasets given")

    report = BenchReport(meta={"command": "bench-constant", "config": _cfg_meta(cfg)})
    for ds in datasets:
        if ds.level not in cfg.levels:
            continue
        q = _queries_for(ds, cfg)
        oracle = oracle_checksum(ds.table, q)
        n = ds.table.n
        for model_name in cfg.models:
            methods = [m for m in MODEL_METHODS[model_name] if m in cfg.methods]
            if not methods:
                continue
            if model_name == "none":
                eytz = build_eytzinger(ds.table) if "BFE" in methods else None
                for method in methods:
                    report.rows.append(measure(ds, q, oracle, cfg, None, "none", method, 0.0, eytz=eytz))
                continue
            if model_name == "KO":
                for k in cfg.k_values:
                    model, tns = _train(lambda: train_ko(ds.table, k), n, cfg)
                    for method in methods:
                        report.rows.append(
                            measure(ds, q, oracle, cfg, model, f"KO-{k}", method, tns, params=f"k={k}")
                        )
                continue
            degree = {"L": 1, "Q": 2, "C": 3}[model_name]
            model, tns = _train(lambda: train_atomic(ds.table, degree), n, cfg)
            for method in methods:
                report.rows.append(
                    measure(ds, q, oracle, cfg, model, model_name, method, tns, params=f"eps={model.eps}")
                )
    return report


def cmd_mine(
    level: str,
    tables: Sequence,
    cfg: RunConfig,
    pool_out=None,
    spec_out=None,
):
    """Candidate grids over every table of one level, then the SY-RMI spec."""
    datasets = [t if isinstance(t, Dataset) else open_dataset(t) for t in tables]
    if not datasets:
        raise BenchError("empty pool: no tables given")
    workers = worker_count()
    pool = []
    for ds in datasets:
        calib = calibration_batch(ds.table, 0.01, cfg.queries, cfg.seed)
        cs = build_candidate_grid(ds.table, calib, table=ds.name, seed=cfg.seed, workers=workers)
        pool.append(cs)
        log.info("%s: %d candidates, fastest %s", ds.name, len(cs), cs.fastest().record())
    spec = mine_sy_rmi(pool, level=level)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    pool_out = Path(pool_out) if pool_out else out / f"rmi_pool_{level}.json"
    spec_out = Path(spec_out) if spec_out else out / f"syrmi_{level}.json"
    save_pool(pool, pool_out, level)
    save_spec(spec, spec_out)
    return spec, pool_out, spec_out


def _best_under_cutoff(ds, cands, calib, cutoff_pct):
    """Fastest of ``(label, model)`` on the calibration batch among those within the cutoff."""
    best = None
    for label, model in cands:
        pct = space_pct(model.size_bytes(), ds.table.n, ds.table.width)
        if pct > cutoff_pct:
            continue
        ns = time_model(model, ds.table, calib)
        if best is None or ns < best[0]:
            best = (ns, label, model)
    return best


def cmd_bench_parametric(cfg: RunConfig, datasets: Optional[Sequence[Dataset]] = None, specs=None) -> BenchReport:
    """SY-RMI and bi-criteria PGM at each budget, the best RMI/PGM/RS within the
    space cutoff, and BBS/BFS baselines. Models compose with BBS."""
    datasets = list(datasets) if datasets is not None else [open_dataset(p) for p in cfg.data]
    if not datasets:
        raise BenchError("no datasets given")
    specs = dict(specs or {})
    if cfg.syrmi is not None and not specs:
        for p in [cfg.syrmi] if Path(cfg.syrmi).is_file() else sorted(Path(cfg.syrmi).glob("syrmi_*.json")):
            s = load_spec(p)
            specs[s.level] = s
    report = BenchReport(meta={"command": "bench-parametric", "config": _cfg_meta(cfg), "absent": []})
    for ds in datasets:
        if ds.level not in cfg.levels:
            continue
        q = _queries_for(ds, cfg)
        oracle = oracle_checksum(ds.table, q)
        n = ds.table.n
        for method in ("BBS", "BFS"):
            report.rows.append(measure(ds, q, oracle, cfg, None, "none", method, 0.0, kind="baseline"))
        spec = specs.get(ds.level)
        if spec is None:
            log.warning("%s: no SY-RMI spec for %s; run mine-syrmi first", ds.name, ds.level)
        for budget in cfg.budgets:
            if spec is not None:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    model, tns = _train(lambda: instantiate_sy_rmi(ds.table, spec, budget), n, cfg)
                row = measure(
                    ds, q, oracle, cfg, model, "SY-RMI", "BBS", tns, "parametric", budget,
                    f"b={model.b};arch={'/'.join(spec.winner_arch)}",
                )
                if caught:
                    row.flag = "clamped-b"
                report.rows.append(row)
            for a in cfg.a_values:
                bc = BiCriteriaConfig.from_pct(ds.table, budget, a)
                label = f"PGM_M-a{a:g}"
                try:
                    model, tns = _train(lambda: bicriteria_pgm(ds.table, bc), n, cfg)
                except BudgetError as e:
                    log.warning("%s %s at %g%%: %s", ds.name, label, budget, e)
                    report.rows.append(
                        BenchRow(ds.name, ds.level, "BBS", label, n, e.min_size_bytes,
                                 space_pct(e.min_size_bytes, n, ds.table.width), float("nan"),
                                 float("nan"), float("nan"), cfg.seed, "parametric", budget,
                                 f"a={a:g}", True, "infeasible")
                    )
                    continue
                report.rows.append(
                    measure(ds, q, oracle, cfg, model, label, "BBS", tns, "parametric", budget,
                            f"a={a:g};eps={model.eps}")
                )
        calib = calibration_batch(ds.table, 0.01, cfg.queries, cfg.seed)
        grid = build_candidate_grid(ds.table, calib, keep=10_000, reps=1, seed=cfg.seed, workers=worker_count())
        classes = {
            "RMI": [(f"b={c.b};root={c.root_kind}", c.model) for c in grid.candidates],
            "PGM": [(f"eps={e}", build_pgm(ds.table, e)) for e in PGM_EPS_GRID],
            "RS": [(f"eps={e}", build_radix_spline(ds.table, e)) for e in RS_EPS_GRID],
        }
        for cls, cands in classes.items():
            best = _best_under_cutoff(ds, cands, calib, cfg.cutoff_pct)
            if best is None:
                log.info("%s: no %s within %g%% space; class absent", ds.name, cls, cfg.cutoff_pct)
                report.meta["absent"].append({"dataset": ds.name, "level": ds.level, "model": cls})
                continue
            _, label, model = best
            report.rows.append(
                measure(ds, q, oracle, cfg, model, cls, "BBS", float("nan"), "best", float("nan"), label)
            )
    return report


def _cfg_meta(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["out"] = str(cfg.out)
    d["data"] = [str(p) for p in cfg.data]
    d["syrmi"] = None if cfg.syrmi is None else str(cfg.syrmi)
    return d


# ---------------------------------------------------------------------------
# reports


def merge_reports(paths) -> BenchReport:
    merged = BenchReport(meta={"merged_from": [str(p) for p in paths]})
    for p in paths:
        merged.rows.extend(BenchReport.load(p).rows)
    return merged


def write_csv(report: BenchReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in report.rows:
            w.writerow({"schema_version": report.schema_version, **asdict(r)})
    return path


_CSV_TYPES = {f.name: f.type for f in fields(BenchRow)}


def _parse_cell(name, value):
    kind = _CSV_TYPES[name]
    if kind in ("int", int):
        return int(value)
    if kind in ("float", float):
        return float(value)
    if kind in ("bool", bool):
        return value == "True"
    return value


def read_csv(path) -> BenchReport:
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_FIELDS:
            raise BenchError(f"schema mismatch: CSV header {reader.fieldnames}")
        rows = []
        for rec in reader:
            if int(rec["schema_version"]) != SCHEMA_VERSION:
                raise BenchError(f"schema mismatch: version {rec['schema_version']}")
            rows.append(BenchRow(**{k: _parse_cell(k, rec[k]) for k in ROW_FIELDS}))
    return BenchReport(rows)


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"


def plot_by_model(report: BenchReport, value: str = "query_ns_avg") -> str:
    """One block per (dataset, level): a row per model, a column per method."""
    blocks = defaultdict(dict)
    methods = defaultdict(list)
    for r in report.rows:
        key = (r.dataset, r.level)
        blocks[key].setdefault(r.model, {})[r.method] = getattr(r, value)
        if r.method not in methods[key]:
            methods[key].append(r.method)
    out = []
    for key in sorted(blocks):
        cols = methods[key]
        out.append(f"# dataset={key[0]} level={key[1]} value={value}")
        out.append("model " + " ".join(cols))
        for model, vals in blocks[key].items():
            out.append(model + " " + " ".join(_fmt(vals.get(c)) for c in cols))
        out.append("")
        out.append("")
    return "\n".join(out)


def plot_by_space(report: BenchReport) -> str:
    """One block per (dataset, level): models sorted by space occupancy."""
    blocks = defaultdict(list)
    for r in report.rows:
        blocks[(r.dataset, r.level)].append(r)
    out = []
    for key in sorted(blocks):
        out.append(f"# dataset={key[0]} level={key[1]}")
        out.append("model method budget_pct space_pct query_ns_avg rf_pct")
        for r in sorted(blocks[key], key=lambda r: (r.space_pct, r.model)):
            out.append(
                f"{r.model} {r.method} {_fmt(r.budget_pct)} {_fmt(r.space_pct)} "
                f"{_fmt(r.query_ns_avg)} {_fmt(r.rf_pct)}"
            )
        out.append("")
        out.append("")
    return "\n".join(out)


def parse_plot_blocks(text: str) -> list[tuple[str, list[str], list[list[str]]]]:
    """Inverse of the plot writers: ``(comment, header, rows)`` per block."""
    blocks = []
    for chunk in text.strip().split("\n\n\n"):
        lines = [ln for ln in chunk.strip().splitlines() if ln]
        if not lines:
            continue
        blocks.append((lines[0], lines[1].split(), [ln.split() for ln in lines[2:]]))
    return blocks


def cmd_report(paths, out_dir) -> dict:
    """Merge JSON reports into one CSV plus grouped plot-data tables."""
    report = merge_reports(paths)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"csv": write_csv(report, out_dir / "results.csv")}
    constant = BenchReport([r for r in report.rows if r.kind == "constant"])
    parametric = BenchReport([r for r in report.rows if r.kind != "constant"])
    if constant.rows:
        p = out_dir / "by_model.dat"
        p.write_text(plot_by_model(constant))
        outputs["by_model"] = p
        p = out_dir / "rf_by_model.dat"
        p.write_text(plot_by_model(constant, "rf_pct"))
        outputs["rf_by_model"] = p
    if parametric.rows:
        p = out_dir / "by_space.dat"
        p.write_text(plot_by_space(parametric))
        outputs["by_space"] = p
    return outputs

