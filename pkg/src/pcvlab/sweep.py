"""
Omnibus experiments over grids of generator hyperparameters.

Every cell of a :class:`SweepPlan` gets its own seed derived from the master
seed and the cell index, so results are identical whatever the worker count
or execution order. Observations for effect tables and proxy curves are
(cell, component slot) pairs.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lvgen import GeneratorConfig, Rotation
from .stats import kruskal_wallis, pearson, pearson_p
from .validity import DEFAULT_ALPHA, DEFAULT_N_BOOT, ValidityReport, run_simulations

log = logging.getLogger(__name__)

BINARY_FACTORS = {
    "n_participants": [100, 1000],
    "latent_distribution": ["Uniform", "Gaussian"],
    "weight_distribution": ["Uniform", "Gaussian"],
    "latent_scale": ["ZeroMean", "PositiveOnly"],
    "weight_scale": ["ZeroMean", "PositiveOnly"],
    "noise_sd_factor": [0.0, 1.0],
    "latent_correlation": [0.0, 0.5],
    "importance": ["Equal", "MonotonicDecreasing"],
    "link": ["Linear", "Sigmoid"],
}


def _omnibus_factors(rotations):
    factors = {"n_latents": [2, 5, 10]}
    factors.update(BINARY_FACTORS)
    factors["rotation"] = list(rotations)
    return factors


PRESETS = {
    # every factor of the omnibus design: 4608 cells
    "omnibus": dict(factors=_omnibus_factors(["None", "Varimax", "Promax"]), n_simulations=1000, paired=True),
    # all binary factors, three dimensionalities, no rotation: 1536 cells
    "omnibus-reduced": dict(factors=_omnibus_factors(["None"]), n_simulations=100, paired=True),
    # pipeline smoke test
    "omnibus-desk": dict(
        factors={
            "n_latents": [2, 5],
            "importance": ["Equal", "MonotonicDecreasing"],
            "weight_scale": ["ZeroMean", "PositiveOnly"],
        },
        base={"n_participants": 200, "n_observed": 50},
        n_simulations=8,
        paired=True,
    ),
}


def _label(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value.value if hasattr(value, "value") else value)


@dataclass
class SweepPlan:
    factors: dict[str, list]
    n_simulations: int = 100
    seed: int = 0
    workers: int = 1
    base: GeneratorConfig = field(default_factory=GeneratorConfig)
    paired: bool = False
    alpha: float = DEFAULT_ALPHA
    n_boot: int = DEFAULT_N_BOOT

    def __post_init__(self):
        if isinstance(self.base, dict):
            self.base = GeneratorConfig.from_dict(self.base)
        known = set(GeneratorConfig.__dataclass_fields__) - {"seed"}
        for name, levels in self.factors.items():
            if name not in known:
                raise ValueError(f"unknown factor {name!r}")
            if not levels:
                raise ValueError(f"factor {name!r} has no levels")
        if self.n_simulations < 1:
            raise ValueError("n_simulations must be >= 1")
        # fail early on any invalid cell
        for _ in self.cells():
            pass

    @property
    def n_cells(self) -> int:
        return math.prod(len(v) for v in self.factors.values())

    def cell_seed(self, index: int) -> int:
        state = np.random.SeedSequence(entropy=self.seed, spawn_key=(index,)).generate_state(2, np.uint32)
        return int(state[0]) << 32 | int(state[1])

    def cells(self):
        """Yield ``(index, labels, config)`` in a fixed order."""
        names = list(self.factors)
        for index, combo in enumerate(itertools.product(*(self.factors[n] for n in names))):
            changes = dict(zip(names, combo))
            config = self.base.replace(**changes, seed=self.cell_seed(index))
            yield index, {n: _label(v) for n, v in changes.items()}, config

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "SweepPlan":
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        spec = {k: (dict(v) if isinstance(v, dict) else v) for k, v in PRESETS[name].items()}
        spec.update(overrides)
        return cls(**spec)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepPlan":
        data = dict(data)
        preset = data.pop("preset", None)
        if preset is not None:
            return cls.from_preset(preset, **data)
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "factors": self.factors,
            "n_simulations": self.n_simulations,
            "seed": self.seed,
            "base": self.base.to_dict(),
            "paired": self.paired,
            "alpha": self.alpha,
            "n_boot": self.n_boot,
        }


def _float_list(a):
    return [None if (x is None or (isinstance(x, float) and math.isnan(x))) else float(x) for x in a]


@dataclass
class CellResult:
    """One grid cell: its config, validity report, and per-simulation slot records.

    Arrays are ``n_simulations x cap``; ``variance_explained`` is NaN where a
    slot was not retained.
    """

    index: int
    labels: dict[str, str]
    config: GeneratorConfig
    report: ValidityReport | None
    n_retained: np.ndarray | None = None
    matched: np.ndarray | None = None
    variance_explained: np.ndarray | None = None
    replicated: np.ndarray | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def slot_validity(self) -> np.ndarray:
        return self.report.per_component

    @property
    def slot_variance_explained(self) -> np.ndarray:
        ve = self.variance_explained
        counts = np.sum(~np.isnan(ve), axis=0)
        sums = np.nansum(ve, axis=0)
        return np.divide(sums, counts, out=np.full(ve.shape[1], np.nan), where=counts > 0)

    @property
    def slot_replication(self) -> np.ndarray | None:
        if self.replicated is None:
            return None
        retained = self.report.retained_counts
        reps = self.replicated.sum(axis=0)
        return np.divide(reps, retained, out=np.full(len(retained), np.nan), where=retained > 0)

    def to_dict(self) -> dict:
        out = {"index": self.index, "labels": self.labels, "config": self.config.to_dict(), "error": self.error}
        if self.report is not None:
            out.update(
                report=self.report.to_dict(),
                n_retained=[int(x) for x in self.n_retained],
                matched=[[bool(x) for x in row] for row in self.matched],
                variance_explained=[_float_list(row) for row in self.variance_explained],
                replicated=None if self.replicated is None else [[bool(x) for x in row] for row in self.replicated],
            )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CellResult":
        config = GeneratorConfig.from_dict(data["config"])
        if data.get("report") is None:
            return cls(data["index"], data["labels"], config, None, error=data.get("error"))
        cap = config.n_latents
        ve = np.array([[np.nan if x is None else x for x in row] for row in data["variance_explained"]], dtype=float)
        rep = data.get("replicated")
        return cls(
            data["index"],
            data["labels"],
            config,
            ValidityReport.from_dict(data["report"]),
            np.array(data["n_retained"], dtype=int),
            np.array(data["matched"], dtype=bool).reshape(-1, cap),
            ve.reshape(-1, cap),
            None if rep is None else np.array(rep, dtype=bool).reshape(-1, cap),
            data.get("error"),
        )


def run_cell(plan: SweepPlan, index: int, labels: dict, config: GeneratorConfig) -> CellResult:
    try:
        records = run_simulations(config, plan.n_simulations, config.seed, plan.alpha, plan.n_boot, plan.paired)
    except Exception as exc:  # recorded per cell; the sweep carries on
        log.warning("cell %d failed: %s", index, exc)
        return CellResult(index, labels, config, None, error=f"{type(exc).__name__}: {exc}")
    cap = config.n_latents
    return CellResult(
        index,
        labels,
        config,
        ValidityReport.from_records(records, cap),
        np.array([r.n_retained for r in records]),
        np.array([r.matched for r in records]).reshape(-1, cap),
        np.array([r.variance_explained for r in records]).reshape(-1, cap),
        np.array([r.replicated for r in records]).reshape(-1, cap) if plan.paired else None,
    )


def _run_cells(args):
    plan, cells = args
    return [run_cell(plan, *c) for c in cells]


def run_sweep(plan: SweepPlan, workers: int | None = None, progress=None) -> list[CellResult]:
    """Run every cell of ``plan``. Results are ordered by cell index."""
    workers = plan.workers if workers is None else workers
    cells = list(plan.cells())
    if workers <= 1:
        out = []
        for c in cells:
            out.append(run_cell(plan, *c))
            if progress:
                progress(len(out), len(cells))
        return out
    batches = [cells[i:i + 4] for i in range(0, len(cells), 4)]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_cells, [(plan, b) for b in batches]):
            out.extend(part)
            if progress:
                progress(len(out), len(cells))
    return out


# ---------------------------------------------------------------- analyses


def _slot_observations(results):
    """(cell, slot) rows with a defined validity rate."""
    for res in results:
        if not res.ok:
            continue
        for s, v in enumerate(res.slot_validity):
            if not math.isnan(v):
                yield res, s, float(v)


def _level_sort_key(level: str):
    try:
        return (0, float(level), level)
    except ValueError:
        return (1, 0.0, level)


@dataclass
class EffectRow:
    factor: str
    H: float
    df: int
    p: float
    levels: list[str]
    level_means: list[float]
    level_counts: list[int]


def factor_effects(results: list[CellResult], factors: list[str] | None = None) -> list[EffectRow]:
    """Kruskal-Wallis main effect of each factor on per-(cell, slot) validity.

    Rows come back sorted by H, largest first. Factors with a single level in
    ``results`` are skipped.
    """
    obs = list(_slot_observations(results))
    if not obs:
        return []
    names = factors if factors is not None else sorted({k for r, _, _ in obs for k in r.labels})
    rows = []
    for name in names:
        groups: dict[str, list[float]] = {}
        for res, _, v in obs:
            if name in res.labels:
                groups.setdefault(res.labels[name], []).append(v)
        if len(groups) < 2:
            log.info("factor %s has fewer than two levels; skipped", name)
            continue
        levels = sorted(groups, key=_level_sort_key)
        kw = kruskal_wallis([groups[lv] for lv in levels])
        rows.append(
            EffectRow(
                name, kw.H, kw.df, kw.p, levels,
                [float(np.mean(groups[lv])) for lv in levels],
                [len(groups[lv]) for lv in levels],
            )
        )
    rows.sort(key=lambda r: -r.H)
    return rows


@dataclass
class CurvePoint:
    validity_threshold: float
    x_threshold: float
    proportion: float | None  # None when nothing passes the x threshold
    n_selected: int


def _curve(pairs, validity_thresholds, x_grid):
    x = np.array([p[0] for p in pairs], dtype=float)
    v = np.array([p[1] for p in pairs], dtype=float)
    out = []
    for vt in validity_thresholds:
        for xt in x_grid:
            sel = x >= xt
            n = int(sel.sum())
            prop = float(np.mean(v[sel] >= vt)) if n else None
            out.append(CurvePoint(float(vt), float(xt), prop, n))
    return out


def proxy_curve_variance(results, validity_thresholds=(0.6, 0.7, 0.8, 0.9), ve_grid=None) -> list[CurvePoint]:
    """Share of (cell, slot) components with mean VE >= t whose validity >= v."""
    if ve_grid is None:
        ve_grid = np.round(np.arange(0.0, 1.0001, 0.02), 4)
    pairs = []
    for res, s, v in _slot_observations(results):
        pairs.append((res.slot_variance_explained[s], v))
    return _curve(pairs, validity_thresholds, ve_grid)


def proxy_curve_replication(results, validity_thresholds=(0.6, 0.7, 0.8, 0.9), rep_grid=None) -> list[CurvePoint]:
    """Share of (cell, slot) components replicating at rate >= t whose validity >= v."""
    if rep_grid is None:
        rep_grid = np.round(np.arange(0.0, 1.0001, 0.05), 4)
    pairs = []
    for res, s, v in _slot_observations(results):
        rates = res.slot_replication
        if rates is None:
            raise ValueError("results carry no replication records; run the sweep in paired mode")
        pairs.append((rates[s], v))
    return _curve(pairs, validity_thresholds, rep_grid)


def validity_ve_correlation(results, stratify_by_m: bool = True) -> list[dict]:
    """Pearson r between per-slot mean VE and per-slot validity, pooled and per dimensionality."""
    pairs = [(res.config.n_latents, res.slot_variance_explained[s], v) for res, s, v in _slot_observations(results)]
    strata = [("pooled", pairs)]
    if stratify_by_m:
        for m in sorted({p[0] for p in pairs}):
            strata.append((f"m={m}", [p for p in pairs if p[0] == m]))
    out = []
    for name, rows in strata:
        if len(rows) < 3:
            continue
        ve = np.array([r[1] for r in rows])
        val = np.array([r[2] for r in rows])
        if np.ptp(ve) == 0 or np.ptp(val) == 0:
            log.info("stratum %s has zero variance; skipped", name)
            continue
        r = pearson(ve, val)
        out.append({"stratum": name, "r": r, "p": pearson_p(r, len(rows)), "n": len(rows)})
    return out


# ---------------------------------------------------------------- persistence


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def aggregate_csv(results: list[CellResult], plan: SweepPlan) -> str:
    names = list(plan.factors)
    max_cap = max((r.config.n_latents for r in results), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", *names, *[f"slot_{i + 1}" for i in range(max_cap)], "average", "n_simulations", "error"])
    for r in results:
        slots = list(r.slot_validity) if r.ok else []
        slots += [None] * (max_cap - len(slots))
        w.writerow([
            r.index,
            *[r.labels[n] for n in names],
            *[_fmt(x) for x in slots],
            _fmt(r.report.average) if r.ok else "",
            plan.n_simulations,
            r.error or "",
        ])
    return buf.getvalue()


def effects_csv(rows: list[EffectRow]) -> str:
    width = max((len(r.levels) for r in rows), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["factor", "H", "df", "p"]
    for i in range(width):
        header += [f"level_{i + 1}", f"mean_{i + 1}", f"n_{i + 1}"]
    w.writerow(header)
    for r in rows:
        cells = [r.factor, _fmt(r.H), r.df, _fmt(r.p)]
        for i in range(width):
            if i < len(r.levels):
                cells += [r.levels[i], _fmt(r.level_means[i]), r.level_counts[i]]
            else:
                cells += ["", "", ""]
        w.writerow(cells)
    return buf.getvalue()


def curve_csv(points: list[CurvePoint], x_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["validity_threshold", x_name, "proportion", "n_selected"])
    for p in points:
        w.writerow([_fmt(p.validity_threshold), _fmt(p.x_threshold), _fmt(p.proportion), p.n_selected])
    return buf.getvalue()


def read_effects_csv(text: str) -> list[EffectRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        levels, means, counts = [], [], []
        i = 1
        while f"level_{i}" in rec:
            if rec[f"level_{i}"]:
                levels.append(rec[f"level_{i}"])
                means.append(float(rec[f"mean_{i}"]))
                counts.append(int(rec[f"n_{i}"]))
            i += 1
        rows.append(EffectRow(rec["factor"], float(rec["H"]), int(rec["df"]), float(rec["p"]), levels, means, counts))
    return rows


def read_curve_csv(text: str) -> list[CurvePoint]:
    reader = csv.reader(io.StringIO(text))
    next(reader)
    return [
        CurvePoint(float(v), float(x), None if p == "" else float(p), int(n))
        for v, x, p, n in reader
    ]


def read_aggregate_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def save_results(results: list[CellResult], directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in results:
        (directory / f"cell_{r.index:05d}.json").write_text(json.dumps(r.to_dict(), sort_keys=True))


def load_results(directory: Path) -> list[CellResult]:
    files = sorted(Path(directory).glob("cell_*.json"))
    return [CellResult.from_dict(json.loads(f.read_text())) for f in files]
