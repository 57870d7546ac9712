"""
Construct validity and replication of PCA-derived components.

A component passes when it is (a) significantly correlated with some true
latent, (b) significantly more strongly correlated with that latent than the
runner-up component is, and (c) significantly more strongly correlated with
that latent than with its own runner-up latent. Comparisons (b) and (c) are
one-tailed bootstrap tests on absolute correlations with rows resampled
jointly; one set of resamples is shared by every comparison within a call.

Per-slot rates are conditional on retention: the denominator for slot ``s``
is the number of simulations in which at least ``s`` components survived the
Kaiser-Guttman cut. Unconditional rates (denominator = all simulations) are
reported alongside.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import pca as _pca
from .lvgen import GeneratorConfig, Rotation, generate
from .stats import correlation_block, draw_valid_counts, pearson_p

DEFAULT_ALPHA = 0.05
DEFAULT_N_BOOT = 500


class InsufficientSampleError(ValueError):
    pass


@dataclass(frozen=True)
class MatchOutcome:
    component_index: int  # 1-based slot
    matched_latent: int | None  # 1-based, present iff all criteria pass
    best_abs_r: float
    criteria: tuple[bool, bool, bool]
    best_latent: int = 0  # 1-based argmax latent, regardless of pass/fail

    @property
    def matched(self) -> bool:
        return self.matched_latent is not None


def significant_selective_match(
    component_scores,
    latents,
    alpha: float = DEFAULT_ALPHA,
    n_boot: int = DEFAULT_N_BOOT,
    rng=None,
) -> list[MatchOutcome]:
    """Test every component for a significant and selective latent match."""
    comps = np.asarray(component_scores, dtype=float)
    lats = np.asarray(latents, dtype=float)
    if comps.ndim != 2 or lats.ndim != 2 or comps.shape[0] != lats.shape[0]:
        raise ValueError("components and latents must be 2-D with a shared row count")
    n, k = comps.shape
    m = lats.shape[1]
    if k < 1 or m < 1:
        raise ValueError("need at least one component and one latent")
    if n < 10:
        raise InsufficientSampleError(f"need at least 10 rows for the bootstrap, got {n}")
    rng = np.random.default_rng(rng)

    corr = np.abs(correlation_block(comps, lats))
    best = np.argmax(corr, axis=1)
    col_order = np.argsort(-corr, axis=0, kind="stable")
    row_order = np.argsort(-corr, axis=1, kind="stable")

    boot = None

    def prop_positive(i1, j1, i2, j2):
        nonlocal boot
        if boot is None:
            boot = draw_valid_counts(rng, comps, lats, n_boot)
        d = boot[:, i1, j1] - boot[:, i2, j2]
        return np.count_nonzero(d > 0) / n_boot

    out = []
    for i in range(k):
        j = int(best[i])
        a = pearson_p(corr[i, j], n) < alpha
        if k == 1:
            b = True
        elif col_order[0, j] != i:
            b = False
        else:
            b = prop_positive(i, j, int(col_order[1, j]), j) >= 1.0 - alpha
        if m == 1:
            c = True
        else:
            c = prop_positive(i, j, i, int(row_order[i, 1])) >= 1.0 - alpha
        ok = bool(a and b and c)
        out.append(MatchOutcome(i + 1, j + 1 if ok else None, float(corr[i, j]), (bool(a), bool(b), bool(c)), j + 1))
    return out


def replication_match(loadings_a, loadings_b, alpha=DEFAULT_ALPHA, n_boot=DEFAULT_N_BOOT, rng=None):
    """Match loading profiles of sample A against those of sample B.

    Observed-variable positions play the role of rows, so the bootstrap
    resamples variables.
    """
    loadings_a = np.asarray(loadings_a, dtype=float)
    loadings_b = np.asarray(loadings_b, dtype=float)
    if loadings_a.shape[0] != loadings_b.shape[0]:
        raise ValueError("loading matrices must share the observed-variable dimension")
    if loadings_a.shape[0] < 10:
        raise InsufficientSampleError(f"need at least 10 observed variables, got {loadings_a.shape[0]}")
    return significant_selective_match(loadings_a, loadings_b, alpha, n_boot, rng)


def analyse(data, cap: int | None, rotation=Rotation.NONE) -> _pca.PcaModel:
    """PCA -> Kaiser-Guttman retention (capped) -> optional rotation."""
    model = _pca.retain_kaiser_guttman(_pca.fit_pca(data), cap)
    return _pca.rotate(model, rotation)


@dataclass
class SimulationRecord:
    """Per-slot outcome of one simulation; arrays have length ``cap``."""

    n_retained: int
    matched: np.ndarray
    variance_explained: np.ndarray  # NaN for slots not retained
    replicated: np.ndarray | None = None


def _child_seeds(master: int, index: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(entropy=master, spawn_key=(index,)).spawn(count)


def simulate_once(
    config: GeneratorConfig,
    master_seed: int,
    index: int,
    alpha: float = DEFAULT_ALPHA,
    n_boot: int = DEFAULT_N_BOOT,
    paired: bool = False,
) -> SimulationRecord:
    """Generate, analyse and match one simulation with seeds derived from ``(master_seed, index)``."""
    gen_a, match_a, gen_b, match_rep = (np.random.default_rng(s) for s in _child_seeds(master_seed, index, 4))
    cap = config.n_latents
    system = generate(config, gen_a)
    model = analyse(system.observed, cap, config.rotation)
    k = model.n_components

    matched = np.zeros(cap, dtype=bool)
    ve = np.full(cap, np.nan)
    ve[:k] = model.variance_explained
    if k:
        outcomes = significant_selective_match(model.scores, system.latents, alpha, n_boot, match_a)
        matched[:k] = [o.matched for o in outcomes]

    replicated = None
    if paired:
        replicated = np.zeros(cap, dtype=bool)
        other = generate(config, gen_b, weights=system.weights)
        model_b = analyse(other.observed, cap, config.rotation)
        if k and model_b.n_components:
            rep = replication_match(model.structure_loadings, model_b.structure_loadings, alpha, n_boot, match_rep)
            replicated[:k] = [o.matched for o in rep]
    return SimulationRecord(k, matched, ve, replicated)


def _nan_rate(num, den):
    return np.divide(num, den, out=np.full(len(num), np.nan), where=den > 0)


@dataclass
class ValidityReport:
    """Per-slot construct validity across simulations of one configuration.

    ``per_component[s]`` is passes / simulations-retaining-slot-s (NaN when
    the slot was never retained; such slots are listed in ``never_retained``
    and excluded from ``average``).
    """

    per_component: np.ndarray
    average: float
    n_simulations: int
    pass_counts: np.ndarray
    retained_counts: np.ndarray
    never_retained: list[int] = field(default_factory=list)

    @property
    def per_component_unconditional(self) -> np.ndarray:
        return self.pass_counts / self.n_simulations

    @property
    def average_unconditional(self) -> float:
        return float(np.mean(self.per_component_unconditional))

    @property
    def retention(self) -> np.ndarray:
        return self.retained_counts / self.n_simulations

    @classmethod
    def from_counts(cls, pass_counts, retained_counts, n_simulations) -> "ValidityReport":
        pass_counts = np.asarray(pass_counts, dtype=int)
        retained_counts = np.asarray(retained_counts, dtype=int)
        rates = _nan_rate(pass_counts, retained_counts)
        never = [int(s) + 1 for s in np.flatnonzero(retained_counts == 0)]
        average = float(np.mean(rates[~np.isnan(rates)])) if np.any(~np.isnan(rates)) else math.nan
        return cls(rates, average, int(n_simulations), pass_counts, retained_counts, never)

    @classmethod
    def from_records(cls, records: list[SimulationRecord], cap: int) -> "ValidityReport":
        passes = np.zeros(cap, dtype=int)
        retained = np.zeros(cap, dtype=int)
        for rec in records:
            passes += rec.matched
            retained[: rec.n_retained] += 1
        return cls.from_counts(passes, retained, len(records))

    def truncated(self, k: int) -> "ValidityReport":
        """First ``k`` slots; slots beyond the cap count as never retained."""
        pad = max(0, k - len(self.pass_counts))
        passes = np.concatenate([self.pass_counts[:k], np.zeros(pad, dtype=int)])
        retained = np.concatenate([self.retained_counts[:k], np.zeros(pad, dtype=int)])
        return ValidityReport.from_counts(passes, retained, self.n_simulations)

    def to_dict(self) -> dict:
        return {
            "per_component": [None if math.isnan(x) else float(x) for x in self.per_component],
            "average": None if math.isnan(self.average) else self.average,
            "n_simulations": self.n_simulations,
            "pass_counts": [int(x) for x in self.pass_counts],
            "retained_counts": [int(x) for x in self.retained_counts],
            "never_retained": list(self.never_retained),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValidityReport":
        return cls.from_counts(data["pass_counts"], data["retained_counts"], data["n_simulations"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def master_seed_from(rng, fallback: int) -> int:
    if rng is None:
        return int(fallback)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng)


def _run_chunk(args):
    config, seed, indices, alpha, n_boot, paired = args
    return [simulate_once(config, seed, i, alpha, n_boot, paired) for i in indices]


def run_simulations(config, n_simulations, seed, alpha=DEFAULT_ALPHA, n_boot=DEFAULT_N_BOOT, paired=False, workers=1):
    """Run ``n_simulations`` seeded simulations; output independent of ``workers``."""
    indices = list(range(n_simulations))
    if workers <= 1 or n_simulations < 2:
        return _run_chunk((config, seed, indices, alpha, n_boot, paired))
    chunks = [indices[w::workers] for w in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(config, seed, c, alpha, n_boot, paired) for c in chunks]))
    out = [None] * n_simulations
    for chunk, part in zip(chunks, parts):
        for i, rec in zip(chunk, part):
            out[i] = rec
    return out


def construct_validity(
    config: GeneratorConfig,
    n_simulations: int = 1000,
    rng=None,
    alpha: float = DEFAULT_ALPHA,
    n_boot: int = DEFAULT_N_BOOT,
    workers: int = 1,
) -> ValidityReport:
    """Per-slot construct validity of ``config`` over seeded simulations.

    ``rng`` may be an int master seed, a Generator (one master seed is drawn
    from it), or None to use ``config.seed``.
    """
    seed = master_seed_from(rng, config.seed)
    records = run_simulations(config, n_simulations, seed, alpha, n_boot, False, workers)
    return ValidityReport.from_records(records, config.n_latents)
