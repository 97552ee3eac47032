"""Grid-based model identification from relay-oscillation waveforms.

The identifiable model domain [k_eq, t_drag, t_prop, delay] is discretized
geometrically; spacing is refined until running any cell's optimal controller
on an adjacent cell's plant degrades the step cost by at most j_star percent.
Each cell stores the relay oscillation template of its plant, and an observed
oscillation is classified to the best-matching template.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .platforms import LoopKind, LoopModel, PDGains, PropulsionParams
from .simulate import (
    LoopSimulator,
    OscillationRecord,
    default_dt,
    ise_cost,
    run_mrft,
)

__all__ = [
    "PARAM_NAMES",
    "GridCell",
    "ParameterGrid",
    "IdentificationResult",
    "PartialGridError",
    "TuningFailedError",
    "DegenerateCostError",
    "NoConfidentMatchError",
    "model_from_vector",
    "tune_pd",
    "relative_sensitivity",
    "build_grid",
    "verify_grid",
    "identify",
    "match_score",
    "save_grid",
    "load_grid",
]

PARAM_NAMES = ("k_eq", "t_drag", "t_prop", "delay")

log = logging.getLogger(__name__)

DEFAULT_BETA = -0.73
DEFAULT_H = 0.1

KC_BOUNDS = (0.1, 500.0)
KD_BOUNDS = (0.0, 100.0)


class PartialGridError(RuntimeError):
    """Simulation budget ran out before the spacing criterion was met."""

    def __init__(self, worst_j: float, j_star: float, used: int):
        self.worst_j = worst_j
        self.j_star = j_star
        self.used = used
        super().__init__(
            f"budget exhausted after {used} simulations; worst adjacent "
            f"sensitivity {worst_j:.2f}% > target {j_star:.2f}%"
        )


class TuningFailedError(RuntimeError):
    pass


class DegenerateCostError(RuntimeError):
    pass


class NoConfidentMatchError(RuntimeError):
    def __init__(self, score: float, threshold: float):
        self.score = score
        self.threshold = threshold
        super().__init__(f"best template match {score:.3f} below threshold {threshold}")


def model_from_vector(d, kind: LoopKind = LoopKind.ALTITUDE) -> LoopModel:
    """Unit-inertia loop for a parameter vector [k_eq, t_drag, t_prop, delay].

    Waveform templates are amplitude-normalized, so the absolute force scale
    is irrelevant; setting k_gain = k_eq fixes the inertia at 1.
    """
    k_eq, t_drag, t_prop, delay = (float(x) for x in d)
    return LoopModel(
        k_eq=k_eq,
        t_drag=t_drag,
        prop=PropulsionParams(k_gain=k_eq, t_prop=t_prop, delay=delay),
        kind=kind,
    )


@dataclass
class GridCell:
    d: np.ndarray
    optimal_gains: PDGains
    template: np.ndarray
    period: float
    amplitude: float  # limit-cycle amplitude at the grid's relay amplitude
    cost: float  # step cost of the plant under its own optimal gains


@dataclass
class ParameterGrid:
    cells: list[GridCell]
    bounds: np.ndarray  # shape (4, 2)
    j_star: float
    shape: tuple[int, int, int, int]
    beta: float = DEFAULT_BETA
    relay_amplitude: float = DEFAULT_H

    def cell_index(self, multi_index) -> int:
        return int(np.ravel_multi_index(multi_index, self.shape))

    def nearest_cell(self, d) -> int:
        """Index of the cell closest to d in log-parameter space."""
        d = np.asarray(d, float)
        best, best_dist = 0, np.inf
        for i, cell in enumerate(self.cells):
            with np.errstate(divide="ignore"):
                dist = np.linalg.norm(
                    np.log(np.maximum(d, 1e-12)) - np.log(np.maximum(cell.d, 1e-12))
                )
            if dist < best_dist:
                best, best_dist = i, dist
        return best


@dataclass
class IdentificationResult:
    d_hat: np.ndarray
    match_score: float
    runner_up_score: float
    cell_index: int

    def __post_init__(self):
        if self.match_score < self.runner_up_score:
            raise ValueError("match_score must be >= runner_up_score")


def _as_model(d) -> LoopModel:
    return d if isinstance(d, LoopModel) else model_from_vector(d)


_discrete_cache: dict[tuple, tuple[np.ndarray, np.ndarray, int]] = {}


def _discrete_system(model: LoopModel, dt: float):
    """Cached exact zero-order-hold matrices plus delay sample count."""
    key = (
        model.k_eq,
        model.t_drag,
        model.prop.k_gain,
        model.prop.t_prop,
        model.prop.delay,
        model.kind,
        dt,
    )
    hit = _discrete_cache.get(key)
    if hit is None:
        sim = LoopSimulator(model, None, dt)
        ad, bd = sim.discrete_system()
        hit = (ad, bd, sim.delay_samples)
        _discrete_cache[key] = hit
    return hit


def _multi_step_cost(
    models,
    kcs: np.ndarray,
    kds: np.ndarray,
    horizon: float,
    dt: float,
    settle_filter: bool = True,
) -> np.ndarray:
    """Mean squared step error for many plants x many PD candidates at once.

    ``models`` is a sequence of K plants; ``kcs``/``kds`` are (K, B) gain
    candidates (or (B,), broadcast over plants).  The whole K x B block is
    advanced together with stacked state matrices, so the Python cost per
    time step is constant regardless of how many simulations run.  The loop
    delay is a per-plant circular command buffer.  Candidates that diverge,
    or whose error fails to decay between the first and second half of the
    horizon (slow instabilities stay finite inside a short window), get cost
    inf.  Returns a (K, B) cost array.
    """
    n_models = len(models)
    kcs = np.asarray(kcs, np.float32)
    kds = np.asarray(kds, np.float32)
    if kcs.ndim == 1:
        kcs = np.broadcast_to(kcs, (n_models, kcs.size))
        kds = np.broadcast_to(kds, (n_models, kds.size))
    n_batch = kcs.shape[1]
    n_steps = int(round(horizon / dt))

    systems = [_discrete_system(m, dt) for m in models]
    n_states = systems[0][0].shape[0]
    ad = np.stack([s[0] for s in systems]).astype(np.float32)
    bd0 = np.stack([s[1][:, 0] for s in systems]).astype(np.float32)[:, :, None]
    nd = np.array([s[2] for s in systems])
    nd_max = max(1, int(nd.max()))
    undelayed = nd == 0
    nd_eff = np.maximum(nd, 1)

    # cap the delay-buffer working set; process candidate columns in chunks
    max_floats = 16_000_000
    chunk = max(1, min(n_batch, max_floats // (n_models * nd_max)))
    costs = np.empty((n_models, n_batch), np.float32)
    rows = np.arange(n_models)
    half = n_steps // 2
    for lo in range(0, n_batch, chunk):
        kc = kcs[:, lo : lo + chunk].copy()
        kd = kds[:, lo : lo + chunk].copy()
        nb = kc.shape[1]
        x = np.zeros((n_models, n_states, nb), np.float32)
        buf = np.zeros((n_models, nd_max, nb), np.float32)
        total = np.zeros((n_models, nb), np.float32)
        sq_first = np.zeros((n_models, nb), np.float32)
        sq_second = np.zeros((n_models, nb), np.float32)
        alive = np.ones((n_models, nb), bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(n_steps):
                e = 1.0 - x[:, 0, :]
                sq = e * e
                total += np.where(alive, sq, 0.0)
                if step < half:
                    sq_first += np.where(alive, sq, 0.0)
                else:
                    sq_second += np.where(alive, sq, 0.0)
                u = kc * e - kd * x[:, 1, :]
                w = step % nd_eff
                ud = buf[rows, w, :].copy()
                buf[rows, w, :] = u
                if undelayed.any():
                    ud[undelayed] = u[undelayed]
                x = np.matmul(ad, x) + bd0 * ud[:, None, :]
                bad = np.abs(x[:, 0, :]) > 1e6
                bad |= ~np.isfinite(x[:, 0, :])
                dead = alive & bad
                if dead.any():
                    alive &= ~dead
                    # freeze dead candidates at rest with zero gains so they
                    # stay numerically silent for the remaining steps
                    kc[dead] = 0.0
                    kd[dead] = 0.0
                    x *= alive[:, None, :]
                    buf *= alive[:, None, :]
        block = total * np.float32(dt / horizon)
        block[~alive] = np.inf
        if settle_filter:
            block[sq_second >= 0.25 * sq_first] = np.inf
        costs[:, lo : lo + chunk] = block
    return costs.astype(float)


def _tune_many(models, dt: float, horizon: float = 3.0):
    """ISE-optimal PD gains for many plants at once (shared dt).

    Returns (list of PDGains, self-cost array at the tuning horizon).
    Stage one scans a shared log grid over the gain box; two refinement
    stages then shrink a per-plant box around each running optimum.
    """
    n_models = len(models)
    kc_grid = np.geomspace(KC_BOUNDS[0], KC_BOUNDS[1], 12)
    kd_grid = np.concatenate([[0.0], np.geomspace(0.01, KD_BOUNDS[1], 11)])
    kk_c, kk_d = np.meshgrid(kc_grid, kd_grid, indexing="ij")
    costs = _multi_step_cost(models, kk_c.ravel(), kk_d.ravel(), horizon, dt)
    best_idx = np.argmin(costs, axis=1)
    best_cost = costs[np.arange(n_models), best_idx]
    if not np.all(np.isfinite(best_cost)):
        raise TuningFailedError("no stabilizing gains in the search box")
    best_kc = np.broadcast_to(kk_c.ravel(), costs.shape)[
        np.arange(n_models), best_idx
    ].astype(float)
    best_kd = np.broadcast_to(kk_d.ravel(), costs.shape)[
        np.arange(n_models), best_idx
    ].astype(float)

    kc_step = np.full(n_models, kc_grid[1] / kc_grid[0])
    kd_step = np.full(n_models, kd_grid[-1] / kd_grid[-2])
    for _ in range(2):
        kc_lo = np.maximum(KC_BOUNDS[0], best_kc / kc_step)
        kc_hi = np.minimum(KC_BOUNDS[1], best_kc * kc_step)
        kd_lo = np.where(best_kd > 0, best_kd / kd_step, 0.0)
        kd_hi = np.where(best_kd > 0, np.minimum(KD_BOUNDS[1], best_kd * kd_step), kd_grid[1])
        kc_ref = np.linspace(kc_lo, kc_hi, 9, axis=1)  # (K, 9)
        kd_ref = np.linspace(kd_lo, kd_hi, 9, axis=1)
        kcs = np.repeat(kc_ref, 9, axis=1)  # (K, 81) row-major over (kc, kd)
        kds = np.tile(kd_ref, (1, 9))
        costs = _multi_step_cost(models, kcs, kds, horizon, dt)
        idx = np.argmin(costs, axis=1)
        cost_ref = costs[np.arange(n_models), idx]
        better = cost_ref < best_cost
        best_cost = np.where(better, cost_ref, best_cost)
        best_kc = np.where(better, kcs[np.arange(n_models), idx], best_kc)
        best_kd = np.where(better, kds[np.arange(n_models), idx], best_kd)
        kc_step = (kc_hi / np.maximum(kc_lo, 1e-9)) ** (1.0 / 8.0)
        kd_step = (kd_hi / np.maximum(kd_lo, 1e-9)) ** (1.0 / 8.0)
    gains = [PDGains(kc=float(a), kd=float(b)) for a, b in zip(best_kc, best_kd)]
    return gains, best_cost


def tune_pd(d, horizon: float = 3.0, dt: float | None = None) -> PDGains:
    """ISE-optimal PD gains via a coarse log-spaced grid over the gain box
    refined twice around the running optimum.  Deterministic for a given d.

    Candidates whose step error is not clearly decaying over the horizon are
    excluded: a slowly growing oscillation can show a small finite cost on a
    short window while being useless as a controller.
    """
    model = _as_model(d)
    if dt is None:
        # coarsest step the simulator accepts; tuning compares many gain
        # candidates on one plant, where relative ordering is what matters
        dt = min(2e-3, model.prop.t_prop / 5.0)
    gains, _ = _tune_many([model], dt, horizon)
    return gains[0]


def relative_sensitivity(
    d_i,
    d_j,
    gains_i: PDGains | None = None,
    gains_j: PDGains | None = None,
    horizon: float = 4.0,
    dt: float | None = None,
    q_jj: float | None = None,
) -> float:
    """Percent step-cost degradation of plant j under plant i's controller.

    The controller updates at the plant's nominal control interval even when
    ``dt`` refines the integration step, so the value converges under step
    refinement instead of tracking the changing sample rate.
    """
    model_j = _as_model(d_j)
    if gains_i is None:
        gains_i = tune_pd(d_i, horizon=horizon)
    if gains_j is None:
        gains_j = tune_pd(d_j, horizon=horizon)
    control_dt = min(2e-3, model_j.prop.t_prop / 5.0)
    if dt is None:
        dt = control_dt
    if q_jj is None:
        q_jj = ise_cost(model_j, gains_j, horizon=horizon, dt=dt, control_dt=control_dt)
    if q_jj == 0:
        raise DegenerateCostError("self cost is zero; sensitivity undefined")
    q_ij = ise_cost(model_j, gains_i, horizon=horizon, dt=dt, control_dt=control_dt)
    if not np.isfinite(q_ij):
        return np.inf
    return 100.0 * (q_ij - q_jj) / q_jj


# -- grid construction -------------------------------------------------------


def _axis_points(bounds, counts):
    return [
        np.geomspace(lo, hi, c) if lo < hi else np.array([lo])
        for (lo, hi), c in zip(bounds, counts)
    ]


def _mrft_cell(args):
    d, beta, h, mrft_duration = args
    return run_mrft(model_from_vector(d), beta=beta, h=h, duration=mrft_duration)


# rough per-call simulation counts, used only for budget accounting
_SIMS_PER_TUNE = 12 * 12 + 2 * 9 * 9
_SIMS_PER_MRFT = 1


_MAX_AXIS_POINTS = 32


def _grow(count: int, worst: float, target: float) -> int:
    """Next interval count along one axis given its worst sensitivity.

    Sensitivity grows faster than quadratically in the step ratio, so the
    count scales by a root of the overshoot, capped so a wildly unstable
    early estimate cannot jump past the minimal sufficient count.
    """
    overshoot = min(worst / target, 512.0)
    factor = min(overshoot ** (1.0 / 4.0), 2.0)
    return min(
        _MAX_AXIS_POINTS, max(count + 1, int(np.ceil((count - 1) * factor)) + 1)
    )


def _lattice_sensitivities(vectors, gains, shape, dt, horizon: float = 4.0):
    """Adjacent-pair sensitivities over a full lattice in one batched run.

    Every plant is simulated under its own controller plus every adjacent
    cell's controller; returns (worst J per axis, self-cost per cell, list of
    (axis, i, j, J_ij) tuples) where J_ij is the symmetric worst of the two
    directions.
    """
    n_cells = len(vectors)
    neighbor_lists: list[list[int]] = [[] for _ in range(n_cells)]
    pairs: list[tuple[int, int, int]] = []
    for flat, multi in enumerate(itertools.product(*(range(s) for s in shape))):
        for axis in range(4):
            if multi[axis] + 1 >= shape[axis]:
                continue
            neigh = list(multi)
            neigh[axis] += 1
            other = int(np.ravel_multi_index(neigh, shape))
            pairs.append((axis, flat, other))
            neighbor_lists[flat].append(other)
            neighbor_lists[other].append(flat)
    width = 1 + max((len(nl) for nl in neighbor_lists), default=0)
    kcs = np.empty((n_cells, width))
    kds = np.empty((n_cells, width))
    for j, nl in enumerate(neighbor_lists):
        own = gains[j]
        kcs[j, :] = own.kc
        kds[j, :] = own.kd
        for col, i in enumerate(nl, start=1):
            kcs[j, col] = gains[i].kc
            kds[j, col] = gains[i].kd
    models = [model_from_vector(v) for v in vectors]
    q = _multi_step_cost(models, kcs, kds, horizon, dt, settle_filter=False)
    q_jj = q[:, 0]
    if np.any(q_jj == 0):
        raise DegenerateCostError("cell has zero self cost; sensitivity undefined")

    def j_of(i, j):
        col = 1 + neighbor_lists[j].index(i)
        q_ij = q[j, col]
        if not np.isfinite(q_ij):
            return np.inf
        return 100.0 * (q_ij - q_jj[j]) / q_jj[j]

    worst_axis = [0.0] * 4
    pair_js = []
    for axis, a, b in pairs:
        j_pair = max(j_of(a, b), j_of(b, a))
        worst_axis[axis] = max(worst_axis[axis], j_pair)
        pair_js.append((axis, a, b, j_pair))
    return worst_axis, q_jj, pair_js


def build_grid(
    bounds,
    j_star: float = 10.0,
    sim_budget: int = 3_000_000,
    beta: float = DEFAULT_BETA,
    h: float = DEFAULT_H,
    mrft_duration: float = 30.0,
    n_jobs: int = 1,
) -> ParameterGrid:
    """Discretize the parameter box so adjacent cells stay within j_star
    percent relative sensitivity of each other.

    Axis counts start at two points and grow wherever the lattice check
    finds an adjacent pair above j_star; every pass re-verifies the whole
    lattice.  All plants and gain candidates advance together through one
    stacked simulation, so a pass costs seconds regardless of lattice size.
    Relay templates are only simulated for the final accepted lattice.
    Raises PartialGridError when the simulation budget runs out first.
    """
    bounds = np.asarray(bounds, float)
    if bounds.shape != (4, 2):
        raise ValueError("bounds must be a (4, 2) array of [min, max] rows")
    if np.any(bounds < 0) or np.any(bounds[:, 0] > bounds[:, 1]):
        raise ValueError("bounds must be nonnegative with min <= max")
    if bounds[0, 0] <= 0 or bounds[2, 0] <= 0:
        raise ValueError("k_eq and t_prop bounds must be strictly positive")
    if j_star <= 0:
        raise ValueError("j_star must be positive")

    used = 0
    worst_seen = 0.0
    gains_cache: dict[tuple, PDGains] = {}
    # one shared step size keeps every plant's costs comparable in a batch
    dt = min(2e-3, bounds[2, 0] / 5.0)

    def charge(amount: int):
        nonlocal used
        used += amount
        if used > sim_budget:
            raise PartialGridError(worst_seen, j_star, used)

    counts = [1 if lo == hi else 2 for lo, hi in bounds]
    while True:
        axes = _axis_points(bounds, counts)
        shape = tuple(len(a) for a in axes)
        vectors = [tuple(v) for v in itertools.product(*axes)]
        missing = [v for v in vectors if v not in gains_cache]
        if missing:
            charge(len(missing) * _SIMS_PER_TUNE)
            tuned, _ = _tune_many([model_from_vector(v) for v in missing], dt)
            gains_cache.update(zip(missing, tuned))
        gains = [gains_cache[v] for v in vectors]
        charge(len(vectors) * 9)
        worst_axis, q_jj, _ = _lattice_sensitivities(vectors, gains, shape, dt)
        worst_seen = max(worst_axis)
        log.info(
            "lattice pass: counts=%s worst J per axis=%s (target %.1f%%, %d sims)",
            counts,
            ["%.1f" % w for w in worst_axis],
            j_star,
            used,
        )
        if worst_seen <= j_star:
            break
        for axis in range(4):
            if worst_axis[axis] > j_star:
                counts[axis] = _grow(counts[axis], worst_axis[axis], j_star)

    charge(len(vectors) * _SIMS_PER_MRFT)
    args = [(v, beta, h, mrft_duration) for v in vectors]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(_mrft_cell, args, chunksize=16))
    else:
        records = [_mrft_cell(a) for a in args]
    cells = [
        GridCell(
            d=np.asarray(v, float),
            optimal_gains=g,
            template=rec.waveform,
            period=rec.period,
            amplitude=rec.amplitude,
            cost=float(q),
        )
        for v, g, rec, q in zip(vectors, gains, records, q_jj)
    ]
    return ParameterGrid(
        cells=cells,
        bounds=bounds,
        j_star=j_star,
        shape=shape,
        beta=beta,
        relay_amplitude=h,
    )


def verify_grid(grid: ParameterGrid, horizon: float = 4.0) -> float:
    """Re-evaluate every adjacent-pair sensitivity; returns the worst J."""
    vectors = [tuple(c.d) for c in grid.cells]
    gains = [c.optimal_gains for c in grid.cells]
    dt = min(2e-3, grid.bounds[2, 0] / 5.0)
    worst_axis, _, _ = _lattice_sensitivities(vectors, gains, grid.shape, dt, horizon)
    return max(worst_axis)


# -- waveform matching -------------------------------------------------------


def match_score(waveform: np.ndarray, template: np.ndarray) -> float:
    """Normalized circular cross-correlation maximized over phase shift."""
    w = np.asarray(waveform, float)
    t = np.asarray(template, float)
    if len(w) != len(t):
        phase = np.linspace(0.0, 1.0, len(t), endpoint=False)
        src = np.linspace(0.0, 1.0, len(w), endpoint=False)
        w = np.interp(phase, src, w)
    w = w - w.mean()
    t = t - t.mean()
    denom = np.linalg.norm(w) * np.linalg.norm(t)
    if denom == 0:
        return 0.0
    corr = np.fft.irfft(np.fft.rfft(w) * np.conj(np.fft.rfft(t)), len(t))
    return float(np.max(corr) / denom)


PERIOD_SIGMA = 0.08
AMPLITUDE_SIGMA = 0.15


def _grid_match_arrays(grid: ParameterGrid):
    """Cached template FFTs, norms, periods and amplitudes for fast scoring."""
    cached = getattr(grid, "_match_arrays", None)
    if cached is not None and cached[0] == len(grid.cells):
        return cached[1]
    templates = np.stack([c.template for c in grid.cells])
    templates = templates - templates.mean(axis=1, keepdims=True)
    arrays = (
        np.fft.rfft(templates, axis=1),
        np.linalg.norm(templates, axis=1),
        np.array([c.period for c in grid.cells]),
        np.array([c.amplitude for c in grid.cells]),
    )
    object.__setattr__(grid, "_match_arrays", (len(grid.cells), arrays))
    return arrays


def identify(
    record: OscillationRecord,
    grid: ParameterGrid,
    threshold: float = 0.8,
) -> IdentificationResult:
    """Classify a steady relay oscillation to the best-matching grid cell.

    The score is the phase-searched normalized waveform correlation weighted
    by agreement of the oscillation period and amplitude.  Shape alone cannot
    separate the gain axis: a relay limit cycle of a linear plant keeps its
    exact shape and period when the loop gain changes, and only the amplitude
    carries that information.
    """
    if not grid.cells:
        raise ValueError("grid has no cells")
    if record.period <= 0 or record.amplitude <= 0:
        raise ValueError("record must have positive period and amplitude")
    tmpl_fft, tmpl_norm, periods, amplitudes = _grid_match_arrays(grid)
    npts = tmpl_fft.shape[1] * 2 - 2
    w = np.asarray(record.waveform, float)
    if len(w) != npts:
        phase = np.linspace(0.0, 1.0, npts, endpoint=False)
        src = np.linspace(0.0, 1.0, len(w), endpoint=False)
        w = np.interp(phase, src, w)
    w = w - w.mean()
    w_norm = np.linalg.norm(w)
    corr = np.fft.irfft(np.fft.rfft(w) * np.conj(tmpl_fft), npts, axis=1)
    denom = np.where(tmpl_norm * w_norm > 0, tmpl_norm * w_norm, np.inf)
    shape_scores = corr.max(axis=1) / denom
    period_scores = np.exp(-0.5 * (np.log(record.period / periods) / PERIOD_SIGMA) ** 2)
    amp_scores = np.exp(
        -0.5 * (np.log(record.amplitude / amplitudes) / AMPLITUDE_SIGMA) ** 2
    )
    scores = shape_scores * period_scores * amp_scores
    order = np.argsort(scores)[::-1]
    best = int(order[0])
    runner = float(scores[order[1]]) if len(scores) > 1 else 0.0
    if scores[best] < threshold:
        raise NoConfidentMatchError(float(scores[best]), threshold)
    return IdentificationResult(
        d_hat=grid.cells[best].d.copy(),
        match_score=float(scores[best]),
        runner_up_score=runner,
        cell_index=best,
    )


# -- persistence -------------------------------------------------------------


def save_grid(grid: ParameterGrid, directory: str | Path) -> None:
    """Directory layout: manifest.json plus one waveform .npy per cell."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "bounds": grid.bounds.tolist(),
        "j_star": grid.j_star,
        "shape": list(grid.shape),
        "beta": grid.beta,
        "relay_amplitude": grid.relay_amplitude,
        "cells": [],
    }
    for i, cell in enumerate(grid.cells):
        name = f"cell_{i:04d}.npy"
        np.save(directory / name, cell.template)
        manifest["cells"].append(
            {
                "d": cell.d.tolist(),
                "kc": cell.optimal_gains.kc,
                "kd": cell.optimal_gains.kd,
                "period": cell.period,
                "amplitude": cell.amplitude,
                "cost": cell.cost,
                "template": name,
            }
        )
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)


def load_grid(directory: str | Path) -> ParameterGrid:
    directory = Path(directory)
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    cells = []
    for entry in manifest["cells"]:
        cells.append(
            GridCell(
                d=np.asarray(entry["d"], float),
                optimal_gains=PDGains(kc=entry["kc"], kd=entry["kd"]),
                template=np.load(directory / entry["template"]),
                period=entry["period"],
                amplitude=entry["amplitude"],
                cost=entry["cost"],
            )
        )
    return ParameterGrid(
        cells=cells,
        bounds=np.asarray(manifest["bounds"], float),
        j_star=manifest["j_star"],
        shape=tuple(manifest["shape"]),
        beta=manifest.get("beta", DEFAULT_BETA),
        relay_amplitude=manifest.get("relay_amplitude", DEFAULT_H),
    )
