"""Sequential localization trials and Monte Carlo sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .case_io import load_case
from .decision import (
    OmpResult,
    WhitenedSystem,
    map_support_to_event,
    omp_localize,
    omp_per_hypothesis,
    stop_or_continue,
    whiten,
)
from .grid_model import GmrfModel, model_from_case
from .scenario import (
    EventSet,
    enumerate_events,
    injection_sigma,
    local_outage_events,
    sample_measurement_state,
)
from .selection import SelectionState, select_initial, select_next, static_scores

MODES = ("adaptive", "prespecified", "full")
CSV_COLUMNS = ("mode", "budget", "ell", "trials", "accuracy", "ci95", "mean_measurements", "mean_steps", "forced_stop_rate")


@dataclass(frozen=True)
class RunConfig:
    ell: int = 1
    gamma: float = 1e-6
    eta_max: int = 1
    noise_fraction: float = 0.01
    budget: int | None = None
    mode: str = "adaptive"
    true_event: int | None = None
    selection_rule: str = "two_stage"
    per_event: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be >= 1")


@dataclass
class TrialRecord:
    true_event: int
    decided_event: int
    correct: bool
    measurements_used: int
    steps: int
    ell: int
    forced_stop: bool
    seed: int | None = None
    support: tuple[int, ...] = ()
    residual_norm: float = float("nan")
    mismatch: int = 0
    degenerate: bool = False
    observed: tuple[int, ...] = ()
    evaluations: tuple[int, ...] = ()
    anchors: tuple[int, ...] = ()
    fallbacks: tuple[int, ...] = ()


@dataclass
class StepRecord:
    buses: tuple[int, ...]
    measurements: int
    rank: int
    result: OmpResult | None
    evaluations: int
    anchors: int = 0
    fallbacks: int = 0


@dataclass
class Trace:
    """Everything observed in one trial, sampled until the budget runs out.

    Pursuit histories are kept in full so the outcome under any stopping
    threshold can be recovered with :meth:`replay`.
    """

    true_event: int
    events: EventSet
    ell: int
    steps: list[StepRecord] = field(default_factory=list)
    seed: int | None = None

    def breakpoints(self) -> np.ndarray:
        vals = [0.0]
        for st in self.steps:
            if st.result is not None:
                vals.extend(st.result.residual_history)
        return np.unique(vals)

    def decision_at(self, j: int, gamma: float = 0.0) -> tuple[tuple[int, ...], float, bool]:
        """Support, residual and informativeness of step ``j`` under threshold ``gamma``."""
        res = self.steps[j].result
        if res is None:
            return (), float("inf"), False
        hist = res.residual_history
        h = next((i for i, v in enumerate(hist) if v <= gamma), len(hist) - 1)
        return res.support[:h], hist[h], _informative(self.steps[j].rank, res, h)

    def replay(self, gamma: float) -> TrialRecord:
        for j in range(len(self.steps)):
            support, residual, informative = self.decision_at(j, gamma)
            remaining = 0 if j == len(self.steps) - 1 else 1
            verdict = stop_or_continue(residual, gamma, remaining, informative)
            if verdict.stop:
                return self._record(j, support, residual, verdict.forced)
        raise RuntimeError("trace has no steps")

    def _record(self, j: int, support, residual, forced) -> TrialRecord:
        decided, dist = map_support_to_event(support, self.events)
        steps = self.steps[: j + 1]
        return TrialRecord(
            true_event=self.true_event,
            decided_event=decided,
            correct=decided == self.true_event,
            measurements_used=sum(len(s.buses) for s in steps),
            steps=j + 1,
            ell=self.ell,
            forced_stop=forced,
            seed=self.seed,
            support=tuple(support),
            residual_norm=residual,
            mismatch=dist,
            degenerate=self.steps[j].result is None,
            observed=tuple(b for s in steps for b in s.buses),
            evaluations=tuple(s.evaluations for s in steps),
            anchors=tuple(s.anchors for s in steps),
            fallbacks=tuple(s.fallbacks for s in steps),
        )


def _informative(rank: int, res: OmpResult, h: int) -> bool:
    # more equations than unknowns, and no rival support fitting as well
    return rank > h and res.unique(h)


def whitening_sigma(model: GmrfModel, noise_fraction: float) -> float:
    # without injection noise any isotropic reference covariance will do
    sigma = injection_sigma(model, noise_fraction)
    return sigma if sigma > 0 else 1.0


def observation_system(model: GmrfModel, observed: Sequence[int], theta: np.ndarray, sigma: float) -> WhitenedSystem | None:
    """Whitened sparse model for the observed buses; ``None`` if only the reference was read."""
    rows = [model.reduced_index[b] for b in observed if b != model.reference]
    if not rows:
        return None
    buses = [b for b in observed if b != model.reference]
    delta = theta[buses] - model.theta_bar[buses]
    return whiten(model.B_reduced[rows], sigma, delta, model.incidence_reduced)


def _pursue(model, events, observed, theta, sigma, gamma, cfg: RunConfig):
    system = observation_system(model, observed, theta, sigma)
    if system is None:
        return None, 0
    if cfg.per_event:
        # identical covariance under every hypothesis, so the systems coincide
        _, res = omp_per_hypothesis([system] * len(events), gamma, cfg.eta_max)
    else:
        res = omp_localize(system, gamma, cfg.eta_max)
    return res, system.rank


def _draw_truth(events: EventSet, cfg: RunConfig, rng: np.random.Generator) -> int:
    if cfg.true_event is not None:
        return cfg.true_event
    if not events.anomalous:
        return 0
    return int(events.anomalous[rng.integers(len(events.anomalous))])


def trial_state(events: EventSet, cfg: RunConfig, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """True event and sampled angles; the first draws of every trial."""
    truth = _draw_truth(events, cfg, rng)
    return truth, sample_measurement_state(events[truth], cfg.noise_fraction, rng)


def _steps(model, events, cfg: RunConfig, theta, sigma, gamma) -> Iterator[tuple[StepRecord, int]]:
    """Yield each sampling step and the number of measurements still allowed."""
    n = model.n_buses
    limit = n if cfg.budget is None else min(cfg.budget, n)
    if cfg.mode != "adaptive":
        buses = list(range(n)) if cfg.mode == "full" else select_initial(model, limit)
        res, rank = _pursue(model, events, buses, theta, sigma, gamma, cfg)
        yield StepRecord(tuple(buses), len(buses), rank, res, 0), 0
        return
    state = SelectionState(cfg.ell, static_scores(model))
    used = 0
    while used < limit:
        if not state.observed:
            buses = select_initial(model, min(cfg.ell, limit))
            state.evaluations.append(0)
            state.anchors.append(0)
            state.fallbacks.append(0)
        else:
            buses = select_next(state, model, cfg.selection_rule)[: limit - used]
        if not buses:
            break
        state.record(buses, theta, model.theta_bar)
        used += len(buses)
        res, rank = _pursue(model, events, state.observed, theta, sigma, gamma, cfg)
        step = StepRecord(
            tuple(buses), len(buses), rank, res, state.evaluations[-1], state.anchors[-1], state.fallbacks[-1]
        )
        yield step, limit - used


def trace_trial(model: GmrfModel, events: EventSet, cfg: RunConfig, rng: np.random.Generator, seed=None) -> Trace:
    """Sample a trial to the end of its budget without stopping early."""
    truth, theta = trial_state(events, cfg, rng)
    sigma = whitening_sigma(model, cfg.noise_fraction)
    trace = Trace(truth, events, cfg.ell, seed=seed)
    for step, _ in _steps(model, events, cfg, theta, sigma, 0.0):
        trace.steps.append(step)
    return trace


def run_trial(model: GmrfModel, events: EventSet, cfg: RunConfig, rng: np.random.Generator, seed=None) -> TrialRecord:
    """One sequential localization: sample, pursue, stop at ``gamma`` or the budget."""
    truth, theta = trial_state(events, cfg, rng)
    sigma = whitening_sigma(model, cfg.noise_fraction)
    trace = Trace(truth, events, cfg.ell, seed=seed)
    for step, remaining in _steps(model, events, cfg, theta, sigma, cfg.gamma):
        trace.steps.append(step)
        j = len(trace.steps) - 1
        if step.result is None:
            support, residual, informative = (), float("inf"), False
        else:
            support, residual = step.result.support, step.result.residual_norm
            informative = _informative(step.rank, step.result, len(support))
        verdict = stop_or_continue(residual, cfg.gamma, remaining, informative)
        if verdict.stop or cfg.mode != "adaptive":
            return trace._record(j, support, residual, verdict.forced)
    raise RuntimeError("no measurements were taken")


def run_baseline_prespecified(model, events, cfg: RunConfig, rng, seed=None) -> TrialRecord:
    """Read the ``budget`` highest-degree buses in one shot, then decide."""
    return run_trial(model, events, replace(cfg, mode="prespecified"), rng, seed)


def count_candidate_evaluations(trial: TrialRecord) -> int:
    """Candidate buses whose metric was examined over the whole trial.

    Buses filled in from the precomputed ranking when neighborhoods run
    dry are counted separately in ``trial.fallbacks``.
    """
    return int(sum(trial.evaluations))


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepConfig:
    case: str
    modes: tuple[str, ...] = ("adaptive", "prespecified")
    budgets: tuple[int, ...] = ()
    ell: int = 5
    noise_fraction: float = 0.01
    gamma: float | None = None
    beta: float | None = None
    trials: int = 100
    base_seed: int = 0
    eta_max: int = 1
    events: object = "single_outage"
    selection_rule: str = "two_stage"
    calibration_trials: int = 200

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self.budgets = tuple(int(b) for b in self.budgets)
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ValueError(f"unknown mode(s) {sorted(bad)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if (self.gamma is None) == (self.beta is None):
            raise ValueError("give exactly one of gamma or beta")
        if any(b < 1 for b in self.budgets):
            raise ValueError("budgets must be positive")


def load_sweep_config(path: str | Path) -> SweepConfig:
    doc = json.loads(Path(path).read_text())
    if "mode" in doc:
        doc["modes"] = [doc.pop("mode")]
    known = {f.name for f in fields(SweepConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown sweep config field(s): {sorted(unknown)}")
    return SweepConfig(**doc)


def build_events(model: GmrfModel, spec, eta_max: int = 1) -> EventSet:
    """Hypotheses from a config value.

    ``"single_outage"``, ``{"local": k}`` for clustered k-line outages, or
    an explicit list of line-index lists.
    """
    if spec == "single_outage":
        return enumerate_events(model, "single_outage", eta_max)
    if isinstance(spec, dict) and "local" in spec:
        size = int(spec["local"])
        return enumerate_events(model, local_outage_events(model, size), max(eta_max, size))
    return enumerate_events(model, list(spec), eta_max)


@dataclass
class SweepRow:
    mode: str
    budget: int
    ell: int
    trials: int
    accuracy: float
    ci95: float
    mean_measurements: float
    mean_steps: float
    forced_stop_rate: float


def ci95(p: float, n: int) -> float:
    return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def summarize(mode: str, budget: int, ell: int, records: Sequence[TrialRecord]) -> SweepRow:
    n = len(records)
    acc = sum(r.correct for r in records) / n
    return SweepRow(
        mode,
        budget,
        ell,
        n,
        acc,
        ci95(acc, n),
        float(np.mean([r.measurements_used for r in records])),
        float(np.mean([r.steps for r in records])),
        sum(r.forced_stop for r in records) / n,
    )


def run_cell(model, events, cfg: RunConfig, trials: int, base_seed: int) -> list[TrialRecord]:
    """``trials`` independent trials; trial ``i`` owns generator ``base_seed + i``."""
    return [
        run_trial(model, events, cfg, np.random.default_rng(base_seed + i), seed=base_seed + i)
        for i in range(trials)
    ]


def run_accuracy_sweep(cfg: SweepConfig, model: GmrfModel | None = None, events: EventSet | None = None) -> list[SweepRow]:
    """Accuracy and cost for every (mode, budget) cell.

    Every cell reuses seeds ``base_seed .. base_seed + trials - 1``, so the
    modes face identical true events and noise draws. Full observation is
    reported once, with budget equal to the number of buses.
    """
    from .decision import calibrate_threshold

    if model is None:
        model = model_from_case(load_case(cfg.case))
    if events is None:
        events = build_events(model, cfg.events, cfg.eta_max)
    gamma = cfg.gamma
    if gamma is None:
        gamma = calibrate_threshold(
            model, events, cfg.noise_fraction, cfg.beta, cfg.calibration_trials, cfg.base_seed + 10**6, cfg.ell, events.eta_max
        ).gamma

    rows = []
    budgets = cfg.budgets or (model.n_buses,)
    for mode in cfg.modes:
        cells = [model.n_buses] if mode == "full" else budgets
        for budget in cells:
            rc = RunConfig(
                ell=cfg.ell,
                gamma=gamma,
                eta_max=events.eta_max,
                noise_fraction=cfg.noise_fraction,
                budget=budget,
                mode=mode,
                selection_rule=cfg.selection_rule,
            )
            rows.append(summarize(mode, budget, cfg.ell, run_cell(model, events, rc, cfg.trials, cfg.base_seed)))
    return rows


def format_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.mode,
                r.budget,
                r.ell,
                r.trials,
                f"{r.accuracy:.6f}",
                f"{r.ci95:.6f}",
                f"{r.mean_measurements:.4f}",
                f"{r.mean_steps:.4f}",
                f"{r.forced_stop_rate:.6f}",
            ]
        )
    return buf.getvalue()


def write_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    try:
        Path(path).write_text(format_csv(rows))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


# ------------------------------------------------------ delay versus ell


@dataclass
class AccuracyCurve:
    """Accuracy after each step; ``hits[i, j]`` says trial ``i`` was right after step ``j``."""

    ell: int
    measurements: np.ndarray
    hits: np.ndarray

    @property
    def trials(self) -> int:
        return self.hits.shape[0]

    @property
    def accuracy(self) -> np.ndarray:
        return self.hits.mean(axis=0)

    def required(self, target: float) -> tuple[float, float]:
        """Fewest measurements, and the matching number of steps, reaching ``target`` accuracy."""
        hit = np.flatnonzero(self.accuracy >= target)
        if not hit.size:
            return math.inf, math.inf
        m = float(self.measurements[hit[0]])
        return m, float(hit[0] + 1)


def accuracy_curve(
    model: GmrfModel,
    events: EventSet,
    ell: int,
    trials: int,
    noise_fraction: float,
    base_seed: int = 0,
    max_budget: int | None = None,
    eta_max: int = 1,
) -> AccuracyCurve:
    """Accuracy after each adaptive step, when stopping only at a fixed budget."""
    cfg = RunConfig(ell=ell, gamma=0.0, eta_max=eta_max, noise_fraction=noise_fraction, budget=max_budget)
    traces = [trace_trial(model, events, cfg, np.random.default_rng(base_seed + i), base_seed + i) for i in range(trials)]
    n_steps = min(len(t.steps) for t in traces)
    hits = np.zeros((trials, n_steps), dtype=bool)
    for i, tr in enumerate(traces):
        for j in range(n_steps):
            support, _, _ = tr.decision_at(j)
            hits[i, j] = map_support_to_event(support, events)[0] == tr.true_event
    measurements = np.cumsum([len(s.buses) for s in traces[0].steps[:n_steps]])
    return AccuracyCurve(ell, measurements, hits)


def record_to_dict(record: TrialRecord) -> dict:
    d = asdict(record)
    for k, v in d.items():
        if isinstance(v, (np.integer, np.floating)):
            d[k] = v.item()
    return d
