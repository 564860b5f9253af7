"""Fitting element parameters to measured lifetimes, and voltage sweeps."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .thermal import (DEFAULT_DT, BlowUpError, LifetimeResult, PeltierParams, bench_lifetime,
                      lifetime, simulate, stiffness_number, DriveInput)

log = logging.getLogger(__name__)

LOSS_DT = 0.05
LOSS_DURATION = 600.0
SWEEP_DURATION = 600.0
FLAG_PENALTY = 1.0
# the fastest mode must be resolved at the loss step, else the loss is a numerical artefact
MAX_STIFFNESS = 0.5
FIT_FIELDS = ("seebeck_alpha", "resistance", "internal_conductance", "heat_capacity_side",
              "ambient_conductance")
SPREAD_TOL = 1e-4
INITIAL_STEP = 0.1


@dataclass(frozen=True)
class Observation:
    voltage: float
    lifetime_mean: float
    lifetime_sd: float
    target_reached: bool

    def __post_init__(self):
        if not self.voltage > 0:
            raise ValueError("voltage must be > 0")
        if not self.lifetime_mean > 0:
            raise ValueError("lifetime_mean must be > 0")
        if not self.lifetime_sd >= 0:
            raise ValueError("lifetime_sd must be >= 0")


def observations_from_json(text: str) -> list[Observation]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("observations JSON must be an array")
    return [Observation(float(d["voltage"]), float(d["lifetime_mean"]), float(d["lifetime_sd"]),
                        bool(d["target_reached"])) for d in data]


def observations_to_json(obs: Sequence[Observation]) -> str:
    return json.dumps([dataclasses.asdict(o) for o in obs], indent=2) + "\n"


def load_observations(path: str | Path) -> list[Observation]:
    return observations_from_json(Path(path).read_text())


def _data_text(name: str) -> str:
    return resources.files("thermoflip").joinpath("data", name).read_text()


def bundled_observations() -> list[Observation]:
    """Mean lifetimes over three bench runs per voltage, TES1-4902, 25 degC room."""
    return observations_from_json(_data_text("observations.json"))


def default_initial_params() -> PeltierParams:
    """Datasheet-class starting point for fits; not a calibrated model."""
    return PeltierParams.from_json(_data_text("initial_params.json"))


def calibrated_params() -> PeltierParams:
    """Parameters produced by ``fit`` on the bundled dataset (shipped result)."""
    return PeltierParams.from_json(_data_text("calibrated_params.json"))


@dataclass(frozen=True)
class Prediction:
    voltage: float
    lifetime_mean: float
    predicted_lifetime: float | None
    relative_error: float
    target_reached: bool
    predicted_target_reached: bool


def predict(params: PeltierParams, obs: Observation, dt: float = LOSS_DT,
            duration: float = LOSS_DURATION) -> Prediction:
    life, ttt = bench_lifetime(params, obs.voltage, duration, dt)
    reached = ttt is not None and (life is None or ttt <= life)
    rel = 1.0 if life is None else (life - obs.lifetime_mean) / obs.lifetime_mean
    return Prediction(obs.voltage, obs.lifetime_mean, life, rel, obs.target_reached, reached)


def _loss_terms(preds: Sequence[Prediction]) -> float:
    return sum(p.relative_error ** 2 + (FLAG_PENALTY if p.predicted_target_reached != p.target_reached
                                        else 0.0) for p in preds)


def loss(params: PeltierParams, observations: Sequence[Observation], dt: float = LOSS_DT,
         duration: float = LOSS_DURATION) -> float:
    """Squared relative lifetime error plus a unit penalty per wrong target flag.

    A missing predicted lifetime counts as relative error 1. Blow-up, or a
    parameter set too stiff to integrate faithfully at ``dt``, scores +inf.
    """
    if not observations:
        raise ValueError("loss needs at least one observation")
    if stiffness_number(params, dt) > MAX_STIFFNESS:
        return math.inf
    try:
        return _loss_terms([predict(params, o, dt, duration) for o in observations])
    except BlowUpError:
        return math.inf


def gauge_fix(params: PeltierParams, resistance: float) -> PeltierParams:
    """Move along the one direction the lifetime data cannot see.

    Scaling resistance by 1/s and capacities and conductances by s leaves
    the temperature trajectories unchanged, so fits are reported at the
    point of that family whose resistance equals ``resistance``.
    """
    s = params.resistance / resistance
    cap = params.heat_capacity_side
    cap = tuple(c * s for c in cap) if isinstance(cap, tuple) else cap * s
    return params.replace(resistance=resistance, heat_capacity_side=cap,
                          internal_conductance=params.internal_conductance * s,
                          ambient_conductance=params.ambient_conductance * s)


def _pack(params: PeltierParams) -> np.ndarray:
    cap = params.capacities
    vals = [params.seebeck_alpha, params.resistance, params.internal_conductance,
            0.5 * (cap[0] + cap[1]), params.ambient_conductance]
    # zero alpha or ambient conductance would sit at -inf in log space
    return np.log(np.maximum(vals, 1e-12))


def _unpack(x: np.ndarray, template: PeltierParams) -> PeltierParams:
    vals = np.exp(x)
    return template.replace(**{k: float(v) for k, v in zip(FIT_FIELDS, vals)})


@dataclass(frozen=True)
class RestartResult:
    index: int
    loss: float
    iterations: int
    evaluations: int
    converged: bool
    x: tuple[float, ...] = field(repr=False)


@dataclass(frozen=True)
class FitReport:
    params: PeltierParams
    final_loss: float
    initial_loss: float
    predictions: tuple[Prediction, ...]
    iterations: int
    converged: bool
    best_restart: int
    restarts: tuple[RestartResult, ...]

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "final_loss": self.final_loss,
            "initial_loss": self.initial_loss,
            "iterations": self.iterations,
            "converged": self.converged,
            "best_restart": self.best_restart,
            "predictions": [dataclasses.asdict(p) for p in self.predictions],
            "restarts": [{"index": r.index, "loss": r.loss, "iterations": r.iterations,
                          "evaluations": r.evaluations, "converged": r.converged}
                         for r in self.restarts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True) + "\n"


def _objective(x: np.ndarray, template: PeltierParams, observations) -> float:
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 50):
        return math.inf
    try:
        params = _unpack(x, template)
    except ValueError:
        return math.inf
    return loss(params, observations)


def _run_restart(index: int, x0: np.ndarray, template: PeltierParams, observations,
                 max_iters: int) -> RestartResult:
    simplex = np.vstack([x0] + [x0 + INITIAL_STEP * e for e in np.eye(len(x0))])
    res = minimize(_objective, x0, args=(template, observations), method="Nelder-Mead",
                   options={"maxiter": max_iters, "maxfev": 10 * max_iters,
                            "xatol": SPREAD_TOL, "fatol": 1e300,
                            "initial_simplex": simplex})
    return RestartResult(index, float(res.fun), int(res.nit), int(res.nfev), res.status == 0,
                         tuple(float(v) for v in res.x))


def fit(observations: Sequence[Observation], initial: PeltierParams, max_iters: int = 2000,
        restarts: int = 4, seed: int = 0, perturbation: float = 0.5,
        workers: int | None = None) -> FitReport:
    """Nelder-Mead in log-parameter space with seeded multi-start.

    Restart 0 starts from ``initial``; restart k from ``initial`` scaled by
    log-normal factors drawn from ``seed``. Convergence means the simplex
    spread fell below 1e-4 in log space (relative) within ``max_iters``.
    The best restart is chosen by (loss, restart index), so the result is
    independent of how the restarts were scheduled. The winner is reported
    gauge-fixed to the initial resistance (see :func:`gauge_fix`).
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    observations = list(observations)
    template = initial.replace(heat_capacity_side=float(np.mean(initial.capacities)))
    x0 = _pack(initial)
    rng = np.random.default_rng(seed)
    starts = [x0] + [x0 + rng.normal(0.0, perturbation, len(x0)) for _ in range(restarts - 1)]

    initial_loss = loss(initial, observations)
    if workers is None or workers <= 1:
        results = [_run_restart(i, s, template, observations, max_iters) for i, s in enumerate(starts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _run_restart(a[0], a[1], template, observations,
                                                           max_iters), enumerate(starts)))
    best = min(results, key=lambda r: (r.loss, r.index))
    params = _unpack(np.array(best.x), template)
    final_loss = loss(params, observations)
    fixed = gauge_fix(params, initial.resistance)
    fixed_loss = loss(fixed, observations)
    if fixed_loss <= final_loss + 1e-9:
        params, final_loss = fixed, fixed_loss
    if not final_loss <= initial_loss:
        params, final_loss = initial, initial_loss
    preds = tuple(predict(params, o) for o in observations)
    log.info("fit: loss %.6g -> %.6g (restart %d, %d iterations)", initial_loss, final_loss,
             best.index, best.iterations)
    return FitReport(params, final_loss, initial_loss, preds, best.iterations, best.converged,
                     best.index, tuple(results))


@dataclass(frozen=True)
class SweepRow:
    voltage: float
    result: LifetimeResult | None
    error: str | None = None


def sweep_voltages(v_min: float, v_max: float, step: float) -> list[float]:
    if not v_min <= v_max:
        raise ValueError("need v_min <= v_max")
    if not step > 0:
        raise ValueError("step must be > 0")
    n = int(math.floor((v_max - v_min) / step + 1e-9))
    return [round(v_min + i * step, 9) for i in range(n + 1)]


def sweep(params: PeltierParams, v_min: float = 1.0, v_max: float = 5.0, step: float = 0.5,
          duration: float = SWEEP_DURATION, dt: float = DEFAULT_DT) -> list[SweepRow]:
    """Constant-voltage bench run and lifetime analysis per voltage."""
    rows = []
    for v in sweep_voltages(v_min, v_max, step):
        try:
            series = simulate(params, DriveInput(v), duration, dt)
            rows.append(SweepRow(v, lifetime(series, params)))
        except BlowUpError as exc:
            rows.append(SweepRow(v, None, str(exc)))
    return rows


def select_optimal_voltage(rows: Sequence[SweepRow]) -> float | None:
    """Lowest voltage whose warm face reaches target within the lifetime."""
    if not rows:
        raise ValueError("empty sweep table")
    ok = [r.voltage for r in rows if r.result is not None and r.result.target_reached_within_lifetime]
    return min(ok) if ok else None
