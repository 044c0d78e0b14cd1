"""Maximum likelihood fit of content and subject factors.

Each observed JND is modelled as ``Y_cs ~ N(y_c + b_s, v_c**2 + v_s**2)``.
Parameters are updated block by block (all ``y_c``, all ``b_s``, all
``v_c``, all ``v_s``) with one scalar Newton step ``theta - L'/L''`` per
parameter and sweep.  Within a block the parameters do not interact, so
each update is an independent one-dimensional problem and can be guarded
by its own backtracking check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Observations
from .jnd_model import ModelParams, SearchSchedule, kappa

LOG_2PI = math.log(2.0 * math.pi)
Z_95 = 1.96
MAX_HALVINGS = 60
BLOCKS = ("y_c", "b_s", "v_c", "v_s")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 1000
    tolerance: float = 1e-6
    variance_floor: float = 1e-2
    backtracking: bool = True
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("max_iterations and restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class Derivatives:
    """First (``grad``) and second (``curv``) partials of L, per parameter block."""

    grad: dict
    curv: dict


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    ci_halfwidth: dict
    loglik_trace: tuple
    iterations: int
    converged: bool
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def to_dict(self) -> dict:
        p = self.params

        def rows(key, ids, values, ci):
            return [{key: i, "estimate": float(v), "ci": _nan_to_none(h)}
                    for i, v, h in zip(ids, values, ci)]

        sched = SearchSchedule()
        return {
            "method": "mle",
            "y": rows("content", p.contents, p.y_c, self.ci_halfwidth["y_c"]),
            "b": rows("subject", p.subjects, p.b_s, self.ci_halfwidth["b_s"]),
            "v_c": rows("content", p.contents, p.v_c, self.ci_halfwidth["v_c"]),
            "v_s": rows("subject", p.subjects, p.v_s, self.ci_halfwidth["v_s"]),
            "kappa_context": {"kappa": p.kappa,
                              "initial_interval": sched.initial_interval,
                              "rounds": sched.rounds},
            "loglik": [float(x) for x in self.loglik_trace],
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _nan_to_none(x):
    x = float(x)
    return None if math.isnan(x) else x


def params_from_dict(d: dict) -> ModelParams:
    """Rebuild fitted parameters from :meth:`FitResult.to_dict` output."""
    if d.get("method", "mle") != "mle":
        raise ValueError("expected an MLE fit result")
    ctx = d.get("kappa_context") or {}
    return ModelParams(
        y_c=[r["estimate"] for r in d["y"]],
        v_c=[r["estimate"] for r in d["v_c"]],
        b_s=[r["estimate"] for r in d["b"]],
        v_s=[r["estimate"] for r in d["v_s"]],
        kappa=float(ctx.get("kappa", float("nan"))),
        contents=tuple(r["content"] for r in d["y"]),
        subjects=tuple(r["subject"] for r in d["b"]),
    )


def _check_dims(params: ModelParams, obs: Observations):
    if params.y_c.shape != (len(obs.contents),) or params.b_s.shape != (len(obs.subjects),):
        raise ValueError(
            f"parameters for {params.y_c.size}x{params.b_s.size} do not match "
            f"observations of shape {obs.shape}")


def _terms(y, mask, y_c, b_s, v_c, v_s):
    var = v_c[:, None] ** 2 + v_s[None, :] ** 2
    r = np.where(mask, y - y_c[:, None] - b_s[None, :], 0.0)
    w = np.where(mask, 1.0 / var, 0.0)
    return r, w, var


def _cell_loglik(y, mask, y_c, b_s, v_c, v_s):
    r, w, var = _terms(y, mask, y_c, b_s, v_c, v_s)
    cell = -0.5 * LOG_2PI - 0.5 * np.log(var) - 0.5 * r * r * w
    return np.where(mask, cell, 0.0)


def log_likelihood(params: ModelParams, obs: Observations) -> float:
    """Gaussian log-likelihood of the observed cells, constants included."""
    _check_dims(params, obs)
    return float(_cell_loglik(obs.scores, obs.mask, params.y_c, params.b_s,
                              params.v_c, params.v_s).sum())


def _derivs(y, mask, y_c, b_s, v_c, v_s):
    r, w, _ = _terms(y, mask, y_c, b_s, v_c, v_s)
    rw = r * w
    q = r * rw * w  # r^2 w^2
    # dL/dv_c = sum v_c w (r^2 w - 1);
    # d2L/dv_c2 = sum w (r^2 w - 1) - 2 v_c^2 w^2 (2 r^2 w - 1)
    base = q - w
    vc2 = (v_c ** 2)[:, None]
    vs2 = (v_s ** 2)[None, :]
    grad = {
        "y_c": rw.sum(axis=1),
        "b_s": rw.sum(axis=0),
        "v_c": v_c * base.sum(axis=1),
        "v_s": v_s * base.sum(axis=0),
    }
    curv = {
        "y_c": -w.sum(axis=1),
        "b_s": -w.sum(axis=0),
        "v_c": (base - 2.0 * vc2 * (2.0 * q * w - w * w)).sum(axis=1),
        "v_s": (base - 2.0 * vs2 * (2.0 * q * w - w * w)).sum(axis=0),
    }
    return grad, curv, w


def derivatives(params: ModelParams, obs: Observations) -> Derivatives:
    _check_dims(params, obs)
    grad, curv, _ = _derivs(obs.scores, obs.mask, params.y_c, params.b_s,
                            params.v_c, params.v_s)
    return Derivatives(grad, curv)


def initial_params(obs: Observations, config: FitConfig = FitConfig()) -> ModelParams:
    """Warm start from the MOS solution.

    ``y_c`` is the per-content mean, ``b_s`` the mean offset of each subject
    from those means (re-centred to sum to zero), and both spreads are the
    standard deviations of the remaining residuals, floored.
    """
    y, mask = obs.scores, obs.mask
    y_c = np.nanmean(y, axis=1)
    b_s = np.nanmean(y - y_c[:, None], axis=0)
    b_s = b_s - b_s.mean()
    r = np.where(mask, y - y_c[:, None] - b_s[None, :], np.nan)
    v_c = np.maximum(np.nanstd(r, axis=1), config.variance_floor)
    v_s = np.maximum(np.nanstd(r, axis=0), config.variance_floor)
    return ModelParams(y_c, v_c, b_s, v_s, kappa(SearchSchedule()),
                       obs.contents, obs.subjects)


def _step_spread(v, g, h, scale, objective, floor, backtracking):
    """One guarded scalar update for each entry of a spread block.

    Newton where the curvature is negative; otherwise, or when the Newton
    point lowers the likelihood, a gradient step ``g / scale`` halved until
    the likelihood does not decrease.
    """
    newton = h < 0
    safe_h = np.where(newton, h, -1.0)
    grad_step = g / scale
    step = np.where(newton, -g / safe_h, grad_step)
    cand = np.maximum(v + step, floor)
    if not backtracking:
        return cand
    f0 = objective(v)
    out = np.array(v, dtype=float)
    pending = np.ones(v.shape, dtype=bool)
    ok = newton & (objective(cand) >= f0)
    out[ok] = cand[ok]
    pending &= ~ok
    eta = 1.0
    for _ in range(MAX_HALVINGS):
        if not pending.any():
            break
        cand = np.maximum(v + eta * grad_step, floor)
        ok = pending & (objective(cand) >= f0)
        out[ok] = cand[ok]
        pending &= ~ok
        eta *= 0.5
    return out


def _step_location(theta, g, h, objective, backtracking):
    # L is quadratic in each location parameter, so the Newton point is the
    # exact block maximizer; the guard only catches round-off.
    cand = theta - g / h
    if not backtracking:
        return cand
    return np.where(objective(cand) >= objective(theta), cand, theta)


def _run(obs: Observations, start: ModelParams, config: FitConfig):
    y, mask = obs.scores, obs.mask
    y_c, b_s = np.array(start.y_c), np.array(start.b_s)
    v_c, v_s = np.array(start.v_c), np.array(start.v_s)
    floor = config.variance_floor
    bt = config.backtracking

    def ll():
        return float(_cell_loglik(y, mask, y_c, b_s, v_c, v_s).sum())

    trace = [ll()]
    converged = False
    it = 0
    while it < config.max_iterations:
        it += 1
        old = np.concatenate([y_c, b_s, v_c, v_s])

        g, h, _ = _derivs(y, mask, y_c, b_s, v_c, v_s)
        y_c = _step_location(
            y_c, g["y_c"], h["y_c"],
            lambda t: _cell_loglik(y, mask, t, b_s, v_c, v_s).sum(axis=1), bt)

        g, h, _ = _derivs(y, mask, y_c, b_s, v_c, v_s)
        b_s = _step_location(
            b_s, g["b_s"], h["b_s"],
            lambda t: _cell_loglik(y, mask, y_c, t, v_c, v_s).sum(axis=0), bt)
        offset = b_s.mean()
        b_s = b_s - offset
        y_c = y_c + offset

        g, h, w = _derivs(y, mask, y_c, b_s, v_c, v_s)
        v_c = _step_spread(
            v_c, g["v_c"], h["v_c"], w.sum(axis=1),
            lambda t: _cell_loglik(y, mask, y_c, b_s, t, v_s).sum(axis=1), floor, bt)

        g, h, w = _derivs(y, mask, y_c, b_s, v_c, v_s)
        v_s = _step_spread(
            v_s, g["v_s"], h["v_s"], w.sum(axis=0),
            lambda t: _cell_loglik(y, mask, y_c, b_s, v_c, t).sum(axis=0), floor, bt)

        trace.append(ll())
        change = np.max(np.abs(np.concatenate([y_c, b_s, v_c, v_s]) - old))
        if not np.isfinite(change):
            break
        if change < config.tolerance:
            converged = True
            break
    params = ModelParams(y_c, v_c, b_s, v_s, start.kappa, obs.contents, obs.subjects)
    return params, tuple(trace), it, converged


def _jitter(start: ModelParams, rng: np.random.Generator, floor: float) -> ModelParams:
    spread = float(np.sqrt(np.mean(start.v_c ** 2) + np.mean(start.v_s ** 2)))
    y_c = start.y_c + rng.normal(0.0, 0.1 * spread, start.y_c.shape)
    b_s = start.b_s + rng.normal(0.0, 0.1 * spread, start.b_s.shape)
    v_c = np.maximum(start.v_c * np.exp(rng.normal(0.0, 0.5, start.v_c.shape)), floor)
    v_s = np.maximum(start.v_s * np.exp(rng.normal(0.0, 0.5, start.v_s.shape)), floor)
    return ModelParams(y_c, v_c, b_s - b_s.mean(), v_s, start.kappa,
                       start.contents, start.subjects)


def halfwidths(params: ModelParams, obs: Observations, z: float = Z_95) -> dict:
    """``z / sqrt(-L'')`` per parameter; NaN where the curvature is not negative."""
    d = derivatives(params, obs)
    out = {}
    for name in BLOCKS:
        neg = -d.curv[name]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[name] = np.where(neg > 0, z / np.sqrt(np.where(neg > 0, neg, 1.0)), np.nan)
    return out


def fit(obs: Observations, config: FitConfig = FitConfig()) -> FitResult:
    """Maximize the log-likelihood by block-wise scalar Newton sweeps.

    With ``restarts > 1`` the extra runs start from jittered copies of the
    MOS warm start (seeded by ``config.seed``) and the run with the highest
    final likelihood is kept.
    """
    start = initial_params(obs, config)
    best = _run(obs, start, config)
    if config.restarts > 1:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(config.seed, spawn_key=(3,))))
        for _ in range(config.restarts - 1):
            cand = _run(obs, _jitter(start, rng, config.variance_floor), config)
            if cand[1][-1] > best[1][-1]:
                best = cand
    params, trace, iterations, converged = best
    return FitResult(params, halfwidths(params, obs), trace, iterations, converged, config)


def confidence_intervals(result: FitResult, allow_unavailable: bool = False) -> dict:
    """Per-block ``(estimates, halfwidths)`` at the 95% level.

    Raises :class:`EstimationError` for an unconverged fit, or when some
    parameter has non-negative curvature at the optimum (no finite
    interval) unless ``allow_unavailable`` is set, in which case those
    halfwidths are NaN.
    """
    if not result.converged:
        raise EstimationError("fit did not converge; intervals are not meaningful")
    out = {}
    bad = []
    for name in BLOCKS:
        est = getattr(result.params, name)
        hw = np.asarray(result.ci_halfwidth[name])
        ids = result.params.contents if name in ("y_c", "v_c") else result.params.subjects
        bad.extend(f"{name}[{i}]" for i, h in zip(ids, hw) if np.isnan(h))
        out[name] = (est, hw)
    if bad and not allow_unavailable:
        raise EstimationError(
            "non-negative curvature at the optimum, no interval for: " + ", ".join(bad))
    return out
