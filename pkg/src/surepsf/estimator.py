"""Joint SURE minimization over PSF parameters and the Tikhonov weight.

One iteration, in order:

1. evaluate the PSF spectrum and its derivative spectra at the current
   parameters;
2. update every scale parameter (widths, Laplacian coefficients, mixture
   weights) multiplicatively, ``gamma <- gamma * R**p_k``, where ``p_k`` ramps
   linearly from ``p/10`` to ``p`` over the first ``p_ramp_iters`` iterations;
   when ``R <= 0`` that parameter takes one gradient step instead;
3. update the angle with one gradient step whose length is the scalar
   Barzilai-Borwein (spectral) step ``|d_theta * d_g| / d_g**2``;
4. update ``lambda`` once with its fixed point (skipped for the ideal
   regularizer).

If the new SURE is above the previous one, the angle step alone is halved
(up to ``theta_backtracks`` evaluations) and step 4 is redone.  The scale
updates are never shortened, so an unstable exponent still shows up as
divergence or oscillation.

A run is CONVERGED once the largest absolute parameter change (angles in
radians) stays below ``conv_tol`` for ``conv_window`` consecutive iterations,
DIVERGED if a value becomes non-finite or leaves its bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .exceptions import DegenerateDataError, DegenerateMixtureError, ParameterDomainError
from .imageio import write_csv
from .psf import MixturePSF, project_weights
from .sure import IdealRegularizer, SureContext, SureEvaluator

__all__ = [
    "Status",
    "OptimizerConfig",
    "IterationTrace",
    "LambdaResult",
    "estimate",
    "estimate_with_ideal_regularizer",
    "lambda_solve",
    "default_bounds",
]

DEFAULT_P = {"gaussian": 0.25, "laplacian": 2.0, "mixture": -0.5}

THETA_PROBE = 1e-4


class Status(str, Enum):
    CONVERGED = "CONVERGED"
    MAX_ITERS = "MAX_ITERS"
    DIVERGED = "DIVERGED"


def default_bounds(model) -> dict:
    if model.family == "gaussian":
        b = {"omega_x": (1e-3, 50.0), "omega_y": (1e-3, 50.0)}
    elif model.family == "laplacian":
        b = {"alpha_x": (0.0, 1e4), "alpha_y": (0.0, 1e4)}
    else:
        b = {name: (0.0, 1.0) for name in model.scale_params}
    if model.angle_param:
        b["theta"] = (-4 * math.pi, 4 * math.pi)
    return b


@dataclass
class OptimizerConfig:
    """Iteration settings.

    ``p`` is either one exponent for every scale parameter or a mapping from
    parameter name to exponent; missing entries use the family default
    (0.25 for Gaussian widths, 2 for Laplacian coefficients, -0.5 for
    mixture weights).  ``theta_rule`` is ``"spectral"`` (Barzilai-Borwein) or
    ``"fixed"`` (constant step ``theta_step``).
    """

    p: float | dict | None = None
    p_ramp_iters: int = 10
    theta_rule: str = "spectral"
    theta_step: float = 1e-4
    theta_max_step: float = 0.1
    theta_backtracks: int = 20
    max_iters: int = 200
    conv_tol: float = 1e-3
    conv_window: int = 3
    bounds: dict | None = None
    fixed: tuple = ()

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be > 0")
        if self.theta_backtracks < 0:
            raise ValueError("theta_backtracks must be >= 0")
        if self.conv_window < 1:
            raise ValueError("conv_window must be >= 1")
        if self.theta_rule not in ("spectral", "fixed"):
            raise ValueError(f"unknown theta_rule {self.theta_rule!r}")
        for name, (lo, hi) in (self.bounds or {}).items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bad bounds for {name}: {(lo, hi)}")
        self.fixed = tuple(self.fixed)

    def p_target(self, model, name) -> float:
        if isinstance(self.p, dict) and name in self.p:
            return float(self.p[name])
        if isinstance(self.p, (int, float)):
            return float(self.p)
        return DEFAULT_P[model.family]

    def p_at(self, model, name, iteration) -> float:
        p = self.p_target(model, name)
        if self.p_ramp_iters <= 1:
            return p
        frac = min(1.0, (iteration - 1) / (self.p_ramp_iters - 1))
        return p * (0.1 + 0.9 * frac)

    def bounds_for(self, model) -> dict:
        b = default_bounds(model)
        b.update(self.bounds or {})
        return b


@dataclass
class IterationTrace:
    """Per-iteration record of a run; each row describes the state after it."""

    param_names: tuple
    rows: list = field(default_factory=list)
    status: Status | None = None
    iterations: int = 0
    reason: str = ""

    def finish(self, status, reason=""):
        if self.status is not None:
            raise RuntimeError("trace status already set")
        self.status = Status(status)
        self.iterations = len(self.rows)
        self.reason = reason

    @property
    def sure(self):
        return np.array([r["sure"] for r in self.rows])

    @property
    def lambdas(self):
        return np.array([r["lambda"] for r in self.rows])

    def param(self, name):
        return np.array([r["params"][name] for r in self.rows])

    def csv_header(self):
        cols = ["iter", *self.param_names]
        if "theta" in self.param_names:
            cols.append("theta_deg")
        cols += ["lambda", "sure"]
        cols += [f"ratio_{n}" for n in self.param_names if n != "theta"]
        cols += ["theta_grad", "theta_step", "theta_backtracks", "fallback", "clamped"]
        return cols

    def csv_rows(self):
        for r in self.rows:
            row = [r["iter"], *(r["params"][n] for n in self.param_names)]
            if "theta" in self.param_names:
                row.append(math.degrees(r["params"]["theta"]))
            row += [r["lambda"], r["sure"]]
            row += [r["ratios"].get(n, float("nan")) for n in self.param_names if n != "theta"]
            row += [
                r["theta_grad"],
                r["theta_step"],
                r["theta_backtracks"],
                ";".join(r["fallback"]),
                ";".join(r["clamped"]),
            ]
            yield row

    def to_csv(self, path):
        write_csv(path, self.csv_header(), self.csv_rows())


class _BB:
    """Scalar Barzilai-Borwein step length.

    The first step is the probe ``tau0 = 1e-4 / (|g0| + 1e-12)``; later steps
    are clamped to ``[1e-8, 1e2] * tau0``.  An exactly zero gradient (an
    isotropic Gaussian has no angle gradient) moves nothing and does not fix
    ``tau0``, which would otherwise be ``1e8`` and void the clamp.
    """

    def __init__(self):
        self.x = None
        self.g = None
        self.tau0 = None

    def step(self, x, g):
        if self.tau0 is None:
            if g == 0.0:
                return 0.0
            self.tau0 = THETA_PROBE / (abs(g) + 1e-12)
        tau = None
        if self.x is not None:
            dx, dg = x - self.x, g - self.g
            if dx != 0.0 and dg != 0.0:
                tau = abs(dx * dg) / (dg * dg)
        if tau is None or not math.isfinite(tau):
            tau = self.tau0
        tau = min(max(tau, 1e-8 * self.tau0), 1e2 * self.tau0)
        self.x, self.g = x, g
        return tau


def _evaluator(ctx, model, lam, ideal):
    h = model.spectrum(ctx.shape)
    return SureEvaluator(ctx, h, None if ideal is not None else lam, ideal)


class _Candidate(NamedTuple):
    params: dict
    model: object
    lam: float
    ev: object
    sure: float
    reason: str
    clamped: list


def _candidate(ctx, model, new, lam, ideal, bounds) -> _Candidate:
    """Project, clamp and score a proposed parameter set; update lambda."""
    new = dict(new)
    params = model.params
    reason = ""
    if isinstance(model, MixturePSF):
        try:
            w = project_weights([new[n] for n in model.scale_params])
            new.update(zip(model.scale_params, (float(x) for x in w)))
        except DegenerateMixtureError as exc:
            reason = str(exc)

    clamped = []
    for name, val in new.items():
        if not math.isfinite(val):
            reason = reason or f"{name} is not finite"
            new[name] = params[name]
            continue
        lo, hi = bounds.get(name, (-math.inf, math.inf))
        if val < lo or val > hi:
            clamped.append(name)
            new[name] = min(max(val, lo), hi)
            reason = reason or f"{name}={val:.6g} left bounds {(lo, hi)}"

    model_next = model.with_params(**new)
    try:
        if ideal is None and not reason:
            num, den = _evaluator(ctx, model_next, lam, None).lambda_terms()
            lam_next = num / den if den > 0 else float("nan")
            if not (lam_next > 0 and math.isfinite(lam_next)):
                raise DegenerateDataError("lambda update is not positive and finite")
        else:
            lam_next = lam
        ev_next = _evaluator(ctx, model_next, lam_next, ideal)
        sure = ev_next.value()
    except (DegenerateDataError, ParameterDomainError) as exc:
        reason = reason or str(exc)
        lam_next, sure, ev_next = lam, float("nan"), None
    if not reason and not math.isfinite(sure):
        reason = "SURE is not finite"
    return _Candidate(new, model_next, lam_next, ev_next, sure, reason, clamped)


def _backtrack_angle(ctx, model, new, lam, ideal, bounds, angle, step, cand, sure_prev, cfg):
    """Monotone safeguard on the angle step only.

    The candidate with the angle frozen is scored first.  If it also raises
    SURE, the scale update is to blame and the lower of the two is kept;
    otherwise the angle step is halved until SURE no longer increases, with
    the frozen-angle candidate as the fallback.
    """
    theta0 = model.params[angle]
    frozen = _candidate(ctx, model, {**new, angle: theta0}, lam, ideal, bounds)
    if frozen.reason or frozen.sure > sure_prev:
        best = cand if frozen.reason or cand.sure <= frozen.sure else frozen
        return best, best.params[angle] - theta0, 1
    tries = 1
    while tries < cfg.theta_backtracks:
        tries += 1
        step *= 0.5
        trial = _candidate(ctx, model, {**new, angle: theta0 + step}, lam, ideal, bounds)
        if not trial.reason and trial.sure <= sure_prev:
            return trial, trial.params[angle] - theta0, tries
    return frozen, 0.0, tries


def _run(ctx: SureContext, model0, lambda0, cfg: OptimizerConfig, ideal: IdealRegularizer | None):
    if not isinstance(ctx, SureContext):
        raise TypeError("ctx must be a SureContext")
    if ideal is not None and ideal.v_spectrum.shape != ctx.shape:
        raise ParameterDomainError("ideal regularizer shape does not match the context")
    if ideal is None and not (lambda0 is not None and lambda0 > 0 and math.isfinite(lambda0)):
        raise ParameterDomainError(f"lambda0 must be > 0, got {lambda0}")
    bounds = cfg.bounds_for(model0)
    for name, val in model0.params.items():
        lo, hi = bounds.get(name, (-math.inf, math.inf))
        if not (lo <= val <= hi):
            raise ParameterDomainError(f"initial {name}={val} outside bounds {(lo, hi)}")

    model = model0.normalized() if isinstance(model0, MixturePSF) else model0
    lam = lambda0 if ideal is None else float("nan")
    names = tuple(model.param_names)
    trace = IterationTrace(names)
    free = [n for n in model.scale_params if n not in cfg.fixed]
    angle = model.angle_param if model.angle_param and model.angle_param not in cfg.fixed else None
    bb = {n: _BB() for n in names}
    ev = _evaluator(ctx, model, lam, ideal)
    sure_prev = ev.value()
    calm = 0

    for it in range(1, cfg.max_iters + 1):
        derivs = model.derivative_spectra(ctx.shape)
        params = model.params
        new = dict(params)
        ratios, fallback = {}, []

        for name in free:
            num, den = ev.terms(derivs[name])
            r = num / den if den != 0.0 else float("nan")
            ratios[name] = r
            if r > 0 and math.isfinite(r):
                new[name] = params[name] * r ** cfg.p_at(model, name, it)
            else:
                g = 4.0 * (den - num)
                new[name] = params[name] - bb[name].step(params[name], g) * g
                fallback.append(name)

        theta_grad = theta_step = float("nan")
        if angle:
            theta_grad = ev.gradient(derivs[angle])
            if cfg.theta_rule == "spectral":
                tau = bb[angle].step(params[angle], theta_grad)
            else:
                tau = cfg.theta_step
            theta_step = -tau * theta_grad
            if abs(theta_step) > cfg.theta_max_step:
                theta_step = math.copysign(cfg.theta_max_step, theta_step)
            new[angle] = params[angle] + theta_step

        cand = _candidate(ctx, model, new, lam, ideal, bounds)
        backtracks = 0
        if angle and cfg.theta_backtracks and not cand.reason and cand.sure > sure_prev:
            cand, theta_step, backtracks = _backtrack_angle(
                ctx, model, new, lam, ideal, bounds, angle, theta_step, cand, sure_prev, cfg
            )

        model_next, lam_next, ev_next, sure, reason = (
            cand.model, cand.lam, cand.ev, cand.sure, cand.reason
        )
        new = cand.params
        row = {
            "iter": it,
            "params": dict(new),
            "ratios": ratios,
            "theta_grad": theta_grad,
            "theta_step": theta_step,
            "theta_backtracks": backtracks,
            "fallback": fallback,
            "clamped": cand.clamped,
            "lambda": lam_next,
            "sure": sure,
        }
        trace.rows.append(row)

        if reason:
            trace.finish(Status.DIVERGED, reason)
            return model_next, lam_next, trace

        change = max(abs(new[n] - params[n]) for n in names)
        calm = calm + 1 if change < cfg.conv_tol else 0
        model, lam, ev, sure_prev = model_next, lam_next, ev_next, sure
        if calm >= cfg.conv_window:
            trace.finish(Status.CONVERGED)
            return model, lam, trace

    trace.finish(Status.MAX_ITERS)
    return model, lam, trace


def estimate(ctx: SureContext, model0, lambda0: float, cfg: OptimizerConfig | None = None):
    """Estimate PSF parameters and ``lambda`` from one observation.

    Returns
    -------
    model, lam, trace
        Final PSF model, regularization weight and :class:`IterationTrace`.
        A diverged run returns its last (clamped) state; divergence is a
        result, not an exception.
    """
    return _run(ctx, model0, lambda0, cfg or OptimizerConfig(), None)


def estimate_with_ideal_regularizer(ctx, ideal: IdealRegularizer, model0, cfg=None):
    """Same iteration with ``lambda * D`` replaced by ``N sigma^2 / |u0_hat|^2``."""
    model, _, trace = _run(ctx, model0, None, cfg or OptimizerConfig(), ideal)
    return model, trace


class LambdaResult(NamedTuple):
    lam: float
    converged: bool
    iterations: int
    history: list


def lambda_solve(ctx, h, lambda0, tol=1e-6, max_iters=200) -> LambdaResult:
    """Iterate the lambda fixed point for a fixed PSF spectrum."""
    if not (lambda0 > 0):
        raise ParameterDomainError(f"lambda0 must be > 0, got {lambda0}")
    lam = float(lambda0)
    history = [lam]
    for it in range(1, max_iters + 1):
        num, den = SureEvaluator(ctx, h, lam).lambda_terms()
        if not (den > 0) or not math.isfinite(num / den):
            raise DegenerateDataError("lambda update denominator is not positive")
        nxt = num / den
        history.append(nxt)
        done = abs(nxt - lam) <= tol * lam
        lam = nxt
        if done:
            return LambdaResult(lam, True, it, history)
    return LambdaResult(lam, False, max_iters, history)
