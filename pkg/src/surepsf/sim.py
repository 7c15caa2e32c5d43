"""Monte-Carlo harness: random blur/noise trials, batches and summaries.

Every random quantity of a trial comes from one PCG64 stream seeded with
``TrialSpec.seed``, drawn in a fixed order: the parameter priors, the SNR
prior, then the noise (Box-Muller on the stream's uniforms).  Prior draws
are consumed even when ``truth`` or ``snr`` is given explicitly, so a fixed
seed always yields the same noise field.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .estimator import OptimizerConfig, Status, estimate, estimate_with_ideal_regularizer
from .exceptions import InvalidInputError, SurePsfError
from .imageio import write_csv, write_json
from .psf import psf_from_dict, wrap_angle_deg
from .regularizer import RegularizerSpec
from .spectral import forward_dft, inverse_dft
from .sure import IdealRegularizer, SureContext, SureEvaluator
from .testimages import load_test_image

__all__ = [
    "TrialSpec",
    "TrialRecord",
    "LaplacianPair",
    "BatchResult",
    "box_muller",
    "make_observation",
    "random_specs",
    "grid_search_lambda",
    "lambda_grid",
    "run_trial",
    "run_batch",
    "run_laplacian_comparison",
    "iteration_bucket",
    "histogram_rows",
    "BUCKETS",
    "write_manifest",
    "read_manifest",
    "write_comparison",
]

OMEGA_PRIOR = (0.25, 5.0)
THETA_PRIOR_DEG = (-45.0, 45.0)
ALPHA_PRIOR = (0.0, 30.0)
SNR_PRIOR = (20.0, 200.0)  # log-uniform
SIGMA_FLOOR = 1e-12
DEFAULT_INIT = {
    "gaussian": {"omega_x": 2.0, "omega_y": 2.0, "theta_deg": 0.0},
    "laplacian": {"alpha_x": 2.0, "alpha_y": 2.0, "theta_deg": 0.0},
}
BUCKET_WIDTH = 25
BUCKET_LIMIT = 200
BUCKETS = tuple(
    f"{lo + 1}-{lo + BUCKET_WIDTH}" for lo in range(0, BUCKET_LIMIT, BUCKET_WIDTH)
) + (f">{BUCKET_LIMIT}", "NC")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class TrialSpec:
    """One simulated observation and the exponents to run on it.

    ``truth`` and ``init`` use the ``to_dict`` layout of the PSF classes
    (``theta_deg`` in degrees).  ``snr=None`` draws from the log-uniform
    prior; ``snr=inf`` gives a noiseless observation with a tiny sigma floor.
    An empty ``p_values`` runs the family default exponent once.
    """

    seed: int
    family: str = "gaussian"
    truth: dict | None = None
    snr: float | None = 60.0
    image: str = "astronaut"
    p_values: tuple = ()
    init: dict | None = None
    lambda0: float = 1e-2
    reg_order: float = 1.0
    max_iters: int = 500
    theta_rule: str = "spectral"
    grid_lambda: bool = True

    def __post_init__(self):
        if self.family not in DEFAULT_INIT:
            raise InvalidInputError(f"unsupported trial family {self.family!r}")
        if self.snr is not None and not self.snr > 0:
            raise InvalidInputError(f"snr must be > 0, got {self.snr}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))

    def to_dict(self):
        d = asdict(self)
        d["p_values"] = list(self.p_values)
        if self.snr is not None and math.isinf(self.snr):
            d["snr"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("snr") == "inf":
            d["snr"] = math.inf
        d["p_values"] = tuple(d.get("p_values", ()))
        return cls(**d)


@dataclass
class TrialRecord:
    """Outcome of one estimation run (one trial, one exponent)."""

    seed: int
    family: str
    p: float
    snr: float
    sigma: float
    truth: dict
    estimate: dict
    lam: float
    lam_grid: float
    status: str
    iterations: int
    bucket: str
    sure: float
    wall_time: float
    reason: str = ""
    arm: str = "pragmatic"

    @property
    def converged(self):
        return self.status == Status.CONVERGED.value


@dataclass
class LaplacianPair:
    seed: int
    pragmatic: TrialRecord
    ideal: TrialRecord


def iteration_bucket(status, iterations) -> str:
    """Histogram bucket: width-25 bins up to 200, then ">200", else "NC"."""
    if status != Status.CONVERGED.value:
        return "NC"
    if iterations > BUCKET_LIMIT:
        return f">{BUCKET_LIMIT}"
    lo = (max(iterations, 1) - 1) // BUCKET_WIDTH * BUCKET_WIDTH
    return f"{lo + 1}-{lo + BUCKET_WIDTH}"


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normals from the generator's uniforms."""
    k = (n + 1) // 2
    u1 = 1.0 - rng.random(k)  # (0, 1], keeps log finite
    u2 = rng.random(k)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n]


def _draw(spec: TrialSpec, rng):
    """Prior draws in fixed order; explicit values override afterwards."""
    u = rng.random(3)
    snr_u = rng.random()
    if spec.family == "gaussian":
        lo, hi = OMEGA_PRIOR
        t_lo, t_hi = THETA_PRIOR_DEG
        truth = {
            "family": "gaussian",
            "omega_x": lo + (hi - lo) * u[0],
            "omega_y": lo + (hi - lo) * u[1],
            "theta_deg": t_lo + (t_hi - t_lo) * u[2],
        }
    else:
        lo, hi = ALPHA_PRIOR
        truth = {
            "family": "laplacian",
            "alpha_x": lo + (hi - lo) * u[0],
            "alpha_y": lo + (hi - lo) * u[1],
            "theta_deg": 0.0,
        }
    if spec.truth is not None:
        truth = {"family": spec.family, **spec.truth}
    if spec.snr is None:
        a, b = np.log(SNR_PRIOR)
        snr = float(np.exp(a + (b - a) * snr_u))
    else:
        snr = float(spec.snr)
    return truth, snr


@lru_cache(maxsize=8)
def _image(name):
    img = load_test_image(name)
    img.setflags(write=False)
    return img


def make_observation(spec: TrialSpec):
    """Blurred, noisy observation for ``spec``.

    Returns
    -------
    b, u0, truth_model, sigma, snr
    """
    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    truth, snr = _draw(spec, rng)
    model = psf_from_dict(truth)
    u0 = _image(spec.image)
    blurred = inverse_dft(forward_dft(u0) * model.spectrum(u0.shape))
    sigma = max(float(blurred.mean()) / snr, SIGMA_FLOOR)
    noise = box_muller(rng, u0.size).reshape(u0.shape)
    return blurred + sigma * noise, u0, model, sigma, snr


def lambda_grid(lo=1e-6, hi=1e2, n=64) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def grid_search_lambda(ctx, h, grid=None):
    """Brute-force ``argmin_lambda SURE`` on a log grid.

    Returns
    -------
    lam_best, grid, sure_values
    """
    grid = lambda_grid() if grid is None else np.asarray(grid, dtype=float)
    values = np.array([SureEvaluator(ctx, h, lam).value() for lam in grid])
    return float(grid[int(np.argmin(values))]), grid, values


def _init_model(spec):
    d = dict(DEFAULT_INIT[spec.family])
    d.update(spec.init or {})
    return psf_from_dict({"family": spec.family, **d})


def _config(spec, p):
    fixed = ("theta",) if spec.family == "laplacian" else ()
    return OptimizerConfig(p=p, max_iters=spec.max_iters, theta_rule=spec.theta_rule, fixed=fixed)


def _record(spec, p, snr, sigma, truth, run, ctx, arm="pragmatic"):
    t0 = time.perf_counter()
    try:
        model, lam, trace = run()
        status, iters, reason = trace.status.value, trace.iterations, trace.reason
        est = model.to_dict()
        sure = float(trace.sure[-1]) if trace.rows else float("nan")
    except (SurePsfError, ArithmeticError, ValueError) as exc:
        model, lam, est = None, float("nan"), {}
        status, iters, reason, sure = "ERROR", 0, f"{type(exc).__name__}: {exc}", float("nan")
    lam_grid = float("nan")
    if spec.grid_lambda and arm == "pragmatic" and status == Status.CONVERGED.value:
        lam_grid = grid_search_lambda(ctx, model.spectrum(ctx.shape))[0]
    if "theta_deg" in est:
        est["theta_deg"] = wrap_angle_deg(est["theta_deg"])
    return TrialRecord(
        seed=int(spec.seed),
        family=spec.family,
        p=float(p),
        snr=snr,
        sigma=sigma,
        truth=truth.to_dict(),
        estimate=est,
        lam=float(lam) if lam is not None else float("nan"),
        lam_grid=lam_grid,
        status=status,
        iterations=iters,
        bucket=iteration_bucket(status, iters),
        sure=sure,
        wall_time=time.perf_counter() - t0,
        reason=reason,
        arm=arm,
    )


def _p_values(spec):
    if spec.p_values:
        return spec.p_values
    return (OptimizerConfig().p_target(_init_model(spec), _init_model(spec).scale_params[0]),)


def run_trial(spec: TrialSpec) -> tuple:
    """Simulate one observation and estimate it once per exponent.

    Estimator failures are recorded (status ``ERROR``, bucket ``NC``) rather
    than raised.

    Returns
    -------
    tuple of TrialRecord
        One record per entry of ``spec.p_values``.
    """
    b, _, truth, sigma, snr = make_observation(spec)
    ctx = SureContext.from_image(b, sigma**2, RegularizerSpec(spec.reg_order))
    model0 = _init_model(spec)
    out = []
    for p in _p_values(spec):
        cfg = _config(spec, p)
        rec = _record(
            spec, p, snr, sigma, truth, lambda: estimate(ctx, model0, spec.lambda0, cfg), ctx
        )
        out.append(rec)
    return tuple(out)


def _run_laplacian_pair(spec: TrialSpec) -> tuple:
    b, u0, truth, sigma, snr = make_observation(spec)
    ctx = SureContext.from_image(b, sigma**2, RegularizerSpec(spec.reg_order))
    ideal = IdealRegularizer.from_image(u0)
    model0 = _init_model(spec)
    pairs = []
    for p in _p_values(spec):
        cfg = _config(spec, p)
        prag = _record(
            spec, p, snr, sigma, truth, lambda: estimate(ctx, model0, spec.lambda0, cfg), ctx
        )

        def run_ideal():
            model, trace = estimate_with_ideal_regularizer(ctx, ideal, model0, cfg)
            return model, float("nan"), trace

        ide = _record(spec, p, snr, sigma, truth, run_ideal, ctx, arm="ideal")
        pairs.append(LaplacianPair(int(spec.seed), prag, ide))
    return tuple(pairs)


def _map(fn, specs, jobs):
    if jobs is None or jobs <= 1 or len(specs) <= 1:
        return [fn(s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, specs, chunksize=1))


def random_specs(n, family="gaussian", seed=0, p_values=(), snr=None, **kw) -> list:
    """``n`` trial specs with consecutive seeds starting at ``seed``.

    ``snr=None`` (default) draws each trial's SNR from the prior.
    """
    if n < 1:
        raise InvalidInputError("need at least one trial")
    return [
        TrialSpec(seed=seed + i, family=family, snr=snr, p_values=tuple(p_values), **kw)
        for i in range(n)
    ]


# ------------------------------------------------------------------ summaries


def histogram_rows(records) -> list:
    """Per-exponent bucket fractions; each row sums to 1."""
    by_p = {}
    for r in records:
        by_p.setdefault(r.p, []).append(r.bucket)
    rows = []
    for p in sorted(by_p):
        buckets = by_p[p]
        n = len(buckets)
        rows.append([p, n, *(buckets.count(b) / n for b in BUCKETS)])
    return rows


HISTOGRAM_HEADER = ["p", "trials", *BUCKETS]


def _param_names(family):
    return ("omega_x", "omega_y") if family == "gaussian" else ("alpha_x", "alpha_y")


def scatter_header(family):
    cols = ["seed", "p", "snr", "status", "iterations"]
    for n in _param_names(family):
        cols += [f"{n}_true", f"{n}_est"]
    cols += ["theta_deg_true", "theta_deg_est"]
    if family == "gaussian":
        cols.append("abs_omega_diff")
    cols += ["lambda", "lambda_grid", "sure"]
    return cols


def scatter_row(r: TrialRecord):
    row = [r.seed, r.p, r.snr, r.status, r.iterations]
    for n in _param_names(r.family):
        row += [r.truth[n], r.estimate.get(n, float("nan"))]
    row += [r.truth["theta_deg"], r.estimate.get("theta_deg", float("nan"))]
    if r.family == "gaussian":
        row.append(abs(r.truth["omega_x"] - r.truth["omega_y"]))
    row += [r.lam, r.lam_grid, r.sure]
    return row


@dataclass
class BatchResult:
    """Records of a batch, sorted by ``(seed, p)`` regardless of run order."""

    specs: list
    records: list = field(default_factory=list)

    def histogram(self):
        return histogram_rows(self.records)

    def write(self, outdir):
        outdir = Path(outdir)
        write_csv(outdir / "histogram.csv", HISTOGRAM_HEADER, self.histogram())
        families = sorted({r.family for r in self.records})
        for fam in families:
            name = "scatter.csv" if len(families) == 1 else f"scatter_{fam}.csv"
            rows = [scatter_row(r) for r in self.records if r.family == fam]
            write_csv(outdir / name, scatter_header(fam), rows)
        write_manifest(outdir / "manifest.json", self.specs)


def run_batch(specs, jobs=1) -> BatchResult:
    """Run every spec (optionally on a process pool) and merge by seed."""
    specs = list(specs)
    if not specs:
        raise InvalidInputError("run_batch needs at least one spec")
    results = _map(run_trial, specs, jobs)
    records = sorted((r for recs in results for r in recs), key=lambda r: (r.seed, r.p))
    return BatchResult(specs, records)


def run_laplacian_comparison(specs, jobs=1) -> list:
    """Paired pragmatic-vs-ideal Laplacian trials on identical noise."""
    specs = list(specs)
    if not specs:
        raise InvalidInputError("need at least one spec")
    if any(s.family != "laplacian" for s in specs):
        raise InvalidInputError("comparison specs must be Laplacian")
    results = _map(_run_laplacian_pair, specs, jobs)
    return sorted((p for pairs in results for p in pairs), key=lambda q: (q.seed, q.pragmatic.p))


COMPARISON_HEADER = [
    "seed",
    "p",
    "alpha_x_true",
    "alpha_y_true",
    "alpha_x_pragmatic",
    "alpha_y_pragmatic",
    "status_pragmatic",
    "alpha_x_ideal",
    "alpha_y_ideal",
    "status_ideal",
]


def comparison_rows(pairs):
    for q in pairs:
        t, a, b = q.pragmatic.truth, q.pragmatic.estimate, q.ideal.estimate
        nan = float("nan")
        yield [
            q.seed,
            q.pragmatic.p,
            t["alpha_x"],
            t["alpha_y"],
            a.get("alpha_x", nan),
            a.get("alpha_y", nan),
            q.pragmatic.status,
            b.get("alpha_x", nan),
            b.get("alpha_y", nan),
            q.ideal.status,
        ]


def write_comparison(path, pairs):
    write_csv(path, COMPARISON_HEADER, comparison_rows(pairs))


# ------------------------------------------------------------------- manifest


def write_manifest(path, specs):
    write_json(path, {"version": MANIFEST_VERSION, "specs": [s.to_dict() for s in specs]})


def read_manifest(path) -> list:
    data = json.loads(Path(path).read_text())
    if data.get("version") != MANIFEST_VERSION:
        raise InvalidInputError(f"unsupported manifest version {data.get('version')!r}")
    return [TrialSpec.from_dict(d) for d in data["specs"]]

