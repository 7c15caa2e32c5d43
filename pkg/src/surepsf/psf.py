"""Parametric PSF families defined by their spectra.

Every family provides the spectrum of its (unit-sum) PSF on an ``(m, n)``
grid together with the first and second derivative spectra with respect to
its parameters.  Angles are radians internally; text/JSON serialization
reports them in degrees.

Rotated spectra are evaluated at ``(kx, ky) @ Q_theta.T`` and then passed
through :func:`~surepsf.spectral.hermitian_part`, which only touches the
Nyquist row/column of even grids and keeps the operators real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import ClassVar

import numpy as np

from .exceptions import DegenerateMixtureError, ParameterDomainError
from .spectral import frequency_grid, hermitian_part

__all__ = [
    "rotated_frequencies",
    "gaussian_spectrum",
    "gaussian_derivative_spectra",
    "gaussian_second_derivative_spectra",
    "laplacian_spectrum",
    "laplacian_derivative_spectra",
    "laplacian_second_derivative_spectra",
    "mixture_spectrum",
    "mixture_derivative_spectra",
    "project_weights",
    "laplace_alpha_from_beta",
    "laplace_beta_from_alpha",
    "laplace_sigma_from_alpha",
    "wrap_angle_deg",
    "GaussianPSF",
    "LaplacianPSF",
    "MixturePSF",
    "psf_from_dict",
    "psf_from_text",
]

TWO_PI_SQ = 2.0 * math.pi**2
ISOTROPIC_RTOL = 1e-10


def rotated_frequencies(shape, theta):
    """Return ``(u, v) = (kx, ky) @ Q_theta.T`` on the grid."""
    kx, ky = frequency_grid(shape)
    c, s = math.cos(theta), math.sin(theta)
    return kx * c + ky * s, -kx * s + ky * c


def _sym(a):
    return hermitian_part(a).real


# --------------------------------------------------------------------- Gaussian


def _check_gaussian(omega_x, omega_y):
    if not (omega_x > 0 and omega_y > 0) or not math.isfinite(omega_x + omega_y):
        raise ParameterDomainError(
            f"Gaussian widths must be positive, got ({omega_x}, {omega_y})"
        )


def _width_gap(omega_x, omega_y):
    """``omega_x^2 - omega_y^2``, snapped to 0 for isotropic widths.

    Widths equal up to roundoff leave the angle unidentifiable; a 1e-16
    gradient would still get a full-size step from a scale-free angle rule.
    """
    gap = omega_x**2 - omega_y**2
    return 0.0 if abs(gap) <= ISOTROPIC_RTOL * (omega_x**2 + omega_y**2) else gap


def gaussian_spectrum(shape, omega_x, omega_y, theta=0.0):
    """exp(-2 pi^2 [(omega_x u)^2 + (omega_y v)^2]) at rotated frequencies."""
    _check_gaussian(omega_x, omega_y)
    u, v = rotated_frequencies(shape, theta)
    return _sym(np.exp(-TWO_PI_SQ * ((omega_x * u) ** 2 + (omega_y * v) ** 2)))


def gaussian_derivative_spectra(shape, omega_x, omega_y, theta=0.0):
    """Spectra of d/d omega_x, d/d omega_y and d/d theta."""
    _check_gaussian(omega_x, omega_y)
    u, v = rotated_frequencies(shape, theta)
    g = np.exp(-TWO_PI_SQ * ((omega_x * u) ** 2 + (omega_y * v) ** 2))
    c = -4.0 * math.pi**2
    return {
        "omega_x": _sym(c * omega_x * u**2 * g),
        "omega_y": _sym(c * omega_y * v**2 * g),
        "theta": _sym(c * _width_gap(omega_x, omega_y) * u * v * g),
    }


def gaussian_second_derivative_spectra(shape, omega_x, omega_y, theta=0.0):
    """Second derivative spectra keyed by parameter-name pairs.

    Uses ``g_ab = (E_ab + E_a E_b) g`` with ``E = log g``.
    """
    _check_gaussian(omega_x, omega_y)
    u, v = rotated_frequencies(shape, theta)
    g = np.exp(-TWO_PI_SQ * ((omega_x * u) ** 2 + (omega_y * v) ** 2))
    c = -4.0 * math.pi**2
    e = {
        "omega_x": c * omega_x * u**2,
        "omega_y": c * omega_y * v**2,
        "theta": c * _width_gap(omega_x, omega_y) * u * v,
    }
    zero = np.zeros_like(g)
    e2 = {
        ("omega_x", "omega_x"): c * u**2,
        ("omega_y", "omega_y"): c * v**2,
        ("omega_x", "omega_y"): zero,
        ("omega_x", "theta"): 2.0 * c * omega_x * u * v,
        ("omega_y", "theta"): -2.0 * c * omega_y * u * v,
        ("theta", "theta"): c * _width_gap(omega_x, omega_y) * (v**2 - u**2),
    }
    return _second_from_log(g, e, e2)


def _second_from_log(g, e, e2):
    out = {}
    for (a, b), eab in e2.items():
        val = _sym((eab + e[a] * e[b]) * g)
        out[(a, b)] = val
        out[(b, a)] = val
    return out


# -------------------------------------------------------------------- Laplacian


def _check_laplacian(alpha_x, alpha_y):
    if not (alpha_x >= 0 and alpha_y >= 0) or not math.isfinite(alpha_x + alpha_y):
        raise ParameterDomainError(
            f"Laplacian coefficients must be >= 0, got ({alpha_x}, {alpha_y})"
        )


def _laplacian_parts(shape, alpha_x, alpha_y, theta):
    u, v = rotated_frequencies(shape, theta)
    sx = np.sin(np.pi * u) ** 2
    sy = np.sin(np.pi * v) ** 2
    dx = 1.0 + alpha_x * sx
    dy = 1.0 + alpha_y * sy
    return u, v, sx, sy, dx, dy


def laplacian_spectrum(shape, alpha_x, alpha_y, theta=0.0):
    """1/(1 + alpha_x sin^2(pi u)) * 1/(1 + alpha_y sin^2(pi v))."""
    _check_laplacian(alpha_x, alpha_y)
    _, _, _, _, dx, dy = _laplacian_parts(shape, alpha_x, alpha_y, theta)
    return _sym(1.0 / (dx * dy))


def _laplacian_log_derivatives(u, v, sx, sy, dx, dy, alpha_x, alpha_y):
    # d sin^2(pi u)/d theta = pi sin(2 pi u) * du/dtheta, with du/dtheta = v, dv/dtheta = -u
    sx_t = np.pi * np.sin(2 * np.pi * u) * v
    sy_t = -np.pi * np.sin(2 * np.pi * v) * u
    e = {
        "alpha_x": -sx / dx,
        "alpha_y": -sy / dy,
        "theta": -alpha_x * sx_t / dx - alpha_y * sy_t / dy,
    }
    return e, sx_t, sy_t


def laplacian_derivative_spectra(shape, alpha_x, alpha_y, theta=0.0):
    """Spectra of d/d alpha_x, d/d alpha_y and d/d theta."""
    _check_laplacian(alpha_x, alpha_y)
    u, v, sx, sy, dx, dy = _laplacian_parts(shape, alpha_x, alpha_y, theta)
    g = 1.0 / (dx * dy)
    e, _, _ = _laplacian_log_derivatives(u, v, sx, sy, dx, dy, alpha_x, alpha_y)
    return {k: _sym(val * g) for k, val in e.items()}


def laplacian_second_derivative_spectra(shape, alpha_x, alpha_y, theta=0.0):
    _check_laplacian(alpha_x, alpha_y)
    u, v, sx, sy, dx, dy = _laplacian_parts(shape, alpha_x, alpha_y, theta)
    g = 1.0 / (dx * dy)
    e, sx_t, sy_t = _laplacian_log_derivatives(u, v, sx, sy, dx, dy, alpha_x, alpha_y)
    tp = 2 * np.pi
    sx_tt = np.pi * (tp * np.cos(tp * u) * v**2 - np.sin(tp * u) * u)
    sy_tt = np.pi * (tp * np.cos(tp * v) * u**2 - np.sin(tp * v) * v)
    e2 = {
        ("alpha_x", "alpha_x"): (sx / dx) ** 2,
        ("alpha_y", "alpha_y"): (sy / dy) ** 2,
        ("alpha_x", "alpha_y"): np.zeros_like(g),
        ("alpha_x", "theta"): -sx_t / dx**2,
        ("alpha_y", "theta"): -sy_t / dy**2,
        ("theta", "theta"): -alpha_x * (sx_tt * dx - alpha_x * sx_t**2) / dx**2
        - alpha_y * (sy_tt * dy - alpha_y * sy_t**2) / dy**2,
    }
    return _second_from_log(g, e, e2)


def laplace_alpha_from_beta(beta, convention="spectral"):
    """Laplacian coefficient matching a discrete ``exp(-beta |x|)`` PSF.

    ``convention="discrete"`` returns ``e^-beta / (1 - e^-beta)^2``; the
    default ``"spectral"`` returns four times that, i.e. the coefficient
    multiplying ``sin^2`` in :func:`laplacian_spectrum`.
    """
    beta = float(beta)
    if not beta > 0:
        raise ParameterDomainError(f"beta must be positive, got {beta}")
    q = math.exp(-beta)
    alpha = q / (1.0 - q) ** 2
    return 4.0 * alpha if convention == "spectral" else _check_conv(convention, alpha)


def _check_conv(convention, value):
    if convention != "discrete":
        raise ValueError(f"unknown convention {convention!r}")
    return value


def laplace_beta_from_alpha(alpha, convention="spectral"):
    """Inverse of :func:`laplace_alpha_from_beta` (``alpha = 0`` gives ``inf``)."""
    alpha = float(alpha)
    if not alpha >= 0 or not math.isfinite(alpha):
        raise ParameterDomainError(f"alpha must be >= 0, got {alpha}")
    a = alpha / 4.0 if convention == "spectral" else _check_conv(convention, alpha)
    if a == 0.0:
        return math.inf
    # a q^2 - (2a + 1) q + a = 0, smaller root lies in (0, 1)
    q = ((2 * a + 1) - math.sqrt(4 * a + 1)) / (2 * a)
    return -math.log(q)


def laplace_sigma_from_alpha(alpha, convention="spectral"):
    """Standard deviation (pixels) of the infinite discrete Laplace PSF.

    The variance of ``exp(-beta |x|)`` on the integers is
    ``2 e^-beta / (1 - e^-beta)^2``.
    """
    alpha = float(alpha)
    if not alpha >= 0:
        raise ParameterDomainError(f"alpha must be >= 0, got {alpha}")
    a = alpha / 4.0 if convention == "spectral" else _check_conv(convention, alpha)
    return math.sqrt(2.0 * a)


# ---------------------------------------------------------------------- Mixture


def mixture_spectrum(weights, component_spectra):
    """Convex combination ``sum_j c_j h_j`` of precomputed component spectra."""
    w = np.asarray(weights, dtype=np.float64)
    comps = np.asarray(component_spectra)
    if w.ndim != 1 or len(w) == 0 or len(w) != len(comps):
        raise ParameterDomainError("need one weight per component (K >= 1)")
    return np.tensordot(w, comps, axes=1)


def mixture_derivative_spectra(component_spectra):
    """d h / d c_j is the j-th component spectrum."""
    return list(component_spectra)


def project_weights(weights):
    """Clip to ``>= 0`` then rescale to unit sum."""
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
    total = w.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegenerateMixtureError("all mixture weights vanished after clipping")
    return w / total


# ----------------------------------------------------------------------- models


def wrap_angle_deg(deg):
    """Wrap an angle in degrees to ``(-90, 90]``."""
    w = np.mod(np.asarray(deg, dtype=np.float64) + 90.0, 180.0) - 90.0
    w = np.where(w == -90.0, 90.0, w)
    return float(w) if np.ndim(w) == 0 else w


class _Angled:
    family: ClassVar[str]
    scale_params: ClassVar[tuple[str, ...]]
    angle_param: ClassVar[str | None] = "theta"

    @property
    def param_names(self):
        return self.scale_params + ("theta",)

    @property
    def params(self) -> dict:
        return {k: getattr(self, k) for k in self.param_names}

    def with_params(self, **kw):
        return replace(self, **kw)

    def spectrum(self, shape):
        return self._spec(shape, *self._args())

    def derivative_spectra(self, shape):
        return self._deriv(shape, *self._args())

    def second_derivative_spectra(self, shape):
        return self._deriv2(shape, *self._args())

    def _args(self):
        return tuple(getattr(self, k) for k in self.param_names)

    def to_dict(self) -> dict:
        d = {"family": self.family}
        for k in self.scale_params:
            d[k] = float(getattr(self, k))
        d["theta_deg"] = math.degrees(self.theta)
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


@dataclass(frozen=True)
class GaussianPSF(_Angled):
    """Anisotropic, rotated Gaussian; widths are standard deviations in pixels."""

    omega_x: float
    omega_y: float
    theta: float = 0.0

    family: ClassVar[str] = "gaussian"
    scale_params: ClassVar[tuple[str, ...]] = ("omega_x", "omega_y")
    _spec = staticmethod(gaussian_spectrum)
    _deriv = staticmethod(gaussian_derivative_spectra)
    _deriv2 = staticmethod(gaussian_second_derivative_spectra)

    def __post_init__(self):
        _check_gaussian(self.omega_x, self.omega_y)


@dataclass(frozen=True)
class LaplacianPSF(_Angled):
    """Separable Laplacian-like PSF defined directly by its spectrum."""

    alpha_x: float
    alpha_y: float
    theta: float = 0.0

    family: ClassVar[str] = "laplacian"
    scale_params: ClassVar[tuple[str, ...]] = ("alpha_x", "alpha_y")
    _spec = staticmethod(laplacian_spectrum)
    _deriv = staticmethod(laplacian_derivative_spectra)
    _deriv2 = staticmethod(laplacian_second_derivative_spectra)

    def __post_init__(self):
        _check_laplacian(self.alpha_x, self.alpha_y)


@lru_cache(maxsize=64)
def _component_spectrum(model, shape):
    s = model.spectrum(shape)
    s.setflags(write=False)
    return s


@dataclass(frozen=True)
class MixturePSF:
    """Convex combination of frozen component PSFs.

    Parameters are the weights, named ``c1 .. cK``.
    """

    weights: tuple
    components: tuple = field(repr=False)

    family: ClassVar[str] = "mixture"
    angle_param: ClassVar[str | None] = None

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) == 0 or len(w) != len(self.components):
            raise ParameterDomainError("need one weight per component (K >= 1)")
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ParameterDomainError(f"mixture weights must be >= 0, got {w}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def scale_params(self):
        return tuple(f"c{j + 1}" for j in range(len(self.weights)))

    @property
    def param_names(self):
        return self.scale_params

    @property
    def params(self) -> dict:
        return dict(zip(self.scale_params, self.weights))

    def with_params(self, **kw):
        w = [kw.pop(name, c) for name, c in zip(self.scale_params, self.weights)]
        if kw:
            raise KeyError(f"unknown mixture parameters {sorted(kw)}")
        return replace(self, weights=tuple(w))

    def normalized(self):
        return replace(self, weights=tuple(project_weights(self.weights)))

    def component_spectra(self, shape):
        return [_component_spectrum(c, tuple(shape)) for c in self.components]

    def spectrum(self, shape):
        return mixture_spectrum(self.weights, self.component_spectra(shape))

    def derivative_spectra(self, shape):
        return dict(zip(self.scale_params, self.component_spectra(shape)))

    def second_derivative_spectra(self, shape):
        zero = np.zeros(tuple(shape))
        names = self.scale_params
        return {(a, b): zero for a in names for b in names}

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "weights": list(self.weights),
            "components": [c.to_dict() for c in self.components],
        }

    def to_text(self) -> str:
        lines = ["family = mixture"]
        for j, (c, comp) in enumerate(zip(self.weights, self.components), 1):
            lines.append(f"c{j} = {c}")
            body = " ".join(f"{k}={v}" for k, v in comp.to_dict().items() if k != "family")
            lines.append(f"component{j} = {comp.family} {body}")
        return "\n".join(lines) + "\n"


_FAMILIES = {"gaussian": GaussianPSF, "laplacian": LaplacianPSF}


def psf_from_dict(d: dict):
    """Inverse of ``model.to_dict()``."""
    d = dict(d)
    family = d.pop("family")
    if family == "mixture":
        comps = tuple(psf_from_dict(c) for c in d["components"])
        return MixturePSF(tuple(d["weights"]), comps)
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown PSF family {family!r}") from None
    theta = math.radians(float(d.pop("theta_deg", 0.0)))
    kw = {k: float(d.pop(k)) for k in cls.scale_params}
    if d:
        raise ValueError(f"unexpected keys for {family}: {sorted(d)}")
    return cls(theta=theta, **kw)


def psf_from_text(text: str):
    """Parse the ``key = value`` block produced by ``to_text``."""
    kv = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    family = kv.pop("family", None)
    if family == "mixture":
        weights, comps = [], []
        j = 1
        while f"c{j}" in kv:
            weights.append(float(kv.pop(f"c{j}")))
            fam, *pairs = kv.pop(f"component{j}").split()
            cd = {"family": fam}
            cd.update((k, float(v)) for k, v in (p.split("=") for p in pairs))
            comps.append(psf_from_dict(cd))
            j += 1
        if kv:
            raise ValueError(f"unexpected keys: {sorted(kv)}")
        return MixturePSF(tuple(weights), tuple(comps))
    if family is None:
        raise ValueError("missing 'family' entry")
    return psf_from_dict({"family": family, **{k: float(v) for k, v in kv.items()}})
