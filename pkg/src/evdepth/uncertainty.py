"""Per-pixel depth distributions: Gaussian, log-normal and evidential (NIG).

Every objective comes with a closed-form gradient. All functions broadcast
over numpy arrays as well as accepting plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import digamma, gammaln

from .errors import (
    Divergence,
    InvalidParams,
    MomentOverflow,
    NonPositiveDepth,
    NonPositiveSigma,
    NoValidPixels,
    OutOfRange,
    ShapeMismatch,
)

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_LAMBDA = 0.25
SIGMA_FLOOR = 1e-6
KAPPA_FLOOR = 1e-6
ALPHA_FLOOR = 1.0 + 1e-6
BETA_FLOOR = 1e-6
MODELS = ("gaussian", "lognormal", "evidential")

ArrayLike = Union[float, np.ndarray]


# -- positivity ---------------------------------------------------------------

def positivity(raw: ArrayLike, floor: float = 0.0) -> ArrayLike:
    """Shifted softplus ``floor + log(1 + e^raw)``, stable for large ``|raw|``."""
    raw = np.asarray(raw, dtype=np.float64)
    out = floor + np.maximum(raw, 0.0) + np.log1p(np.exp(-np.abs(raw)))
    return out[()] if out.ndim == 0 else out


def positivity_grad(raw: ArrayLike) -> ArrayLike:
    """Derivative of :func:`positivity` (the logistic sigmoid)."""
    raw = np.asarray(raw, dtype=np.float64)
    e = np.exp(-np.abs(raw))
    out = np.where(raw >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def positivity_inverse(value: ArrayLike, floor: float = 0.0) -> ArrayLike:
    v = np.asarray(value, dtype=np.float64) - floor
    if np.any(v <= 0):
        raise OutOfRange("value must exceed the floor")
    # log(e^v - 1) = v + log(1 - e^-v)
    out = v + np.log(-np.expm1(-v))
    return out[()] if out.ndim == 0 else out


# -- parameter containers -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianParams:
    mu: ArrayLike
    sigma: ArrayLike


@dataclass(frozen=True, eq=False)
class LogNormalParams:
    mu: ArrayLike
    sigma: ArrayLike


@dataclass(frozen=True, eq=False)
class EvidentialParams:
    m: ArrayLike
    kappa: ArrayLike
    alpha: ArrayLike
    beta: ArrayLike

    @property
    def dof(self):
        return 2.0 * np.asarray(self.alpha)

    @property
    def scale(self):
        k, a, b = (np.asarray(v, dtype=np.float64) for v in (self.kappa, self.alpha, self.beta))
        return np.sqrt(b * (1.0 + k) / (k * a))


PARAM_TYPES = {"gaussian": GaussianParams, "lognormal": LogNormalParams,
               "evidential": EvidentialParams}
PARAM_NAMES = {"gaussian": ("mu", "sigma"), "lognormal": ("mu", "sigma"),
               "evidential": ("m", "kappa", "alpha", "beta")}


def _f(a):
    return np.asarray(a, dtype=np.float64)


def _scalar(out):
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def _check_sigma(sigma):
    if np.any(~(sigma > 0)):
        raise NonPositiveSigma("sigma must be > 0")


def _check_y(y):
    if not np.all(np.isfinite(y)):
        raise InvalidParams("targets must be finite")


def _check_evidential(p):
    k, a, b = _f(p.kappa), _f(p.alpha), _f(p.beta)
    if np.any(~(k > 0)) or np.any(~(a > 1)) or np.any(~(b > 0)):
        raise InvalidParams("evidential parameters need kappa > 0, alpha > 1, beta > 0")
    return k, a, b


# -- Gaussian -------------------------------------------------------------------

def gaussian_nll(y, p: GaussianParams):
    y, mu, s = _f(y), _f(p.mu), _f(p.sigma)
    _check_y(y)
    _check_sigma(s)
    return _scalar(np.log(s) + 0.5 * LOG_2PI + (y - mu) ** 2 / (2.0 * s * s))


def gaussian_nll_grad(y, p: GaussianParams):
    """Returns ``(d/dmu, d/dsigma)``."""
    y, mu, s = _f(y), _f(p.mu), _f(p.sigma)
    _check_y(y)
    _check_sigma(s)
    r = y - mu
    return _scalar(-r / s**2), _scalar(1.0 / s - r * r / s**3)


# -- log-normal -----------------------------------------------------------------

def _check_depth(y):
    if np.any(~(y > 0)):
        raise NonPositiveDepth("log-normal targets must be > 0")


def lognormal_nll(y, p: LogNormalParams):
    y, mu, s = _f(y), _f(p.mu), _f(p.sigma)
    _check_y(y)
    _check_depth(y)
    _check_sigma(s)
    ly = np.log(y)
    return _scalar(ly + np.log(s) + 0.5 * LOG_2PI + (ly - mu) ** 2 / (2.0 * s * s))


def lognormal_nll_grad(y, p: LogNormalParams):
    """Returns ``(d/dmu, d/dsigma)``."""
    y, mu, s = _f(y), _f(p.mu), _f(p.sigma)
    _check_y(y)
    _check_depth(y)
    _check_sigma(s)
    r = np.log(y) - mu
    return _scalar(-r / s**2), _scalar(1.0 / s - r * r / s**3)


def lognormal_moments(p: LogNormalParams):
    """Mean ``e^(mu + s^2/2)`` and variance ``(e^(s^2) - 1) e^(2 mu + s^2)``."""
    mu, s = _f(p.mu), _f(p.sigma)
    _check_sigma(s)
    s2 = s * s
    with np.errstate(over="ignore", invalid="ignore"):
        mean = np.exp(mu + 0.5 * s2)
        var = np.expm1(s2) * np.exp(2.0 * mu + s2)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        raise MomentOverflow("log-normal moments overflow float64")
    return _scalar(mean), _scalar(var)


# -- evidential (Normal-Inverse-Gamma marginal = Student-t) ----------------------

def evidential_nll(y, p: EvidentialParams, lam: float = DEFAULT_LAMBDA):
    """Student-t NLL with location m, scale sqrt(beta(1+kappa)/(kappa alpha)), dof 2 alpha.

    Returns ``(nll, penalty)`` where ``penalty = lam |y - m| (2 kappa + alpha)``.
    """
    y, m = _f(y), _f(p.m)
    _check_y(y)
    k, a, b = _check_evidential(p)
    if lam < 0:
        raise InvalidParams("lambda must be >= 0")
    r = y - m
    omega = 2.0 * b * (1.0 + k)
    d = k * r * r + omega
    # (a + 1/2) log d - a log omega, rearranged to stay accurate for large a
    nll = (0.5 * np.log(np.pi / k) + a * np.log1p(k * r * r / omega) + 0.5 * np.log(d)
           + gammaln(a) - gammaln(a + 0.5))
    penalty = lam * np.abs(r) * (2.0 * k + a)
    return _scalar(nll), _scalar(penalty)


def evidential_nll_grad(y, p: EvidentialParams, lam: float = DEFAULT_LAMBDA):
    """Gradient of ``nll + penalty``: ``(d/dm, d/dkappa, d/dalpha, d/dbeta)``."""
    y, m = _f(y), _f(p.m)
    _check_y(y)
    k, a, b = _check_evidential(p)
    r = y - m
    omega = 2.0 * b * (1.0 + k)
    d = k * r * r + omega
    ar = np.abs(r)
    sgn = np.sign(r)
    dm = -(2.0 * a + 1.0) * k * r / d - lam * sgn * (2.0 * k + a)
    dk = (-0.5 / k - a / (1.0 + k) + (a + 0.5) * (r * r + 2.0 * b) / d
          + 2.0 * lam * ar)
    da = np.log1p(k * r * r / omega) + digamma(a) - digamma(a + 0.5) + lam * ar
    db = -a / b + (a + 0.5) * 2.0 * (1.0 + k) / d
    return _scalar(dm), _scalar(dk), _scalar(da), _scalar(db)


def evidential_moments(p: EvidentialParams):
    """Returns ``(depth, aleatoric variance, epistemic variance)``."""
    k, a, b = _check_evidential(p)
    alea = b / (a - 1.0)
    m = np.broadcast_to(_f(p.m), np.shape(alea)).copy()
    return _scalar(m), _scalar(alea), _scalar(alea / k)


# -- log-depth mapping -------------------------------------------------------------

def e2depth_map(dhat, dmax: float = 35.0, alpha: float = 8.0):
    """Normalized log depth in [0, 1] to metric depth ``dmax * exp(-alpha (1 - dhat))``."""
    d = _f(dhat)
    if np.any(~((d >= 0) & (d <= 1))):
        raise OutOfRange("normalized log depth must lie in [0, 1]")
    return _scalar(dmax * np.exp(-alpha * (1.0 - d)))


def e2depth_inverse(depth, dmax: float = 35.0, alpha: float = 8.0):
    D = _f(depth)
    lo = dmax * np.exp(-alpha)
    tol = 1e-12 * dmax
    if np.any(~((D >= lo - tol) & (D <= dmax + tol))):
        raise OutOfRange(f"depth must lie in [{lo:g}, {dmax:g}]")
    return _scalar(np.clip(1.0 + np.log(D / dmax) / alpha, 0.0, 1.0))


# -- dense fields ---------------------------------------------------------------

_FLOORS = {"sigma": SIGMA_FLOOR, "kappa": KAPPA_FLOOR, "alpha": ALPHA_FLOOR, "beta": BETA_FLOOR}


@dataclass(frozen=True, eq=False)
class UncertaintyField:
    """Per-pixel distribution parameters for one model, each plane H x W."""

    model: str
    planes: dict

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        names = PARAM_NAMES[self.model]
        if set(self.planes) != set(names):
            raise ValueError(f"{self.model} field needs planes {names}")
        planes = {n: np.array(self.planes[n], dtype=np.float64) for n in names}
        shapes = {v.shape for v in planes.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ShapeMismatch("parameter planes must share one 2-D shape")
        for v in planes.values():
            v.flags.writeable = False
        object.__setattr__(self, "planes", planes)
        p = self.params
        if self.model == "evidential":
            _check_evidential(p)
        else:
            _check_sigma(_f(p.sigma))

    @classmethod
    def from_raw(cls, model: str, raw: dict) -> "UncertaintyField":
        """Map unconstrained outputs to valid parameters through floored softplus."""
        planes = {}
        for n in PARAM_NAMES[model]:
            planes[n] = positivity(raw[n], _FLOORS[n]) if n in _FLOORS else np.asarray(raw[n])
        return cls(model, planes)

    @property
    def shape(self):
        return next(iter(self.planes.values())).shape

    @property
    def params(self):
        return PARAM_TYPES[self.model](**self.planes)

    @property
    def depth(self) -> np.ndarray:
        if self.model == "gaussian":
            return self.planes["mu"]
        if self.model == "lognormal":
            return lognormal_moments(self.params)[0]
        return self.planes["m"]

    @property
    def variance(self) -> np.ndarray:
        """Predictive variance; for the evidential model, the epistemic part."""
        if self.model == "gaussian":
            return self.planes["sigma"] ** 2
        if self.model == "lognormal":
            return lognormal_moments(self.params)[1]
        return evidential_moments(self.params)[2]

    @property
    def aleatoric(self) -> Optional[np.ndarray]:
        return evidential_moments(self.params)[1] if self.model == "evidential" else None

    @property
    def epistemic(self) -> Optional[np.ndarray]:
        return evidential_moments(self.params)[2] if self.model == "evidential" else None

    @property
    def ranking(self) -> np.ndarray:
        """Plane used to rank pixels by uncertainty in the metrics."""
        return self.variance

    def pointwise_nll(self, y, lam: float = DEFAULT_LAMBDA):
        """``(nll, penalty)`` per pixel; penalty is zero except for evidential."""
        p = self.params
        if self.model == "gaussian":
            nll = gaussian_nll(y, p)
            return nll, np.zeros_like(nll)
        if self.model == "lognormal":
            nll = lognormal_nll(y, p)
            return nll, np.zeros_like(nll)
        return evidential_nll(y, p, lam)


@dataclass(frozen=True)
class LossReport:
    loss: float
    nll: float
    penalty: float
    count: int
    lam: float


def batch_loss(field: UncertaintyField, gt, valid=None, lam: float = DEFAULT_LAMBDA) -> LossReport:
    """Mean NLL (plus the evidential penalty) over valid pixels with ``gt > 0``."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != field.shape:
        raise ShapeMismatch(f"gt {gt.shape} vs field {field.shape}")
    sel = gt > 0
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != gt.shape:
            raise ShapeMismatch(f"mask {valid.shape} vs gt {gt.shape}")
        sel &= valid
    n = int(sel.sum())
    if n == 0:
        raise NoValidPixels("loss")
    sub = PARAM_TYPES[field.model](**{k: v[sel] for k, v in field.planes.items()})
    y = gt[sel]
    if field.model == "gaussian":
        nll, pen = gaussian_nll(y, sub), np.zeros(n)
    elif field.model == "lognormal":
        nll, pen = lognormal_nll(y, sub), np.zeros(n)
    else:
        nll, pen = evidential_nll(y, sub, lam)
    nll = np.atleast_1d(nll)
    pen = np.atleast_1d(pen)
    return LossReport(loss=float(np.mean(nll + pen)), nll=float(np.mean(nll)),
                      penalty=float(np.mean(pen)), count=n, lam=float(lam))


# -- pointwise fitting -------------------------------------------------------------

@dataclass
class FitResult:
    model: str
    params: object
    nll: float
    steps: int
    trace: list = field(default_factory=list, repr=False)


def _raw_layout(model):
    if model == "evidential":
        return [("m", None), ("kappa", KAPPA_FLOOR), ("alpha", ALPHA_FLOOR), ("beta", BETA_FLOOR)]
    return [("mu", None), ("sigma", SIGMA_FLOOR)]


_DEFAULT_INIT = {
    "gaussian": {"sigma": 1.0},
    "lognormal": {"sigma": 1.0},
    "evidential": {"kappa": 1.0, "alpha": 2.0, "beta": 1.0},
}


def _loss_and_grad(model, y, params, lam):
    p = PARAM_TYPES[model](**params)
    if model == "gaussian":
        loss = gaussian_nll(y, p)
        grads = gaussian_nll_grad(y, p)
    elif model == "lognormal":
        loss = lognormal_nll(y, p)
        grads = lognormal_nll_grad(y, p)
    else:
        nll, pen = evidential_nll(y, p, lam)
        loss = nll + pen
        grads = evidential_nll_grad(y, p, lam)
    names = PARAM_NAMES[model]
    return float(np.mean(loss)), {n: float(np.mean(g)) for n, g in zip(names, grads)}


def fit_pointwise(samples, model: str = "gaussian", steps: int = 5000, step_size: float = 0.05,
                  lam: float = DEFAULT_LAMBDA, init: Optional[dict] = None,
                  patience: int = 50) -> FitResult:
    """Fit one distribution to i.i.d. samples by full-batch gradient descent.

    Descent runs on the unconstrained parameters behind the floored softplus
    maps, using the analytic gradients of this module. Raises
    :class:`Divergence` when the loss rises for ``patience`` consecutive steps
    or stops being finite.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    y = np.asarray(samples, dtype=np.float64).ravel()
    if y.size < 2:
        raise InvalidParams("need at least two samples")
    _check_y(y)
    if model == "lognormal":
        _check_depth(y)
    # location starts at the sample median, scales at fixed generic values
    loc = float(np.median(np.log(y) if model == "lognormal" else y))
    start = dict(_DEFAULT_INIT[model], **{"m" if model == "evidential" else "mu": loc})
    start.update(init or {})
    layout = _raw_layout(model)
    raw = {n: (positivity_inverse(start[n], fl) if fl is not None else float(start[n]))
           for n, fl in layout}

    def constrained():
        return {n: (float(positivity(raw[n], fl)) if fl is not None else raw[n]) for n, fl in layout}

    trace = []
    rising = 0
    prev = np.inf
    for step in range(steps):
        params = constrained()
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = _loss_and_grad(model, y, params, lam)
        trace.append(loss)
        if not np.isfinite(loss) or not all(np.isfinite(g) for g in grads.values()):
            raise Divergence(f"non-finite loss at step {step}", trace[-patience:])
        rising = rising + 1 if loss > prev else 0
        if rising >= patience:
            raise Divergence(f"loss rose for {patience} consecutive steps", trace[-patience:])
        prev = loss
        for n, fl in layout:
            g = grads[n] * (positivity_grad(raw[n]) if fl is not None else 1.0)
            raw[n] = raw[n] - step_size * g
    params = constrained()
    loss, _ = _loss_and_grad(model, y, params, lam)
    trace.append(loss)
    return FitResult(model, PARAM_TYPES[model](**params), loss, steps, trace)


# -- finite-difference gradient check -----------------------------------------------

def sample_params(model: str, n: int, rng: np.random.Generator):
    """Random targets and parameters in ranges where the objectives are smooth."""
    def logu(lo, hi):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), n))

    if model == "gaussian":
        mu = rng.uniform(-10, 10, n)
        sigma = logu(0.1, 10)
        y = mu + sigma * rng.uniform(-3, 3, n)
        return y, GaussianParams(mu, sigma)
    if model == "lognormal":
        mu = rng.uniform(-2, 3, n)
        sigma = logu(0.1, 3)
        y = np.exp(mu + sigma * rng.uniform(-3, 3, n))
        return y, LogNormalParams(mu, sigma)
    if model == "evidential":
        m = rng.uniform(0.5, 20, n)
        p = EvidentialParams(m, logu(0.1, 10), 1.0 + logu(0.1, 10), logu(0.1, 10))
        off = rng.uniform(0.05, 3, n) * rng.choice([-1.0, 1.0], n)
        return m + off * p.scale, p
    raise ValueError(f"unknown model {model!r}")


def relative_error(analytic, numeric, floor: float = 1e-3):
    a, b = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(model: str, n: int = 1000, seed: int = 0, h: float = 1e-5,
                   lam: float = DEFAULT_LAMBDA, grad_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    y, p = sample_params(model, n, rng)
    names = PARAM_NAMES[model]
    cls = PARAM_TYPES[model]
    if model == "evidential":
        def objective(q):
            nll, pen = evidential_nll(y, q, lam)
            return nll + pen
        grad_fn = grad_fn or (lambda yy, q: evidential_nll_grad(yy, q, lam))
    elif model == "gaussian":
        objective = lambda q: gaussian_nll(y, q)  # noqa: E731
        grad_fn = grad_fn or gaussian_nll_grad
    else:
        objective = lambda q: lognormal_nll(y, q)  # noqa: E731
        grad_fn = grad_fn or lognormal_nll_grad
    analytic = grad_fn(y, p)
    worst = 0.0
    for i, name in enumerate(names):
        base = {k: np.asarray(getattr(p, k), dtype=np.float64) for k in names}
        up = dict(base, **{name: base[name] + h})
        dn = dict(base, **{name: base[name] - h})
        numeric = (objective(cls(**up)) - objective(cls(**dn))) / (2.0 * h)
        worst = max(worst, float(np.max(relative_error(analytic[i], numeric))))
    return worst
