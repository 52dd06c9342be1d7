"""Independent numerical routes to the closed-form correlations.

Three oracles, none of which calls the closed-form correlation code:

* :func:`quadrature_oracle` integrates the scale mixture over the bandwidth
  ``t`` against the mixing measure of each family;
* :func:`convolution_mc_oracle` simulates the white-noise convolution on a
  grid and measures empirical covariances;
* :func:`kernel_product_check` integrates the product of two Gaussian kernels over
  the plane and compares it with its closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .covariance import Cauchy, Exponential, Gaussian, Matern, NsModel, as_points
from .grid import Grid


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


@dataclass
class QuadratureResult:
    covariance: float
    correlation: float
    abserr: float


def _avg_det_and_q(sx, sy, h):
    avg = 0.5 * (sx + sy)
    inv = np.linalg.inv(avg)
    return float(np.linalg.det(avg)), float(h @ inv @ h)


def _integrate(f, lo, hi, points=None):
    val, err = 0.0, 0.0
    edges = [lo] + sorted(p for p in (points or []) if lo < p < hi) + [hi]
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-10, limit=800)
        val += v
        err += e
    if val != 0.0 and err > 1e-7 * abs(val):
        raise QuadratureError(f"quadrature did not converge (estimate {val:g}, error {err:g})")
    return val, err


def _gamma_rate_window(shape, rate):
    """Support window of a Gamma(shape, rate) holding all but 1e-10 of its mass."""
    lo = stats.gamma.ppf(1e-10, shape, scale=1.0 / rate)
    hi = stats.gamma.isf(1e-10, shape, scale=1.0 / rate)
    return max(lo, 0.0), hi


def _mixture_integral(family, q: float, px: float | None, py: float | None) -> tuple[float, float]:
    """int g(x;t) g(y;t) t^-p exp(-q/t^2) M(dt) for p = 2, up to a constant.

    Integrals over ``t`` are carried out in ``w = t^2`` (Gamma-type measures)
    or ``v = 1/t^2`` (inverse-Gamma-type measures).
    """
    a = family.a
    if isinstance(family, Gaussian):
        # point mass M = t^p delta_a: the integrand evaluated at t = a
        return math.exp(-q / a**2), 0.0

    if isinstance(family, Exponential):
        # M(dt) = t^p /(a sqrt(pi)) exp(-t^2/(4a^2)) dt  ->  in w:  exp(-q/w) e^{-w/4a^2} / (2 a sqrt(pi w))
        def f(w):
            if w <= 0.0:
                return 0.0
            return math.exp(-q / w - w / (4 * a * a)) / (2.0 * a * math.sqrt(math.pi * w))

        lo, hi = _gamma_rate_window(0.5, 1.0 / (4 * a * a))
        return _integrate(f, 0.0, hi, points=[math.sqrt(q) * 2 * a, 4 * a * a])

    if isinstance(family, Matern):
        rate = 1.0 / (4 * a * a)
        if px is None:
            nu = float(family.nu)
            # M(dt) = 2 t^{p+1} h(t^2) dt with h = Gamma(nu, rate): E[exp(-q/W)]
            log_norm = nu * math.log(rate) - special.gammaln(nu)

            def f(w):
                if w <= 0.0:
                    return 0.0
                return math.exp(log_norm + (nu - 1) * math.log(w) - rate * w - q / w)

            shape = nu
        else:
            nubar = 0.5 * (px + py)
            # g = t^nu(x), M(dt) = 2 t^{p-1} h(t^2) dt with h = Gamma(1, rate)
            def f(w):
                if w <= 0.0:
                    return 0.0
                return rate * math.exp((nubar - 1) * math.log(w) - rate * w - q / w)

            shape = nubar
        lo, hi = _gamma_rate_window(shape, rate)
        mode = max(shape - 1.0, 0.0) / rate
        return _integrate(f, 0.0, hi, points=[lo, mode, math.sqrt(q / rate)] if q > 0 else [lo, mode])

    if isinstance(family, Cauchy):
        a2 = a * a
        if px is None:
            alpha = float(family.alpha)
            # h = InvGamma(alpha, a^2); with v = 1/w this is Gamma(alpha, rate a^2) and exp(-q v)
            log_norm = alpha * math.log(a2) - special.gammaln(alpha)

            def f(v):
                if v <= 0.0:
                    return 0.0 if alpha >= 1 else math.inf
                return math.exp(log_norm + (alpha - 1) * math.log(v) - (a2 + q) * v)

            shape = alpha
        else:
            abar = 0.5 * (px + py)
            # g = t^-alpha(x), M(dt) = 2 t^{p+3} h(t^2) dt with h = InvGamma(1, a^2);
            # in v = 1/w the integrand is a^2 v^{abar - 1} exp(-(a^2 + q) v)
            def f(v):
                if v <= 0.0:
                    return 0.0 if abar >= 1 else math.inf
                return a2 * math.exp((abar - 1) * math.log(v) - (a2 + q) * v)

            shape = abar
        lo, hi = _gamma_rate_window(shape, a2 + q)
        mode = max(shape - 1.0, 0.0) / (a2 + q)
        return _integrate(f, 0.0, hi, points=[lo, mode])

    raise TypeError(f"no mixing measure known for {type(family).__name__}")


def quadrature_oracle(x, y, model: NsModel) -> QuadratureResult:
    """Covariance between ``x`` and ``y`` by numerically integrating the scale mixture.

    The integral is formed for (x, y), (x, x) and (y, y) and normalized to a
    correlation, so the determinant and Gamma-ratio prefactors of the closed
    forms are reproduced rather than assumed.
    """
    pts = as_points(np.vstack([np.asarray(x, float), np.asarray(y, float)]))
    v = model.at(pts)
    sx, sy = v.matrices[0], v.matrices[1]
    fam = model.family
    varying = getattr(fam, "varying", False)
    px = py = None
    if varying:
        px, py = float(v.family_param[0]), float(v.family_param[1])

    det_xy, q_xy = _avg_det_and_q(sx, sy, pts[0] - pts[1])
    det_x = float(np.linalg.det(sx))
    det_y = float(np.linalg.det(sy))
    ixy, exy = _mixture_integral(fam, q_xy, px, py)
    ixx, _ = _mixture_integral(fam, 0.0, px, px)
    iyy, _ = _mixture_integral(fam, 0.0, py, py)
    cxy = det_xy**-0.5 * ixy
    cxx = det_x**-0.5 * ixx
    cyy = det_y**-0.5 * iyy
    corr = cxy / math.sqrt(cxx * cyy)
    cov = float(v.sigma[0] * v.sigma[1] * corr)
    return QuadratureResult(covariance=cov, correlation=corr, abserr=abs(exy / ixy * corr) if ixy else exy)


# --------------------------------------------------------------------------
# Integral of a product of two Gaussian kernels
# --------------------------------------------------------------------------
def gaussian_kernel(u: np.ndarray, center, sigma_mat, t: float) -> np.ndarray:
    """Density of N(center, t^2 Sigma / 4) evaluated at points ``u`` (..., 2)."""
    cov = (t * t / 4.0) * np.asarray(sigma_mat, dtype=float)
    inv = np.linalg.inv(cov)
    d = np.asarray(u, dtype=float) - np.asarray(center, dtype=float)
    quad = np.einsum("...i,ij,...j->...", d, inv, d)
    return np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def kernel_product_closed_form(x, y, sx, sy, t: float) -> float:
    sx = np.asarray(sx, float)
    sy = np.asarray(sy, float)
    det_avg, q = _avg_det_and_q(sx, sy, np.asarray(x, float) - np.asarray(y, float))
    return math.pi**-1 * t**-2 * det_avg**-0.5 * math.exp(-q / t**2)


def kernel_product_check(x, y, sx, sy, t: float) -> tuple[float, float]:
    """Return ``(numeric, closed_form)`` for the kernel-product integral over the plane."""
    if not t > 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    sx = np.asarray(sx, float)
    sy = np.asarray(sy, float)
    cov_x = (t * t / 4.0) * sx
    cov_y = (t * t / 4.0) * sy
    inv_x, inv_y = np.linalg.inv(cov_x), np.linalg.inv(cov_y)
    nx = 1.0 / (2 * math.pi * math.sqrt(np.linalg.det(cov_x)))
    ny = 1.0 / (2 * math.pi * math.sqrt(np.linalg.det(cov_y)))

    # the product is an unnormalized Gaussian in u; integrate it over a box
    # around its peak, found numerically from the summed precision
    prec = inv_x + inv_y
    peak = np.linalg.solve(prec, inv_x @ x + inv_y @ y)
    spread = np.sqrt(np.diag(np.linalg.inv(prec)))
    half = 12.0 * spread

    def f(v, u):
        du_x = np.array([u - x[0], v - x[1]])
        du_y = np.array([u - y[0], v - y[1]])
        return nx * ny * math.exp(-0.5 * (du_x @ inv_x @ du_x + du_y @ inv_y @ du_y))

    val, _ = integrate.dblquad(
        f,
        peak[0] - half[0],
        peak[0] + half[0],
        peak[1] - half[1],
        peak[1] + half[1],
        epsabs=0.0,
        epsrel=1e-10,
    )
    return val, kernel_product_closed_form(x, y, sx, sy, t)


# --------------------------------------------------------------------------
# Monte-Carlo white-noise convolution
# --------------------------------------------------------------------------
@dataclass
class ConvolutionMCResult:
    pairs: np.ndarray  # (k, 2, 2): the point pairs
    empirical: np.ndarray  # (k,)
    std_error: np.ndarray  # (k,)
    n_realizations: int


def convolution_mc_oracle(
    model: NsModel,
    grid: Grid,
    n_realizations: int,
    seed: int,
    pairs,
) -> ConvolutionMCResult:
    """Empirical covariances of the discretized convolution Z(x) = int f_x(u) W(du).

    Gaussian white noise ``W`` has variance equal to the cell area in each
    grid cell; ``f_x = k_x(.; a)`` is the Gaussian kernel with covariance
    ``a^2 Sigma_x / 4`` (the point-mass mixing measure of the Gaussian
    family).  Each site's convolution is divided by the analytic standard
    deviation of ``Z`` and multiplied by ``sigma(x)``, so the returned
    covariances target ``sigma(x) sigma(y) R(x, y)``.
    """
    if not isinstance(model.family, Gaussian):
        raise TypeError("the convolution oracle samples the Gaussian family only")
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2, 2)
    sites, inverse = np.unique(pairs.reshape(-1, 2), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1, 2)
    v = model.at(sites)
    a = model.family.a

    (gx0, gy0), (gx1, gy1) = grid.bounds()
    for p, m in zip(sites, v.matrices):
        sd = 0.5 * a * np.sqrt(np.linalg.eigvalsh(m).max())
        if p[0] - 4 * sd < gx0 or p[0] + 4 * sd > gx1 or p[1] - 4 * sd < gy0 or p[1] + 4 * sd > gy1:
            raise ValueError(f"insufficient grid coverage: kernel at {p} extends beyond the grid")

    cells = grid.points()
    kern = np.vstack([gaussian_kernel(cells, p, m, a) for p, m in zip(sites, v.matrices)])
    # analytic Var Z(x) = pi^-1 a^-2 |Sigma_x|^-1/2
    var_z = 1.0 / (math.pi * a * a * np.sqrt(np.linalg.det(v.matrices)))
    scale = v.sigma / np.sqrt(var_z)

    ss = np.random.SeedSequence(seed)
    sd_cell = math.sqrt(grid.cell_area)
    samples = np.empty((n_realizations, len(sites)))
    for r, child in enumerate(ss.spawn(n_realizations)):
        w = np.random.default_rng(child).standard_normal(grid.size) * sd_cell
        samples[r] = kern @ w
    samples *= scale

    prod = samples[:, inverse[:, 0]] * samples[:, inverse[:, 1]]
    emp = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n_realizations)
    return ConvolutionMCResult(pairs=pairs, empirical=emp, std_error=se, n_realizations=n_realizations)
