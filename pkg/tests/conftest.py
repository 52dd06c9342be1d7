import math

import numpy as np
import pytest

from nsgeostat.anisotropy import AnisotropyParams
from nsgeostat.covariance import Cauchy, ConstantAnisotropy, ConstantField, Exponential, Gaussian, Matern, NsModel


class SmoothField:
    """Random smooth scalar field: c0 + amplitude * sin/cos mixture."""

    def __init__(self, rng, base, amp, scale=5.0):
        self.base = base
        self.amp = amp
        self.k = rng.uniform(-1, 1, (2, 2)) / scale
        self.phase = rng.uniform(0, 2 * math.pi, 2)

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        s = np.sin(pts @ self.k[0] + self.phase[0]) + np.cos(pts @ self.k[1] + self.phase[1])
        return self.base + self.amp * s / 2


def random_aniso_field(rng, scale=5.0):
    l1 = SmoothField(rng, rng.uniform(1.0, 2.5), 0.5, scale)
    ratio = SmoothField(rng, rng.uniform(1.5, 3.0), 0.5, scale)
    psi = SmoothField(rng, rng.uniform(0, math.pi), 1.0, scale)

    def field(pts):
        a = l1(pts)
        return a, a / ratio(pts), psi(pts)

    return field


def random_model(rng, family=None, varying=False):
    if family is None:
        family = ["gaussian", "exponential", "matern", "cauchy"][rng.integers(4)]
    if family == "gaussian":
        fam = Gaussian(1.0)
    elif family == "exponential":
        fam = Exponential(1.0)
    elif family == "matern":
        fam = Matern(1.0, SmoothField(rng, 1.5, 1.0) if varying else rng.uniform(0.3, 3.0))
    else:
        fam = Cauchy(1.0, SmoothField(rng, 1.5, 1.0) if varying else rng.uniform(0.3, 3.0))
    return NsModel(
        fam,
        sigma=SmoothField(rng, rng.uniform(1.0, 2.0), 0.8),
        mean=SmoothField(rng, rng.uniform(-1, 1), 1.0),
        anisotropy=random_aniso_field(rng),
    )


def constant_model(family, sigma=1.0, l1=1.0, l2=1.0, psi=0.0, mean=0.0):
    return NsModel(
        family,
        sigma=ConstantField(sigma),
        mean=ConstantField(mean),
        anisotropy=ConstantAnisotropy(AnisotropyParams(l1, l2, psi)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
