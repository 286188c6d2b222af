"""Sampling and log-densities on spheres and rotations.

Rotation densities are taken with respect to the invariant measure on SO(3)
normalised to total mass pi^2, directions on S^2 with respect to area (4 pi).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ive

from .geometry import canonical_quat

LOG_SO3_VOLUME = 2.0 * np.log(np.pi)
LOG_S2_AREA = np.log(4.0 * np.pi)
LOG_S1_LENGTH = np.log(2.0 * np.pi)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation as a canonical unit quaternion."""
    q = rng.standard_normal(4)
    return canonical_quat(q / np.linalg.norm(q))


def random_unit_vector(rng: np.random.Generator, dim: int = 3) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _log_sinh(k: float) -> float:
    return k + math.log1p(-math.exp(-2.0 * k)) - math.log(2.0)


def _tangent_unit(mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(len(mu))
        v -= np.dot(v, mu) * mu
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def vmf_s2_logpdf(x, mu, kappa: float) -> float:
    """log density of vMF on S^2 with respect to surface area."""
    if kappa == 0.0:
        return -LOG_S2_AREA
    dot = float(np.dot(x, mu))
    return math.log(kappa) - LOG_S2_AREA - _log_sinh(kappa) + kappa * dot


def sample_vmf_s2(mu, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Exact draw via inversion of the cosine marginal."""
    mu = np.asarray(mu, dtype=float)
    u = rng.random()
    if kappa == 0.0:
        w = 2.0 * u - 1.0
    else:
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = min(1.0, max(-1.0, w))
    v = _tangent_unit(mu, rng)
    x = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * v
    return x / np.linalg.norm(x)


def _vmf_s3_lognorm(kappa: float) -> float:
    # C_4(k) = k / ((2 pi)^2 I_1(k)); I_1(k) = ive(1, k) e^k
    if kappa == 0.0:
        return -np.log(2.0 * np.pi**2)
    return np.log(kappa) - 2.0 * np.log(2.0 * np.pi) - (np.log(ive(1, kappa)) + kappa)


def vmf_rotation_logpdf(q, mu, kappa: float) -> float:
    """Density on SO(3) of the antipodally symmetrised vMF on S^3."""
    d = float(np.dot(q, mu))
    base = _vmf_s3_lognorm(kappa)
    return base + np.logaddexp(kappa * d, -kappa * d)


def sample_vmf_s3(mu, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Wood's rejection sampler on S^3; returns a canonical quaternion."""
    mu = np.asarray(mu, dtype=float)
    if kappa == 0.0:
        return random_quaternion(rng)
    p = 4
    b = (p - 1) / (2.0 * kappa + np.sqrt(4.0 * kappa * kappa + (p - 1) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (p - 1) * np.log(1.0 - x0 * x0)
    while True:
        zb = rng.beta((p - 1) / 2.0, (p - 1) / 2.0)
        w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb)
        u = rng.random()
        if kappa * w + (p - 1) * np.log(1.0 - x0 * w) - c >= np.log(u):
            break
    v = _tangent_unit(mu, rng)
    x = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * v
    return canonical_quat(x / np.linalg.norm(x))


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def normal_logpdf(x, mean, std) -> float:
    if isinstance(x, float):
        z = (x - mean) / std
        return -0.5 * z * z - math.log(std) - _HALF_LOG_2PI
    x = np.asarray(x, dtype=float)
    z = (x - mean) / std
    return float(np.sum(-0.5 * z * z - np.log(std) - 0.5 * np.log(2.0 * np.pi)))
