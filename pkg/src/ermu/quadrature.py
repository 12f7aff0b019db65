"""Gauss-Hermite quadrature helpers for expectations under N(0, 1).

numpy's ``hermgauss`` targets the weight e^{-x^2}; the change of variables
x = sqrt(2) t and weight division by sqrt(pi) turn it into an expectation
against the standard normal density.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.hermite_e import hermeval


@lru_cache(maxsize=16)
def gaussian_nodes(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights such that sum(w * f(x)) ~= E[f(G)], G ~ N(0,1)."""
    x, w = hermgauss(n_nodes)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def gaussian_expectation(f: Callable[[np.ndarray], np.ndarray], n_nodes: int = 100) -> float:
    """E[f(G)] for G ~ N(0,1) by Gauss-Hermite quadrature."""
    x, w = gaussian_nodes(n_nodes)
    return float(np.dot(w, f(x)))


def gaussian_expectation_pair(
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    rho: float,
    n_nodes: int = 200,
) -> float:
    """E[f(U) g(V)] for (U, V) standard bivariate normal with correlation rho.

    Tensor-product quadrature on the representation V = rho U + sqrt(1-rho^2) Z
    with Z independent of U.
    """
    x, w = gaussian_nodes(n_nodes)
    u = x[:, None]
    v = rho * x[:, None] + np.sqrt(max(0.0, 1.0 - rho * rho)) * x[None, :]
    vals = f(u) * g(v)
    return float(w @ vals @ w)


def normalized_hermite(k: int, x: np.ndarray) -> np.ndarray:
    """Probabilists' Hermite polynomial He_k(x) / sqrt(k!), orthonormal under N(0,1)."""
    coeffs = np.zeros(k + 1)
    coeffs[k] = 1.0
    return hermeval(x, coeffs) / math.sqrt(math.factorial(k))


def hermite_coefficients(
    f: Callable[[np.ndarray], np.ndarray], order: int, n_nodes: int = 200
) -> np.ndarray:
    """Coefficients c_k = E[f(G) he_k(G)], k = 0..order, in the orthonormal basis."""
    x, w = gaussian_nodes(n_nodes)
    fx = f(x)
    out = np.empty(order + 1)
    for k in range(order + 1):
        out[k] = float(np.dot(w, fx * normalized_hermite(k, x)))
    return out
