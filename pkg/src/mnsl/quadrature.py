"""Quadrature node sets: uniform torus grids and the shipped equal-weight S^2 design."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .geometry import TWO_PI


@dataclass(frozen=True)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int
    label: str

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate values whose node axis is the last one."""
        return values @ self.weights


def torus_grid(G: int, n: int = 2) -> Quadrature:
    """G^n uniform nodes on T^n; exact for trigonometric polynomials of degree < G."""
    g = TWO_PI * np.arange(G) / G
    mesh = np.meshgrid(*([g] * n), indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    w = np.full(nodes.shape[0], TWO_PI**n / nodes.shape[0])
    return Quadrature(nodes, w, G - 1, f"torus-grid-{G}^{n}")


@lru_cache(maxsize=None)
def _design_table(name: str) -> tuple[np.ndarray, int]:
    text = resources.files("mnsl.data").joinpath(name).read_text()
    header = text.splitlines()[0]
    degree = int(header.split("exact degree")[1].split(",")[0])
    nodes = np.loadtxt(text.splitlines()[1:])
    return nodes, degree


def sphere_design(name: str = "sphere_design_1202.txt") -> Quadrature:
    """Equal-weight node set on S^2 (weights 4 pi / N), exact to the degree in its header."""
    nodes, degree = _design_table(name)
    nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
    w = np.full(nodes.shape[0], 4.0 * np.pi / nodes.shape[0])
    return Quadrature(nodes, w, degree, f"sphere-design-{nodes.shape[0]}")
