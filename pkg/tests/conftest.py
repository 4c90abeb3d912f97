import numpy as np
import pytest

import fpk


def random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    """Well-conditioned random SPD matrix."""
    b = rng.standard_normal((d, d))
    return np.eye(d) + b @ b.T


def fd_gradient(fn, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar point function."""
    d = x.size
    out = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return out


def fd_hessian(fn, x: np.ndarray, h: float) -> np.ndarray:
    d = x.size
    out = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(d):
            ej = np.zeros(d)
            ej[j] = h
            out[i, j] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4.0 * h * h)
    return out


class PolyHandle:
    """Quadratic-form handle q + <b, x> + x^T C x / 2 with exact derivatives."""

    def __init__(self, q: float, b: np.ndarray, c: np.ndarray):
        self.q = q
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)

    def value(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return float(self.value(y[None, :])[0])
        return self.q + y @ self.b + 0.5 * np.einsum("ni,ij,nj->n", y, self.c, y)

    def gradient(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return self.gradient(y[None, :])[0]
        return self.b + 0.5 * y @ (self.c + self.c.T)

    def hessian(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return self.hessian(y[None, :])[0]
        sym = 0.5 * (self.c + self.c.T)
        return np.broadcast_to(sym, (y.shape[0], *sym.shape)).copy()


@pytest.fixture(scope="session")
def ou_field():
    return fpk.build_field({"dim": 2, "catalog": "ou"})


@pytest.fixture(scope="session")
def bm_field():
    return fpk.build_field({"dim": 2, "catalog": "bm"})


@pytest.fixture(scope="session")
def dim2_field():
    return fpk.build_field({"dim": 2, "catalog": "dim2_demo"})


@pytest.fixture(scope="session")
def cubic_field():
    return fpk.build_field({"dim": 2, "catalog": "cubic_blowup"})
