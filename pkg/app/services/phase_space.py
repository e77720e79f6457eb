"""
Truncated phase space: states z = (xi_a, eta_a)_{|a|<=K}, actions, weighted norms
and a numeric Poisson bracket used as the oracle for the symbolic algebra.

Bracket convention: {F, G} = i sum_a (dF/deta_a dG/dxi_a - dF/dxi_a dG/deta_a),
so that dF/dt = {F, H} along xi' = -i dH/deta, eta' = i dH/dxi.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from ..core.config import settings
from ..core.errors import GradientUnavailableError, NonRealStateError
from .index_core import MultiIndex

logger = logging.getLogger(__name__)


def gauges(window: int) -> np.ndarray:
    a = np.arange(-window, window + 1, dtype=float)
    return np.sqrt(1.0 + a * a)


def wavenumbers(window: int) -> np.ndarray:
    return np.arange(-window, window + 1)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FourierState:
    window: int
    xi: np.ndarray
    eta: np.ndarray
    reality: bool = True

    def __post_init__(self):
        size = 2 * self.window + 1
        if self.xi.shape != (size,) or self.eta.shape != (size,):
            raise ValueError(f"state arrays must have length {size}")
        object.__setattr__(self, "xi", _frozen(self.xi))
        object.__setattr__(self, "eta", _frozen(self.eta))

    @classmethod
    def real(cls, xi: np.ndarray | Sequence[complex], window: int | None = None) -> "FourierState":
        xi = np.asarray(xi, dtype=complex)
        window = (len(xi) - 1) // 2 if window is None else window
        return cls(window, xi, np.conj(xi), True)

    @classmethod
    def zero(cls, window: int) -> "FourierState":
        z = np.zeros(2 * window + 1, dtype=complex)
        return cls(window, z, z, True)

    @classmethod
    def from_modes(cls, window: int, modes: dict[int, complex]) -> "FourierState":
        xi = np.zeros(2 * window + 1, dtype=complex)
        for a, v in modes.items():
            xi[a + window] = v
        return cls.real(xi, window)

    @classmethod
    def from_vector(cls, window: int, vec: np.ndarray, reality: bool = False) -> "FourierState":
        n = 2 * window + 1
        return cls(window, vec[:n], vec[n:], reality)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.xi, self.eta])

    def mode(self, a: int) -> complex:
        return complex(self.xi[a + self.window])

    def coordinate(self, entry: tuple[int, int]) -> complex:
        delta, a = entry
        if abs(a) > self.window:
            return 0.0j
        return complex(self.xi[a + self.window] if delta > 0 else self.eta[a + self.window])

    def monomial(self, j: MultiIndex) -> complex:
        out = 1.0 + 0.0j
        for e in j.entries:
            out *= self.coordinate(e)
        return out

    def scaled(self, factor: float) -> "FourierState":
        return FourierState(self.window, self.xi * factor, self.eta * factor, self.reality)

    def rotated(self, phases: np.ndarray) -> "FourierState":
        """Angle rotation xi_a -> e^{i theta_a} xi_a (keeps every action)."""
        rot = np.exp(1j * np.asarray(phases, dtype=float))
        return FourierState(self.window, self.xi * rot, self.eta / rot, self.reality)

    def reality_defect(self) -> float:
        return float(np.max(np.abs(self.eta - np.conj(self.xi)), initial=0.0))

    def widened(self, window: int) -> "FourierState":
        """Zero-pad (or crop) to another window."""
        xi = np.zeros(2 * window + 1, dtype=complex)
        eta = np.zeros(2 * window + 1, dtype=complex)
        w = min(window, self.window)
        xi[window - w: window + w + 1] = self.xi[self.window - w: self.window + w + 1]
        eta[window - w: window + w + 1] = self.eta[self.window - w: self.window + w + 1]
        return FourierState(window, xi, eta, self.reality)

    def to_records(self) -> list[list[float]]:
        return [
            [int(a), float(x.real), float(x.imag), float(e.real), float(e.imag)]
            for a, x, e in zip(wavenumbers(self.window), self.xi, self.eta)
        ]

    @classmethod
    def from_records(cls, records: Sequence[Sequence[float]], reality: bool = True) -> "FourierState":
        window = max(abs(int(r[0])) for r in records)
        xi = np.zeros(2 * window + 1, dtype=complex)
        eta = np.zeros(2 * window + 1, dtype=complex)
        for a, xr, xim, er, eim in records:
            xi[int(a) + window] = complex(xr, xim)
            eta[int(a) + window] = complex(er, eim)
        return cls(window, xi, eta, reality)


@dataclass(frozen=True)
class ActionField:
    window: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (2 * self.window + 1,):
            raise ValueError(f"action array must have length {2 * self.window + 1}")
        if np.any(vals < 0):
            raise ValueError("actions must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_modes(cls, window: int, modes: dict[int, float]) -> "ActionField":
        vals = np.zeros(2 * window + 1)
        for a, v in modes.items():
            vals[a + window] = v
        return cls(window, vals)

    @classmethod
    def constant(cls, window: int, value: float) -> "ActionField":
        return cls(window, np.full(2 * window + 1, float(value)))

    def at(self, a: int) -> float:
        return float(self.values[a + self.window]) if abs(a) <= self.window else 0.0

    def weighted_sup(self, s: float) -> float:
        """|I|_s = sup <a>^{2s} |I_a|."""
        return float(np.max(gauges(self.window) ** (2 * s) * np.abs(self.values), initial=0.0))

    def scaled(self, factor: float) -> "ActionField":
        return ActionField(self.window, self.values * factor)


def norm_s(z: FourierState, s: float) -> float:
    """||z||_s = sum <a>^s (|xi_a| + |eta_a|)."""
    w = gauges(z.window) ** s
    return float(np.sum(w * (np.abs(z.xi) + np.abs(z.eta))))


def actions_of(z: FourierState, tol: float | None = None) -> ActionField:
    tol = settings.REALITY_TOL if tol is None else tol
    prod = z.xi * z.eta
    if z.reality:
        bad = np.abs(prod.imag) > tol * np.maximum(1.0, np.abs(prod))
        if np.any(bad):
            a = int(wavenumbers(z.window)[np.argmax(bad)])
            raise NonRealStateError(f"xi_a eta_a has imaginary part {prod[a + z.window].imag:.3e} at a={a}")
        return ActionField(z.window, np.maximum(prod.real, 0.0))
    return ActionField(z.window, np.abs(prod))


def function_product(z: FourierState, w: FourierState) -> FourierState:
    """Fourier coefficients of the product u*v of the associated functions."""
    xi = np.convolve(z.xi, w.xi)
    eta = np.convolve(z.eta, w.eta)
    return FourierState(z.window + w.window, xi, eta, z.reality and w.reality)


# --- functional handles

@runtime_checkable
class FunctionalHandle(Protocol):
    def value(self, z: FourierState) -> complex: ...


def _has_gradient(handle) -> bool:
    return callable(getattr(handle, "gradient", None))


@dataclass(frozen=True)
class CallableHandle:
    """Wrap plain callables; gradient is optional."""

    value_fn: Callable[[FourierState], complex]
    gradient_fn: Callable[[FourierState], tuple[np.ndarray, np.ndarray]] | None = None

    def value(self, z: FourierState) -> complex:
        return self.value_fn(z)

    def __getattr__(self, name):
        if name == "gradient" and self.gradient_fn is not None:
            return self.gradient_fn
        raise AttributeError(name)


@dataclass(frozen=True)
class MonomialHandle:
    """z_j = prod of the coordinates in j."""

    index: MultiIndex
    coefficient: complex = 1.0

    def value(self, z: FourierState) -> complex:
        return self.coefficient * z.monomial(self.index)

    def gradient(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        gx = np.zeros(2 * z.window + 1, dtype=complex)
        ge = np.zeros(2 * z.window + 1, dtype=complex)
        entries = list(self.index.entries)
        for (delta, a), mult in self.index.counts.items():
            if abs(a) > z.window:
                continue
            rest = list(entries)
            rest.remove((delta, a))
            d = self.coefficient * mult * z.monomial(MultiIndex(tuple(rest)))
            if delta > 0:
                gx[a + z.window] += d
            else:
                ge[a + z.window] += d
        return gx, ge


def action_handle(a: int) -> MonomialHandle:
    return MonomialHandle(MultiIndex.action(a))


def finite_difference_gradient(handle: FunctionalHandle, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
    """Central differences, h = eps^{1/3} max(1, |coordinate|); exact for holomorphic handles up to O(h^2)."""
    if not callable(getattr(handle, "value", None)):
        raise GradientUnavailableError(f"{type(handle).__name__} provides neither gradient nor value")
    vec = z.as_vector()
    grad = np.zeros_like(vec)
    base_h = np.finfo(float).eps ** (1.0 / 3.0)
    for i in range(vec.size):
        h = base_h * max(1.0, abs(vec[i]))
        plus = vec.copy()
        minus = vec.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = handle.value(FourierState.from_vector(z.window, plus))
        f_minus = handle.value(FourierState.from_vector(z.window, minus))
        grad[i] = (f_plus - f_minus) / (2 * h)
    n = 2 * z.window + 1
    return grad[:n], grad[n:]


def gradient_of(handle, z: FourierState, *, analytic: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if analytic and _has_gradient(handle):
        gx, ge = handle.gradient(z)
        return np.asarray(gx, dtype=complex), np.asarray(ge, dtype=complex)
    return finite_difference_gradient(handle, z)


def poisson_numeric(F, G, z: FourierState, *, analytic: bool = True) -> complex:
    """{F, G}(z) = i sum_a (dF/deta_a dG/dxi_a - dF/dxi_a dG/deta_a)."""
    fx, fe = gradient_of(F, z, analytic=analytic)
    gx, ge = gradient_of(G, z, analytic=analytic)
    return complex(1j * np.sum(fe * gx - fx * ge))


def hamiltonian_vector_field(grad_xi: np.ndarray, grad_eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(xi', eta') = (-i dH/deta, i dH/dxi)."""
    return -1j * grad_eta, 1j * grad_xi


def random_state(
    rng: np.random.Generator,
    window: int,
    *,
    amplitude: float = 1.0,
    decay: float = 2.0,
    floor: float = 0.2,
) -> FourierState:
    """Real state with |xi_a| ~ amplitude U(floor, 1) <a>^{-decay} and uniform phases."""
    mods = amplitude * rng.uniform(floor, 1.0, 2 * window + 1) * gauges(window) ** (-decay)
    phases = rng.uniform(0.0, 2 * np.pi, 2 * window + 1)
    return FourierState.real(mods * np.exp(1j * phases), window)
