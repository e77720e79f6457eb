"""
Rational Hamiltonians: sums of c (-i)^{p+q} z_pi / (prod omega_k prod Omega_k prod Omega_h).

Every term is stored with canonical multi-indices and a complex coefficient;
k_omega, k_Omega and h_Omega are the denominator lists (n, p - n and q of them).
Brackets are computed term by term from

    {F, G} = i F G sum_a [ (n-_F n+_G - n+_F n-_G)(a) / I_a + sigma_F(a) g_G(a) - sigma_G(a) g_F(a) ],

g(a) = sum_D dD/dI_a / D, which splits into numerator contractions, squared
omega denominators, and squared Omega denominators with a degree-one action
polynomial coming from the Z6 Hessian.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from ..core.config import settings
from ..core.errors import (
    ClosureViolationError,
    DenominatorFloorError,
    MalformedIndexError,
    NoWitnessError,
    NotSolvableError,
    ResourceBudgetError,
)
from ..schemas.params import ModelKind, ModelParams, NonResonanceParams
from .birkhoff_engine import PolynomialHamiltonian, bind
from .index_core import MultiIndex
from .integrable_part import z4_hessian, z6_gradient, z6_hessian
from .phase_space import FourierState, hamiltonian_vector_field, poisson_numeric, random_state

logger = logging.getLogger(__name__)

Alpha = tuple[int, int, int, int, int]
ZERO_ALPHA: Alpha = (0, 0, 0, 0, 0)
TermKey = tuple[MultiIndex, tuple[MultiIndex, ...], tuple[MultiIndex, ...], tuple[MultiIndex, ...]]


class Family(str, Enum):
    OMEGA = "omega"
    BIG_OMEGA = "Omega"


class Subclass(str, Enum):
    H_OMEGA = "H_omega"
    H_OMEGA_STAR = "H*_omega"
    H_BIG_OMEGA = "H_Omega"
    H_BIG_OMEGA_STAR = "H*_Omega"
    UNTAGGED = "untagged"

    @property
    def family(self) -> Family:
        return Family.OMEGA if self in (Subclass.H_OMEGA, Subclass.H_OMEGA_STAR) else Family.BIG_OMEGA

    @property
    def star(self) -> bool:
        return self in (Subclass.H_OMEGA_STAR, Subclass.H_BIG_OMEGA_STAR)

    @classmethod
    def of(cls, family: Family, star: bool) -> "Subclass":
        if family == Family.OMEGA:
            return cls.H_OMEGA_STAR if star else cls.H_OMEGA
        return cls.H_BIG_OMEGA_STAR if star else cls.H_BIG_OMEGA


class HomologicalMode(str, Enum):
    Z4 = "Z4"
    Z4Z6 = "Z4Z6"


def _canonical(ks: Iterable[MultiIndex]) -> tuple[MultiIndex, ...]:
    return tuple(sorted(ks, key=lambda k: k.entries))


def _bump(alpha: Alpha, slot: int | None = None, *, base: Alpha = ZERO_ALPHA) -> Alpha:
    out = [a + b for a, b in zip(alpha, base)]
    if slot is not None:
        out[slot] += 1
    return tuple(out)  # type: ignore[return-value]


# --- terms

@dataclass(frozen=True)
class RationalTerm:
    pi: MultiIndex
    k_omega: tuple[MultiIndex, ...] = ()
    k_Omega: tuple[MultiIndex, ...] = ()
    h_Omega: tuple[MultiIndex, ...] = ()
    coeff: complex = 1.0
    alpha: Alpha = ZERO_ALPHA

    def __post_init__(self):
        if not self.pi.entries or not self.pi.is_resonant:
            raise MalformedIndexError(f"numerator {self.pi} is not a resonant multi-index")
        for k in (*self.k_omega, *self.k_Omega, *self.h_Omega):
            if not k.entries or not k.is_irreducible or not k.is_resonant:
                raise MalformedIndexError(f"denominator index {k} is not irreducible resonant")
        object.__setattr__(self, "k_omega", _canonical(self.k_omega))
        object.__setattr__(self, "k_Omega", _canonical(self.k_Omega))
        object.__setattr__(self, "h_Omega", _canonical(self.h_Omega))
        object.__setattr__(self, "coeff", complex(self.coeff))
        object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))

    @property
    def key(self) -> TermKey:
        return (self.pi, self.k_omega, self.k_Omega, self.h_Omega)

    @property
    def m(self) -> int:
        return len(self.pi) // 2

    @property
    def n(self) -> int:
        return len(self.k_omega)

    @property
    def p(self) -> int:
        return len(self.k_omega) + len(self.k_Omega)

    @property
    def q(self) -> int:
        return len(self.h_Omega)

    @property
    def order(self) -> int:
        return self.m - self.p - 2 * self.q

    @property
    def denominator_count(self) -> int:
        return self.p + self.q

    @property
    def is_action_only(self) -> bool:
        return self.pi.is_action_only

    @property
    def is_polynomial(self) -> bool:
        return self.denominator_count == 0

    @property
    def weight(self) -> float:
        """max of <mu_1(Irr pi)>, <mu_1(k)>, <mu_1(h)>."""
        gauges = [k.mu_max for k in (*self.k_omega, *self.k_Omega, *self.h_Omega)]
        irr = self.pi.irreducible
        if irr.entries:
            gauges.append(irr.mu_max)
        return max(gauges, default=1.0)

    def denominators(self) -> Iterator[tuple[str, MultiIndex]]:
        for k in self.k_omega:
            yield "omega", k
        for k in self.k_Omega:
            yield "Omega", k
        for k in self.h_Omega:
            yield "h", k

    def conjugate(self) -> "RationalTerm":
        """Term whose value at real z is the complex conjugate of this one."""
        return RationalTerm(
            self.pi.conjugate(),
            tuple(k.conjugate() for k in self.k_omega),
            tuple(k.conjugate() for k in self.k_Omega),
            tuple(k.conjugate() for k in self.h_Omega),
            self.coeff.conjugate(),
            self.alpha,
        )

    def with_coeff(self, coeff: complex) -> "RationalTerm":
        return replace(self, coeff=coeff)

    def to_json(self) -> dict:
        return {
            "coeff": [self.coeff.real, self.coeff.imag],
            "pi": self.pi.to_json(),
            "k_omega": [k.to_json() for k in self.k_omega],
            "k_Omega": [k.to_json() for k in self.k_Omega],
            "h_Omega": [k.to_json() for k in self.h_Omega],
            "n": self.n,
            "alpha": list(self.alpha),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "RationalTerm":
        re, im = data["coeff"]
        return cls(
            MultiIndex.from_json(data["pi"]),
            tuple(MultiIndex.from_json(k) for k in data.get("k_omega", ())),
            tuple(MultiIndex.from_json(k) for k in data.get("k_Omega", ())),
            tuple(MultiIndex.from_json(k) for k in data.get("h_Omega", ())),
            complex(re, im),
            tuple(data.get("alpha", ZERO_ALPHA)),
        )


def _sort_key(key: TermKey):
    pi, ko, kO, h = key
    return (pi.entries, tuple(k.entries for k in ko), tuple(k.entries for k in kO), tuple(k.entries for k in h))


@dataclass(frozen=True)
class RationalHamiltonian:
    terms: Mapping[TermKey, RationalTerm]
    window: int

    @classmethod
    def from_terms(cls, terms: Iterable[RationalTerm], window: int) -> "RationalHamiltonian":
        """Merge like terms (same numerator and denominator lists); the first alpha seen is kept."""
        acc: dict[TermKey, RationalTerm] = {}
        for t in terms:
            prev = acc.get(t.key)
            acc[t.key] = t if prev is None else prev.with_coeff(prev.coeff + t.coeff)
        return cls({k: t for k, t in acc.items() if t.coeff != 0}, window)

    @classmethod
    def zero(cls, window: int) -> "RationalHamiltonian":
        return cls({}, window)

    @classmethod
    def from_polynomial(cls, poly: PolynomialHamiltonian, p: ModelParams) -> "RationalHamiltonian":
        """Bind exact coefficients; a polynomial is the class member with empty denominators."""
        return cls.from_terms((RationalTerm(j, coeff=bind(c, p)) for j, c in poly.terms.items()), poly.window)

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __iter__(self) -> Iterator[RationalTerm]:
        return iter(self.terms.values())

    def __add__(self, other: "RationalHamiltonian") -> "RationalHamiltonian":
        return RationalHamiltonian.from_terms([*self, *other], max(self.window, other.window))

    def __neg__(self) -> "RationalHamiltonian":
        return self.scale(-1.0)

    def __sub__(self, other: "RationalHamiltonian") -> "RationalHamiltonian":
        return self + (-other)

    def scale(self, factor: complex) -> "RationalHamiltonian":
        return RationalHamiltonian({k: t.with_coeff(t.coeff * factor) for k, t in self.terms.items()}, self.window)

    def filter(self, predicate) -> "RationalHamiltonian":
        return RationalHamiltonian({k: t for k, t in self.terms.items() if predicate(t)}, self.window)

    def pruned(self, rel_tol: float = 1e-13) -> "RationalHamiltonian":
        """Drop coefficients below rel_tol times the largest one (cancellation residue)."""
        if not self.terms:
            return self
        top = max(abs(t.coeff) for t in self)
        return self.filter(lambda t: abs(t.coeff) > rel_tol * top)

    # --- structure
    @property
    def orders(self) -> set[int]:
        return {t.order for t in self}

    @property
    def order(self) -> int:
        orders = self.orders
        if len(orders) != 1:
            raise NoWitnessError(f"mixed orders {sorted(orders)} in one Hamiltonian")
        return orders.pop()

    def of_order(self, r: int) -> "RationalHamiltonian":
        return self.filter(lambda t: t.order == r)

    def truncated(self, max_order: int) -> "RationalHamiltonian":
        return self.filter(lambda t: t.order <= max_order)

    @property
    def weight(self) -> float:
        return max((t.weight for t in self if t.coeff != 0), default=1.0)

    @property
    def max_multiplicity(self) -> int:
        counts: dict[MultiIndex, int] = defaultdict(int)
        for t in self:
            counts[t.pi] += 1
        return max(counts.values(), default=0)

    def split_action(self) -> tuple["RationalHamiltonian", "RationalHamiltonian"]:
        """Q = Q_A + Q_R: action-only numerators and numerators with nonempty irreducible part."""
        return self.filter(lambda t: t.is_action_only), self.filter(lambda t: not t.is_action_only)

    # --- reality
    def conjugate(self) -> "RationalHamiltonian":
        return RationalHamiltonian.from_terms((t.conjugate() for t in self), self.window)

    def with_conjugates(self) -> "RationalHamiltonian":
        return self + self.conjugate()

    def is_real(self, tol: float = 1e-12) -> bool:
        for key, t in self.terms.items():
            partner = self.terms.get(t.conjugate().key)
            scale = max(1.0, abs(t.coeff))
            if partner is None or abs(partner.coeff - t.coeff.conjugate()) > tol * scale:
                return False
        return True

    # --- numerics
    def compile(self, p: ModelParams, floor: "DenominatorFloor | None" = None) -> "NumericRational":
        return NumericRational(self, p, floor or DenominatorFloor())

    def to_json(self) -> dict:
        return {"window": self.window, "terms": [self.terms[k].to_json() for k in sorted(self.terms, key=_sort_key)]}

    @classmethod
    def from_json(cls, data: Mapping) -> "RationalHamiltonian":
        return cls.from_terms((RationalTerm.from_json(t) for t in data["terms"]), int(data["window"]))


# --- evaluation

@dataclass(frozen=True)
class DenominatorFloor:
    """Refusal thresholds: |omega_k|, |Omega_k| >= level mu_min(k)^{-2s}; |Omega_h| >= h level."""

    omega: float = 0.0
    big_omega: float = 0.0
    h: float = 0.0
    s: float = 0.0

    @classmethod
    def from_params(cls, q: NonResonanceParams) -> "DenominatorFloor":
        base = q.gamma * q.N ** (-q.alpha_r)
        s = 0.0 if q.model == ModelKind.NLSP else q.s
        return cls(base * q.eps ** 2, base * q.eps ** 2, base * q.eps ** 4, s)

    def bound(self, kind: str, k: MultiIndex) -> float:
        if kind == "h":
            return self.h
        level = self.omega if kind == "omega" else self.big_omega
        return level * k.mu_min ** (-2 * self.s) if level else 0.0


def _signed_vector(k: MultiIndex, window: int) -> np.ndarray:
    vec = np.zeros(2 * window + 1)
    for a, sigma in k.signed_counts.items():
        if abs(a) > window:
            raise MalformedIndexError(f"wavenumber {a} of {k} outside the window {window}")
        vec[a + window] = sigma
    return vec


class NumericRational:
    """A RationalHamiltonian bound to model data; value, gradient and vector field on states."""

    def __init__(self, H: RationalHamiltonian, p: ModelParams, floor: DenominatorFloor):
        self.H, self.p, self.floor = H, p, floor
        K = self.window = H.window
        n = 2 * K + 1
        terms = list(H)
        dens: dict[tuple[str, MultiIndex], int] = {}
        for t in terms:
            for d in t.denominators():
                dens.setdefault(d, len(dens))
        self._dens = list(dens)
        self._sigma = np.array([_signed_vector(k, K) for _, k in self._dens]).reshape(len(dens), n)
        self._big = np.array([kind != "omega" for kind, _ in self._dens], dtype=bool)
        self._bounds = np.array([floor.bound(kind, k) for kind, k in self._dens])
        self._hess4 = z4_hessian(K, p)
        width = max((len(t.pi) for t in terms), default=0)
        depth = max((t.denominator_count for t in terms), default=0)
        self._pos = np.full((len(terms), width), 2 * n, dtype=int)
        self._den_ids = np.full((len(terms), depth), len(dens), dtype=int)
        for row, t in enumerate(terms):
            self._pos[row, : len(t.pi)] = [a + K if d > 0 else n + a + K for d, a in t.pi.entries]
            ids = [dens[d] for d in t.denominators()]
            self._den_ids[row, : len(ids)] = ids
        self._coef = np.array([t.coeff * (-1j) ** t.denominator_count for t in terms], dtype=complex)

    def _vector(self, z: FourierState) -> np.ndarray:
        if z.window != self.window:
            z = z.widened(self.window)
        return np.concatenate([z.as_vector(), [1.0]])

    def denominators(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        """Values D and derivatives dD/dI for every distinct denominator, floors enforced."""
        y = self._vector(z)
        n = 2 * self.window + 1
        I = y[:n] * y[n: 2 * n]
        lam = self._hess4 @ I
        vals = self._sigma @ lam
        dvals = self._sigma @ self._hess4
        if self._big.any():
            S = self._sigma[self._big]
            vals = vals.astype(complex)
            dvals = dvals.astype(complex)
            vals[self._big] += S @ z6_gradient(I, self.p)
            dvals[self._big] += S @ z6_hessian(I, self.p)
        bad = np.abs(vals) <= self._bounds
        if bad.any():
            i = int(np.argmax(bad))
            kind, k = self._dens[i]
            raise DenominatorFloorError(
                f"|{kind}_{{{k}}}| = {abs(vals[i]):.3e} is below the floor {self._bounds[i]:.3e}",
                index=k, value=float(abs(vals[i])), floor=float(self._bounds[i]),
            )
        return vals, dvals

    def _terms(self, z: FourierState):
        y = self._vector(z)
        vals, dvals = self.denominators(z) if self._dens else (np.zeros(0), np.zeros((0, y.size // 2)))
        dext = np.concatenate([vals, [1.0]])
        den_prod = np.prod(dext[self._den_ids], axis=1)
        mono = np.prod(y[self._pos], axis=1)
        return y, vals, dvals, den_prod, mono

    def term_values(self, z: FourierState) -> np.ndarray:
        _, _, _, den_prod, mono = self._terms(z)
        return self._coef * mono / den_prod

    def value(self, z: FourierState) -> complex:
        return complex(np.sum(self.term_values(z)))

    def magnitude(self, z: FourierState) -> float:
        """sum of |term values|, the scale for relative comparisons."""
        return float(np.sum(np.abs(self.term_values(z))))

    def gradient(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        n = 2 * self.window + 1
        y, vals, dvals, den_prod, mono = self._terms(z)
        grad = np.zeros(y.size, dtype=complex)
        if not len(self._coef):
            return grad[:n], grad[n: 2 * n]
        weight = self._coef / den_prod
        vec = y[self._pos]
        length = vec.shape[1]
        prefix = np.ones_like(vec)
        suffix = np.ones_like(vec)
        for l in range(1, length):
            prefix[:, l] = prefix[:, l - 1] * vec[:, l - 1]
            suffix[:, length - 1 - l] = suffix[:, length - l] * vec[:, length - l]
        for l in range(length):
            np.add.at(grad, self._pos[:, l], weight * prefix[:, l] * suffix[:, l])
        if self._dens:
            ratio = np.vstack([dvals / vals[:, None], np.zeros((1, n))])
            g = ratio[self._den_ids].sum(axis=1)
            drift = -(weight * mono) @ g
            grad[:n] += drift * y[n: 2 * n]
            grad[n: 2 * n] += drift * y[:n]
        gx, ge = grad[:n], grad[n: 2 * n]
        if z.window != self.window:
            back = FourierState(self.window, gx, ge, False).widened(z.window)
            return np.array(back.xi), np.array(back.eta)
        return gx, ge

    def vector_field(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        return hamiltonian_vector_field(*self.gradient(z))


def evaluate(H: RationalHamiltonian, z: FourierState, p: ModelParams, floor: DenominatorFloor | None = None) -> complex:
    return H.compile(p, floor).value(z)


def vector_field(
    H: RationalHamiltonian, z: FourierState, p: ModelParams, floor: DenominatorFloor | None = None
) -> tuple[np.ndarray, np.ndarray]:
    return H.compile(p, floor).vector_field(z)


@dataclass(frozen=True)
class IntegrableHandle:
    """Z4 (or Z4 + Z6) as a function of the actions I_a = xi_a eta_a."""

    window: int
    p: ModelParams
    with_z6: bool = False

    def _actions(self, z: FourierState) -> tuple[np.ndarray, FourierState]:
        if z.window != self.window:
            z = z.widened(self.window)
        return z.xi * z.eta, z

    def frequencies(self, I: np.ndarray) -> np.ndarray:
        lam = z4_hessian(self.window, self.p) @ I
        return lam + z6_gradient(I, self.p) if self.with_z6 else lam

    def value(self, z: FourierState) -> complex:
        I, _ = self._actions(z)
        total = 0.5 * I @ z4_hessian(self.window, self.p) @ I
        if self.with_z6:
            total += I @ z6_gradient(I, self.p) / 3.0
        return complex(total)

    def gradient(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        I, zw = self._actions(z)
        lam = self.frequencies(I)
        return lam * zw.eta, lam * zw.xi


def integrable_handle(p: ModelParams, window: int, mode: HomologicalMode = HomologicalMode.Z4) -> IntegrableHandle:
    return IntegrableHandle(window, p, HomologicalMode(mode) == HomologicalMode.Z4Z6)


# --- bracket

@lru_cache(maxsize=1 << 16)
def _exact_weights(
    sig_pi: tuple[tuple[int, int], ...], sig_k: tuple[tuple[int, int], ...], window: int, model: ModelKind
) -> tuple[Fraction, tuple[tuple[int, Fraction, int], ...]]:
    """(Delta, ((e, A_e, B_e), ...)) with sum_a sigma_pi(a) dOmega_k/dI_a = phi1 Delta + sum_e (phi1^2 A_e + phi2 B_e) I_e.

    The omega part alone is phi1 Delta.
    """
    sp, sk = dict(sig_pi), dict(sig_k)
    overlap = sum(v * sp.get(c, 0) for c, v in sk.items())
    if model == ModelKind.NLSP:
        delta = 2 * sum(
            (Fraction(va * vb, (a - b) ** 2) for a, va in sp.items() for b, vb in sk.items() if a != b), Fraction(0)
        )
    else:
        delta = Fraction(-overlap)
    out = []
    for e in range(-window, window + 1):
        ke, pe = sk.get(e, 0), sp.get(e, 0)
        A = Fraction(0)
        if ke:
            A -= ke * sum((Fraction(v, (d - e) ** 2) for d, v in sp.items() if d != e), Fraction(0))
        if pe:
            A -= pe * sum((Fraction(v, (c - e) ** 2) for c, v in sk.items() if c != e), Fraction(0))
        A -= sum((Fraction(v * sp.get(c, 0), (c - e) ** 2) for c, v in sk.items() if c != e), Fraction(0))
        B = -3 * overlap + 4 * ke * pe
        if A or B:
            out.append((e, A, B))
    return delta, tuple(out)


def _sig_key(j: MultiIndex) -> tuple[tuple[int, int], ...]:
    return tuple(sorted(j.signed_counts.items()))


def infer_family(*hs: RationalHamiltonian) -> Family:
    for H in hs:
        if any(t.k_Omega or t.h_Omega for t in H):
            return Family.BIG_OMEGA
    return Family.OMEGA


def _hits(
    src: RationalTerm,
    dst: RationalTerm,
    sign: float,
    merged: tuple[MultiIndex, tuple, tuple, tuple],
    c12: complex,
    base: Alpha,
    p: ModelParams,
    window: int,
    family: Family,
) -> Iterator[RationalTerm]:
    """Terms from the numerator of src differentiating the denominators of dst."""
    if src.is_action_only:
        return
    pi, ko, kO, h = merged
    sig_pi = _sig_key(src.pi)
    omega_alpha = base if family == Family.OMEGA else _bump(base, 1)
    for kind, k in dst.denominators():
        delta, hessian = _exact_weights(sig_pi, _sig_key(k), window, p.model)
        if kind == "omega":
            if delta:
                yield RationalTerm(pi, ko + (k,), kO, h, -sign * c12 * p.phi1 * float(delta), omega_alpha)
            continue
        if delta:
            yield RationalTerm(pi, ko, kO + (k,), h, -sign * c12 * p.phi1 * float(delta), _bump(base, 2))
        for e, A, B in hessian:
            L = p.phi1 ** 2 * float(A) + p.phi2 * B
            if L:
                yield RationalTerm(pi.with_action(e), ko, kO, h + (k,), -sign * c12 * L, _bump(base, 3))


def _pair_terms(t1: RationalTerm, t2: RationalTerm, p: ModelParams, window: int, family: Family) -> Iterator[RationalTerm]:
    c12 = t1.coeff * t2.coeff
    ko, kO, h = t1.k_omega + t2.k_omega, t1.k_Omega + t2.k_Omega, t1.h_Omega + t2.h_Omega
    if family == Family.OMEGA:
        base = (t1.n + t2.n, 0, 0, 0, 0)
    else:
        base = _bump(t1.alpha, 4, base=t2.alpha)
    # numerator contractions
    for a in set(t1.pi.wavenumbers) & set(t2.pi.wavenumbers):
        w = t1.pi.count(-1, a) * t2.pi.count(1, a) - t1.pi.count(1, a) * t2.pi.count(-1, a)
        if w:
            yield RationalTerm(t1.pi.contract(t2.pi, a), ko, kO, h, 1j * c12 * w, base)
    merged = (t1.pi + t2.pi, ko, kO, h)
    if family == Family.OMEGA:
        hit_base = (t1.n + t2.n + 1, 0, 0, 0, 0)
    else:
        hit_base = base
    yield from _hits(t1, t2, 1.0, merged, c12, hit_base, p, window, family)
    yield from _hits(t2, t1, -1.0, merged, c12, hit_base, p, window, family)


def bracket(
    F: RationalHamiltonian,
    G: RationalHamiltonian,
    p: ModelParams,
    *,
    family: Family | None = None,
    term_cap: int | None = None,
) -> RationalHamiltonian:
    """{F, G} as a rational Hamiltonian on the common window, alpha bookkeeping per family."""
    term_cap = settings.TERM_CAP if term_cap is None else term_cap
    window = max(F.window, G.window)
    family = Family(family) if family is not None else infer_family(F, G)
    acc: dict[TermKey, RationalTerm] = {}
    for t1 in F:
        for t2 in G:
            for t in _pair_terms(t1, t2, p, window, family):
                prev = acc.get(t.key)
                acc[t.key] = t if prev is None else prev.with_coeff(prev.coeff + t.coeff)
        if len(acc) > term_cap:
            raise ResourceBudgetError(f"rational bracket produced more than {term_cap} terms")
    return RationalHamiltonian({k: t for k, t in acc.items() if t.coeff != 0}, window)


# --- homological equations

def solve_homological(H: RationalHamiltonian, mode: HomologicalMode = HomologicalMode.Z4Z6) -> RationalHamiltonian:
    """chi with {Z4, chi} = H (mode Z4: omega_{Irr pi} appended to k_omega) or
    {Z4 + Z6, chi} = H (mode Z4Z6: Omega_{Irr pi} appended to h)."""
    mode = HomologicalMode(mode)
    out = []
    for t in H:
        if t.is_action_only:
            raise NotSolvableError(f"action-only term {t.pi} commutes with the integrable part; split it off first")
        irr = t.pi.irreducible
        if mode == HomologicalMode.Z4:
            out.append(RationalTerm(t.pi, t.k_omega + (irr,), t.k_Omega, t.h_Omega, t.coeff, _bump(t.alpha, 0)))
        else:
            out.append(RationalTerm(t.pi, t.k_omega, t.k_Omega, t.h_Omega + (irr,), t.coeff, t.alpha))
    return RationalHamiltonian.from_terms(out, H.window)


def homological_residual(
    H: RationalHamiltonian,
    chi: RationalHamiltonian,
    mode: HomologicalMode,
    p: ModelParams,
    states: Sequence[FourierState],
    floor: DenominatorFloor | None = None,
) -> float:
    """max over states of |{Z, chi} - H| / (sum of |H term values|)."""
    Z = integrable_handle(p, H.window, mode)
    Hc, Cc = H.compile(p, floor), chi.compile(p, floor)
    worst = 0.0
    for z in states:
        lhs = poisson_numeric(Z, Cc, z)
        scale = max(Hc.magnitude(z), 1e-300)
        worst = max(worst, abs(lhs - Hc.value(z)) / scale)
    return worst


# --- subclass numerology

def _m_cap(tag: Subclass, r: int) -> int | None:
    if tag == Subclass.H_OMEGA:
        return 3 * r - 6 if r >= 3 else None
    if tag == Subclass.H_OMEGA_STAR:
        return 3 * (r + 1) - 6 if r >= 2 else None
    if tag == Subclass.H_BIG_OMEGA:
        return 7 * r - 22 if r >= 4 else None
    if tag == Subclass.H_BIG_OMEGA_STAR:
        return 7 * (r + 2) - 22 if r >= 2 else None
    return None


def alpha_fits(alpha: Sequence[int], t: RationalTerm, tag: Subclass, r: int) -> bool:
    a1, a2, a3, a4, a5 = alpha
    if min(alpha) < 0:
        return False
    extra = 1 if tag.star else 0
    shift = 2 if tag.star else 0
    return (
        t.n == a1 + a2
        and t.p == t.n + a3
        and t.q == a4 + a5 + extra
        and a1 <= 2 * (r + shift) - 6
        and a2 + a3 + a4 <= a5 <= (r + shift) - 4
    )


def _alpha_candidates(t: RationalTerm, tag: Subclass) -> Iterator[Alpha]:
    q = t.q - (1 if tag.star else 0)
    if q < 0:
        return
    for a1 in range(t.n + 1):
        for a4 in range(q + 1):
            yield (a1, t.n - a1, t.p - t.n, a4, q - a4)


def term_witness(t: RationalTerm, tag: Subclass, r: int, *, stored_only: bool = False) -> Alpha | None:
    """An alpha witnessing membership of one term, or None."""
    if t.order != r or not 0 <= t.n <= t.p:
        return None
    if any(len(k) > 2 * t.m for _, k in t.denominators()):
        return None
    cap = _m_cap(tag, r)
    if cap is not None and t.m > cap:
        return None
    if tag.family == Family.OMEGA:
        limit = 2 * r - 3 if tag.star else 2 * r - 6
        ok = t.q == 0 and t.n == t.p and t.n <= limit
        return (t.n, 0, 0, 0, 0) if ok else None
    if alpha_fits(t.alpha, t, tag, r):
        return t.alpha
    if stored_only:
        return None
    return next((a for a in _alpha_candidates(t, tag) if alpha_fits(a, t, tag, r)), None)


@dataclass(frozen=True)
class SubclassReport:
    tag: Subclass
    r: int | None
    witnesses: tuple[Alpha | None, ...]
    action_only: bool
    irreducible: bool
    multiplicity: int

    def to_json(self) -> dict:
        return {
            "tag": self.tag.value,
            "r": self.r,
            "witnesses": [list(w) if w else None for w in self.witnesses],
            "A": self.action_only,
            "R": self.irreducible,
            "multiplicity": self.multiplicity,
        }


_SEARCH_ORDER = (Subclass.H_OMEGA, Subclass.H_OMEGA_STAR, Subclass.H_BIG_OMEGA, Subclass.H_BIG_OMEGA_STAR)


def subclass_check(
    H: RationalHamiltonian,
    tag: Subclass | None = None,
    r: int | None = None,
    *,
    stored_only: bool = False,
) -> SubclassReport:
    """First subclass (or the requested one) that every term of H belongs to, with alpha witnesses."""
    terms = list(H)
    A = all(t.is_action_only for t in terms)
    R = all(not t.is_action_only for t in terms)
    if not terms:
        return SubclassReport(Subclass(tag) if tag else Subclass.UNTAGGED, r, (), A, R, 0)
    r = H.order if r is None else r
    tags = (Subclass(tag),) if tag is not None else _SEARCH_ORDER
    failure = ""
    for candidate in tags:
        witnesses = []
        for t in terms:
            w = term_witness(t, candidate, r, stored_only=stored_only)
            if w is None:
                failure = f"term (m={t.m}, n={t.n}, p={t.p}, q={t.q}, alpha={t.alpha}) is not in {candidate.value} for r={r}"
                break
            witnesses.append(w)
        else:
            return SubclassReport(candidate, r, tuple(witnesses), A, R, H.max_multiplicity)
    raise NoWitnessError(failure)


# --- derivative distribution

@dataclass(frozen=True)
class DerivativeCertificate:
    C: float
    injections: tuple[dict[int, int] | None, ...]  # slot -> mu rank in pi (ranks >= 3)
    momentum_ratio: float  # max <mu_min(h)> / <mu_2(pi)>

    @property
    def failures(self) -> list[int]:
        return [i for i, inj in enumerate(self.injections) if inj is None]

    @property
    def holds(self) -> bool:
        return not self.failures and self.momentum_ratio <= self.C

    def to_json(self) -> dict:
        return {"C": self.C, "holds": self.holds, "failures": self.failures, "momentum_ratio": self.momentum_ratio}


def _injection(t: RationalTerm, C: float) -> dict[int, int] | None:
    ks = [*t.k_omega, *t.k_Omega]
    slots = 2 * len(ks)
    ranks = list(range(3, 2 * t.m + 1))
    if slots == 0:
        return {}
    if slots > len(ranks):
        return None
    rows, cols = [], []
    for alpha, k in enumerate(ks):
        for col, rank in enumerate(ranks):
            if k.mu_min <= C * t.pi.mu(rank):
                rows += [2 * alpha, 2 * alpha + 1]
                cols += [col, col]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(slots, len(ranks)))
    match = maximum_bipartite_matching(graph, perm_type="column")
    if np.any(match < 0):
        return None
    return {slot + 1: ranks[int(col)] for slot, col in enumerate(match)}


def distribute_derivatives_certificate(H: RationalHamiltonian, C: float | None = None, r: int | None = None) -> DerivativeCertificate:
    """Per term an injection iota: [1, 2p] -> [3, 2m] with <mu_min(k_alpha)> <= C <mu_iota(pi)>, plus the h control."""
    if C is None:
        order = r if r is not None else max(H.orders, default=1)
        C = 6.0 * max(order, 1)
    injections, ratio = [], 0.0
    for t in H:
        injections.append(_injection(t, C))
        for k in t.h_Omega:
            ratio = max(ratio, k.mu_min / t.pi.mu(2))
    cert = DerivativeCertificate(C, tuple(injections), ratio)
    if not cert.holds:
        logger.debug(f"derivative certificate failed for {len(cert.failures)} terms (C={C:g}, h ratio {ratio:.3g})")
    return cert


# --- random members for audits

SEXTIC_CORES = (
    MultiIndex.from_sides([-1, 2, 2], [0, 0, 3]),
    MultiIndex.from_sides([0, 3, 3], [1, 1, 4]),
)


def _placed(core: MultiIndex, rng: np.random.Generator, window: int) -> MultiIndex:
    """Random reflection and translation of a core that fits in the window."""
    sign = 1 if rng.random() < 0.5 else -1
    pts = [sign * a for _, a in core.entries]
    lo, hi = -window - min(pts), window - max(pts)
    if lo > hi:
        raise MalformedIndexError(f"window {window} too small for the sextic cores")
    t = int(rng.integers(lo, hi + 1))
    return MultiIndex.of((d, sign * a + t) for d, a in core.entries)


def random_irreducible_sextic(rng: np.random.Generator, window: int) -> MultiIndex:
    return _placed(SEXTIC_CORES[int(rng.integers(len(SEXTIC_CORES)))], rng, window)


def _random_alpha(rng: np.random.Generator, tag: Subclass, r: int, max_extra: int) -> Alpha:
    shift = 2 if tag.star else 0
    cap1 = 2 * (r + shift) - 6
    if tag.family == Family.OMEGA:
        cap = 2 * r - 3 if tag.star else 2 * r - 6
        if cap < 0:
            raise NoWitnessError(f"{tag.value} is empty for r={r}")
        return (int(rng.integers(0, min(cap, max_extra) + 1)), 0, 0, 0, 0)
    cap5 = (r + shift) - 4
    if cap5 < 0 or cap1 < 0:
        raise NoWitnessError(f"{tag.value} is empty for r={r}")
    a5 = int(rng.integers(0, min(cap5, max_extra) + 1))
    budget = int(rng.integers(0, a5 + 1))
    cuts = sorted(rng.integers(0, budget + 1, size=2))
    a2, a3, a4 = int(cuts[0]), int(cuts[1] - cuts[0]), int(budget - cuts[1])
    a1 = int(rng.integers(0, min(cap1, max_extra) + 1))
    return (a1, a2, a3, a4, a5)


def random_term(rng: np.random.Generator, tag: Subclass, r: int, window: int, *, max_extra: int = 1) -> RationalTerm:
    """A member of the subclass with small alpha, sextic denominators and padded action pairs."""
    alpha = _random_alpha(rng, tag, r, max_extra)
    a1, a2, a3, a4, a5 = alpha
    n = a1 + a2
    q = a4 + a5 + (1 if tag.star and tag.family == Family.BIG_OMEGA else 0)
    p = n + a3
    m = r + p + 2 * q
    if m < 1:
        raise NoWitnessError(f"no numerator of positive length for r={r}")
    if m >= 3 and rng.random() < 0.8:
        pi = random_irreducible_sextic(rng, window)
        pads = m - 3
    else:
        pi, pads = MultiIndex.empty(), m
    for _ in range(pads):
        pi = pi.with_action(int(rng.integers(-window, window + 1)))
    dens = [pi.irreducible if pi.irreducible.entries and rng.random() < 0.5 else random_irreducible_sextic(rng, window)
            for _ in range(p + q)]
    coeff = complex(rng.normal(), rng.normal())
    return RationalTerm(pi, tuple(dens[:n]), tuple(dens[n:p]), tuple(dens[p:]), coeff, alpha)


def random_member(
    rng: np.random.Generator, tag: Subclass, r: int, window: int, *, terms: int = 3, max_extra: int = 1
) -> RationalHamiltonian:
    """Reality-closed member of the subclass built from `terms` random terms and their conjugates."""
    H = RationalHamiltonian.from_terms((random_term(rng, tag, r, window, max_extra=max_extra) for _ in range(terms)), window)
    return H.with_conjugates()


def random_states(rng: np.random.Generator, window: int, count: int, *, amplitude: float = 1.0) -> list[FourierState]:
    return [random_state(rng, window, amplitude=amplitude, decay=1.0, floor=0.3) for _ in range(count)]


# --- audits

@dataclass
class ClosureRecord:
    family: Family
    r: int
    r_prime: int
    terms: int
    tag: str | None
    weight_ok: bool
    certificate_ok: bool
    real: bool
    max_rel_error: float
    skipped_points: int = 0
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.weight_ok and self.certificate_ok and self.real and self.max_rel_error <= 1e-9

    def to_json(self) -> dict:
        return {
            "family": self.family.value, "r": self.r, "r_prime": self.r_prime, "terms": self.terms,
            "tag": self.tag, "weight_ok": self.weight_ok, "certificate_ok": self.certificate_ok,
            "real": self.real, "max_rel_error": self.max_rel_error, "skipped_points": self.skipped_points,
            "error": self.error, "passed": self.passed,
        }


def oracle_error(
    B: RationalHamiltonian,
    F: RationalHamiltonian,
    G: RationalHamiltonian,
    p: ModelParams,
    states: Sequence[FourierState],
    floor: DenominatorFloor | None = None,
) -> tuple[float, int]:
    """max relative gap between the symbolic bracket B and the numeric {F, G}; states hitting a floor are skipped."""
    Bc, Fc, Gc = B.compile(p, floor), F.compile(p, floor), G.compile(p, floor)
    worst, skipped = 0.0, 0
    for z in states:
        try:
            ref = poisson_numeric(Fc, Gc, z)
            got = Bc.value(z)
            scale = max(Bc.magnitude(z), abs(ref), 1e-300)
        except DenominatorFloorError:
            skipped += 1
            continue
        worst = max(worst, abs(got - ref) / scale)
    return worst, skipped


def closure_check(
    F: RationalHamiltonian,
    G: RationalHamiltonian,
    family: Family,
    r: int,
    r_prime: int,
    p: ModelParams,
    states: Sequence[FourierState],
    *,
    strict: bool = False,
) -> ClosureRecord:
    """Bracket one (H*_{r}, H_{r'}) pair and audit the result."""
    B = bracket(F, G, p, family=family)
    r2 = r + r_prime - 1
    try:
        tag = subclass_check(B, Subclass.of(family, False), r2, stored_only=True).tag.value
        error = None
    except NoWitnessError as exc:
        tag, error = None, str(exc)
    weight_ok = B.weight <= max(F.weight, G.weight) + 1e-12
    cert = distribute_derivatives_certificate(B, r=r2)
    err, skipped = oracle_error(B, F, G, p, states)
    record = ClosureRecord(family, r, r_prime, len(B), tag, weight_ok, cert.holds, B.is_real(1e-9), err, skipped, error)
    if strict and not record.passed:
        raise ClosureViolationError(f"bracket closure failed: {record.to_json()}")
    return record


def closure_audit(
    rng: np.random.Generator,
    p: ModelParams,
    *,
    pairs: int = 200,
    window: int = 4,
    terms: int = 3,
    points: int = 20,
) -> list[ClosureRecord]:
    """Randomised (H*_{r,W}, H_{r',W}) pairs over both families with r, r' <= 4."""
    grid = [(Family.OMEGA, r, rp) for r in (2, 3, 4) for rp in (3, 4)]
    if p.model != ModelKind.NLSP:
        grid += [(Family.BIG_OMEGA, r, 4) for r in (2, 3, 4)]
    records = []
    for i in range(pairs):
        family, r, rp = grid[i % len(grid)]
        F = random_member(rng, Subclass.of(family, True), r, window, terms=terms)
        G = random_member(rng, Subclass.of(family, False), rp, window, terms=terms)
        states = random_states(rng, window, points)
        rec = closure_check(F, G, family, r, rp, p, states)
        if not rec.passed:
            logger.warning(f"closure audit pair {i} failed: {rec.to_json()}")
        records.append(rec)
    logger.info(f"closure audit: {sum(r.passed for r in records)}/{len(records)} pairs passed")
    return records


def homological_audit(
    rng: np.random.Generator,
    p: ModelParams,
    *,
    inputs: int = 50,
    window: int = 4,
    points: int = 20,
) -> list[dict]:
    """Residuals of both homological solves on random irreducible-numerator inputs."""
    rows = []
    for i in range(inputs):
        if i % 2 == 0 or p.model == ModelKind.NLSP:
            mode, tag, r = HomologicalMode.Z4, Subclass.H_OMEGA, 3
            H = RationalHamiltonian.from_terms(
                (RationalTerm(random_irreducible_sextic(rng, window), coeff=complex(rng.normal(), rng.normal())) for _ in range(2)),
                window,
            ).with_conjugates()
        else:
            mode, tag, r = HomologicalMode.Z4Z6, Subclass.H_BIG_OMEGA, 4
            H = random_member(rng, tag, r, window).filter(lambda t: not t.is_action_only)
            if not H:
                continue
        chi = solve_homological(H, mode)
        residual = homological_residual(H, chi, mode, p, random_states(rng, window, points))
        rows.append({
            "mode": mode.value,
            "terms": len(H),
            "chi_tag": subclass_check(chi).tag.value,
            "weight_preserved": abs(chi.weight - H.weight) <= 1e-12,
            "residual": residual,
        })
    return rows
