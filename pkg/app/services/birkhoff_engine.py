"""
Polynomial Hamiltonians with exact coefficients and the Birkhoff steps built on Z2.

Coefficients live in the ring QQ(i)[phi0, phi1, phi2] where phi0 = phi(0),
phi1 = phi'(0), phi2 = phi''(0); higher Taylor data enter as exact rationals.
Each canonical multi-index j carries its folded coefficient, i.e. the sum of the
coefficients of all ordered tuples j stands for.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np
from sympy.polys.domains import QQ, QQ_I
from sympy.polys.rings import PolyElement, ring

from ..core.config import settings
from ..core.errors import CertificateError, ResourceBudgetError
from ..schemas.params import ModelKind, ModelParams
from .index_core import ClassTag, MultiIndex, enumerate_class
from .phase_space import FourierState, hamiltonian_vector_field

logger = logging.getLogger(__name__)

RING, PHI0, PHI1, PHI2 = ring("phi0,phi1,phi2", QQ_I)
I_UNIT = QQ_I(0, 1)


# --- coefficient helpers

def exact(value: Fraction | int | float) -> PolyElement:
    """Ring constant from an exact (or binary-exact) rational."""
    f = Fraction(value)
    return RING(QQ_I(QQ(f.numerator, f.denominator), 0))


def conj(c: PolyElement) -> PolyElement:
    return RING.from_dict({m: QQ_I(v.x, -v.y) for m, v in c.items()})


def _to_complex(v) -> complex:
    return complex(float(v.x), float(v.y))


def bind(c: PolyElement, p: ModelParams) -> complex:
    """Numeric value of a coefficient at phi0, phi1, phi2 from p."""
    gens = (p.phi0, p.phi1, p.phi2)
    total = 0.0j
    for monom, v in c.items():
        total += _to_complex(v) * math.prod(g ** e for g, e in zip(gens, monom))
    return total


def _rational(v) -> list[int]:
    return [int(v.numerator), int(v.denominator)]


def coefficient_to_json(c: PolyElement) -> list:
    return [[list(m), _rational(v.x) + _rational(v.y)] for m, v in sorted(c.items())]


def coefficient_from_json(data: list) -> PolyElement:
    return RING.from_dict({
        tuple(m): QQ_I(QQ(re_n, re_d), QQ(im_n, im_d)) for m, (re_n, re_d, im_n, im_d) in data
    })


def taylor_generator(order: int, p: ModelParams | None = None) -> PolyElement:
    """phi^{(order)}(0) as a ring element: a generator for order <= 2, exact data beyond."""
    if order == 0:
        return PHI0
    if order == 1:
        return PHI1
    if order == 2:
        return PHI2
    higher = p.higher if p is not None else ()
    idx = order - 3
    return exact(higher[idx]) if idx < len(higher) else RING.zero


# --- polynomials

@dataclass(frozen=True)
class PolynomialHamiltonian:
    terms: Mapping[MultiIndex, PolyElement]
    window: int

    @classmethod
    def from_terms(cls, terms: Mapping[MultiIndex, PolyElement] | Iterable[tuple[MultiIndex, PolyElement]], window: int) -> "PolynomialHamiltonian":
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[MultiIndex, PolyElement] = defaultdict(lambda: RING.zero)
        for j, c in items:
            acc[j] = acc[j] + c
        return cls({j: c for j, c in acc.items() if c}, window)

    @classmethod
    def zero(cls, window: int) -> "PolynomialHamiltonian":
        return cls({}, window)

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __add__(self, other: "PolynomialHamiltonian") -> "PolynomialHamiltonian":
        return PolynomialHamiltonian.from_terms(list(self.terms.items()) + list(other.terms.items()), max(self.window, other.window))

    def __neg__(self) -> "PolynomialHamiltonian":
        return PolynomialHamiltonian({j: -c for j, c in self.terms.items()}, self.window)

    def __sub__(self, other: "PolynomialHamiltonian") -> "PolynomialHamiltonian":
        return self + (-other)

    def scale(self, factor) -> "PolynomialHamiltonian":
        return PolynomialHamiltonian.from_terms({j: c * factor for j, c in self.terms.items()}, self.window)

    def coefficient(self, j: MultiIndex) -> PolyElement:
        return self.terms.get(j, RING.zero)

    def symmetric_coefficient(self, j: MultiIndex) -> PolyElement:
        """Coefficient of one ordered tuple of j."""
        return self.coefficient(j) / j.orderings

    @property
    def degrees(self) -> set[int]:
        return {len(j) for j in self.terms}

    def homogeneous(self, degree: int) -> "PolynomialHamiltonian":
        return PolynomialHamiltonian({j: c for j, c in self.terms.items() if len(j) == degree}, self.window)

    def truncated(self, max_degree: int) -> "PolynomialHamiltonian":
        return PolynomialHamiltonian({j: c for j, c in self.terms.items() if len(j) <= max_degree}, self.window)

    def filter(self, predicate) -> "PolynomialHamiltonian":
        return PolynomialHamiltonian({j: c for j, c in self.terms.items() if predicate(j)}, self.window)

    def resonant_part(self) -> "PolynomialHamiltonian":
        return self.filter(lambda j: j.is_resonant)

    def non_resonant_part(self) -> "PolynomialHamiltonian":
        return self.filter(lambda j: not j.is_resonant)

    def conjugate(self) -> "PolynomialHamiltonian":
        return PolynomialHamiltonian({j.conjugate(): conj(c) for j, c in self.terms.items()}, self.window)

    def is_real(self) -> bool:
        """c_{j bar} = conj(c_j) for every term."""
        return all(self.coefficient(j.conjugate()) == conj(c) for j, c in self.terms.items())

    def sup_norm(self, p: ModelParams) -> float:
        """max |symmetric coefficient| with the generators bound to p."""
        return max((abs(bind(c, p)) / j.orderings for j, c in self.terms.items()), default=0.0)

    def compile(self, p: ModelParams) -> "NumericPolynomial":
        return NumericPolynomial.build(self, p)

    def to_json(self) -> list:
        return [[j.to_json(), coefficient_to_json(c)] for j, c in sorted(self.terms.items(), key=lambda t: t[0].entries)]

    @classmethod
    def from_json(cls, data: list, window: int) -> "PolynomialHamiltonian":
        return cls.from_terms([(MultiIndex.from_json(j), coefficient_from_json(c)) for j, c in data], window)


@dataclass
class NumericPolynomial:
    """Coefficients bound to numbers; value, gradient and vector field on states."""

    window: int
    groups: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)  # (coefficients, positions)

    @classmethod
    def build(cls, poly: PolynomialHamiltonian, p: ModelParams) -> "NumericPolynomial":
        K, n = poly.window, 2 * poly.window + 1
        by_len: dict[int, tuple[list, list]] = defaultdict(lambda: ([], []))
        for j, c in poly.terms.items():
            if not j.entries:
                continue
            coeffs, pos = by_len[len(j)]
            coeffs.append(bind(c, p))
            pos.append([a + K if d > 0 else n + a + K for d, a in j.entries])
        groups = [(np.array(cs, dtype=complex), np.array(ps, dtype=int)) for cs, ps in by_len.values()]
        return cls(K, groups)

    def _vector(self, z: FourierState) -> np.ndarray:
        if z.window != self.window:
            z = z.widened(self.window)
        return z.as_vector()

    def value(self, z: FourierState) -> complex:
        y = self._vector(z)
        return complex(sum(c @ np.prod(y[pos], axis=1) for c, pos in self.groups))

    def gradient(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        y = self._vector(z)
        grad = np.zeros(y.size, dtype=complex)
        for c, pos in self.groups:
            vals = y[pos]
            length = vals.shape[1]
            prefix = np.ones_like(vals)
            suffix = np.ones_like(vals)
            for l in range(1, length):
                prefix[:, l] = prefix[:, l - 1] * vals[:, l - 1]
                suffix[:, length - 1 - l] = suffix[:, length - l] * vals[:, length - l]
            for l in range(length):
                np.add.at(grad, pos[:, l], c * prefix[:, l] * suffix[:, l])
        n = 2 * self.window + 1
        return grad[:n], grad[n:]

    def vector_field(self, z: FourierState) -> tuple[np.ndarray, np.ndarray]:
        gx, ge = self.gradient(z)
        return hamiltonian_vector_field(gx, ge)


# --- model polynomials

def z2_polynomial(window: int) -> PolynomialHamiltonian:
    return PolynomialHamiltonian.from_terms({MultiIndex.action(a): RING(a * a) for a in range(-window, window + 1)}, window)


def _folded_weight(j: MultiIndex, m: int) -> int:
    """(m!/prod mult+!)(m!/prod mult-!): ordered (a, b) pairs behind j in (uv)^m."""
    plus = minus = math.factorial(m)
    for (delta, _), mult in j.counts.items():
        if delta > 0:
            plus //= math.factorial(mult)
        else:
            minus //= math.factorial(mult)
    return plus * minus


def p2m_coefficients(m: int, p: ModelParams | None = None, window: int = 4) -> PolynomialHamiltonian:
    """P_{2m}: symmetric coefficient m! phi^{(m-1)}(0)/(2m)! on each j in M_m within the window."""
    if p is not None and p.model == ModelKind.NLSP:
        return _nlsp_quartic(window) if m == 2 else PolynomialHamiltonian.zero(window)
    gen = taylor_generator(m - 1, p)
    terms = {}
    for j in enumerate_class(m, window, ClassTag.M):
        terms[j] = gen * _folded_weight(j, m) / math.factorial(m)
    return PolynomialHamiltonian.from_terms(terms, window)


def _nlsp_quartic(window: int) -> PolynomialHamiltonian:
    """phi1 sum_c c^{-2} w_c w_{-c}, w_c = sum_{a-b=c} xi_a eta_b."""
    terms = {}
    for j in enumerate_class(2, window, ClassTag.M):
        (a1, a2), (b1, b2) = _sides_of(j)
        total = Fraction(0)
        for x1, x2 in {(a1, a2), (a2, a1)}:
            for y1, y2 in {(b1, b2), (b2, b1)}:
                c = x1 - y1
                if c:
                    total += Fraction(1, c * c)
        terms[j] = PHI1 * exact(total)
    return PolynomialHamiltonian.from_terms(terms, window)


def _sides_of(j: MultiIndex) -> tuple[tuple[int, ...], tuple[int, ...]]:
    plus = tuple(a for d, a in j.entries if d > 0)
    minus = tuple(a for d, a in j.entries if d < 0)
    return plus, minus


def hamiltonian_polynomial(p: ModelParams, window: int, max_degree: int) -> PolynomialHamiltonian:
    """Z2 + P2 + P4 + ... + P_{max_degree}."""
    H = z2_polynomial(window)
    if p.model == ModelKind.NLSP:
        H = H + p2m_coefficients(1, None, window) + p2m_coefficients(2, p, window)
        return H
    for m in range(1, max_degree // 2 + 1):
        H = H + p2m_coefficients(m, p, window)
    return H


# --- brackets

def _by_wavenumber(G: PolynomialHamiltonian) -> dict[int, list[tuple[MultiIndex, PolyElement, int, int]]]:
    out: dict[int, list] = defaultdict(list)
    for l, c in G.terms.items():
        for a in l.wavenumbers:
            out[a].append((l, c, l.count(1, a), l.count(-1, a)))
    return out


def poisson_poly(F: PolynomialHamiltonian, G: PolynomialHamiltonian, *, term_cap: int | None = None) -> PolynomialHamiltonian:
    """{F, G} = i sum_a (dF/deta_a dG/dxi_a - dF/dxi_a dG/deta_a), exact."""
    term_cap = settings.TERM_CAP if term_cap is None else term_cap
    index = _by_wavenumber(G)
    acc: dict[MultiIndex, PolyElement] = defaultdict(lambda: RING.zero)
    for j, c in F.terms.items():
        for a in j.wavenumbers:
            jp, jm = j.count(1, a), j.count(-1, a)
            for l, c2, lp, lm in index.get(a, ()):
                weight = jm * lp - jp * lm
                if weight:
                    acc[j.contract(l, a)] += c * c2 * weight
        if len(acc) > term_cap:
            raise ResourceBudgetError(f"bracket produced more than {term_cap} terms")
    return PolynomialHamiltonian({k: v * I_UNIT for k, v in acc.items() if v}, max(F.window, G.window))


def bracket_bound_holds(F: PolynomialHamiltonian, G: PolynomialHamiltonian, B: PolynomialHamiltonian, p: ModelParams) -> bool:
    """||c''|| <= 2mn ||c|| ||c'|| for homogeneous F (M_m) and G (M_n)."""
    if not F or not G:
        return True
    m = max(F.degrees) // 2
    n = max(G.degrees) // 2
    return B.sup_norm(p) <= 2 * m * n * F.sup_norm(p) * G.sup_norm(p) * (1 + 1e-12)


def transform_lie(H: PolynomialHamiltonian, chi: PolynomialHamiltonian, max_degree: int) -> PolynomialHamiltonian:
    """H o Phi^1_chi = sum_k ad_chi^k H / k!, truncated at max_degree."""
    total = H.truncated(max_degree)
    term = total
    k = 1
    while term:
        term = poisson_poly(term, chi).truncated(max_degree).scale(Fraction(1, k))
        total = total + term
        k += 1
    return total


# --- homological steps with Z2

def solve_z2_homological(Q: PolynomialHamiltonian) -> PolynomialHamiltonian:
    """chi with {Z2, chi} = -Q on the non-resonant terms of Q (coefficient i c / Delta_j)."""
    terms = {}
    for j, c in Q.terms.items():
        if j.laplacian == 0:
            continue
        terms[j] = c * I_UNIT / j.laplacian
    return PolynomialHamiltonian(terms, Q.window)


def chi4(p: ModelParams | None = None, window: int = 4) -> PolynomialHamiltonian:
    """Generator of the quartic step: symmetric coefficient i phi'(0)/(12 Delta_j) off R_2."""
    return solve_z2_homological(p2m_coefficients(2, p, window).filter(lambda j: not j.is_resonant))


def z4_polynomial(p: ModelParams | None = None, window: int = 4) -> PolynomialHamiltonian:
    return p2m_coefficients(2, p, window).resonant_part()


@dataclass
class BirkhoffNormalForm:
    window: int
    resonant: dict[int, PolynomialHamiltonian]
    generators: dict[int, PolynomialHamiltonian]
    remainder: PolynomialHamiltonian
    max_degree: int

    def normal_form(self) -> PolynomialHamiltonian:
        """Z2 + P2 + sum of the resonant parts."""
        total = z2_polynomial(self.window) + self.resonant.get(2, PolynomialHamiltonian.zero(self.window))
        for d in sorted(self.resonant):
            if d >= 4:
                total = total + self.resonant[d]
        return total


def birkhoff_normal_form(p: ModelParams, window: int, order: int) -> BirkhoffNormalForm:
    """Eliminate non-resonant terms of degrees 4 .. 2*order with Z2; exact, Lie series to 2*order + 2."""
    max_degree = 2 * order + 2
    H = hamiltonian_polynomial(p, window, max_degree)
    generators: dict[int, PolynomialHamiltonian] = {}
    for d in range(4, 2 * order + 1, 2):
        Q = H.homogeneous(d).non_resonant_part()
        if not Q:
            continue
        chi = solve_z2_homological(Q)
        generators[d] = chi
        H = transform_lie(H, chi, max_degree)
        logger.info(f"Birkhoff step degree {d}: {len(chi)} generator terms, {len(H)} terms after transform")
    resonant = {d: H.homogeneous(d).resonant_part() for d in range(2, 2 * order + 1, 2)}
    resonant[2] = H.homogeneous(2).filter(lambda j: j.laplacian == 0 and len(j) == 2) - z2_polynomial(window)
    leftover = {d: H.homogeneous(d).non_resonant_part() for d in range(4, 2 * order + 1, 2)}
    if any(leftover.values()):
        raise CertificateError("non-resonant terms survived the Birkhoff steps")
    remainder = H.filter(lambda j: len(j) > 2 * order)
    return BirkhoffNormalForm(window, resonant, generators, remainder, max_degree)


# --- bracket oracle for Z6

@dataclass
class Z6Oracle:
    window: int
    alpha: dict[int, PolyElement]
    beta: dict[tuple[int, int], PolyElement]
    gamma: dict[tuple[int, int, int], PolyElement]
    irreducible: PolynomialHamiltonian

    @property
    def irreducible_vanishes(self) -> bool:
        return not self.irreducible


def _quartets_near_window(p: ModelParams | None, window: int) -> PolynomialHamiltonian:
    """P4 terms on the window 3K with at most one entry outside K."""
    big = p2m_coefficients(2, p, 3 * window)
    return big.filter(lambda j: sum(abs(a) > window for _, a in j.entries) <= 1)


def extract_z6_oracle(p: ModelParams | None = None, window: int = 8) -> Z6Oracle:
    """Resonant part of 1/2 {Q4, chi4} for outputs inside the window, exact on the lattice."""
    P4 = _quartets_near_window(p, window)
    Q4 = P4.non_resonant_part()
    chi = solve_z2_homological(Q4)
    # chi terms indexed by (delta, a, Delta): resonant outputs need Delta_l = -Delta_j
    index: dict[tuple[int, int, int], list] = defaultdict(list)
    for l, c in chi.terms.items():
        for (delta, a) in set(l.entries):
            index[(delta, a, l.laplacian)].append((l, c))
    acc: dict[MultiIndex, PolyElement] = defaultdict(lambda: RING.zero)
    for j, c in Q4.terms.items():
        for a in j.wavenumbers:
            jp, jm = j.count(1, a), j.count(-1, a)
            partners = {}
            for delta in (d for d, own in ((1, jp), (-1, jm)) if own):
                partners.update(index.get((-delta, a, -j.laplacian), ()))
            for l, c2 in partners.items():
                weight = jm * l.count(1, a) - jp * l.count(-1, a)
                if not weight:
                    continue
                out = j.contract(l, a)
                if any(abs(b) > window for _, b in out.entries):
                    continue
                acc[out] += c * c2 * weight
    result = PolynomialHamiltonian({out: v * I_UNIT / 2 for out, v in acc.items() if v}, window)
    return _split_oracle(result, window)


def _split_oracle(B: PolynomialHamiltonian, window: int) -> Z6Oracle:
    alpha: dict[int, PolyElement] = {}
    beta: dict[tuple[int, int], PolyElement] = {}
    gamma: dict[tuple[int, int, int], PolyElement] = {}
    irreducible = {}
    for j, c in B.terms.items():
        if not j.is_resonant:
            continue
        if not j.is_action_only:
            irreducible[j] = c
            continue
        plus = sorted(a for d, a in j.entries if d > 0)
        mult = {a: plus.count(a) for a in plus}
        if len(mult) == 1:
            alpha[plus[0]] = c
        elif len(mult) == 2:
            (a, ma), (b, _) = sorted(mult.items(), key=lambda t: -t[1])
            beta[(a, b)] = c
        else:
            gamma[tuple(sorted(mult))] = c
    return Z6Oracle(window, alpha, beta, gamma, PolynomialHamiltonian(irreducible, window))


def z6_polynomial(p: ModelParams | None = None, window: int = 4, oracle: Z6Oracle | None = None) -> PolynomialHamiltonian:
    """Integrable Z6 = action part of P6 plus the action part of 1/2 {Q4, chi4}."""
    oracle = oracle or extract_z6_oracle(p, window)
    terms = dict(p2m_coefficients(3, p, window).resonant_part().filter(lambda j: j.is_action_only).terms)
    acc = PolynomialHamiltonian.from_terms(terms, window)
    extra = {}
    for a, c in oracle.alpha.items():
        extra[MultiIndex.from_sides([a] * 3, [a] * 3)] = c
    for (a, b), c in oracle.beta.items():
        extra[MultiIndex.from_sides([a, a, b], [a, a, b])] = c
    for (a, b, cc), c in oracle.gamma.items():
        extra[MultiIndex.from_sides([a, b, cc], [a, b, cc])] = c
    return acc + PolynomialHamiltonian.from_terms(extra, window)


def z6_closed_form(window: int) -> PolynomialHamiltonian:
    """-phi1^2/2 sum_{a!=b} I_a^2 I_b/(a-b)^2 + phi2/6 (6 S1^3 - 9 S2 S1 + 4 S3)."""
    terms = {}
    rng = range(-window, window + 1)
    for a in rng:
        terms[MultiIndex.from_sides([a] * 3, [a] * 3)] = PHI2 / 6
        for b in rng:
            if b == a:
                continue
            terms[MultiIndex.from_sides([a, a, b], [a, a, b])] = -PHI1 ** 2 / (2 * (a - b) ** 2) + PHI2 * 3 / 2
            for c in rng:
                if a < b < c:
                    terms[MultiIndex.from_sides([a, b, c], [a, b, c])] = PHI2 * 6
    return PolynomialHamiltonian.from_terms(terms, window)


def k6_irreducible(p: ModelParams | None = None, window: int = 4, oracle: Z6Oracle | None = None) -> PolynomialHamiltonian:
    """Irreducible resonant sextic part: P6 plus the bracket contribution (reported, expected to vanish)."""
    oracle = oracle or extract_z6_oracle(p, window)
    base = p2m_coefficients(3, p, window).resonant_part().filter(lambda j: not j.is_action_only)
    return base + oracle.irreducible


# --- truncation

@dataclass(frozen=True)
class TruncationCertificate:
    checked: int
    N: float
    worst_ratio: float  # max <mu_1(Irr j)> / N^2 over retained j

    @property
    def holds(self) -> bool:
        return self.worst_ratio <= 1.0


def truncate_resonant(
    K2m: PolynomialHamiltonian,
    N: float,
    nu: float | None = None,
) -> tuple[PolynomialHamiltonian, PolynomialHamiltonian, TruncationCertificate]:
    """Split on <mu_3(j)> <= nu N; certify <mu_1(Irr j)> <= N^2 for every retained j."""
    kept, rest = {}, {}
    worst, checked = 0.0, 0
    for j, c in K2m.terms.items():
        m = len(j) // 2
        cut = (nu if nu is not None else 1.0 / (2 * m)) * N
        if len(j) < 3 or j.mu(3) <= cut:
            kept[j] = c
            irr = j.irreducible
            if len(irr):
                checked += 1
                worst = max(worst, irr.mu_max / (N * N))
        else:
            rest[j] = c
    cert = TruncationCertificate(checked, N, worst)
    if not cert.holds:
        raise CertificateError(f"retained monomial has <mu_1(Irr)> = {worst * N * N:.3g} > N^2 = {N * N:.3g}")
    return PolynomialHamiltonian(kept, K2m.window), PolynomialHamiltonian(rest, K2m.window), cert
