"""Exact arithmetic of the (δ, p, q) parameterization.

Dilation ``a = δ^p`` and modulation ``b = δ^q`` share the scale ``δ``, so
``log_b a = p/q`` holds by construction and every dilation that appears in an
MD system is an integer power of ``δ``.
"""

__all__ = (
    "MAX_ORDER",
    "MDParams",
    "BezoutPair",
    "ResidueBijection",
    "RationalInterval",
    "PartitionCertificate",
    "check_coprime",
    "derive_params",
    "unique_bezout",
    "residue_bijection",
    "partition_certificate",
    "structural_matrices",
)

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Final

import mdframe as md
from mdframe.exceptions import (
    DegenerateSetupError,
    IndexOutOfRangeError,
    NonCoprimeError,
    ScaleOutOfRangeError,
)

MAX_ORDER: Final[int] = 64
STRUCTURAL_KINDS: Final[frozenset[str]] = frozenset({"Lq", "Rp", "Um"})


def _check_order(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise TypeError(f"unsupported type {type(value).__name__!r}; expected int")
    if not 1 <= value <= MAX_ORDER:
        raise ValueError(f"{name}={value} outside the range [1, {MAX_ORDER}]")


def check_coprime(p: int, q: int) -> None:
    """Raise unless p and q are coprime orders in [1, MAX_ORDER].

    Examples
    --------
    >>> import mdframe as md
    >>> md.lattice.check_coprime(2, 4)
    Traceback (most recent call last):
    ...
    mdframe.exceptions.NonCoprimeError: p=2 and q=4 are not coprime
    """
    _check_order("p", p)
    _check_order("q", q)
    if math.gcd(p, q) != 1:
        raise NonCoprimeError(p, q)


@dataclass(frozen=True, slots=True)
class MDParams:
    """Dilation a = δ^p and modulation b = δ^q with β = δ^{pq}.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 2, 3)
    >>> params.a, params.b, params.beta, params.bound_gap
    (4.0, 8.0, 64.0, 4.0)
    >>> params.log_b_a
    Fraction(2, 3)
    """

    delta: float
    p: int
    q: int
    a: float = field(init=False)
    b: float = field(init=False)
    beta: float = field(init=False)
    bound_gap: float = field(init=False)

    def __post_init__(self) -> None:
        delta = float(self.delta)
        if not math.isfinite(delta) or delta <= 1:
            raise ScaleOutOfRangeError(f"delta={self.delta!r} must be finite and > 1")
        check_coprime(self.p, self.q)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "a", delta**self.p)
        object.__setattr__(self, "b", delta**self.q)
        object.__setattr__(self, "beta", delta ** (self.p * self.q))
        object.__setattr__(self, "bound_gap", delta ** (self.q - 1))

    @property
    def log_b_a(self) -> Fraction:
        """Return log_b a, which is exactly p/q."""
        return Fraction(self.p, self.q)

    @property
    def period(self) -> int:
        """Return pq, the number of δ-steps in one β-dilation."""
        return self.p * self.q

    @property
    def density_ok(self) -> bool:
        """Return True when log_b a ≤ 1, i.e. p ≤ q."""
        return self.p <= self.q

    @property
    def tight_possible(self) -> bool:
        """Return True when a = b, the only case admitting tight frames."""
        return self.p == self.q == 1

    def power(self, exponent: float) -> float:
        """Return δ raised to the given exponent."""
        return self.delta**exponent


@dataclass(frozen=True, slots=True)
class BezoutPair:
    """The unique (r', s') ∈ [1, q−1] × [1, p−1] with p·r' + q·s' = pq + 1."""

    r_prime: int
    s_prime: int


@dataclass(frozen=True, slots=True)
class ResidueBijection:
    """The map (r, s) ↦ (p·r + q·s) mod pq on N_q × N_p, with its inverse."""

    p: int
    q: int
    forward: Mapping[tuple[int, int], int]
    inverse: Mapping[int, tuple[int, int]]


@dataclass(frozen=True, slots=True)
class RationalInterval:
    """Half-open interval [lo, hi) of [0, 1) claimed by the pair (r, s)."""

    lo: Fraction
    hi: Fraction
    r: int
    s: int

    @property
    def measure(self) -> Fraction:
        return self.hi - self.lo


@dataclass(frozen=True, slots=True)
class PartitionCertificate:
    intervals: tuple[RationalInterval, ...]
    disjoint: bool
    total_measure: Fraction

    @property
    def tiles_unit_interval(self) -> bool:
        """Return True if the intervals partition [0, 1) exactly."""
        return self.disjoint and self.total_measure == 1


def derive_params(delta: float, p: int, q: int) -> MDParams:
    """Return validated MD parameters for the scale δ and coprime orders p, q.

    Examples
    --------
    >>> import mdframe as md
    >>> md.lattice.derive_params(2, 1, 1).bound_gap
    1.0
    """
    return MDParams(delta, p, q)


def unique_bezout(p: int, q: int) -> BezoutPair:
    """Return the unique (r', s') with p·r' + q·s' = pq + 1 and r', s' ≥ 1.

    Examples
    --------
    >>> import mdframe as md
    >>> md.lattice.unique_bezout(2, 3)
    BezoutPair(r_prime=2, s_prime=1)
    >>> md.lattice.unique_bezout(3, 5)
    BezoutPair(r_prime=2, s_prime=2)
    """
    check_coprime(p, q)
    if p == 1 or q == 1:
        raise DegenerateSetupError(f"unique_bezout requires p, q > 1; got {p=}, {q=}")
    # p·r' ≡ 1 (mod q) fixes r' in N_q, the identity then fixes s'
    r_prime = pow(p, -1, q)
    s_prime, remainder = divmod(p * q + 1 - p * r_prime, q)
    if remainder != 0 or not 1 <= s_prime <= p - 1:
        raise ArithmeticError(f"no Bezout pair in range for {p=}, {q=}")
    return BezoutPair(r_prime, s_prime)


def residue_bijection(p: int, q: int) -> ResidueBijection:
    """Return the bijection N_q × N_p → N_{pq}, (r, s) ↦ (pr + qs) mod pq.

    Examples
    --------
    >>> import mdframe as md
    >>> bij = md.lattice.residue_bijection(2, 3)
    >>> [bij.forward[r, s] for s in range(2) for r in range(3)]
    [0, 2, 4, 3, 5, 1]
    """
    check_coprime(p, q)
    period = p * q
    forward = {
        (r, s): (p * r + q * s) % period for s in range(p) for r in range(q)
    }
    inverse = {residue: pair for pair, residue in forward.items()}
    if len(inverse) != period:
        raise ArithmeticError(f"residue map is not injective for {p=}, {q=}")
    return ResidueBijection(
        p, q, MappingProxyType(forward), MappingProxyType(inverse)
    )


def partition_certificate(p: int, q: int) -> PartitionCertificate:
    """Return the log_β images of the cells a^r b^s [1, δ) as exact intervals.

    Each interval is (r/q + s/p + [0, 1/pq)) mod 1. Disjointness and the total
    measure are checked on integer numerators over the common denominator pq.

    Examples
    --------
    >>> import mdframe as md
    >>> cert = md.lattice.partition_certificate(2, 3)
    >>> [str(iv.lo) for iv in cert.intervals]
    ['0', '1/6', '1/3', '1/2', '2/3', '5/6']
    >>> cert.tiles_unit_interval
    True
    """
    bijection = residue_bijection(p, q)
    period = p * q
    numerators = sorted(bijection.inverse)
    intervals = tuple(
        RationalInterval(
            Fraction(k, period), Fraction(k + 1, period), *bijection.inverse[k]
        )
        for k in numerators
    )
    # consecutive integer numerators starting at 0 means no overlap and no gap
    disjoint = all(a + 1 == b for a, b in zip(numerators, numerators[1:]))
    total = sum((iv.measure for iv in intervals), Fraction(0))
    return PartitionCertificate(intervals, disjoint and numerators[0] == 0, total)


def _block_shift(
    size: int, k: int, corner: "md.linalg.LaurentPoly"
) -> "md.linalg.LaurentMatrix":
    """Return [[0, I_{size-k}], [corner·I_k, 0]]."""
    one = md.linalg.LaurentPoly.constant(1)
    zero = md.linalg.LaurentPoly.zero()
    rows = [[zero] * size for _ in range(size)]
    for r in range(size):
        if r < size - k:
            rows[r][r + k] = one
        else:
            rows[r][r - (size - k)] = corner
    return md.linalg.LaurentMatrix.from_rows(rows)


def structural_matrices(
    params: MDParams, kind: str, m: int | None = None
) -> "md.linalg.LaurentMatrix":
    """Return L_q, R_p or U_m as a Laurent matrix in z = e^{2πiξ}.

    Examples
    --------
    >>> import mdframe as md
    >>> params = md.lattice.derive_params(2, 2, 3)
    >>> rp = md.lattice.structural_matrices(params, "Rp")
    >>> rp.shape
    (2, 2)
    >>> rp[1, 0].to_pairs()
    [[-1, 1.0, 0.0]]
    """
    if kind not in STRUCTURAL_KINDS:
        message = f"invalid choice {kind!r}; expected a value from {STRUCTURAL_KINDS!r}"
        raise ValueError(message)

    z = md.linalg.LaurentPoly.monomial(1)
    if kind == "Um":
        if m is None or not 0 <= m < params.q:
            raise IndexOutOfRangeError(f"m={m!r} outside N_q with q={params.q}")
        return _block_shift(params.q, m, z)

    if params.p == 1 or params.q == 1:
        raise DegenerateSetupError(
            f"{kind} requires p, q > 1; got p={params.p}, q={params.q}"
        )
    pair = unique_bezout(params.p, params.q)
    if kind == "Lq":
        return _block_shift(params.q, pair.r_prime, z)
    return _block_shift(params.p, params.p - pair.s_prime, z.conj_reflect())
