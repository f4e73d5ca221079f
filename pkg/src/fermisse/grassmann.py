"""Exact Berezin calculus over a finite set of anticommuting generators.

The algebra has 2K generators in the fixed canonical order

    xi_1 < xi*_1 < xi_2 < xi*_2 < ... < xi_K < xi*_K

indexed 0..2K-1 (even index = xi_k, odd index = xi*_k).  An element is a
sparse map from a monomial bitmask to a coefficient; every monomial is kept
in canonical ascending order, and all sign bookkeeping happens in the
product/derivative routines.  Coefficients may be complex scalars or numpy
arrays, which lets the same engine carry operator- or vector-valued
elements (payloads commute with the generators; matrix payloads compose
with ``@`` when elements are multiplied).

Conventions pinned down here and relied on elsewhere:

* Berezin integration is left differentiation: int dxi x = d_xi x.
* The Gaussian measure is prod_k dxi*_k dxi_k exp(-xi*_k xi_k), applied
  innermost-first per mode; with it, M[1] = 1 and M[xi_k xi*_k] = 1.
* ``gaussian_average`` therefore reduces to summing the coefficients of
  the pair-complete monomials (both bits of each mode set or neither).
* The parity flip negates every odd-degree monomial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GrassmannAlgebra",
    "GrassmannElement",
    "GrassmannParityError",
    "coherent_state",
    "outer_product",
    "verify_completeness",
    "verify_novikov",
]


class GrassmannParityError(ValueError):
    """Raised when an identity requires an even element and got an odd one."""


def _merge_sign(a: int, b: int) -> int:
    """Sign of reordering the concatenation of canonical monomials a, b."""
    sign = 1
    bb = b
    while bb:
        low = bb & -bb
        # generators of a strictly above this bit each contribute one swap
        if (a >> low.bit_length()).bit_count() & 1:
            sign = -sign
        bb ^= low
    return sign


def _is_zero(coeff) -> bool:
    if isinstance(coeff, np.ndarray):
        return not np.any(coeff)
    return coeff == 0


def _combine(a, b):
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        return a @ b
    return a * b


@dataclass(frozen=True)
class GrassmannAlgebra:
    """Finite Grassmann algebra over n_modes conjugate generator pairs."""

    n_modes: int
    max_modes: int = 6

    def __post_init__(self):
        if not 1 <= self.n_modes <= self.max_modes:
            raise ValueError(
                f"n_modes must be within [1, {self.max_modes}], got {self.n_modes}"
            )

    @property
    def n_generators(self) -> int:
        return 2 * self.n_modes

    def xi_index(self, k: int) -> int:
        """Generator index of xi_k (modes counted from 0)."""
        self._check_mode(k)
        return 2 * k

    def xis_index(self, k: int) -> int:
        """Generator index of xi*_k."""
        self._check_mode(k)
        return 2 * k + 1

    def _check_mode(self, k: int) -> None:
        if not 0 <= k < self.n_modes:
            raise ValueError(f"mode {k} outside [0, {self.n_modes})")

    def zero(self) -> "GrassmannElement":
        return GrassmannElement(self, {})

    def one(self, payload=1.0 + 0.0j) -> "GrassmannElement":
        return GrassmannElement(self, {0: payload})

    def generator(self, index: int) -> "GrassmannElement":
        if not 0 <= index < self.n_generators:
            raise ValueError(f"generator index {index} out of range")
        return GrassmannElement(self, {1 << index: 1.0 + 0.0j})

    def xi(self, k: int) -> "GrassmannElement":
        return self.generator(self.xi_index(k))

    def xis(self, k: int) -> "GrassmannElement":
        return self.generator(self.xis_index(k))

    def from_terms(self, terms: dict) -> "GrassmannElement":
        out = {}
        for mask, coeff in terms.items():
            if not _is_zero(coeff):
                out[int(mask)] = coeff
        return GrassmannElement(self, out)

    def gaussian_weight(self) -> "GrassmannElement":
        """exp(-sum_k xi*_k xi_k) = prod_k (1 + xi_k xi*_k)."""
        w = self.one()
        for k in range(self.n_modes):
            pair = 1 << self.xi_index(k) | 1 << self.xis_index(k)
            w = w * GrassmannElement(self, {0: 1.0 + 0.0j, pair: 1.0 + 0.0j})
        return w

    def measure_order(self) -> list[int]:
        """Generator list of prod_k dxi*_k dxi_k (innermost last per pair)."""
        order = []
        for k in range(self.n_modes):
            order.extend([self.xis_index(k), self.xi_index(k)])
        return order


class GrassmannElement:
    """Sparse Grassmann polynomial with scalar or array coefficients."""

    __slots__ = ("algebra", "terms")

    def __init__(self, algebra: GrassmannAlgebra, terms: dict):
        self.algebra = algebra
        self.terms = terms

    # -- ring structure -------------------------------------------------

    def __add__(self, other: "GrassmannElement") -> "GrassmannElement":
        self._check_same(other)
        out = dict(self.terms)
        for mask, coeff in other.terms.items():
            if mask in out:
                s = out[mask] + coeff
                if _is_zero(s):
                    del out[mask]
                else:
                    out[mask] = s
            else:
                out[mask] = coeff
        return GrassmannElement(self.algebra, out)

    def __sub__(self, other: "GrassmannElement") -> "GrassmannElement":
        return self + (-1.0) * other

    def __rmul__(self, scalar) -> "GrassmannElement":
        if _is_zero(scalar):
            return self.algebra.zero()
        return GrassmannElement(
            self.algebra, {m: scalar * c for m, c in self.terms.items()}
        )

    def __mul__(self, other):
        if isinstance(other, GrassmannElement):
            return self._product(other)
        return other * self  # scalar on the right

    def _product(self, other: "GrassmannElement") -> "GrassmannElement":
        self._check_same(other)
        out = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                if ma & mb:
                    continue  # repeated generator: nilpotent
                mask = ma | mb
                coeff = _merge_sign(ma, mb) * _combine(ca, cb)
                if mask in out:
                    s = out[mask] + coeff
                    if _is_zero(s):
                        del out[mask]
                    else:
                        out[mask] = s
                elif not _is_zero(coeff):
                    out[mask] = coeff
        return GrassmannElement(self.algebra, out)

    def _check_same(self, other: "GrassmannElement") -> None:
        if other.algebra.n_modes != self.algebra.n_modes:
            raise ValueError("elements live over different generator sets")

    # -- payload operations ---------------------------------------------

    def apply(self, mat: np.ndarray) -> "GrassmannElement":
        """Apply a payload operator from the left on every coefficient."""
        return GrassmannElement(
            self.algebra, {m: mat @ c for m, c in self.terms.items()}
        )

    def map_coeffs(self, fn) -> "GrassmannElement":
        out = {}
        for m, c in self.terms.items():
            v = fn(c)
            if not _is_zero(v):
                out[m] = v
        return GrassmannElement(self.algebra, out)

    # -- calculus ---------------------------------------------------------

    def left_derivative(self, gen: int) -> "GrassmannElement":
        """Left derivative with respect to generator index ``gen``."""
        if not 0 <= gen < self.algebra.n_generators:
            raise ValueError(f"unknown generator {gen}")
        bit = 1 << gen
        out = {}
        for mask, coeff in self.terms.items():
            if not mask & bit:
                continue
            sign = -1 if (mask & (bit - 1)).bit_count() & 1 else 1
            out[mask ^ bit] = sign * coeff
        return GrassmannElement(self.algebra, out)

    def right_derivative(self, gen: int) -> "GrassmannElement":
        if not 0 <= gen < self.algebra.n_generators:
            raise ValueError(f"unknown generator {gen}")
        bit = 1 << gen
        out = {}
        for mask, coeff in self.terms.items():
            if not mask & bit:
                continue
            sign = -1 if (mask >> (gen + 1)).bit_count() & 1 else 1
            out[mask ^ bit] = sign * coeff
        return GrassmannElement(self.algebra, out)

    def berezin_integrate(self, over: list[int]) -> "GrassmannElement":
        """Iterated Berezin integral; the last generator listed acts first."""
        if len(set(over)) != len(over):
            raise ValueError("integration generators must be distinct")
        out = self
        for gen in reversed(over):
            out = out.left_derivative(gen)
        return out

    def gaussian_average(self):
        """Average against the Gaussian measure over all generators.

        Equal to multiplying by the Gaussian weight and Berezin-integrating
        every generator in measure order; on canonical monomials only the
        pair-complete masks survive with unit sign, so the average is the
        plain sum of their coefficients.
        """
        total = None
        for mask, coeff in self.terms.items():
            even = mask & _EVEN_BITS
            if even == (mask >> 1) & _EVEN_BITS:
                total = coeff if total is None else total + coeff
        if total is None:
            return 0.0 + 0.0j
        return total

    def gaussian_average_definitional(self):
        """Reference route: weight multiplication plus full Berezin integral."""
        weighted = self._product(self.algebra.gaussian_weight())
        res = weighted.berezin_integrate(self.algebra.measure_order())
        return res.terms.get(0, 0.0 + 0.0j)

    # -- structure queries ------------------------------------------------

    def parity_flip(self) -> "GrassmannElement":
        """Negate every odd-degree monomial (xi -> -xi on all generators)."""
        return GrassmannElement(
            self.algebra,
            {
                m: (-c if m.bit_count() & 1 else c)
                for m, c in self.terms.items()
            },
        )

    def monomial_parity(self) -> int | None:
        """+1/-1 for homogeneous even/odd elements, None when mixed or zero."""
        parities = {(-1) ** (m.bit_count() & 1) for m in self.terms}
        if len(parities) == 1:
            return parities.pop()
        return None

    def adjoint(self) -> "GrassmannElement":
        """Hermitian adjoint: conjugate payloads, conjugate-partner monomials.

        A monomial g_{i1}..g_{ip} maps to g*_{ip}..g*_{i1}; the reversal
        contributes (-1)^(p(p-1)/2) once the result is put back in canonical
        order.
        """
        out = {}
        for mask, coeff in self.terms.items():
            even = mask & _EVEN_BITS
            odd = mask & _ODD_BITS
            partner = (even << 1) | (odd >> 1)
            p = mask.bit_count()
            sign = -1 if (p * (p - 1) // 2) & 1 else 1
            if isinstance(coeff, np.ndarray):
                c = np.conj(coeff).T if coeff.ndim == 2 else np.conj(coeff)
            else:
                c = np.conj(coeff)
            out[partner] = sign * c
        return GrassmannElement(self.algebra, out)

    def max_abs(self) -> float:
        """Largest coefficient magnitude (payloads measured entrywise)."""
        worst = 0.0
        for coeff in self.terms.values():
            if isinstance(coeff, np.ndarray):
                worst = max(worst, float(np.max(np.abs(coeff))))
            else:
                worst = max(worst, abs(coeff))
        return worst

    def prune(self, tol: float = 0.0) -> "GrassmannElement":
        return GrassmannElement(
            self.algebra,
            {m: c for m, c in self.terms.items() if not _is_zero(c) and (
                tol == 0.0 or (np.max(np.abs(c)) if isinstance(c, np.ndarray) else abs(c)) > tol
            )},
        )

    def dump(self) -> str:
        """Debug listing of monomials in canonical order with coefficients."""
        lines = []
        for mask in sorted(self.terms):
            names = []
            m = mask
            while m:
                low = m & -m
                idx = low.bit_length() - 1
                k = idx // 2 + 1
                names.append(f"xi{k}*" if idx & 1 else f"xi{k}")
                m ^= low
            label = "1" if not names else " ".join(names)
            lines.append(f"{label}: {self.terms[mask]}")
        return "\n".join(lines)


_EVEN_BITS = int("5" * 64, 16)  # bits 0, 2, 4, ... set
_ODD_BITS = _EVEN_BITS << 1


def coherent_state(algebra: GrassmannAlgebra) -> GrassmannElement:
    """Reservoir coherent state as a Fock-vector-valued element.

    Built as prod_k (1 + xi_k b_k^dag) |vac> with Jordan-Wigner matrices for
    the b_k; in this payload convention the eigen-relation b_j |xi> =
    xi_j |xi> holds with xi_j acting by left multiplication.
    """
    K = algebra.n_modes
    dim = 2**K
    vac = np.zeros(dim, dtype=complex)
    vac[0] = 1.0
    elem = GrassmannElement(algebra, {0: vac})
    for k in range(K - 1, -1, -1):
        bdag = jw_matrix(K, k).conj().T
        elem = elem + algebra.xi(k) * elem.apply(bdag)
    return elem


def jw_matrix(n_modes: int, k: int) -> np.ndarray:
    """Dense Jordan-Wigner annihilation matrix for mode k of n_modes."""
    sigma_minus = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    sigma_z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    out = np.array([[1.0]], dtype=complex)
    for j in range(n_modes):
        if j < k:
            out = np.kron(out, sigma_z)
        elif j == k:
            out = np.kron(out, sigma_minus)
        else:
            out = np.kron(out, eye)
    return out


def outer_product(ket: GrassmannElement, bra_source: GrassmannElement) -> GrassmannElement:
    """Operator-valued element |ket><bra_source| from two vector-valued ones.

    The bra side is the adjoint of ``bra_source``: payload vectors become
    conjugated row factors and monomials their reversed conjugate partners.
    """
    algebra = ket.algebra
    bra = bra_source.adjoint()
    out = algebra.zero()
    for ma, va in ket.terms.items():
        for mb, wb in bra.terms.items():
            if ma & mb:
                continue
            mask = ma | mb
            sign = _merge_sign(ma, mb)
            payload = sign * np.outer(va, wb)
            term = GrassmannElement(algebra, {mask: payload})
            out = out + term
    return out


def verify_completeness(K: int) -> float:
    """Max deviation of the coherent-state resolution of identity from I."""
    if not 1 <= K <= 4:
        raise ValueError(f"completeness check supports 1 <= K <= 4, got {K}")
    algebra = GrassmannAlgebra(K)
    coh = coherent_state(algebra)
    proj = outer_product(coh, coh)
    avg = proj.gaussian_average()
    return float(np.max(np.abs(avg - np.eye(2**K))))


def _payload_parity(coeff, parity_matrix: np.ndarray | None) -> int | None:
    if not isinstance(coeff, np.ndarray):
        return 1
    if parity_matrix is None:
        return None
    transformed = parity_matrix @ coeff @ parity_matrix
    if np.allclose(transformed, coeff, atol=1e-12):
        return 1
    if np.allclose(transformed, -coeff, atol=1e-12):
        return -1
    return None


def require_even(element: GrassmannElement, parity_matrix: np.ndarray | None = None) -> None:
    """Check that every term has even combined (payload x monomial) parity."""
    for mask, coeff in element.terms.items():
        mono = -1 if mask.bit_count() & 1 else 1
        pay = _payload_parity(coeff, parity_matrix)
        if pay is None:
            if mono == 1 and parity_matrix is None:
                continue
            raise GrassmannParityError(
                "payload parity indefinite; supply the fermion parity matrix"
            )
        if mono * pay != 1:
            raise GrassmannParityError(
                f"odd-parity term (monomial mask {mask:b}); the noise-average "
                "identities assume an even state"
            )


def verify_novikov(
    P: GrassmannElement,
    couplings: np.ndarray,
    omegas: np.ndarray,
    t: float,
    parity_matrix: np.ndarray | None = None,
    mode_offset: int = 0,
) -> tuple[float, float]:
    """Residuals of the left/right noise-average identities on element P.

    Left type moves xi*_t out of the average onto a right derivative of P;
    right type moves xi_t onto a left derivative.  Time integrals reduce to
    exact mode sums through the chain rule, so both sides are evaluated with
    no quadrature error.
    """
    require_even(P, parity_matrix)
    algebra = P.algebra
    couplings = np.asarray(couplings, dtype=float)
    omegas = np.asarray(omegas, dtype=float)

    # left type: M[xi*_t P] = - sum_k (d xi*_t / d xi*_k) M[P <-d_(xi_k)]
    noise_conj = algebra.zero()
    for k, (tk, wk) in enumerate(zip(couplings, omegas)):
        c = -1j * tk * np.exp(1j * wk * t)
        noise_conj = noise_conj + c * algebra.xis(mode_offset + k)
    lhs_left = (noise_conj * P).gaussian_average()
    rhs_left = None
    for k, (tk, wk) in enumerate(zip(couplings, omegas)):
        c = -1j * tk * np.exp(1j * wk * t)
        term = c * P.right_derivative(algebra.xi_index(mode_offset + k)).gaussian_average()
        rhs_left = term if rhs_left is None else rhs_left + term
    res_left = float(np.max(np.abs(lhs_left - (-rhs_left))))

    # right type: M[P xi_t] = - sum_k (d xi_t / d xi_k) M[d->_(xi*_k) P]
    noise = algebra.zero()
    for k, (tk, wk) in enumerate(zip(couplings, omegas)):
        c = 1j * tk * np.exp(-1j * wk * t)
        noise = noise + c * algebra.xi(mode_offset + k)
    lhs_right = (P * noise).gaussian_average()
    rhs_right = None
    for k, (tk, wk) in enumerate(zip(couplings, omegas)):
        c = 1j * tk * np.exp(-1j * wk * t)
        term = c * P.left_derivative(algebra.xis_index(mode_offset + k)).gaussian_average()
        rhs_right = term if rhs_right is None else rhs_right + term
    res_right = float(np.max(np.abs(lhs_right - (-rhs_right))))
    return res_left, res_right
