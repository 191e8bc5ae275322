"""RSA accumulator over a group of unknown order.

Group elements, prime representatives and exponents are plain Python ints;
heavy modular arithmetic goes through gmpy2. The accumulator value for a set
of primes U_1..U_m is g ** (U_1 * ... * U_m) mod N.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Hashable, Iterable, Mapping, Sequence

import gmpy2

from .encoding import enc_int

# RSA Factoring Challenge modulus; nobody is known to hold its factorization.
RSA_2048 = 25195908475657893494027183240048398571429282126204032027777137836043662020707595556264018525880784406918290641249515082189298559149176184502808489120072844992687392807287776735971418347270261896375014971824691165077613379859095700097330459748808428401797429100642458691817195118746121515172654632282216869987549182422433637259085141865462043576798423387184774447920739934236584823824281198163815010674810451660377306056201619676256133844143603833904414952634432190114657544454178424020924616515723350778707749817125772467962926386356373289912154831438167899885040445364023527381951378636564391212010397122822120720357

DEFAULT_PRIME_BITS = 256
MR_ROUNDS = 64
MAX_PRIME_CANDIDATES = 1 << 16


class AccumulatorError(Exception):
    pass


class MembershipError(AccumulatorError):
    """Requested a witness for an element that is not accumulated."""


class CoprimalityError(AccumulatorError):
    pass


class InvalidWitnessError(AccumulatorError):
    def __init__(self, element: int, message: str = ""):
        self.element = element
        super().__init__(message or f"witness for element {element} does not verify")


class IntegrityError(AccumulatorError):
    """A value shares a factor with the modulus; the group setup is broken."""


class PrimeSearchError(AccumulatorError):
    pass


@dataclass(frozen=True)
class GroupParams:
    modulus: int
    generator: int
    mode: str = "production"
    factors: tuple[int, ...] | None = None
    prime_bits: int = DEFAULT_PRIME_BITS

    def __post_init__(self):
        if self.mode not in ("production", "test"):
            raise ValueError(f"unknown group mode {self.mode!r}")
        if not 2 <= self.generator <= self.modulus - 2:
            raise ValueError("generator must lie in [2, N-2]")
        if math.gcd(self.generator, self.modulus) != 1:
            raise IntegrityError("generator is not a unit modulo N")
        if self.mode == "test":
            if not self.factors or math.prod(self.factors) != self.modulus:
                raise ValueError("test mode requires the factorization of N")

    @classmethod
    def production(cls) -> "GroupParams":
        return cls(RSA_2048, 3)

    @classmethod
    def test(cls) -> "GroupParams":
        """N = 3233 = 53 * 61, g = 2. Only useful with raw small primes."""
        return cls(3233, 2, mode="test", factors=(53, 61))

    @classmethod
    def test_medium(cls) -> "GroupParams":
        """1024-bit modulus with recorded factors, for fast but realistic tests."""
        return _medium_params()

    @property
    def carmichael(self) -> int:
        """lambda(N); only available when the factors are known."""
        if self.factors is None:
            raise AccumulatorError("order of the group is unknown")
        out = 1
        for p in self.factors:
            out = math.lcm(out, p - 1)
        return out

    @property
    def element_bytes(self) -> int:
        return (self.modulus.bit_length() + 7) // 8


@lru_cache(maxsize=None)
def _medium_params() -> GroupParams:
    p = hash_to_prime(b"secureprune/test-modulus/p", 512)
    q = hash_to_prime(b"secureprune/test-modulus/q", 512)
    return GroupParams(p * q, 3, mode="test", factors=(p, q))


# -- primality and prime representatives ------------------------------------

def _small_primes(limit: int) -> list[int]:
    sieve = bytearray([1]) * (limit + 1)
    sieve[0:2] = b"\x00\x00"
    for i in range(2, math.isqrt(limit) + 1):
        if sieve[i]:
            sieve[i * i::i] = bytearray(len(sieve[i * i::i]))
    return [i for i, flag in enumerate(sieve) if flag]


_SMALL_PRIMES = _small_primes(2000)


def is_probable_prime(n: int, rounds: int = MR_ROUNDS) -> bool:
    """Miller-Rabin with bases drawn deterministically from n."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    rng = random.Random(n)
    mn = gmpy2.mpz(n)
    for _ in range(rounds):
        x = gmpy2.powmod(rng.randrange(2, n - 1), d, mn)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = gmpy2.powmod(x, 2, mn)
            if x == n - 1:
                break
        else:
            return False
    return True


def hash_to_prime_uncached(data: bytes, bit_length: int = DEFAULT_PRIME_BITS) -> int:
    if not data:
        raise ValueError("hash_to_prime needs non-empty input")
    if bit_length < 16:
        raise ValueError("bit_length must be at least 16")
    nbytes = (bit_length + 7) // 8
    shift = nbytes * 8 - bit_length
    top = 1 << (bit_length - 1)
    for counter in range(MAX_PRIME_CANDIDATES):
        digest = hashlib.shake_256(data + counter.to_bytes(4, "big")).digest(nbytes)
        candidate = (int.from_bytes(digest, "big") >> shift) | top | 1
        if is_probable_prime(candidate):
            return candidate
    raise PrimeSearchError(f"no prime among {MAX_PRIME_CANDIDATES} candidates")


hash_to_prime = lru_cache(maxsize=1 << 17)(hash_to_prime_uncached)


# -- group helpers ----------------------------------------------------------

def _powmod(params: GroupParams, base: int, e: int) -> int:
    if e < 0:
        try:
            base = int(gmpy2.invert(base, params.modulus))
        except ZeroDivisionError:
            raise IntegrityError(f"{base} is not invertible modulo N") from None
        e = -e
    return int(gmpy2.powmod(base, e, params.modulus))


def is_element(params: GroupParams, v) -> bool:
    return (isinstance(v, int) and 1 <= v < params.modulus
            and math.gcd(v, params.modulus) == 1)


def accumulate(params: GroupParams, primes: Iterable[int], base: int | None = None) -> int:
    """base ** prod(primes); base defaults to the generator."""
    return _powmod(params, params.generator if base is None else base, math.prod(primes))


def acc_empty(params: GroupParams) -> int:
    return params.generator


# -- witnesses --------------------------------------------------------------

@dataclass(frozen=True)
class MembershipWitness:
    element: int
    w: int


WitnessTable = Mapping[Hashable, MembershipWitness]


def mem_witness(params: GroupParams, primes: Iterable[int], target: int) -> MembershipWitness:
    primes = list(primes)
    if target not in primes:
        raise MembershipError(f"{target} is not in the accumulated set")
    rest = [p for p in primes if p != target]
    return MembershipWitness(target, accumulate(params, rest))


def verify_membership(params: GroupParams, A: int, target: int, w) -> bool:
    if isinstance(w, MembershipWitness):
        w = w.w
    if not is_element(params, w) or target < 1:
        return False
    return _powmod(params, w, target) == A


def shamir_trick(params: GroupParams, w_x: int, w_y: int, x: int, y: int, A: int,
                 check: bool = True) -> int:
    """Combine an x-th and a y-th root of A into an (x*y)-th root."""
    g, a, b = gmpy2.gcdext(x, y)
    if g != 1:
        raise CoprimalityError(f"gcd({x}, {y}) = {int(g)}")
    if check:
        if _powmod(params, w_x, x) != A:
            raise InvalidWitnessError(x)
        if _powmod(params, w_y, y) != A:
            raise InvalidWitnessError(y)
    # a*x + b*y = 1  =>  (w_x^b * w_y^a)^(xy) = A^(b*y + a*x) = A
    return _powmod(params, w_x, int(b)) * _powmod(params, w_y, int(a)) % params.modulus


def agg_mem_wit(params: GroupParams, witnesses: Sequence[tuple[int, int]], A: int) -> int:
    if not witnesses:
        raise ValueError("nothing to aggregate")
    for p, w in witnesses:
        if not verify_membership(params, A, p, w):
            raise InvalidWitnessError(p)
    prod, agg = witnesses[0]
    for p, w in witnesses[1:]:
        agg = shamir_trick(params, agg, w, prod, p, A, check=False)
        prod *= p
    return agg


def _root_factor(params: GroupParams, base: int, primes: Sequence[int]) -> list[int]:
    # base ** prod(primes without primes[i]) for every i, in O(n log n) exponentiations
    if len(primes) <= 1:
        return [base] * len(primes)
    mid = len(primes) // 2
    left, right = primes[:mid], primes[mid:]
    return (_root_factor(params, accumulate(params, right, base), left)
            + _root_factor(params, accumulate(params, left, base), right))


def witnesses_for_added(params: GroupParams, A_prime: int,
                        added_primes: Sequence[int]) -> dict[int, MembershipWitness]:
    added_primes = list(added_primes)
    ws = _root_factor(params, A_prime, added_primes)
    return {p: MembershipWitness(p, w) for p, w in zip(added_primes, ws)}


def witnesses_from_scratch(params: GroupParams, primes: Sequence[int]) -> dict[int, MembershipWitness]:
    return witnesses_for_added(params, params.generator, primes)


def update_witnesses_after_delete(params: GroupParams, A_prime: int, table: WitnessTable,
                                  deleted_primes: Iterable[int]) -> dict:
    deleted = list(deleted_primes)
    if not deleted:
        return dict(table)
    x = math.prod(deleted)
    gone = set(deleted)
    out = {}
    for key, mw in table.items():
        if mw.element in gone:
            continue
        out[key] = MembershipWitness(
            mw.element, shamir_trick(params, A_prime, mw.w, x, mw.element, None, check=False))
    return out


def update_witnesses_after_add(params: GroupParams, table: WitnessTable,
                               added_primes: Iterable[int]) -> dict:
    x = math.prod(added_primes)
    if x == 1:
        return dict(table)
    return {key: MembershipWitness(mw.element, _powmod(params, mw.w, x))
            for key, mw in table.items()}


# -- non-interactive proof of exponentiation --------------------------------

@dataclass(frozen=True)
class NiPoeProof:
    Q: int


def fs_transcript(u: int, x: int, w: int) -> bytes:
    return enc_int(u) + enc_int(x) + enc_int(w)


@lru_cache(maxsize=4096)
def _fs_prime_cached(transcript: bytes, bits: int) -> int:
    return hash_to_prime_uncached(transcript, bits)


def fs_prime(params: GroupParams, u: int, x: int, w: int, cached: bool = True) -> int:
    transcript = fs_transcript(u, x, w)
    if cached:
        return _fs_prime_cached(transcript, params.prime_bits)
    return hash_to_prime_uncached(transcript, params.prime_bits)


def nipoe_prove(params: GroupParams, u: int, x: int, w: int) -> NiPoeProof:
    """Wesolowski-style proof that u ** x == w."""
    ell = fs_prime(params, u, x, w)
    return NiPoeProof(_powmod(params, u, x // ell))


def nipoe_verify(params: GroupParams, x: int, u: int, w: int, proof: NiPoeProof,
                 cached: bool = True) -> bool:
    try:
        Q = proof.Q
    except AttributeError:
        return False
    if not (isinstance(x, int) and x >= 1):
        return False
    if not (is_element(params, u) and is_element(params, w) and is_element(params, Q)):
        return False
    ell = fs_prime(params, u, x, w, cached=cached)
    return _powmod(params, Q, ell) * _powmod(params, u, x % ell) % params.modulus == w


# -- batch updates ----------------------------------------------------------

def batch_add(params: GroupParams, A: int, added_primes: Iterable[int]) -> tuple[int, NiPoeProof]:
    x = math.prod(added_primes)
    A_new = _powmod(params, A, x)
    return A_new, nipoe_prove(params, A, x, A_new)


def batch_del(params: GroupParams, A: int,
              deleted: Sequence[tuple[int, int]]) -> tuple[int, NiPoeProof]:
    """Remove elements given (prime, witness) pairs.

    Returns the intermediate accumulator A' (the aggregated witness of the
    deleted elements) and a proof that A' ** prod(primes) == A.
    """
    deleted = [(p, w.w if isinstance(w, MembershipWitness) else w) for p, w in deleted]
    if not deleted:
        return A, nipoe_prove(params, A, 1, A)
    A_prime = agg_mem_wit(params, deleted, A)
    return A_prime, nipoe_prove(params, A_prime, math.prod(p for p, _ in deleted), A)
