"""Word-sized modular arithmetic and negacyclic NTTs over power-of-two rings.

The ciphertext modulus q is a 60-bit pseudo-Mersenne prime (q = 2^60 - delta)
so that products can be reduced with shifts, multiplies and adds only, and so
that up to 16 unreduced 60-bit sums fit in a 64-bit lane before a reduction is
needed.  The plaintext modulus p is at most 31 bits and is reduced with
Barrett's method.  Both paths have a vectorised numpy backend (the "fast"
backend) and an arbitrary-precision division backend (the "naive" backend)
that doubles as the correctness oracle.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MASK60 = np.uint64((1 << 60) - 1)
MASK32 = np.uint64(0xFFFFFFFF)
MASK30 = np.uint64((1 << 30) - 1)
_U1 = np.uint64(1)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_U32 = np.uint64(32)
_U60 = np.uint64(60)

# Witnesses sufficient for deterministic Miller-Rabin below 3.3 * 10^24,
# which covers every 64-bit integer.
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
_SMALL_PRIMES = (3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59,
                 61, 67, 71, 73, 79, 83, 89, 97)


class SearchExhausted(Exception):
    """Raised when the prime-pair search runs out of candidates."""


def is_prime(x: int) -> bool:
    """Deterministic Miller-Rabin primality test for integers < 2^64."""
    if x < 2:
        return False
    if x == 2:
        return True
    if x % 2 == 0:
        return False
    for sp in _SMALL_PRIMES:
        if x == sp:
            return True
        if x % sp == 0:
            return False
    d = x - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_WITNESSES:
        if a >= x:
            continue
        v = pow(a, d, x)
        if v == 1 or v == x - 1:
            continue
        for _ in range(s - 1):
            v = v * v % x
            if v == x - 1:
                break
        else:
            return False
    return True


# ---------------------------------------------------------------------------
# Moduli
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModulusQ:
    """60-bit pseudo-Mersenne ciphertext modulus q = 2^60 - delta."""

    q: int
    delta: int

    def __post_init__(self):
        if self.q != (1 << 60) - self.delta:
            raise ValueError("q must equal 2^60 - delta")
        if self.delta * self.delta >= self.q:
            raise ValueError("delta must stay below sqrt(q)")
        if not is_prime(self.q):
            raise ValueError("q must be prime")

    @classmethod
    def from_prime(cls, q: int) -> "ModulusQ":
        return cls(q=q, delta=(1 << 60) - q)


@dataclass(frozen=True)
class ModulusP:
    """Plaintext modulus (<= 31 bits) with Barrett constants.

    ``barrett_fast`` marks moduli where 3*floor(log2 p) < 64, i.e. where the
    whole Barrett product fits one 64-bit multiply.  Wider p falls back to an
    emulated high-half multiply; both stay division free.
    """

    p: int
    shift: int = field(init=False)
    mu: int = field(init=False)
    mu64: int = field(init=False)
    barrett_fast: bool = field(init=False)

    def __post_init__(self):
        if not is_prime(self.p):
            raise ValueError("p must be prime")
        if self.p.bit_length() > 31:
            raise ValueError("p must fit in 31 bits")
        bits = self.p.bit_length()
        object.__setattr__(self, "shift", 2 * bits)
        object.__setattr__(self, "mu", (1 << (2 * bits)) // self.p)
        object.__setattr__(self, "mu64", (1 << 64) // self.p)
        object.__setattr__(self, "barrett_fast", 3 * (bits - 1) < 64 and 3 * bits + 1 <= 64)


def reduce_q(x: int, mod: ModulusQ) -> int:
    """Reduce a lazy 64-bit value mod q using 2^60 = delta folds only."""
    if x < 0 or x >= (1 << 64):
        raise ValueError("input must be an unsigned 64-bit value")
    z = (x >> 60) * mod.delta + (x & ((1 << 60) - 1))
    # One more fold handles the largest carries, then a single subtract.
    z = (z >> 60) * mod.delta + (z & ((1 << 60) - 1))
    if z >= mod.q:
        z -= mod.q
    if z >= mod.q:
        z -= mod.q
    return z


def reduce_p(x: int, mod: ModulusP) -> int:
    """Barrett reduction of an unsigned 64-bit value mod p."""
    if x < 0 or x >= (1 << 64):
        raise ValueError("input must be an unsigned 64-bit value")
    qhat = (x * mod.mu64) >> 64
    r = x - qhat * mod.p
    while r >= mod.p:
        r -= mod.p
    return r


# ---------------------------------------------------------------------------
# Vectorised helpers (uint64 lanes)
# ---------------------------------------------------------------------------

def _mulmod_q_vec(a: np.ndarray, b: np.ndarray, mod: ModulusQ) -> np.ndarray:
    """Product of reduced residues mod q via 30-bit limbs and delta folds.

    Intermediate sums stay below 2^63 provided both inputs are < q < 2^60
    and delta < 2^30, so no 64-bit lane ever wraps.
    """
    d = np.uint64(mod.delta)
    q = np.uint64(mod.q)
    a1 = a >> _U30
    a0 = a & MASK30
    b1 = b >> _U30
    b0 = b & MASK30
    x = a1 * b1                      # < 2^60
    m = a1 * b0 + a0 * b1            # < 2^61
    lo = a0 * b0                     # < 2^60
    # m * 2^30  ->  2*delta*(m >> 31) + (m & (2^31-1)) * 2^30
    m1 = m >> _U31
    m0 = m & np.uint64((1 << 31) - 1)
    # x * delta ->  fold x's high limb once more
    x1 = x >> _U30
    x0 = x & MASK30
    y = x1 * d
    y1 = y >> _U30
    y0 = y & MASK30
    acc = y1 * d + (y0 << _U30) + x0 * d + (m1 * d << _U1) + (m0 << _U30) + lo
    acc = (acc >> _U60) * d + (acc & MASK60)
    acc = np.where(acc >= q, acc - q, acc)
    return acc


def _addmod_vec(a: np.ndarray, b: np.ndarray, q: np.uint64) -> np.ndarray:
    s = a + b
    return np.where(s >= q, s - q, s)


def _submod_vec(a: np.ndarray, b: np.ndarray, q: np.uint64) -> np.ndarray:
    return np.where(a >= b, a - b, a + q - b)


def _mulhi64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """High 64 bits of a 64x64 product, emulated with 32-bit limbs."""
    ah = a >> _U32
    al = a & MASK32
    bh = b >> _U32
    bl = b & MASK32
    ll = al * bl
    lh = al * bh
    hl = ah * bl
    mid = (ll >> _U32) + (lh & MASK32) + (hl & MASK32)
    return ah * bh + (lh >> _U32) + (hl >> _U32) + (mid >> _U32)


def _mulmod_p_vec(a: np.ndarray, b: np.ndarray, mod: ModulusP) -> np.ndarray:
    """Barrett product mod p for reduced residues (p <= 31 bits)."""
    t = a * b                        # < 2^62, exact in uint64
    p = np.uint64(mod.p)
    if mod.barrett_fast:
        qhat = (t * np.uint64(mod.mu)) >> np.uint64(mod.shift)
    else:
        qhat = _mulhi64(t, np.uint64(mod.mu64))
    r = t - qhat * p
    r = np.where(r >= p, r - p, r)
    r = np.where(r >= p, r - p, r)
    return r


def reduce_q_vec(x: np.ndarray, mod: ModulusQ) -> np.ndarray:
    """Vector version of reduce_q for lazy uint64 accumulations."""
    d = np.uint64(mod.delta)
    q = np.uint64(mod.q)
    z = (x >> _U60) * d + (x & MASK60)
    z = (z >> _U60) * d + (z & MASK60)
    z = np.where(z >= q, z - q, z)
    z = np.where(z >= q, z - q, z)
    return z


def shoup_precompute(w, modulus: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precompute reciprocal constants for repeated multiplication by w.

    Returns (w, high, low) where high/low are the 32-bit halves of
    floor(w * 2^64 / modulus); `mulmod_shoup` then reduces without division.
    """
    w_arr = np.asarray(w, dtype=np.uint64)
    flat = [int(v) for v in np.atleast_1d(w_arr).ravel()]
    ws = np.array([(v << 64) // modulus for v in flat], dtype=np.uint64)
    ws = ws.reshape(np.atleast_1d(w_arr).shape)
    if w_arr.shape == ():
        ws = ws.reshape(())
    return w_arr, ws >> _U32, ws & MASK32


def mulmod_shoup(x: np.ndarray, pre, modulus: int) -> np.ndarray:
    """x*w mod modulus with precomputed reciprocal; x may be any uint64.

    The quotient estimate drops two low-order carry terms, so the raw
    remainder lands in [0, 4*modulus); two conditional subtracts finish.
    Wrapping uint64 arithmetic is exact here because the true remainder
    is below 2^62.
    """
    w, wsh, wsl = pre
    q = np.uint64(modulus)
    xh = x >> _U32
    xl = x & MASK32
    qhat = xh * wsh + ((xh * wsl) >> _U32) + ((xl * wsh) >> _U32)
    r = x * w - qhat * q
    r = np.where(r >= q + q, r - (q + q), r)
    r = np.where(r >= q, r - q, r)
    return r


def reduce_p_vec(x: np.ndarray, mod: ModulusP) -> np.ndarray:
    qhat = _mulhi64(x, np.uint64(mod.mu64))
    p = np.uint64(mod.p)
    r = x - qhat * p
    r = np.where(r >= p, r - p, r)
    r = np.where(r >= p, r - p, r)
    return r


# ---------------------------------------------------------------------------
# Negacyclic NTT
# ---------------------------------------------------------------------------

def _bit_reverse_perm(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _find_psi(modulus: int, n: int, seed: int = 1) -> int:
    """Primitive 2n-th root of unity mod a prime with 2n | modulus-1."""
    if (modulus - 1) % (2 * n) != 0:
        raise ValueError("modulus does not support a 2n-th root of unity")
    rng = random.Random(seed)
    exp = (modulus - 1) // (2 * n)
    while True:
        g = rng.randrange(2, modulus - 1)
        psi = pow(g, exp, modulus)
        if psi != 1 and pow(psi, n, modulus) == modulus - 1:
            return psi


class NttTables:
    """Twiddle tables for an n-point negacyclic NTT mod a prime.

    Forward transform is Cooley-Tukey (natural input, bit-reversed output);
    the inverse is Gentleman-Sande, so no explicit bit-reversal pass is
    needed and pointwise products in the transform domain realise
    multiplication mod X^n + 1.
    """

    def __init__(self, modulus: int, n: int):
        if n < 2 or n & (n - 1):
            raise ValueError("n must be a power of two >= 2")
        self.modulus = modulus
        self.n = n
        self.psi = _find_psi(modulus, n)
        self.psi_inv = pow(self.psi, -1, modulus)
        self.n_inv = pow(n, -1, modulus)
        rev = _bit_reverse_perm(n)
        psi_pows = np.array([pow(self.psi, int(i), modulus) for i in range(n)],
                            dtype=np.uint64)
        ipsi_pows = np.array([pow(self.psi_inv, int(i), modulus) for i in range(n)],
                             dtype=np.uint64)
        self.psi_rev = psi_pows[rev].copy()
        self.psi_inv_rev = ipsi_pows[rev].copy()
        if modulus.bit_length() >= 32:
            self._mod_q = ModulusQ.from_prime(modulus)
            self._mod_p = None
        else:
            self._mod_q = None
            self._mod_p = ModulusP(modulus)
        # Per-stage reciprocal twiddles for the fast backend, broadcast-ready.
        self._fwd_stages = []
        m = 1
        while m < n:
            pre = shoup_precompute(self.psi_rev[m:2 * m], modulus)
            self._fwd_stages.append(tuple(arr.reshape(m, 1) for arr in pre))
            m *= 2
        self._inv_stages = []
        h = n // 2
        while h >= 1:
            pre = shoup_precompute(self.psi_inv_rev[h:2 * h], modulus)
            self._inv_stages.append(tuple(arr.reshape(h, 1) for arr in pre))
            h //= 2
        self._ninv_pre = shoup_precompute(np.uint64(self.n_inv), modulus)

    # -- backend-dispatched butterfly arithmetic --

    def _mulmod(self, a, b, backend):
        if backend == "fast":
            if self._mod_q is not None:
                return _mulmod_q_vec(a, b, self._mod_q)
            return _mulmod_p_vec(a, b, self._mod_p)
        return (a * b) % self.modulus

    def _as_backend(self, vec, backend):
        arr = np.asarray(vec)
        if backend == "fast":
            return arr.astype(np.uint64, copy=True)
        return arr.astype(object, copy=True)

    def forward(self, coeffs, backend: str = "fast") -> np.ndarray:
        """Negacyclic NTT; pointwise products here equal ring products.

        Accepts a single length-n vector or a (batch, n) matrix; batching
        amortises the per-stage dispatch overhead across transforms.
        """
        a = self._as_backend(coeffs, backend)
        batched = a.ndim == 2
        n = self.n
        if a.shape[-1] != n:
            raise ValueError(f"expected length-{n} vectors, got {a.shape}")
        rows = a.shape[0] if batched else 1
        a = a.reshape(rows, n)
        mod = self.modulus if backend == "naive" else np.uint64(self.modulus)
        tw = self.psi_rev.astype(object) if backend == "naive" else None
        t = n
        m = 1
        stage = 0
        while m < n:
            t //= 2
            blk = a.reshape(rows, m, 2 * t)
            u = blk[:, :, :t].copy()
            if backend == "fast":
                v = mulmod_shoup(blk[:, :, t:], self._fwd_stages[stage],
                                 self.modulus)
                blk[:, :, :t] = _addmod_vec(u, v, mod)
                blk[:, :, t:] = _submod_vec(u, v, mod)
            else:
                s = tw[m:2 * m].reshape(m, 1)
                v = (blk[:, :, t:] * s) % self.modulus
                blk[:, :, :t] = (u + v) % self.modulus
                blk[:, :, t:] = (u - v) % self.modulus
            m *= 2
            stage += 1
        a = a.reshape(rows, n)
        return a if batched else a[0]

    def inverse(self, slots, backend: str = "fast") -> np.ndarray:
        a = self._as_backend(slots, backend)
        batched = a.ndim == 2
        n = self.n
        if a.shape[-1] != n:
            raise ValueError(f"expected length-{n} vectors, got {a.shape}")
        rows = a.shape[0] if batched else 1
        a = a.reshape(rows, n)
        mod = self.modulus if backend == "naive" else np.uint64(self.modulus)
        tw = self.psi_inv_rev.astype(object) if backend == "naive" else None
        t = 1
        m = n
        stage = 0
        while m > 1:
            h = m // 2
            blk = a.reshape(rows, h, 2 * t)
            u = blk[:, :, :t].copy()
            v = blk[:, :, t:].copy()
            if backend == "fast":
                blk[:, :, :t] = _addmod_vec(u, v, mod)
                blk[:, :, t:] = mulmod_shoup(_submod_vec(u, v, mod),
                                             self._inv_stages[stage],
                                             self.modulus)
            else:
                s = tw[h:2 * h].reshape(h, 1)
                blk[:, :, :t] = (u + v) % self.modulus
                blk[:, :, t:] = ((u - v) % self.modulus * s) % self.modulus
            t *= 2
            m = h
            stage += 1
        if backend == "fast":
            out = mulmod_shoup(a, self._ninv_pre, self.modulus)
        else:
            out = (a * self.n_inv) % self.modulus
        out = out.reshape(rows, n)
        return out if batched else out[0]

    def pointwise(self, a, b, backend: str = "fast") -> np.ndarray:
        if backend == "fast":
            return self._mulmod(np.asarray(a, dtype=np.uint64),
                                np.asarray(b, dtype=np.uint64), backend)
        return self._mulmod(np.asarray(a, dtype=object),
                            np.asarray(b, dtype=object), backend)


@lru_cache(maxsize=None)
def get_ntt_tables(modulus: int, n: int) -> NttTables:
    return NttTables(modulus, n)


def ntt_forward(coeffs, tables: NttTables, backend: str = "fast") -> np.ndarray:
    return tables.forward(coeffs, backend=backend)


def ntt_inverse(slots, tables: NttTables, backend: str = "fast") -> np.ndarray:
    return tables.inverse(slots, backend=backend)


def negacyclic_mul_schoolbook(a, b, modulus: int) -> list:
    """O(n^2) reference product mod X^n + 1 (the NTT oracle)."""
    n = len(a)
    if len(b) != n:
        raise ValueError("length mismatch")
    out = [0] * n
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            k = i + j
            term = int(ai) * int(bj)
            if k < n:
                out[k] = (out[k] + term) % modulus
            else:
                out[k - n] = (out[k - n] - term) % modulus
    return out


# ---------------------------------------------------------------------------
# Ring parameters and the reduction-friendly prime pair search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RingParams:
    """Parameters of the packed scheme: cyclotomic order m = 2n, moduli, noise."""

    m: int
    q: ModulusQ
    p: ModulusP
    sigma: float = 4.0

    def __post_init__(self):
        if self.m < 8 or self.m & (self.m - 1):
            raise ValueError("m must be a power of two >= 8")
        if (self.q.q - 1) % self.m or (self.p.p - 1) % self.m:
            raise ValueError("q and p must both be 1 mod m")
        if abs(self.r_signed) > 2:
            raise ValueError("|q mod p| must be at most 2")

    @property
    def n(self) -> int:
        return self.m // 2

    @property
    def r_signed(self) -> int:
        r = self.q.q % self.p.p
        return r if r <= self.p.p // 2 else r - self.p.p

    @property
    def scale(self) -> int:
        # Round(q/p): exact because q = scale*p + r with |r| <= 2.
        return (self.q.q - self.r_signed) // self.p.p

    @property
    def noise_bound(self) -> float:
        """log2 of the decryption correctness line q/(2p)."""
        return float(np.log2(self.q.q / (2 * self.p.p)))

    def ntt_q(self) -> NttTables:
        return get_ntt_tables(self.q.q, self.n)

    def ntt_p(self) -> NttTables:
        return get_ntt_tables(self.p.p, self.n)


def _crt_pair(a1: int, m1: int, a2: int, m2: int) -> int:
    """Unique x mod m1*m2 with x = a1 (mod m1), x = a2 (mod m2)."""
    inv = pow(m1, -1, m2)
    return (a1 + m1 * (((a2 - a1) * inv) % m2)) % (m1 * m2)


def find_prime_pair(log_p_target: int, m: int, r_bound: int = 2,
                    budget: int = 2_000_000) -> tuple[ModulusP, ModulusQ]:
    """Search the reduction-friendly pair (p, q) for a given plaintext size.

    Walks candidates p = 1 (mod m) upward from 2^log_p_target.  For each
    prime p and each residue r with |r| <= r_bound, the congruences
    delta = -1 (mod m) and delta = 2^60 - r (mod p) pin a unique minimal
    delta; the candidate is accepted if q = 2^60 - delta is prime and delta
    stays below sqrt(q).  Among the residues that survive for one p, the
    smallest delta wins.
    """
    if not (16 <= log_p_target <= 30):
        raise ValueError("log_p_target must lie in [16, 30]")
    if m < 8 or m & (m - 1):
        raise ValueError("m must be a power of two >= 8")
    two60 = 1 << 60
    p = ((1 << log_p_target) + m - 1) // m * m + 1
    for _ in range(budget):
        if p.bit_length() > 31:
            raise SearchExhausted(
                f"no admissible (p, q) pair with p below 2^31 for "
                f"log_p={log_p_target}, m={m}, r_bound={r_bound}")
        if is_prime(p):
            best = None
            for r_abs in range(1, r_bound + 1):
                for r in (r_abs, -r_abs):
                    delta = _crt_pair(m - 1, m, (two60 - r) % p, p)
                    q = two60 - delta
                    if delta * delta >= q:
                        continue
                    if not is_prime(q):
                        continue
                    if best is None or delta < best[0]:
                        best = (delta, q, r)
            if best is not None:
                return ModulusP(p), ModulusQ.from_prime(best[1])
        p += m
    raise SearchExhausted(
        f"no admissible (p, q) pair within {budget} candidates for "
        f"log_p={log_p_target}, m={m}")


@lru_cache(maxsize=None)
def find_reduction_friendly_pair(log_p_target: int, m: int,
                                 budget: int = 2_000_000) -> tuple[ModulusP, ModulusQ]:
    """Prime pair with the smallest workable |q mod p|.

    Searches with |r| = 1 first and widens to |r| = 2 only if no |r| = 1
    pair exists below the 31-bit plaintext cap; this matches the published
    parameter table, where only the 30-bit row needs |r| = 2.
    """
    for r_bound in (1, 2):
        try:
            return find_prime_pair(log_p_target, m, r_bound=r_bound, budget=budget)
        except SearchExhausted:
            if r_bound == 2:
                raise
    raise AssertionError("unreachable")


def table_params(log_p_target: int = 18, m: int = 4096,
                 sigma: float = 4.0) -> RingParams:
    """RingParams built from the reduction-friendly pair for this size."""
    p, q = find_reduction_friendly_pair(log_p_target, m)
    return RingParams(m=m, q=q, p=p, sigma=sigma)


def toy_params(n: int = 8, log_p_target: int = 18, sigma: float = 4.0) -> RingParams:
    """Small-ring parameters for tests; the full-size primes still work
    because q = p = 1 (mod 4096) implies the same holds for every smaller
    power-of-two order."""
    p, q = find_reduction_friendly_pair(log_p_target, 4096)
    return RingParams(m=2 * n, q=q, p=p, sigma=sigma)
