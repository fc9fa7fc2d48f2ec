"""Private-key packed additively homomorphic encryption (BFV instantiation).

A plaintext is a length-n vector over Zp held in the slots of a degree-n
negacyclic ring element.  Ciphertexts are pairs (c0, c1) over Zq kept in the
NTT (slot) domain so that SIMD addition and plaintext multiplication are
pointwise; the coefficient domain is entered only for the digit decomposition
behind slot permutations and for plaintext window construction.

Supported homomorphic operations: slot-wise addition, slot-wise
multiplication by a plaintext vector (optionally split into w_pt-bit windows
against caller-provided low-noise ciphertexts), and the half-rotation group
of slot permutations C_{n/2} x C_2 realised through Galois automorphisms and
relinearization-window key switching.  Ciphertext-ciphertext multiplication
is deliberately absent.

Every ciphertext carries a tracked noise upper bound; decryption is correct
while the true noise stays below q/(2p).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .modarith import (
    MASK60,
    ModulusP,
    ModulusQ,
    RingParams,
    get_ntt_tables,
    mulmod_shoup,
    reduce_q_vec,
    shoup_precompute,
)

WIRE_VERSION = 1
_MAGIC_CT = 0x31544350   # "PCT1"
_MAGIC_SK = 0x314B5350   # "PSK1"
_MAGIC_PK = 0x314B5050   # "PPK1"


class ParamMismatch(ValueError):
    """Operands built under different ring parameters."""


class MissingWindows(ValueError):
    """A windowed multiply was asked for without its low-noise ciphertexts."""


class UnsupportedPermutation(ValueError):
    """Permutation outside the half-rotation group C_{n/2} x C_2."""


class NoiseOverflow(RuntimeError):
    """Tracked noise bound crossed the q/(2p) correctness line."""


# ---------------------------------------------------------------------------
# Slot bookkeeping: logical order, Galois action, raw NTT order
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PermId:
    """One element of the half-rotation group: rotate both halves left by k
    slots, then swap the halves if swap is set."""
    k: int
    swap: bool = False


def rot_id(amount: int, n: int) -> PermId:
    """Virtual rotation by `amount` in [0, n) mapped onto the group.

    Amounts below n/2 rotate within the halves; amounts >= n/2 compose the
    residual rotation with the half-swap.  A plain n-cycle does not exist in
    this group, which is exactly why kernels simulate the action at encode
    time instead of assuming one.
    """
    if not 0 <= amount < n:
        raise UnsupportedPermutation(f"rotation {amount} outside [0, {n})")
    half = n // 2
    return PermId(k=amount % half, swap=amount >= half)


class Packing:
    """Maps logical slots to raw NTT positions and realises the group action.

    Logical slot l = (h, c) with h = l // (n/2), c = l % (n/2) stores the
    evaluation at root exponent +-3^c; the Galois map X -> X^(3^k) rotates
    the halves by k and X -> X^(-1) swaps them.
    """

    def __init__(self, params: RingParams):
        self.params = params
        n = params.n
        m2 = 2 * n
        half = n // 2
        exps = np.empty(n, dtype=np.int64)
        e = 1
        for c in range(half):
            exps[c] = e
            exps[half + c] = m2 - e
            e = e * 3 % m2
        self.logical_exp = exps
        # raw NTT position of each odd exponent, probed from the transform
        # of X so the packing never depends on the NTT's output ordering.
        tq = params.ntt_q()
        probe = np.zeros(n, dtype=np.uint64)
        probe[1] = 1
        vals = tq.forward(probe)
        pow_to_exp = {}
        acc = 1
        for exp in range(m2):
            if exp % 2 == 1:
                pow_to_exp[acc] = exp
            acc = acc * tq.psi % params.q.q
        exp_at_raw = np.array([pow_to_exp[int(v)] for v in vals], dtype=np.int64)
        pos_of_exp = {int(e): i for i, e in enumerate(exp_at_raw)}
        self.exp_at_raw = exp_at_raw
        self.raw_of_logical = np.array([pos_of_exp[int(e)] for e in exps],
                                       dtype=np.int64)
        self._perm_cache: dict[tuple[int, bool], np.ndarray] = {}
        self._source_cache: dict[tuple[int, bool], np.ndarray] = {}
        # p-side NTT must present slots at the same exponents; probing the
        # p-side transform of X confirms the orderings agree.
        tp = params.ntt_p()
        probe_p = np.zeros(n, dtype=np.uint64)
        probe_p[1] = 1
        vals_p = tp.forward(probe_p)
        pow_to_exp_p = {}
        acc = 1
        for exp in range(m2):
            if exp % 2 == 1:
                pow_to_exp_p[acc] = exp
            acc = acc * tp.psi % params.p.p
        exp_at_raw_p = [pow_to_exp_p[int(v)] for v in vals_p]
        if list(exp_at_raw) != exp_at_raw_p:
            raise AssertionError("q-side and p-side NTT slot orders diverge")

    def _check(self, pi: PermId):
        half = self.params.n // 2
        if not 0 <= pi.k < half:
            raise UnsupportedPermutation(
                f"rotation {pi.k} outside the half-rotation group [0, {half})")

    def galois_exponent(self, pi: PermId) -> int:
        self._check(pi)
        m2 = 2 * self.params.n
        g = pow(3, pi.k, m2)
        if pi.swap:
            g = g * (m2 - 1) % m2
        return g

    def raw_perm(self, pi: PermId) -> np.ndarray:
        """index array P with new_raw[i] = old_raw[P[i]] under the automorphism."""
        key = (pi.k, pi.swap)
        if key not in self._perm_cache:
            g = self.galois_exponent(pi)
            m2 = 2 * self.params.n
            pos_of_exp = {int(e): i for i, e in enumerate(self.exp_at_raw)}
            perm = np.array([pos_of_exp[(g * int(e)) % m2]
                             for e in self.exp_at_raw], dtype=np.int64)
            self._perm_cache[key] = perm
        return self._perm_cache[key]

    def source_index(self, pi: PermId) -> np.ndarray:
        """Logical index array S with rotated[l] = v[S[l]]."""
        key = (pi.k, pi.swap)
        if key not in self._source_cache:
            self._check(pi)
            n = self.params.n
            half = n // 2
            l = np.arange(n)
            h = l // half
            c = l % half
            src_h = h ^ int(pi.swap)
            src_c = (c + pi.k) % half
            self._source_cache[key] = src_h * half + src_c
        return self._source_cache[key]

    def rotate_slots(self, vec: np.ndarray, pi: PermId) -> np.ndarray:
        """Plaintext-side oracle for what Perm does to the slots."""
        vec = np.asarray(vec)
        return vec[self.source_index(pi)]


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------

@dataclass
class NoiseModel:
    """Monotone upper-bound noise estimates for every homomorphic op.

    eta0 is the fresh bound (the Gaussian sampler is tail-cut at 6*sigma, so
    it is a hard bound).  Multiplication by a plaintext chunk v grows noise
    by ||v||'_inf * sqrt(n); the extra |r| accounts for plaintext wraps
    because q = p*scale + r.  A permutation adds eta_rot, the worst of the
    digit-times-key-error products of the relinearization window.
    """

    params: RingParams

    @property
    def eta0(self) -> float:
        return 6.0 * self.params.sigma

    def eta_mult(self, chunk_max: float) -> float:
        return chunk_max * math.sqrt(self.params.n)

    def eta_rot(self, w_relin: int) -> float:
        digits = math.ceil(60 / w_relin)
        return digits * ((1 << w_relin) - 1) * math.sqrt(self.params.n) * self.eta0

    def after_add(self, eta_a: float, eta_b: float) -> float:
        return eta_a + eta_b + abs(self.params.r_signed)

    def after_plain_add(self, eta: float) -> float:
        return eta + abs(self.params.r_signed)

    def after_scmult(self, etas, chunk_maxes) -> float:
        r = abs(self.params.r_signed)
        return sum(self.eta_mult(cm) * (eta + r)
                   for eta, cm in zip(etas, chunk_maxes))

    def after_perm(self, eta: float, w_relin: int) -> float:
        return eta + self.eta_rot(w_relin)

    def bits(self, eta: float) -> float:
        return math.log2(max(eta, 1.0))


# ---------------------------------------------------------------------------
# Keys, ciphertexts, plaintext windows
# ---------------------------------------------------------------------------

@dataclass
class SecretKey:
    params: RingParams
    s_coeffs: np.ndarray            # ternary, stored as {0, 1, q-1}
    s_slots: np.ndarray
    s_pre: tuple = field(repr=False, default=None)

    @property
    def n(self):
        return self.params.n


@dataclass
class Ciphertext:
    params: RingParams
    c0: np.ndarray                  # slot domain, length n, uint64 < q
    c1: np.ndarray
    noise: float                    # tracked linear upper bound on |eta|

    @property
    def noise_bits(self) -> float:
        return math.log2(max(self.noise, 1.0))

    @property
    def decryptable(self) -> bool:
        return self.noise_bits < self.params.noise_bound

    def copy(self) -> "Ciphertext":
        return Ciphertext(self.params, self.c0.copy(), self.c1.copy(), self.noise)


@dataclass
class PlaintextVector:
    slots: np.ndarray

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)


@dataclass
class PlaintextWindows:
    """Coefficient-domain w_pt-bit decomposition of a multiplicand vector.

    chunks[k] recomposes as sum 2^(w_pt*k) * chunks[k] = encode(v); each
    chunk is stored NTT'd mod q with reciprocal constants so the slot-wise
    multiply is division free.  chunk_max tracks the true coefficient
    maxima for the noise model.
    """
    w_pt: int
    num_chunks: int
    coeff_chunks: np.ndarray        # (num_chunks, n) uint64, values < 2^w_pt
    slot_pre: list                  # per chunk: shoup triple mod q
    chunk_max: list
    logical: np.ndarray             # original mod-p slot vector


def _sigma_table(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    cut = int(math.ceil(6 * sigma))
    xs = np.arange(-cut, cut + 1)
    probs = np.exp(-(xs.astype(float) ** 2) / (2 * sigma * sigma))
    probs /= probs.sum()
    return xs, np.cumsum(probs)


_CDT_CACHE: dict[float, tuple[np.ndarray, np.ndarray]] = {}


def sample_gaussian(params: RingParams, rng: np.random.Generator,
                    size: int) -> np.ndarray:
    """Tail-cut discrete Gaussian via a cumulative table (CDT) sampler."""
    if params.sigma not in _CDT_CACHE:
        _CDT_CACHE[params.sigma] = _sigma_table(params.sigma)
    xs, cdf = _CDT_CACHE[params.sigma]
    u = rng.random(size)
    return xs[np.searchsorted(cdf, u)]


def _signed_to_q(vals: np.ndarray, q: int) -> np.ndarray:
    out = np.asarray(vals, dtype=np.int64).copy()
    out[out < 0] += q
    return out.astype(np.uint64)


def keygen(params: RingParams, rng: np.random.Generator) -> SecretKey:
    """Ternary secret key; deterministic under a seeded generator."""
    s = rng.integers(-1, 2, size=params.n)
    s_q = _signed_to_q(s, params.q.q)
    s_slots = params.ntt_q().forward(s_q)
    return SecretKey(params=params, s_coeffs=s_q, s_slots=s_slots,
                     s_pre=shoup_precompute(s_slots, params.q.q))


def encode_coeffs(params: RingParams, slots) -> np.ndarray:
    """Logical mod-p slot vector -> coefficient-domain ring element mod p."""
    v = np.asarray(slots, dtype=np.int64) % params.p.p
    if v.shape != (params.n,):
        raise ValueError(f"expected {params.n} slots, got {v.shape}")
    packing = get_packing(params)
    raw = np.zeros(params.n, dtype=np.uint64)
    raw[packing.raw_of_logical] = v.astype(np.uint64)
    return params.ntt_p().inverse(raw)


def decode_coeffs(params: RingParams, coeffs: np.ndarray) -> np.ndarray:
    packing = get_packing(params)
    raw = params.ntt_p().forward(np.asarray(coeffs, dtype=np.uint64))
    return raw[packing.raw_of_logical].astype(np.int64)


_PACKING_CACHE: dict[tuple[int, int, int], Packing] = {}


def get_packing(params: RingParams) -> Packing:
    key = (params.m, params.q.q, params.p.p)
    if key not in _PACKING_CACHE:
        _PACKING_CACHE[key] = Packing(params)
    return _PACKING_CACHE[key]


def encrypt(sk: SecretKey, pt, rng: np.random.Generator,
            scale_pow2: int = 0) -> Ciphertext:
    """Fresh encryption of a packed vector (optionally pre-scaled by 2^k).

    c0 = a*s + Delta*m + e, c1 = a, all in the slot domain; decryption
    rounds (c0 - c1*s) / Delta per coefficient.
    """
    params = sk.params
    slots = pt.slots if isinstance(pt, PlaintextVector) else pt
    v = np.asarray(slots, dtype=np.int64) % params.p.p
    if scale_pow2:
        v = (v * pow(2, scale_pow2, params.p.p)) % params.p.p
    m_coeff = encode_coeffs(params, v)
    e = sample_gaussian(params, rng, params.n)
    q = params.q.q
    body = (np.asarray(m_coeff, dtype=np.uint64) * np.uint64(params.scale)
            + _signed_to_q(e, q))
    body = reduce_q_vec(body, params.q)
    b_slots = params.ntt_q().forward(body)
    a = rng.integers(0, q, size=params.n, dtype=np.uint64)
    c0 = _addmod(mulmod_shoup(a, sk.s_pre, q), b_slots, q)
    model = NoiseModel(params)
    return Ciphertext(params=params, c0=c0, c1=a, noise=model.eta0)


def encrypt_windows(sk: SecretKey, pt, w_pt: int,
                    rng: np.random.Generator) -> list[Ciphertext]:
    """The low-noise bundle [2^(w_pt*k) * v] needed by windowed multiplies."""
    num = num_windows(sk.params, w_pt)
    return [encrypt(sk, pt, rng, scale_pow2=w_pt * k) for k in range(num)]


def num_windows(params: RingParams, w_pt: int) -> int:
    return math.ceil(params.p.p.bit_length() / w_pt)


def _addmod(a, b, q: int):
    s = a + b
    return np.where(s >= np.uint64(q), s - np.uint64(q), s)


def _submod(a, b, q: int):
    return np.where(a >= b, a - b, a + np.uint64(q) - b)


def decrypt(sk: SecretKey, ct: Ciphertext, strict: bool = True) -> PlaintextVector:
    """Deterministic decryption; raises if the tracked bound crossed the line."""
    if strict and not ct.decryptable:
        raise NoiseOverflow(
            f"tracked noise {ct.noise_bits:.1f} bits >= correctness line "
            f"{ct.params.noise_bound:.1f} bits")
    params = sk.params
    q = params.q.q
    d = _submod(ct.c0, mulmod_shoup(ct.c1, sk.s_pre, q), q)
    x = params.ntt_q().inverse(d)
    scale = np.uint64(params.scale)
    m = ((x + scale // np.uint64(2)) // scale).astype(np.int64) % params.p.p
    raw = params.ntt_p().forward(m.astype(np.uint64))
    packing = get_packing(params)
    return PlaintextVector(raw[packing.raw_of_logical].astype(np.int64))


def measure_noise(sk: SecretKey, ct: Ciphertext) -> float:
    """Noise bits actually present, recovered with the secret key."""
    params = sk.params
    q = params.q.q
    d = _submod(ct.c0, mulmod_shoup(ct.c1, sk.s_pre, q), q)
    x = params.ntt_q().inverse(d).astype(object)
    scale = params.scale
    m = [(int(v) + scale // 2) // scale for v in x]
    errs = [int(x[i]) - (m[i] % params.p.p) * scale for i in range(len(x))]
    centered = [e - q if e > q // 2 else (e + q if e < -(q // 2) else e)
                for e in errs]
    worst = max(abs(e) for e in centered)
    return math.log2(max(worst, 1))


def simd_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.params is not b.params and (a.params.q.q != b.params.q.q
                                     or a.params.m != b.params.m):
        raise ParamMismatch("ciphertexts from different parameter sets")
    q = a.params.q.q
    model = NoiseModel(a.params)
    return Ciphertext(a.params, _addmod(a.c0, b.c0, q), _addmod(a.c1, b.c1, q),
                      model.after_add(a.noise, b.noise))


def plain_add(ct: Ciphertext, slots) -> Ciphertext:
    """Add a plaintext constant vector (noise-free up to the |r| wrap)."""
    params = ct.params
    m_coeff = encode_coeffs(params, slots)
    body = np.asarray(m_coeff, dtype=np.uint64) * np.uint64(params.scale)
    body = reduce_q_vec(body, params.q)
    b_slots = params.ntt_q().forward(body)
    model = NoiseModel(params)
    return Ciphertext(params, _addmod(ct.c0, b_slots, params.q.q),
                      ct.c1.copy(), model.after_plain_add(ct.noise))


def encode_windows(params: RingParams, slots, w_pt: int) -> PlaintextWindows:
    v = np.asarray(slots, dtype=np.int64) % params.p.p
    m_coeff = encode_coeffs(params, v).astype(np.int64)
    num = num_windows(params, w_pt)
    mask = (1 << w_pt) - 1
    chunks = np.stack([(m_coeff >> (w_pt * k)) & mask for k in range(num)])
    tq = params.ntt_q()
    slot_chunks = tq.forward(chunks.astype(np.uint64))
    pre = [shoup_precompute(slot_chunks[k], params.q.q) for k in range(num)]
    return PlaintextWindows(
        w_pt=w_pt, num_chunks=num, coeff_chunks=chunks.astype(np.uint64),
        slot_pre=pre, chunk_max=[int(c.max()) if c.size else 0 for c in chunks],
        logical=v)


def simd_scmult(cts: list[Ciphertext] | Ciphertext,
                windows: PlaintextWindows) -> Ciphertext:
    """Slot-wise product with a windowed plaintext.

    cts[k] must encrypt 2^(w_pt*k) times the same vector; passing a single
    ciphertext is allowed only when the plaintext fits one window.
    """
    if isinstance(cts, Ciphertext):
        cts = [cts]
    if len(cts) < windows.num_chunks:
        raise MissingWindows(
            f"{windows.num_chunks} windows need {windows.num_chunks} "
            f"low-noise ciphertexts, got {len(cts)}")
    params = cts[0].params
    q = params.q.q
    acc0 = np.zeros(params.n, dtype=np.uint64)
    acc1 = np.zeros(params.n, dtype=np.uint64)
    for k in range(windows.num_chunks):
        pre = windows.slot_pre[k]
        acc0 = _addmod(acc0, mulmod_shoup(cts[k].c0, pre, q), q)
        acc1 = _addmod(acc1, mulmod_shoup(cts[k].c1, pre, q), q)
    model = NoiseModel(params)
    noise = model.after_scmult([c.noise for c in cts[:windows.num_chunks]],
                               windows.chunk_max)
    return Ciphertext(params, acc0, acc1, noise)


# ---------------------------------------------------------------------------
# Permutations: key generation, hoisting, application
# ---------------------------------------------------------------------------

@dataclass
class PermutationKey:
    params: RingParams
    pi: PermId
    w_relin: int
    b_polys: list                   # shoup triples, slot domain
    a_polys: list
    b_raw: np.ndarray               # (digits, n) for serialization
    a_raw: np.ndarray

    @property
    def digits(self) -> int:
        return math.ceil(60 / self.w_relin)


@dataclass
class HoistedCiphertext:
    """Digit decomposition of c1 in the slot domain, reusable across
    every permutation generated with the same relinearization window."""
    params: RingParams
    w_relin: int
    c0: np.ndarray
    digit_slots: np.ndarray         # (digits, n)
    digit_coeffs: np.ndarray        # kept for the recomposition invariant
    noise: float


def perm_keygen(sk: SecretKey, pi: PermId, w_relin: int,
                rng: np.random.Generator) -> PermutationKey:
    """Key switching material for one slot permutation.

    Digit t holds an encryption-like pair (b_t, a_t) with
    b_t = a_t*s + e_t - 2^(w*t) * sigma(s).
    """
    params = sk.params
    packing = get_packing(params)
    packing._check(pi)
    if not 1 <= w_relin <= 60:
        raise ValueError("w_relin must lie in [1, 60]")
    q = params.q.q
    digits = math.ceil(60 / w_relin)
    perm = packing.raw_perm(pi)
    s_perm = sk.s_slots[perm]
    tq = params.ntt_q()
    b_list, a_list = [], []
    for t in range(digits):
        a_t = rng.integers(0, q, size=params.n, dtype=np.uint64)
        e_t = tq.forward(_signed_to_q(sample_gaussian(params, rng, params.n), q))
        shift = pow(2, w_relin * t, q)
        term = mulmod_shoup(s_perm, shoup_precompute(np.uint64(shift), q), q)
        b_t = _submod(_addmod(mulmod_shoup(a_t, sk.s_pre, q), e_t, q), term, q)
        b_list.append(b_t)
        a_list.append(a_t)
    b_raw = np.stack(b_list)
    a_raw = np.stack(a_list)
    return PermutationKey(
        params=params, pi=pi, w_relin=w_relin,
        b_polys=[shoup_precompute(b, q) for b in b_list],
        a_polys=[shoup_precompute(a, q) for a in a_list],
        b_raw=b_raw, a_raw=a_raw)


def perm_decomp(ct: Ciphertext, w_relin: int) -> HoistedCiphertext:
    """Hoistable part of a permutation: NTT^-1, digit split, digit NTTs."""
    params = ct.params
    tq = params.ntt_q()
    c1_coeff = tq.inverse(ct.c1)
    digits = math.ceil(60 / w_relin)
    mask = np.uint64((1 << w_relin) - 1)
    digit_coeffs = np.stack([(c1_coeff >> np.uint64(w_relin * t)) & mask
                             for t in range(digits)])
    digit_slots = tq.forward(digit_coeffs)
    return HoistedCiphertext(params=params, w_relin=w_relin, c0=ct.c0,
                             digit_slots=digit_slots,
                             digit_coeffs=digit_coeffs, noise=ct.noise)


def perm_auto(h: HoistedCiphertext, key: PermutationKey) -> Ciphertext:
    """Apply one permutation to a hoisted ciphertext: permute the digits
    and multiply-accumulate against the key, all Theta(n * digits)."""
    if key.params.q.q != h.params.q.q or key.w_relin != h.w_relin:
        raise ParamMismatch("key does not match the hoisted decomposition")
    params = h.params
    q = params.q.q
    packing = get_packing(params)
    perm = packing.raw_perm(key.pi)
    acc0 = np.zeros(params.n, dtype=np.uint64)
    acc1 = np.zeros(params.n, dtype=np.uint64)
    lazy = 0
    for t in range(key.digits):
        d = h.digit_slots[t][perm]
        acc0 = acc0 + mulmod_shoup(d, key.b_polys[t], q)
        acc1 = acc1 + mulmod_shoup(d, key.a_polys[t], q)
        lazy += 1
        if lazy == 14:
            acc0 = reduce_q_vec(acc0, params.q)
            acc1 = reduce_q_vec(acc1, params.q)
            lazy = 0
    acc0 = reduce_q_vec(acc0, params.q)
    acc1 = reduce_q_vec(acc1, params.q)
    c0 = _addmod(h.c0[perm], acc0, q)
    model = NoiseModel(params)
    return Ciphertext(params, c0, acc1, model.after_perm(h.noise, key.w_relin))


def perm(ct: Ciphertext, key: PermutationKey) -> Ciphertext:
    """Convenience full permutation = decomposition + application."""
    return perm_auto(perm_decomp(ct, key.w_relin), key)


def flood(ct: Ciphertext, lam_bits: int, rng: np.random.Generator) -> Ciphertext:
    """Function-privacy noise flooding before a ciphertext leaves the server.

    Adds a transparent encryption of zero whose coefficients are uniform in
    [-2^lam, 2^lam]; the server holds no encryption key, and in the
    semi-honest model only the noise statistics matter.
    """
    params = ct.params
    q = params.q.q
    bound = 1 << lam_bits
    e = rng.integers(-bound, bound + 1, size=params.n)
    e_slots = params.ntt_q().forward(_signed_to_q(e, q))
    return Ciphertext(params, _addmod(ct.c0, e_slots, q), ct.c1.copy(),
                      ct.noise + float(bound))


def transparent_zero(params: RingParams) -> Ciphertext:
    return Ciphertext(params, np.zeros(params.n, dtype=np.uint64),
                      np.zeros(params.n, dtype=np.uint64), 0.0)


# ---------------------------------------------------------------------------
# Serialization (layouts documented in docs/wire.md)
# ---------------------------------------------------------------------------

def _header(magic: int, params: RingParams) -> bytes:
    return struct.pack("<IHHIIQQ", magic, WIRE_VERSION, 0, params.n, 0,
                       params.q.q, params.p.p)


def _check_header(buf: bytes, magic: int, params: RingParams) -> int:
    m, ver, _, n, _, q, p = struct.unpack_from("<IHHIIQQ", buf, 0)
    if m != magic:
        raise ValueError("bad magic")
    if ver != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {ver}")
    if (n, q, p) != (params.n, params.q.q, params.p.p):
        raise ParamMismatch("serialized object built under other parameters")
    return struct.calcsize("<IHHIIQQ")


def ciphertext_payload_size(params: RingParams) -> int:
    return 2 * params.n * 8


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    head = _header(_MAGIC_CT, ct.params) + struct.pack("<d", ct.noise)
    return head + ct.c0.astype("<u8").tobytes() + ct.c1.astype("<u8").tobytes()


def deserialize_ciphertext(buf: bytes, params: RingParams) -> Ciphertext:
    off = _check_header(buf, _MAGIC_CT, params)
    (noise,) = struct.unpack_from("<d", buf, off)
    off += 8
    n = params.n
    c0 = np.frombuffer(buf, dtype="<u8", count=n, offset=off).astype(np.uint64)
    c1 = np.frombuffer(buf, dtype="<u8", count=n, offset=off + 8 * n).astype(np.uint64)
    return Ciphertext(params, c0, c1, noise)


def serialize_secret_key(sk: SecretKey) -> bytes:
    return _header(_MAGIC_SK, sk.params) + sk.s_coeffs.astype("<u8").tobytes()


def deserialize_secret_key(buf: bytes, params: RingParams) -> SecretKey:
    off = _check_header(buf, _MAGIC_SK, params)
    s = np.frombuffer(buf, dtype="<u8", count=params.n, offset=off).astype(np.uint64)
    slots = params.ntt_q().forward(s)
    return SecretKey(params=params, s_coeffs=s, s_slots=slots,
                     s_pre=shoup_precompute(slots, params.q.q))


def serialize_perm_key(key: PermutationKey) -> bytes:
    head = _header(_MAGIC_PK, key.params)
    head += struct.pack("<IBBH", key.pi.k, int(key.pi.swap), key.w_relin,
                        key.digits)
    return head + key.b_raw.astype("<u8").tobytes() + key.a_raw.astype("<u8").tobytes()


def deserialize_perm_key(buf: bytes, params: RingParams) -> PermutationKey:
    off = _check_header(buf, _MAGIC_PK, params)
    k, swap, w_relin, digits = struct.unpack_from("<IBBH", buf, off)
    off += struct.calcsize("<IBBH")
    n = params.n
    b_raw = np.frombuffer(buf, dtype="<u8", count=digits * n, offset=off)
    b_raw = b_raw.reshape(digits, n).astype(np.uint64)
    off += digits * n * 8
    a_raw = np.frombuffer(buf, dtype="<u8", count=digits * n, offset=off)
    a_raw = a_raw.reshape(digits, n).astype(np.uint64)
    q = params.q.q
    return PermutationKey(
        params=params, pi=PermId(k, bool(swap)), w_relin=w_relin,
        b_polys=[shoup_precompute(b, q) for b in b_raw],
        a_polys=[shoup_precompute(a, q) for a in a_raw],
        b_raw=b_raw, a_raw=a_raw)


# ---------------------------------------------------------------------------
# Counting evaluator over window bundles
# ---------------------------------------------------------------------------

@dataclass
class OpCounter:
    """Logical (window-bundle level) operation counts.

    With w plaintext windows a logical op expands to w physical ops on the
    member ciphertexts; the closed-form tables count logical ops, so that is
    what kernels are instrumented with.
    """
    perm_decomp: int = 0
    perm_auto: int = 0
    perm_full: int = 0
    scmult: int = 0
    add: int = 0
    plain_add: int = 0
    output_cts: int = 0

    @property
    def perm_hoisted(self) -> int:
        return self.perm_auto - self.perm_full

    def reset(self):
        for f in ("perm_decomp", "perm_auto", "perm_full", "scmult", "add",
                  "plain_add", "output_cts"):
            setattr(self, f, 0)


class MissingRotationKey(KeyError):
    pass


class Evaluator:
    """Homomorphic ops over window bundles with rotation-key lookup and
    instrumented counting.  A bundle is the list [ct_k] of low-noise
    encryptions [2^(w_pt k) v] that windowed multiplication consumes."""

    def __init__(self, params: RingParams, keys: dict | None = None,
                 counter: OpCounter | None = None, w_relin: int = 7):
        self.params = params
        self.keys = keys or {}
        self.counter = counter if counter is not None else OpCounter()
        self.w_relin = w_relin
        self.packing = get_packing(params)

    def key_for(self, pi: PermId) -> PermutationKey:
        k = self.keys.get((pi.k, pi.swap))
        if k is None:
            raise MissingRotationKey(f"no rotation key for {pi}")
        return k

    def rot_key_ids(self):
        return set(self.keys)

    # -- bundle ops (each counts once regardless of bundle width) --

    def decomp(self, bundle: list[Ciphertext]) -> list[HoistedCiphertext]:
        self.counter.perm_decomp += 1
        return [perm_decomp(ct, self.w_relin) for ct in bundle]

    def rot_hoisted(self, hoisted: list[HoistedCiphertext],
                    pi: PermId) -> list[Ciphertext]:
        key = self.key_for(pi)
        self.counter.perm_auto += 1
        return [perm_auto(h, key) for h in hoisted]

    def rot_full(self, bundle: list[Ciphertext], pi: PermId) -> list[Ciphertext]:
        key = self.key_for(pi)
        self.counter.perm_full += 1
        self.counter.perm_decomp += 1
        self.counter.perm_auto += 1
        return [perm(ct, key) for ct in bundle]

    def scmult(self, bundle: list[Ciphertext],
               windows: PlaintextWindows) -> Ciphertext:
        self.counter.scmult += 1
        return simd_scmult(bundle, windows)

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self.counter.add += 1
        return simd_add(a, b)

    def plain_add(self, ct: Ciphertext, slots) -> Ciphertext:
        self.counter.plain_add += 1
        return plain_add(ct, slots)

    def zero(self) -> Ciphertext:
        return transparent_zero(self.params)

    def emit(self, *cts):
        self.counter.output_cts += len(cts)


def needed_keys(params: RingParams, perm_ids, sk: SecretKey, w_relin: int,
                rng: np.random.Generator) -> dict:
    """Generate rotation keys only for the requested group elements."""
    keys = {}
    for pi in perm_ids:
        keys[(pi.k, pi.swap)] = perm_keygen(sk, pi, w_relin, rng)
    return keys
