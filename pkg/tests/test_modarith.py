"""Reduction, NTT and prime-search checks against independent oracles.

The oracle for both reductions is arbitrary-precision division; the oracle
for the NTT is schoolbook negacyclic polynomial multiplication.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pahenet import modarith as ma

TABLE_M = 4096
# Published prime table. Row 1's printed q (k=63548) is composite; the
# corrected multiplier is 63549 (see notes on the parameter table).
TABLE_ROWS = [
    (18, 307201, (1 << 60) - (1 << 12) * 63549 + 1, 1),
    (22, 5324801, (1 << 60) - (1 << 12) * 122130 + 1, 1),
    (26, 115351553, (1 << 60) - (1 << 12) * 9259 + 1, 1),
    (30, 1316638721, (1 << 60) - (1 << 12) * 54778 + 1, 2),
]

Q1 = ma.ModulusQ.from_prime(TABLE_ROWS[0][2])
P1 = ma.ModulusP(TABLE_ROWS[0][1])


class TestReduceQ:
    def test_zero(self):
        assert ma.reduce_q(0, Q1) == 0

    def test_modulus_maps_to_zero(self):
        assert ma.reduce_q(Q1.q, Q1) == 0

    def test_large_value_vs_division_oracle(self):
        x = (1 << 63) + 17
        assert ma.reduce_q(x, Q1) == x % Q1.q

    @given(st.integers(min_value=0, max_value=(1 << 64) - 1))
    @settings(max_examples=300)
    def test_scalar_matches_division(self, x):
        assert ma.reduce_q(x, Q1) == x % Q1.q

    def test_vector_matches_division_bulk(self):
        rng = np.random.default_rng(7)
        xs = rng.integers(0, 1 << 64, size=100_000, dtype=np.uint64)
        got = ma.reduce_q_vec(xs, Q1)
        want = np.array([int(x) % Q1.q for x in xs[:2048]], dtype=np.uint64)
        assert np.array_equal(got[:2048], want)
        # spot-check the tail as well
        idx = rng.integers(0, len(xs), size=512)
        for i in idx:
            assert int(got[i]) == int(xs[i]) % Q1.q

    def test_mulmod_vec_matches_division(self):
        rng = np.random.default_rng(8)
        a = rng.integers(0, Q1.q, size=4096, dtype=np.uint64)
        b = rng.integers(0, Q1.q, size=4096, dtype=np.uint64)
        got = ma._mulmod_q_vec(a, b, Q1)
        for i in range(0, 4096, 37):
            assert int(got[i]) == (int(a[i]) * int(b[i])) % Q1.q

    def test_lazy_accumulation_headroom(self):
        # 16 unreduced 60-bit values must accumulate without wrapping.
        rng = np.random.default_rng(9)
        vals = rng.integers(0, 1 << 60, size=(1000, 16), dtype=np.uint64)
        sums = vals.sum(axis=1)  # would wrap silently if > 2^64
        for i in range(0, 1000, 41):
            py_sum = sum(int(v) for v in vals[i])
            assert py_sum < (1 << 64)
            assert int(ma.reduce_q_vec(sums[i:i + 1], Q1)[0]) == py_sum % Q1.q


class TestReduceP:
    def test_zero(self):
        assert ma.reduce_p(0, P1) == 0

    def test_already_reduced(self):
        assert ma.reduce_p(P1.p - 1, P1) == P1.p - 1

    @given(st.integers(min_value=0, max_value=(1 << 64) - 1))
    @settings(max_examples=300)
    def test_matches_division(self, x):
        assert ma.reduce_p(x, P1) == x % 307201

    @pytest.mark.parametrize("p", [307201, 5324801, 115351553, 1316638721])
    def test_vector_barrett_all_table_primes(self, p):
        mod = ma.ModulusP(p)
        rng = np.random.default_rng(p)
        a = rng.integers(0, p, size=2048, dtype=np.uint64)
        b = rng.integers(0, p, size=2048, dtype=np.uint64)
        got = ma._mulmod_p_vec(a, b, mod)
        for i in range(0, 2048, 61):
            assert int(got[i]) == (int(a[i]) * int(b[i])) % p
        xs = rng.integers(0, 1 << 64, size=2048, dtype=np.uint64)
        red = ma.reduce_p_vec(xs, mod)
        for i in range(0, 2048, 61):
            assert int(red[i]) == int(xs[i]) % p


class TestNtt:
    @pytest.mark.parametrize("n", [8, 16, 2048])
    @pytest.mark.parametrize("modulus", [TABLE_ROWS[0][2], 307201])
    def test_zero_vector(self, n, modulus):
        t = ma.get_ntt_tables(modulus, n)
        out = t.forward(np.zeros(n, dtype=np.uint64))
        assert not out.any()

    def test_impulse_is_all_ones(self):
        t = ma.get_ntt_tables(307201, 16)
        impulse = np.zeros(16, dtype=np.uint64)
        impulse[0] = 1
        assert np.array_equal(t.forward(impulse), np.ones(16, dtype=np.uint64))
        # and the inverse of all ones is the impulse again
        back = t.inverse(np.ones(16, dtype=np.uint64))
        assert np.array_equal(back, impulse)

    @pytest.mark.parametrize("n", [8, 16, 2048])
    def test_roundtrip(self, n):
        t = ma.get_ntt_tables(TABLE_ROWS[0][2], n)
        rng = np.random.default_rng(n)
        for _ in range(100 if n == 8 else 10):
            a = rng.integers(0, t.modulus, size=n, dtype=np.uint64)
            assert np.array_equal(t.inverse(t.forward(a)), a)

    @pytest.mark.parametrize("modulus", [ma.find_prime_pair(16, 16, 1)[0].p, 97])
    def test_convolution_theorem_small_prime(self, modulus):
        if (modulus - 1) % 16:
            pytest.skip("modulus lacks a 16th root of unity")
        n = 8
        t = ma.get_ntt_tables(modulus, n)
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.integers(0, modulus, size=n, dtype=np.uint64)
            b = rng.integers(0, modulus, size=n, dtype=np.uint64)
            got = t.inverse(t.pointwise(t.forward(a), t.forward(b)))
            want = ma.negacyclic_mul_schoolbook(a, b, modulus)
            assert [int(x) for x in got] == want

    @pytest.mark.parametrize("n", [8, 16, 2048])
    def test_convolution_theorem_full_modulus(self, n):
        q = TABLE_ROWS[0][2]
        t = ma.get_ntt_tables(q, n)
        rng = np.random.default_rng(n + 1)
        reps = 3 if n == 2048 else 20
        for _ in range(reps):
            a = rng.integers(0, q, size=n, dtype=np.uint64)
            b = rng.integers(0, q, size=n, dtype=np.uint64)
            got = t.inverse(t.pointwise(t.forward(a), t.forward(b)))
            want = ma.negacyclic_mul_schoolbook(a, b, q)
            assert [int(x) for x in got] == want

    def test_linearity(self):
        q = TABLE_ROWS[0][2]
        t = ma.get_ntt_tables(q, 64)
        rng = np.random.default_rng(3)
        a = rng.integers(0, q, size=64, dtype=np.uint64)
        b = rng.integers(0, q, size=64, dtype=np.uint64)
        lhs = t.forward(ma._addmod_vec(a, b, np.uint64(q)))
        rhs = ma._addmod_vec(t.forward(a), t.forward(b), np.uint64(q))
        assert np.array_equal(lhs, rhs)

    def test_naive_backend_agrees(self):
        q = TABLE_ROWS[0][2]
        t = ma.get_ntt_tables(q, 64)
        rng = np.random.default_rng(4)
        a = rng.integers(0, q, size=64, dtype=np.uint64)
        fast = t.forward(a)
        naive = t.forward(a, backend="naive")
        assert [int(x) for x in fast] == [int(x) for x in naive]
        assert np.array_equal(t.inverse(fast), a)
        back = t.inverse(naive, backend="naive")
        assert [int(x) for x in back] == [int(x) for x in a]

    def test_length_mismatch_rejected(self):
        t = ma.get_ntt_tables(307201, 16)
        with pytest.raises(ValueError):
            t.forward(np.zeros(8, dtype=np.uint64))
        with pytest.raises(ValueError):
            t.inverse(np.zeros(32, dtype=np.uint64))


class TestPrimePair:
    @pytest.mark.parametrize("log_p,p_exp,q_exp,r_exp", TABLE_ROWS)
    def test_reproduces_published_table(self, log_p, p_exp, q_exp, r_exp):
        p, q = ma.find_reduction_friendly_pair(log_p, TABLE_M)
        assert p.p == p_exp
        assert q.q == q_exp
        r = q.q % p.p
        r_signed = r if r <= p.p // 2 else r - p.p
        assert abs(r_signed) == r_exp

    @pytest.mark.parametrize("log_p,m", [(18, 4096), (20, 2048), (17, 8192)])
    def test_conditions_reverified_independently(self, log_p, m):
        sympy = pytest.importorskip("sympy")
        p, q = ma.find_reduction_friendly_pair(log_p, m)
        assert sympy.isprime(p.p) and sympy.isprime(q.q)
        assert q.q % m == 1
        assert p.p % m == 1
        r = q.q % p.p
        r_signed = r if r <= p.p // 2 else r - p.p
        assert r_signed in (-2, -1, 1, 2)
        assert q.delta == (1 << 60) - q.q
        assert q.delta ** 2 < q.q
        assert q.delta % m == m - 1

    def test_search_exhausted(self):
        with pytest.raises(ma.SearchExhausted):
            ma.find_prime_pair(18, 4096, r_bound=1, budget=2)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            ma.find_prime_pair(10, 4096)
        with pytest.raises(ValueError):
            ma.find_prime_pair(18, 1000)


class TestRingParams:
    def test_full_size(self):
        params = ma.table_params(18, 4096)
        assert params.n == 2048
        assert params.r_signed == 1
        assert params.scale * params.p.p + params.r_signed == params.q.q
        assert 40.0 < params.noise_bound < 41.0

    def test_toy_reuses_full_primes(self):
        toy = ma.toy_params(8)
        full = ma.table_params(18, 4096)
        assert toy.q.q == full.q.q and toy.p.p == full.p.p
        assert toy.n == 8
