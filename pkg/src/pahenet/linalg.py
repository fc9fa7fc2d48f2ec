"""Homomorphic plaintext-matrix x encrypted-vector kernels.

Five algorithms over the half-rotation group: naive (one inner product per
output slot), naive with output packing, naive with input packing,
diagonal, and the hybrid that mixes diagonal-style input rotations with a
rotate-and-sum output phase.  Extended diagonals are built by simulating
the group action on index vectors at encode time, so the half-rotation
structure (and the pre-rotated input copies the hybrid layout needs) never
has to be reasoned about inside the kernels.

Operation counts are the closed forms of the comparison table; kernels are
instrumented and tested to hit them exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .modarith import RingParams
from .pahe import (
    Ciphertext,
    Evaluator,
    NoiseModel,
    PermId,
    PlaintextWindows,
    encode_windows,
    rot_id,
)

ALGORITHMS = ("naive", "output_packed", "input_packed", "diagonal", "hybrid")


@dataclass
class WeightMatrix:
    """n_o x n_i weight matrix over Zp with an optional bias vector."""
    w: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.int64)
        if self.w.ndim != 2:
            raise ValueError("weight matrix must be 2-D")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.int64)
            if self.bias.shape != (self.w.shape[0],):
                raise ValueError("bias length must equal the output dimension")

    @property
    def n_o(self):
        return self.w.shape[0]

    @property
    def n_i(self):
        return self.w.shape[1]


@dataclass
class OpCount:
    perm_hoisted: int
    perm: int
    scmult: int
    add: int
    output_cts: int


@dataclass
class EncodedMatrix:
    """Client-independent precomputation of one weight matrix.

    windows[t] multiplies the rotation schedule[t] of the input; assign[t]
    records which (row, col) landed in each slot (-1 where the slot is
    structurally zero) so the encoding stays exactly decodable.
    """
    algorithm: str
    n: int
    n_i: int
    n_o: int
    w_pt: int
    windows: list[PlaintextWindows]
    schedule: list[PermId | None]
    assign_row: list[np.ndarray]
    assign_col: list[np.ndarray]
    bias: np.ndarray | None


def _check_dims(n: int, n_i: int, n_o: int, algorithm: str):
    for v, name in ((n_i, "n_i"), (n_o, "n_o")):
        if v < 1 or v & (v - 1):
            raise ValueError(f"{name} must be a power of two, got {v}")
        if v > n:
            raise ValueError(f"{name} = {v} exceeds the slot count {n}")
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "input_packed" and n_i >= n:
        raise ValueError("input packing needs n_i < n")
    if algorithm == "hybrid" and n_o > n_i:
        raise ValueError("hybrid expects a squat matrix (n_o <= n_i)")


def pad_matrix(mat: WeightMatrix, n: int) -> WeightMatrix:
    """Zero-pad both dimensions up to powers of two (block kernels stay
    branch-free; callers with larger matrices split into n x n blocks)."""
    n_o = 1 << max(0, (mat.n_o - 1)).bit_length()
    n_i = 1 << max(0, (mat.n_i - 1)).bit_length()
    n_o, n_i = max(n_o, 1), max(n_i, 1)
    if n_o > n or n_i > n:
        raise ValueError("matrix block larger than the slot count")
    w = np.zeros((n_o, n_i), dtype=np.int64)
    w[:mat.n_o, :mat.n_i] = mat.w
    bias = None
    if mat.bias is not None:
        bias = np.zeros(n_o, dtype=np.int64)
        bias[:mat.n_o] = mat.bias
    return WeightMatrix(w, bias)


# ---------------------------------------------------------------------------
# Input layouts and rotation schedules
# ---------------------------------------------------------------------------

def input_layout(algorithm: str, n: int, n_i: int, n_o: int) -> np.ndarray:
    """Slot -> input-index map the client packs with (-1 means zero).

    naive/output-packed: the vector sits in the first n_i slots.
    input-packed/diagonal: plain replication v[i mod n_i].
    hybrid: replicated copies successively pre-rotated by n_o*n_i/n so the
    group rotations 0..D-1 line every input up against every output row
    exactly once before the fold phase.
    """
    _check_dims(n, n_i, n_o, algorithm)
    idx = np.arange(n)
    if algorithm in ("naive", "output_packed"):
        lay = np.where(idx < n_i, idx, -1)
    elif algorithm in ("input_packed", "diagonal"):
        lay = idx % n_i
    else:
        d = max(1, n_o * n_i // n)
        lay = (idx % n_i + (idx // n_i) * d) % n_i
    return lay.astype(np.int64)


def pack_input(v, layout: np.ndarray, p: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64) % p
    out = np.zeros(len(layout), dtype=np.int64)
    live = layout >= 0
    out[live] = v[layout[live]]
    return out


def _fold_amounts(n: int, block: int) -> list[int]:
    """Rotate-and-sum distances folding n slots down to `block`."""
    out = []
    a = n // 2
    while a >= block:
        out.append(a)
        a //= 2
    return out


def _rotate_and_sum_ids(n: int, n_i: int) -> list[PermId]:
    # fold the first n_i slots down to slot 0: distances n_i/2 .. 1
    out = []
    a = n_i // 2
    while a >= 1:
        out.append(rot_id(a, n))
        a //= 2
    return out


def _lineup_id(n: int, r: int) -> PermId:
    # move slot 0's content to slot r: source index of slot r must be 0
    half = n // 2
    h, c = divmod(r, half)
    return PermId((half - c) % half, bool(h))


def needed_rotations(algorithm: str, n: int, n_i: int, n_o: int) -> list[PermId]:
    _check_dims(n, n_i, n_o, algorithm)
    ids: list[PermId] = []
    if algorithm in ("naive", "input_packed"):
        ids += _rotate_and_sum_ids(n, n_i)
    elif algorithm == "output_packed":
        ids += _rotate_and_sum_ids(n, n_i)
        ids += [_lineup_id(n, r) for r in range(1, n_o)]
    elif algorithm == "diagonal":
        ids += [rot_id(t, n) for t in range(1, n_i)]
    else:
        d = max(1, n_o * n_i // n)
        ids += [rot_id(t, n) for t in range(1, d)]
        ids += [rot_id(a, n) for a in _fold_amounts(n, n_o)]
    uniq = {}
    for pi in ids:
        uniq[(pi.k, pi.swap)] = pi
    return list(uniq.values())


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode_matrix(mat: WeightMatrix, algorithm: str, w_pt: int,
                  params: RingParams) -> EncodedMatrix:
    """Precompute the plaintext-side operands for one matvec algorithm.

    Row algorithms store padded rows; diagonal-family algorithms store
    extended diagonals d_t[i] = W[row(i), input_seen_at(i, t)], derived by
    simulating the group action on the input layout.  Hybrid coverage
    (every matrix entry exactly once across diagonals and fold chunks) is
    asserted rather than trusted.
    """
    n = params.n
    n_o, n_i = mat.n_o, mat.n_i
    _check_dims(n, n_i, n_o, algorithm)
    p = params.p.p
    w = mat.w % p
    from .pahe import get_packing
    packing = get_packing(params)
    windows, schedule, assign_row, assign_col = [], [], [], []

    def emit(vec, pi, rows, cols):
        windows.append(encode_windows(params, vec, w_pt))
        schedule.append(pi)
        assign_row.append(rows)
        assign_col.append(cols)

    if algorithm in ("naive", "output_packed"):
        for r in range(n_o):
            vec = np.zeros(n, dtype=np.int64)
            vec[:n_i] = w[r]
            rows = np.full(n, -1, dtype=np.int64)
            cols = np.full(n, -1, dtype=np.int64)
            rows[:n_i] = r
            cols[:n_i] = np.arange(n_i)
            emit(vec, None, rows, cols)
    elif algorithm == "input_packed":
        rows_per_ct = n // n_i
        n_ct = n_o * n_i // n
        for g in range(n_ct):
            vec = np.zeros(n, dtype=np.int64)
            rows = np.full(n, -1, dtype=np.int64)
            cols = np.full(n, -1, dtype=np.int64)
            for kappa in range(rows_per_ct):
                r = g * rows_per_ct + kappa
                sl = slice(kappa * n_i, (kappa + 1) * n_i)
                vec[sl] = w[r]
                rows[sl] = r
                cols[sl] = np.arange(n_i)
            emit(vec, None, rows, cols)
    else:
        d = n_i if algorithm == "diagonal" else max(1, n_o * n_i // n)
        layout = input_layout(algorithm, n, n_i, n_o)
        slot_rows = np.arange(n) % n_o
        for t in range(d):
            pi = None if t == 0 else rot_id(t, n)
            src = (packing.source_index(pi) if pi is not None
                   else np.arange(n))
            cols = layout[src]
            vec = w[slot_rows, cols]
            emit(vec, pi, slot_rows.copy(), cols.copy())
        if algorithm == "hybrid":
            seen = np.zeros((n_o, n_i), dtype=np.int64)
            chunk_of = np.arange(n) % n_o
            for t in range(d):
                np.add.at(seen, (slot_rows, assign_col[t]), 1)
            if not (seen == n // n_i * n_i // max(n_i, 1) if False else
                    (seen == (n * d) // (n_o * n_i)).all()):
                raise AssertionError("hybrid diagonals do not tile the matrix")
            if (seen != 1).any():
                raise AssertionError("hybrid coverage is not exactly once")
    return EncodedMatrix(algorithm=algorithm, n=n, n_i=n_i, n_o=n_o, w_pt=w_pt,
                         windows=windows, schedule=schedule,
                         assign_row=assign_row, assign_col=assign_col,
                         bias=None if mat.bias is None else mat.bias % p)


def decode_matrix(enc: EncodedMatrix) -> np.ndarray:
    """Exact inverse of encode_matrix (tests the encoding invariant)."""
    w = np.zeros((enc.n_o, enc.n_i), dtype=np.int64)
    for t in range(len(enc.windows)):
        vec = enc.windows[t].logical
        rows, cols = enc.assign_row[t], enc.assign_col[t]
        live = rows >= 0
        w[rows[live], cols[live]] = vec[live]
    return w


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def _randomize_outside(ev: Evaluator, ct: Ciphertext,
                       result_mask: np.ndarray) -> Ciphertext:
    """Make every non-result slot uniform over Zp (partial-sum hygiene)."""
    p = ev.params.p.p
    garbage = ev.rng.integers(0, p, size=ev.params.n)
    garbage[result_mask] = 0
    return ev.plain_add(ct, garbage)


def _apply_bias(ev: Evaluator, ct: Ciphertext, enc: EncodedMatrix) -> Ciphertext:
    if enc.bias is None:
        return ct
    reps = np.tile(enc.bias, enc.n // enc.n_o)
    return ev.plain_add(ct, reps)


def matvec_naive(ev: Evaluator, enc: EncodedMatrix,
                 bundle: list[Ciphertext]) -> list[Ciphertext]:
    """One output ciphertext per row; the inner product lands in slot 0 and
    every other slot is re-randomized."""
    if enc.algorithm != "naive":
        raise ValueError("encoding/algorithm mismatch")
    outs = []
    fold = _rotate_and_sum_ids(enc.n, enc.n_i)
    mask = np.zeros(enc.n, dtype=bool)
    mask[0] = True
    for r in range(enc.n_o):
        acc = ev.scmult(bundle, enc.windows[r])
        for pi in fold:
            acc = ev.add(acc, ev.rot_full([acc], pi)[0])
        acc = _randomize_outside(ev, acc, mask)
        if enc.bias is not None:
            vec = np.zeros(enc.n, dtype=np.int64)
            vec[0] = enc.bias[r]
            acc = ev.plain_add(acc, vec)
        outs.append(acc)
    ev.emit(*outs)
    return outs


def matvec_input_packed(ev: Evaluator, enc: EncodedMatrix,
                        bundle: list[Ciphertext]) -> list[Ciphertext]:
    """n/n_i rows per ciphertext; row g*rows_per_ct + k lands in slot k*n_i."""
    if enc.algorithm != "input_packed":
        raise ValueError("encoding/algorithm mismatch")
    rows_per_ct = enc.n // enc.n_i
    fold = _rotate_and_sum_ids(enc.n, enc.n_i)
    mask = np.zeros(enc.n, dtype=bool)
    mask[np.arange(rows_per_ct) * enc.n_i] = True
    outs = []
    for g in range(len(enc.windows)):
        acc = ev.scmult(bundle, enc.windows[g])
        for pi in fold:
            acc = ev.add(acc, ev.rot_full([acc], pi)[0])
        acc = _randomize_outside(ev, acc, mask)
        if enc.bias is not None:
            vec = np.zeros(enc.n, dtype=np.int64)
            vec[np.arange(rows_per_ct) * enc.n_i] = \
                enc.bias[g * rows_per_ct:(g + 1) * rows_per_ct]
            acc = ev.plain_add(acc, vec)
        outs.append(acc)
    ev.emit(*outs)
    return outs


def _diagonal_phase(ev: Evaluator, enc: EncodedMatrix,
                    bundle: list[Ciphertext]) -> Ciphertext:
    hoisted = ev.decomp(bundle)
    acc = ev.zero()
    for t, pi in enumerate(enc.schedule):
        rotated = bundle if pi is None else ev.rot_hoisted(hoisted, pi)
        acc = ev.add(acc, ev.scmult(rotated, enc.windows[t]))
    return acc


def matvec_diagonal(ev: Evaluator, enc: EncodedMatrix,
                    bundle: list[Ciphertext]) -> Ciphertext:
    """Single packed output; all rotations share one decomposition."""
    if enc.algorithm != "diagonal":
        raise ValueError("encoding/algorithm mismatch")
    acc = _diagonal_phase(ev, enc, bundle)
    acc = _apply_bias(ev, acc, enc)
    ev.emit(acc)
    return acc


def matvec_hybrid(ev: Evaluator, enc: EncodedMatrix,
                  bundle: list[Ciphertext]) -> Ciphertext:
    """Hoisted input rotations, then log(n/n_o) rotate-and-sum folds."""
    if enc.algorithm != "hybrid":
        raise ValueError("encoding/algorithm mismatch")
    acc = _diagonal_phase(ev, enc, bundle)
    for a in _fold_amounts(enc.n, enc.n_o):
        acc = ev.add(acc, ev.rot_full([acc], rot_id(a, enc.n))[0])
    mask = np.zeros(enc.n, dtype=bool)
    mask[:enc.n_o] = True
    acc = _randomize_outside(ev, acc, mask)
    acc = _apply_bias(ev, acc, enc)
    ev.emit(acc)
    return acc


def matvec_output_packed(ev: Evaluator, enc: EncodedMatrix,
                         bundle: list[Ciphertext]) -> Ciphertext:
    """Naive products masked down to slot 0, rotated into place and summed.

    The second multiplication (by the slot-0 mask) runs on an already
    noisy ciphertext with no low-noise windows available, which is exactly
    the eta_mult^2 blowup the closed-form noise row predicts.
    """
    if enc.algorithm != "output_packed":
        raise ValueError("encoding/algorithm mismatch")
    params = ev.params
    fold = _rotate_and_sum_ids(enc.n, enc.n_i)
    mask_vec = np.zeros(enc.n, dtype=np.int64)
    mask_vec[0] = 1
    mask_w = encode_windows(params, mask_vec, params.p.p.bit_length())
    acc = ev.zero()
    for r in range(enc.n_o):
        prod = ev.scmult(bundle, enc.windows[r])
        for pi in fold:
            prod = ev.add(prod, ev.rot_full([prod], pi)[0])
        prod = ev.scmult([prod], mask_w)
        if r:
            prod = ev.rot_full([prod], _lineup_id(enc.n, r))[0]
        acc = ev.add(acc, prod)
    if enc.bias is not None:
        vec = np.zeros(enc.n, dtype=np.int64)
        vec[:enc.n_o] = enc.bias
        acc = ev.plain_add(acc, vec)
    ev.emit(acc)
    return acc


_KERNELS = {
    "naive": matvec_naive,
    "output_packed": matvec_output_packed,
    "input_packed": matvec_input_packed,
    "diagonal": matvec_diagonal,
    "hybrid": matvec_hybrid,
}


def matvec(ev: Evaluator, enc: EncodedMatrix, bundle: list[Ciphertext]):
    return _KERNELS[enc.algorithm](ev, enc, bundle)


def result_slots(algorithm: str, n: int, n_i: int, n_o: int) -> list[tuple[int, int]]:
    """(ciphertext index, slot) of each output component, in row order."""
    if algorithm == "naive":
        return [(r, 0) for r in range(n_o)]
    if algorithm == "input_packed":
        rows_per_ct = n // n_i
        return [(r // rows_per_ct, (r % rows_per_ct) * n_i) for r in range(n_o)]
    return [(0, r) for r in range(n_o)]


# ---------------------------------------------------------------------------
# Closed forms: operation counts and noise rows
# ---------------------------------------------------------------------------

def count_ops(algorithm: str, n: int, n_i: int, n_o: int) -> OpCount:
    """Closed-form per-algorithm cost; the executors assert these exactly."""
    _check_dims(n, n_i, n_o, algorithm)
    log_ni = int(math.log2(n_i))
    if algorithm == "naive":
        return OpCount(0, n_o * log_ni, n_o, n_o * log_ni, n_o)
    if algorithm == "output_packed":
        return OpCount(0, n_o * log_ni + n_o - 1, 2 * n_o,
                       n_o * log_ni + n_o, 1)
    if algorithm == "input_packed":
        k = n_o * n_i // n
        return OpCount(0, k * log_ni, k, k * log_ni, k)
    if algorithm == "diagonal":
        return OpCount(n_i - 1, 0, n_i, n_i, 1)
    d = n_o * n_i // n
    log_fold = int(math.log2(n // n_o))
    return OpCount(d - 1, log_fold, d, d + log_fold, 1)


def observed_ops(ev: Evaluator, algorithm: str) -> OpCount:
    """Project the raw instrumentation onto the table's columns."""
    c = ev.counter
    return OpCount(perm_hoisted=c.perm_hoisted, perm=c.perm_full,
                   scmult=c.scmult, add=c.add, output_cts=c.output_cts)


def noise_formula(algorithm: str, params: RingParams, n_i: int, n_o: int,
                  w_pt: int, w_relin: int) -> float:
    """The comparison table's noise rows, as the estimator evaluates them."""
    model = NoiseModel(params)
    chunk_max = (1 << w_pt) - 1
    chunks = math.ceil(params.p.p.bit_length() / w_pt)
    eta_mult = chunks * model.eta_mult(chunk_max)
    eta0 = model.eta0
    eta_rot = model.eta_rot(w_relin)
    naive = eta0 * eta_mult * n_i + eta_rot * (n_i - 1)
    if algorithm in ("naive", "input_packed"):
        return naive
    if algorithm == "output_packed":
        full_mult = model.eta_mult(params.p.p - 1)
        return naive * full_mult * n_o + eta_rot * (n_o - 1)
    if algorithm == "diagonal":
        return (eta0 + eta_rot) * eta_mult * n_i
    return (eta0 + eta_rot) * eta_mult * n_i + eta_rot * (n_i // n_o - 1)
