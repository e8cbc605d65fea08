import random
from functools import lru_cache

import pytest

from sendnet import poly
from sendnet.kzg import (
    EvalProof,
    KzgError,
    KzgParams,
    SubvectorProof,
    commit_poly,
    commit_vector,
    create_witness,
    interpolate_vector,
    lagrange_at,
    prove_subvector,
    seeded_setup,
    setup,
    update_commitment,
    verify_eval,
    verify_subvector,
)
from sendnet.pairing import ORDER, G1Element, generator

P = ORDER
TAU = 0x1D2C3B4A5968778695A4B3C2D1E0F00112233445566778899AABBCCDDEEFF01


@lru_cache(maxsize=None)
def params(n):
    return setup(n, TAU)


def rand_vec(rng, n):
    return [rng.randrange(P) for _ in range(n)]


# --- independent scalar-field oracles (no calls into sendnet.poly) ---

def horner(coeffs, x):
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % P
    return acc


def lagrange_eval_direct(xs, ys, x):
    """Value at x of the interpolant through (xs, ys), straight from the product formula."""
    total = 0
    for i, (xi, yi) in enumerate(zip(xs, ys)):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if j != i:
                num = num * (x - xj) % P
                den = den * (xi - xj) % P
        total = (total + yi * num * pow(den, -1, P)) % P
    return total


def newton_interpolate(xs, ys):
    """Coefficients via divided differences, a second route to the interpolant."""
    n = len(xs)
    dd = list(ys)
    for level in range(1, n):
        for i in range(n - 1, level - 1, -1):
            dd[i] = (dd[i] - dd[i - 1]) * pow(xs[i] - xs[i - level], -1, P) % P
    coeffs = [0] * n
    for i in range(n - 1, -1, -1):
        # coeffs = coeffs * (X - xs[i]) + dd[i]
        shifted = [0] + coeffs[:-1]
        coeffs = [(s - xs[i] * c) % P for s, c in zip(shifted, coeffs)]
        coeffs[0] = (coeffs[0] + dd[i]) % P
    return coeffs


# --- setup ---

def test_setup_n1():
    pp = setup(1, 5)
    g = generator()
    assert list(pp.powers) == [g]
    assert list(pp.lagrange_basis) == [g]


def test_setup_n2_lagrange_basis():
    pp = setup(2, 3)
    g = generator()
    assert pp.lagrange_basis[0] == g * (-2 % P)
    assert pp.lagrange_basis[1] == g * 3


def test_setup_lagrange_matches_direct_product():
    n = 8
    pp = params(n)
    g = generator()
    for i in range(n):
        e = [1 if j == i else 0 for j in range(n)]
        assert pp.lagrange_basis[i] == g * lagrange_eval_direct(list(range(n)), e, TAU)
    assert lagrange_at(n, 3) == [0, 0, 0, 1, 0, 0, 0, 0]


@pytest.mark.parametrize("n", [1, 2, 8, 32])
def test_all_ones_vector_commits_to_generator(n):
    pp = params(n)
    assert commit_vector(pp, [1] * n) == pp.powers[0]


@pytest.mark.parametrize("bad", [0, 3, P, P + 2])
def test_setup_rejects_degenerate_trapdoor(bad):
    with pytest.raises(KzgError):
        setup(4, bad)


def test_setup_rejects_bad_size():
    with pytest.raises(KzgError):
        setup(0, TAU)
    with pytest.raises(KzgError):
        setup(4097, TAU)


def test_params_hide_trapdoor_and_round_trip():
    pp = params(4)
    assert not hasattr(pp, "trapdoor")
    assert KzgParams.from_bytes(pp.to_bytes()) == pp


def test_seeded_setup_is_reproducible():
    assert seeded_setup(4, "fixture") == seeded_setup(4, "fixture")
    assert seeded_setup(4, "fixture") != seeded_setup(4, "other")


# --- commit ---

def test_commit_constant_and_x():
    pp = params(8)
    g = generator()
    assert commit_poly(pp, [42]) == g * 42
    assert commit_poly(pp, [0, 1]) == pp.powers[1]
    assert commit_poly(pp, []).is_identity()


def test_commit_poly_matches_trapdoor_evaluation():
    rng = random.Random(7)
    pp = params(8)
    for _ in range(10):
        coeffs = rand_vec(rng, 8)
        assert commit_poly(pp, coeffs) == generator() * horner(coeffs, TAU)


def test_commit_poly_degree_overflow():
    with pytest.raises(KzgError):
        commit_poly(params(2), [1, 2, 3])


def test_commit_vector_edges():
    pp = params(8)
    assert commit_vector(pp, [0] * 8).is_identity()
    for i in range(8):
        e = [0] * 8
        e[i] = 1
        assert commit_vector(pp, e) == pp.lagrange_basis[i]
    with pytest.raises(KzgError):
        commit_vector(pp, [1, 2])


def test_commit_vector_equals_commit_of_interpolant():
    rng = random.Random(8)
    pp = params(8)
    for _ in range(10):
        v = rand_vec(rng, 8)
        coeffs = newton_interpolate(list(range(8)), v)
        assert commit_vector(pp, v) == commit_poly(pp, coeffs)


def test_poly_interpolate_agrees_with_newton():
    rng = random.Random(9)
    for n in [1, 2, 5, 16]:
        xs = rng.sample(range(1000), n)
        ys = rand_vec(rng, n)
        assert poly.trim(newton_interpolate(xs, ys)) == poly.interpolate(xs, ys)


def test_homomorphism():
    rng = random.Random(10)
    pp = params(8)
    for _ in range(10):
        u, w = rand_vec(rng, 8), rand_vec(rng, 8)
        assert commit_vector(pp, u) + commit_vector(pp, w) == commit_vector(pp, [a + b for a, b in zip(u, w)])


# --- witnesses ---

def test_witness_constant_poly():
    pp = params(8)
    proof = create_witness(pp, [9], 5)
    assert proof.witness.is_identity()
    assert proof.value == 9


def test_witness_x_at_zero():
    pp = params(8)
    proof = create_witness(pp, [0, 1], 0)
    assert proof.witness == generator()
    assert proof.value == 0


def test_witness_matches_quotient_at_trapdoor():
    rng = random.Random(11)
    pp = params(8)
    coeffs = rand_vec(rng, 8)
    z = 3
    proof = create_witness(pp, coeffs, z)
    v = horner(coeffs, z)
    q_tau = (horner(coeffs, TAU) - v) * pow(TAU - z, -1, P) % P
    assert proof.value == v
    assert proof.witness == generator() * q_tau
    assert verify_eval(pp, commit_poly(pp, coeffs), z, v, proof.witness)


def test_zero_polynomial_verifies():
    pp = params(4)
    ident = G1Element.identity()
    for z in [0, 1, 17]:
        assert verify_eval(pp, ident, z, 0, ident)


def test_eval_proof_round_trip():
    pp = params(4)
    proof = create_witness(pp, [1, 2, 3], 2)
    assert EvalProof.from_bytes(proof.to_bytes()) == proof


@pytest.mark.parametrize("n", [1, 2, 8, 32])
def test_eval_completeness_and_soundness(n):
    rng = random.Random(100 + n)
    pp = params(n)
    g = generator()
    false_accepts = 0
    for trial in range(100):
        coeffs = rand_vec(rng, n)
        c = commit_poly(pp, coeffs)
        z = rng.randrange(n) if trial % 2 else rng.randrange(P)
        proof = create_witness(pp, coeffs, z)
        assert verify_eval(pp, c, z, proof.value, proof.witness)
        kind = trial % 4
        if kind == 0:
            bad = (c, z, proof.value + 1, proof.witness)
        elif kind == 1:
            bad = (c, (z + 1 + rng.randrange(P - 1)) % P, proof.value, proof.witness)
        elif kind == 2:
            bad = (g * rng.randrange(P), z, proof.value, proof.witness)
        else:
            bad = (c, z, proof.value, g * rng.randrange(P))
        claim_true = bad[0] == c and bad[3] == proof.witness and horner(coeffs, bad[1]) == bad[2] % P
        if verify_eval(pp, *bad) and not claim_true:
            false_accepts += 1
    assert false_accepts == 0


# --- updates ---

def test_update_zero_delta_is_noop():
    pp = params(8)
    c = commit_vector(pp, list(range(8)))
    assert update_commitment(pp, c, 3, 0) == c


def test_update_telescopes_to_all_ones():
    n = 8
    pp = params(n)
    c = commit_vector(pp, [0] * n)
    for i in range(n):
        c = update_commitment(pp, c, i, 1)
    assert c == commit_vector(pp, [1] * n)


def test_update_equals_recommit():
    rng = random.Random(12)
    pp = params(8)
    for _ in range(100):
        v = rand_vec(rng, 8)
        i, d = rng.randrange(8), rng.randrange(P)
        c = update_commitment(pp, commit_vector(pp, v), i, d)
        v[i] = (v[i] + d) % P
        assert c == commit_vector(pp, v)


def test_update_index_out_of_range():
    pp = params(4)
    with pytest.raises(KzgError):
        update_commitment(pp, G1Element.identity(), 4, 1)


# --- subvectors ---

def test_subvector_singleton_equivalent_to_single_point():
    rng = random.Random(13)
    pp = params(8)
    v = rand_vec(rng, 8)
    c = commit_vector(pp, v)
    sp = prove_subvector(pp, v, [5])
    ep = create_witness(pp, interpolate_vector(v), 5)
    assert sp.witness == ep.witness
    assert verify_subvector(pp, c, [5], [v[5]], sp.witness)
    assert verify_eval(pp, c, 5, v[5], sp.witness)


def test_subvector_full_domain_has_identity_witness():
    rng = random.Random(14)
    pp = params(8)
    v = rand_vec(rng, 8)
    sp = prove_subvector(pp, v, range(8))
    assert sp.witness.is_identity()
    assert verify_subvector(pp, commit_vector(pp, v), sp.indices, sp.values, sp.witness)


def test_subvector_witness_matches_trapdoor_quotient():
    rng = random.Random(15)
    n = 16
    pp = params(n)
    v = rand_vec(rng, n)
    idx = [1, 5, 9]
    sp = prove_subvector(pp, v, idx)
    phi_tau = lagrange_eval_direct(list(range(n)), v, TAU)
    r_tau = lagrange_eval_direct(idx, [v[i] for i in idx], TAU)
    a_tau = 1
    for i in idx:
        a_tau = a_tau * (TAU - i) % P
    assert sp.witness == generator() * ((phi_tau - r_tau) * pow(a_tau, -1, P) % P)
    c = commit_vector(pp, v)
    assert verify_subvector(pp, c, idx, sp.values, sp.witness)
    bad = list(sp.values)
    bad[1] = (bad[1] + 1) % P
    assert not verify_subvector(pp, c, idx, bad, sp.witness)


def test_subvector_swap_values_fails():
    rng = random.Random(16)
    pp = params(8)
    v = rand_vec(rng, 8)
    c = commit_vector(pp, v)
    sp = prove_subvector(pp, v, [2, 6])
    assert not verify_subvector(pp, c, sp.indices, sp.values[::-1], sp.witness)


def test_subvector_preconditions():
    pp = params(4)
    with pytest.raises(KzgError):
        prove_subvector(pp, [1, 2, 3, 4], [])
    with pytest.raises(KzgError):
        prove_subvector(pp, [1, 2, 3, 4], [1, 1])
    with pytest.raises(KzgError):
        prove_subvector(pp, [1, 2, 3, 4], [4])
    ident = G1Element.identity()
    assert not verify_subvector(pp, ident, [], [], ident)
    assert not verify_subvector(pp, ident, [0, 1], [0], ident)
    assert not verify_subvector(pp, ident, [9], [0], ident)


def test_subvector_proof_round_trip():
    pp = params(4)
    sp = prove_subvector(pp, [4, 3, 2, 1], [0, 3])
    assert SubvectorProof.from_bytes(sp.to_bytes()) == sp


@pytest.mark.parametrize("n", [1, 2, 8, 32])
def test_subvector_completeness_and_binding(n):
    rng = random.Random(200 + n)
    pp = params(n)
    false_accepts = 0
    for trial in range(25):
        v = rand_vec(rng, n)
        c = commit_vector(pp, v)
        k = rng.randint(1, min(n, 6))
        idx = sorted(rng.sample(range(n), k))
        sp = prove_subvector(pp, v, idx)
        assert verify_subvector(pp, c, sp.indices, sp.values, sp.witness)
        vals = list(sp.values)
        vals[rng.randrange(k)] = rng.randrange(P)
        false_accepts += verify_subvector(pp, c, idx, vals, sp.witness)
        false_accepts += verify_subvector(pp, c + generator(), idx, sp.values, sp.witness)
        false_accepts += verify_subvector(pp, c, idx, sp.values, sp.witness + generator())
    assert false_accepts == 0
