import itertools

import numpy as np
import pytest
from hypothesis import given

from memkernel.errors import DomainError, SizeError
from memkernel.superop import Superoperator
from memkernel.sysenv import SIGMA_Z
from memkernel.tensornet import (
    IN, OUT, Leg, LegTensor, TensorSet, born_rule, check_leg_budget, choi_to_superop, frobenius_norm,
    max_entangled, measurement_sequence, partial_trace, relative_entropy, star_contract,
    superop_to_choi, tensor_product,
)

from conftest import random_cptp, random_density, seeds


def random_tensor(rng, labels, dim=2):
    side = dim ** len(labels)
    g = rng.normal(size=(side, side)) + 1j * rng.normal(size=(side, side))
    return LegTensor(tuple(Leg(t, r, dim) for t, r in labels), g @ g.conj().T)


def test_max_entangled_definition():
    psi = max_entangled(2)
    expected = np.zeros((4, 4))
    for i, j in itertools.product([0, 3], repeat=2):
        expected[i, j] = 1
    assert np.array_equal(psi.matrix, expected)
    assert psi.trace() == 2
    p = psi.matrix / 2
    assert np.allclose(p @ p, p)
    assert frobenius_norm(psi) == pytest.approx(2)
    with pytest.raises(DomainError):
        max_entangled(1)


def test_tensor_product_rules(rng):
    a = random_tensor(rng, [(1, OUT), (0, IN)])
    b = random_tensor(rng, [(2, OUT)])
    assert np.array_equal((a @ LegTensor.scalar()).matrix, a.matrix)
    ab = tensor_product(a, b)
    assert ab.trace() == pytest.approx(a.trace() * b.trace())
    assert frobenius_norm(ab) == pytest.approx(frobenius_norm(a) * frobenius_norm(b))
    with pytest.raises(DomainError):
        tensor_product(a, a)


def test_partial_trace_rules(rng):
    assert partial_trace(max_entangled(2), [(1, OUT), (0, IN)]).matrix[()] == 2
    a = random_tensor(rng, [(1, OUT), (0, IN)])
    b = random_tensor(rng, [(2, OUT)])
    assert np.allclose(partial_trace(a @ b, [(2, OUT)]).matrix, b.trace() * a.matrix)
    with pytest.raises(DomainError):
        partial_trace(a, [(5, OUT)])


@given(seeds)
def test_partial_trace_against_loops(seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, [(2, OUT), (1, IN), (1, OUT)])
    t = a.tensor()
    ref = np.zeros((2, 2, 2, 2), dtype=complex)
    for i, j, k, l, m in itertools.product(range(2), repeat=5):
        ref[i, k, j, l] += t[i, m, k, j, m, l]
    out = partial_trace(a, [(1, IN)])
    assert np.allclose(out.matrix, ref.reshape(4, 4))


@given(seeds)
def test_leg_permutation_round_trip(seed):
    rng = np.random.default_rng(seed)
    labels = [(2, OUT), (1, IN), (1, OUT)]
    a = random_tensor(rng, labels)
    perm = [labels[i] for i in rng.permutation(3)]
    assert np.allclose(a.permute(perm).permute(labels).matrix, a.matrix)
    ref = partial_trace(a, [(1, OUT)])
    assert np.allclose(partial_trace(a.permute(perm), [(1, OUT)]).permute(ref.labels).matrix, ref.matrix)


def test_star_identity_link():
    psi = max_entangled(2, 2, 1)
    assert np.allclose(star_contract(psi, max_entangled(2, 1, 0)).matrix, max_entangled(2, 2, 0).matrix)


@given(seeds)
def test_star_is_composition(seed):
    rng = np.random.default_rng(seed)
    f, g = random_cptp(rng), random_cptp(rng)
    st_ = star_contract(superop_to_choi(f, 2, 1), superop_to_choi(g, 1, 0))
    assert np.max(np.abs(choi_to_superop(st_).matrix - (f @ g).matrix)) < 1e-12


@given(seeds)
def test_star_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (superop_to_choi(random_cptp(rng), t + 1, t) for t in (2, 1, 0))
    left = star_contract(star_contract(a, b), c)
    right = star_contract(a, star_contract(b, c))
    assert np.max(np.abs(left.matrix - right.matrix)) < 1e-10


def test_star_requires_boundary(rng):
    a = superop_to_choi(random_cptp(rng), 2, 1)
    with pytest.raises(DomainError):
        star_contract(a, superop_to_choi(random_cptp(rng), 3, 2))


def test_choi_conversions(rng):
    assert np.array_equal(superop_to_choi(Superoperator.identity(2)).matrix, max_entangled(2).matrix)
    f = random_cptp(rng)
    assert np.max(np.abs(choi_to_superop(superop_to_choi(f)).matrix - f.matrix)) < 1e-14
    rho = random_density(rng)
    c = superop_to_choi(f)
    act = partial_trace(LegTensor(c.legs, np.kron(np.eye(2), rho.T) @ c.matrix), [(0, IN)])
    assert np.allclose(act.matrix, f(rho))
    with pytest.raises(DomainError):
        choi_to_superop(random_tensor(rng, [(2, OUT), (1, IN), (1, OUT)]))


def test_born_rule_normalization_and_completeness(one_mode, rng):
    y = one_mode.process_tensor(one_mode.product_state(random_density(rng)), 2)
    assert born_rule(y, measurement_sequence({}, 2, 2)) == pytest.approx(1, abs=1e-12)
    projs = [np.diag([1.0, 0]), np.diag([0, 1.0])]
    total = 0
    for p0, p1, e in itertools.product(projs, repeat=3):
        o = measurement_sequence({0: Superoperator.conjugation(p0), 1: Superoperator.conjugation(p1)}, 2, 2, e)
        total += born_rule(y, o)
    assert total == pytest.approx(1, abs=1e-12)
    with pytest.raises(DomainError):
        born_rule(y, measurement_sequence({}, 1, 2))


def test_born_rule_matches_sequential_propagation(one_mode, rng):
    pi0 = one_mode.product_state(random_density(rng))
    y = one_mode.process_tensor(pi0, 3)
    ops = {t: random_cptp(rng, rank=1 + t) for t in range(3)}
    o = measurement_sequence(ops, 3, 2, effect=SIGMA_Z)
    seq = [(ops[t], t) for t in range(3)] + [(Superoperator.left(SIGMA_Z), 3)]
    assert abs(born_rule(y, o) - one_mode.multitime(seq, pi0, 3)) < 1e-12


def test_relative_entropy_cases(rng):
    a, b = random_density(rng, 4), random_density(rng, 4)
    assert relative_entropy(a, a) == pytest.approx(0, abs=1e-12)
    wa, va = np.linalg.eigh(a)
    # naive path: a ln a - a (ln b) with logs through scipy-free eigen-functions
    wb, vb = np.linalg.eigh(b)
    naive = np.trace(a @ (va @ np.diag(np.log(wa)) @ va.conj().T - vb @ np.diag(np.log(wb)) @ vb.conj().T)).real
    assert relative_entropy(a, b) == pytest.approx(naive, abs=1e-10)
    pure = np.diag([1.0, 0, 0, 0])
    assert relative_entropy(a, pure) == np.inf
    assert relative_entropy(pure, a) < np.inf


@given(seeds)
def test_klein_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b = random_density(rng, 3), random_density(rng, 3)
    assert relative_entropy(a, b) >= -1e-12


def test_relative_entropy_shape_mismatch():
    with pytest.raises(DomainError):
        relative_entropy(np.eye(2) / 2, np.eye(4) / 4)


def test_leg_validation():
    with pytest.raises(DomainError):
        LegTensor(((1, OUT, 2), (1, OUT, 2)), np.eye(4))
    with pytest.raises(DomainError):
        LegTensor(((1, OUT, 2),), np.eye(3))
    with pytest.raises(DomainError):
        LegTensor(((1, "sideways", 2),), np.eye(2))
    with pytest.raises(SizeError):
        check_leg_budget(13)


def test_tensor_set_consistency(rng):
    a = superop_to_choi(random_cptp(rng), 1, 0)
    ts = TensorSet({(1,): a, (2,): superop_to_choi(random_cptp(rng), 2, 0)}, {"kind": "maps"})
    assert ts.d == 2 and len(ts) == 2
    ts.check_contiguous()
    with pytest.raises(DomainError):
        TensorSet({(1,): a, (3,): superop_to_choi(random_cptp(rng, d=3), 1, 0)}).d
