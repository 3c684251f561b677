import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memkernel.errors import DomainError, SizeError
from memkernel.mttm import (
    ThreeTimeFamily, causality_defect, early_marginal, families_from_oracle, general_kernels,
    multitime_error_bound, project, project_P, project_two_time, propagate_correlation,
    rebuild_three_time, regression_kernels, steady_state_correlation, three_time_kernels,
    three_time_tensors, truncated_propagate, two_time_kernels,
)
from memkernel.superop import Superoperator
from memkernel.sysenv import SIGMA_MINUS, SIGMA_PLUS
from memkernel.tensornet import (
    IN, OUT, born_rule, choi_to_superop, measurement_sequence, partial_trace, superop_to_choi,
)
from memkernel.ttm import MapFamily, reconstruct_kernels

from conftest import random_cp, random_density, seeds


@pytest.fixture(scope="module")
def dyn(one_mode):
    return one_mode.dynamical_family(5)


@pytest.fixture(scope="module")
def dyn_free(decoupled):
    return decoupled.dynamical_family(5)


@pytest.fixture(scope="module")
def fam(one_mode):
    return families_from_oracle(one_mode, 8)


@pytest.fixture(scope="module")
def fam_free(decoupled):
    return families_from_oracle(decoupled, 6)


# -- full multi-time tensors ---------------------------------------------------
def test_causality_of_family(dyn):
    assert causality_defect(dyn) < 1e-12


def test_projection_memoryless_and_idempotent(dyn_free, dyn):
    e = dyn_free[4]
    assert np.max(np.abs(project_P(e, 2, dyn_free[2]).matrix - e.matrix)) < 1e-12
    p = project_P(dyn[4], 2, dyn[2])
    assert np.max(np.abs(project_P(p, 2, dyn[2]).matrix - p.matrix)) < 1e-12
    assert np.max(np.abs(early_marginal(dyn[4], 2).matrix - dyn[2].matrix)) < 1e-12
    with pytest.raises(DomainError):
        project_P(dyn[4], 4, dyn[1])


def test_second_generalized_kernel(dyn):
    T = general_kernels(dyn)
    ref = dyn[2].matrix - np.kron(dyn[1].shift(1).matrix, dyn[1].matrix)
    assert np.allclose(T[2].matrix, ref)
    assert np.array_equal(T[1].matrix, dyn[1].matrix)


def test_generalized_kernels_vanish_without_memory(dyn_free):
    T = general_kernels(dyn_free)
    assert max(np.max(np.abs(T[D].matrix)) for D in range(2, 6)) < 1e-12


def test_recursion_inversion(dyn):
    T = general_kernels(dyn, 4)
    rebuilt = truncated_propagate(T, {1: dyn[1]}, 1, 4)
    full = truncated_propagate(T, dyn, 4, 4)
    assert max(np.max(np.abs(full[D].matrix - dyn[D].matrix)) for D in range(1, 5)) < 1e-12
    # exact kernels with cutoff 4 rebuild everything from the one-step seed as well
    direct = {1: dyn[1]}
    for D in range(2, 5):
        acc = T[D].matrix.copy()
        for j in range(1, D):
            acc = acc + np.kron(T[D - j].matrix, direct[j].matrix)
        direct[D] = type(dyn[D])(dyn[D].legs, acc)
    assert max(np.max(np.abs(direct[D].matrix - dyn[D].matrix)) for D in range(1, 5)) < 1e-12
    assert np.max(np.abs(rebuilt[4].matrix - np.kron(np.kron(np.kron(
        dyn[1].shift(3).matrix, dyn[1].shift(2).matrix), dyn[1].shift(1).matrix), dyn[1].matrix))) < 1e-12


def test_truncation_bound_and_seeds(dyn):
    T = general_kernels(dyn)
    for l in range(1, 5):
        prop = truncated_propagate(T, dyn, l, 5)
        for n in range(l + 1, 6):
            err = np.linalg.norm(prop[n].matrix - dyn[n].matrix)
            assert err <= multitime_error_bound(T, n, l) + 1e-12
    same = truncated_propagate(T, dyn, 4, 5)
    assert all(same[D] is dyn[D] for D in range(1, 5))
    with pytest.raises(SizeError):
        truncated_propagate(T, dyn, 2, 7)
    with pytest.raises(DomainError):
        general_kernels({1: dyn[1], 3: dyn[3]})


# -- projections -----------------------------------------------------------
def test_projection_matches_two_time_family(one_mode, dyn):
    maps = MapFamily(0.1, one_mode.maps(5))
    e2 = {D: project_two_time(dyn[D]) for D in dyn}
    for D in e2:
        assert e2[D].labels == ((D, OUT), (0, IN))
        assert np.max(np.abs(choi_to_superop(e2[D]).matrix - maps.maps[D - 1])) < 1e-12
    T2 = two_time_kernels(e2)
    K = reconstruct_kernels(maps)
    for D in T2:
        assert np.max(np.abs(choi_to_superop(T2[D]).matrix - K.kernels[D - 1])) < 1e-12


def test_projected_process_tensor(one_mode, rng):
    w, v = np.linalg.eigh(one_mode.hamiltonian)
    y = one_mode.process_tensor(np.outer(v[:, 1], v[:, 1].conj()), 3)
    y2 = project_two_time(y)
    assert sorted(y2.labels) == sorted([(3, OUT), (0, IN), (0, OUT)])
    assert born_rule(y2, measurement_sequence({}, 1, 2).relabel({(1, OUT): (3, OUT)})) \
        == pytest.approx(1, abs=1e-12)


# -- three-time tensors --------------------------------------------------------
def test_three_time_tensors_basic(fam, fam_free):
    e3 = fam.three_time
    for (a, b), t in e3.entries.items():
        assert t.trace() == pytest.approx(4)
        marg = partial_trace(t, [(a + b, OUT), (b, IN)])
        ref = superop_to_choi(fam.maps.superop(b), out_t=b, in_t=0)
        assert np.max(np.abs(marg.matrix - 2 * ref.matrix)) < 1e-12
    for (a, b), t in fam_free.three_time.entries.items():
        prod = np.kron(superop_to_choi(fam_free.maps.superop(a)).matrix,
                       superop_to_choi(fam_free.maps.superop(b)).matrix)
        assert np.max(np.abs(t.matrix - prod)) < 1e-12


def test_three_time_matches_full_tensor_projection(one_mode, dyn):
    e3 = three_time_tensors(one_mode, 5)
    for n, m in [(3, 1), (4, 2), (5, 3), (5, 1)]:
        proj = project(dyn[n], keep={m})
        assert np.max(np.abs(proj.permute(e3[(n - m, m)].labels).matrix - e3[(n - m, m)].matrix)) < 1e-12


def test_three_time_kernels_vanish_without_memory(fam_free):
    t3 = fam_free.three_time_kernels
    assert max(np.max(np.abs(t.matrix)) for t in t3.entries.values()) < 1e-12
    reg = regression_kernels(fam_free.three_time, fam_free.maps, fam_free.kernels)
    assert max(np.max(np.abs(reg[k].matrix - t3[k].matrix)) for k in t3.entries) < 1e-12


def test_three_time_reconstruction(fam):
    back = rebuild_three_time(fam.three_time_kernels, fam.maps, fam.kernels)
    assert max(np.max(np.abs(back[k].matrix - fam.three_time[k].matrix)) for k in back.entries) < 1e-12
    herm = max(t.hermiticity_defect() for t in fam.three_time_kernels.entries.values())
    assert herm < 1e-12


def test_regression_differs_on_coupled_model(fam):
    reg = regression_kernels(fam.three_time, fam.maps, fam.kernels)
    diffs = [np.linalg.norm(reg[k].matrix - fam.three_time_kernels[k].matrix) for k in reg.entries]
    assert max(diffs) > 1e-3
    # pairs with m - k = 1 have no cross-operation sum
    assert max(np.linalg.norm(reg[(a, 1)].matrix - fam.three_time_kernels[(a, 1)].matrix)
               for a in range(1, 7)) < 1e-14


def test_missing_three_time_dependency(fam):
    partial = ThreeTimeFamily(0.1, {k: v for k, v in fam.three_time.entries.items() if k != (2, 2)})
    with pytest.raises(DomainError):
        three_time_kernels(partial, fam.maps, fam.kernels)


def test_threads_give_identical_kernels(fam, monkeypatch):
    monkeypatch.setenv("MEMKERNEL_THREADS", "3")
    t3 = three_time_kernels(fam.three_time, fam.maps, fam.kernels)
    assert all(np.array_equal(t3[k].matrix, fam.three_time_kernels[k].matrix) for k in t3.entries)


def test_serialization_round_trip(fam):
    ts = fam.three_time_kernels.to_tensor_set()
    back = ThreeTimeFamily.from_tensor_set(ts)
    assert back.kind == "kernels" and back.cutoff == 8


# -- correlations ------------------------------------------------------------
@pytest.mark.parametrize("regression", [False, True])
@given(seed=seeds, m=st.integers(1, 4))
def test_correlations_match_oracle(one_mode, fam, regression, seed, m):
    rng = np.random.default_rng(seed)
    t3 = regression_kernels(fam.three_time, fam.maps, fam.kernels) if regression else fam.three_time_kernels
    rho0 = random_density(rng)
    op = random_cp(rng)
    readout = rng.normal(size=(2, 2))
    history = [fam.maps.apply(j, rho0) for j in range(m + 1)]
    vals = propagate_correlation(fam.kernels, t3, history, op, readout, 8 - m)
    pi0 = one_mode.product_state(rho0)
    for a, v in enumerate(vals):
        late = Superoperator.left(readout)
        ops = [(late @ op, m)] if a == 0 else [(op, m), (late, m + a)]
        assert abs(v - one_mode.multitime(ops, pi0, m + a)) < 1e-12


def test_kernels_at_one_m_serve_all_later_m(one_mode, fam):
    # kernels from a single family propagate correlations for an insertion at m = 5 and m = 3
    rho0 = np.diag([0.8, 0.2])
    for m in (3, 5):
        history = [fam.maps.apply(j, rho0) for j in range(m + 1)]
        vals = propagate_correlation(fam.kernels, fam.three_time_kernels, history,
                                     Superoperator.left(SIGMA_MINUS), SIGMA_PLUS, 8 - m)
        ref = one_mode.multitime([(Superoperator.left(SIGMA_MINUS), m), (Superoperator.left(SIGMA_PLUS), 8)],
                                 one_mode.product_state(rho0), 8)
        assert abs(vals[-1] - ref) < 1e-12


def test_identity_insertion_gives_unit_correlation(fam):
    c = steady_state_correlation(fam.kernels, fam.three_time_kernels, Superoperator.identity(2), 3.0)
    assert np.max(np.abs(c.values - 1)) < 1e-10
    assert len(c.taus) == 31


def test_free_spin_closed_form(fam_free):
    c = steady_state_correlation(fam_free.kernels, fam_free.three_time_kernels,
                                 Superoperator.left(SIGMA_MINUS), 12.0, readout=SIGMA_PLUS)
    assert np.max(np.abs(c.values - (1 + np.cos(c.taus)) / 4)) < 1e-12


def test_truncated_correlation_converges_to_oracle():
    from memkernel.sysenv import ModelSpec, Oracle
    from memkernel.ttm import propagate_states

    oracle = Oracle(ModelSpec(alpha=0.3, omega_c=2.0, kT=0.5, num_modes=1, fock_cutoff=4,
                              omega_max=2.0, mode_damping=4.0), 0.1)
    full = families_from_oracle(oracle, 32)
    rho0 = np.array([[0.8, 0.3], [0.3, 0.2]])
    m, a = 20, 10
    ref = oracle.multitime([(Superoperator.left(SIGMA_MINUS), m), (Superoperator.left(SIGMA_PLUS), m + a)],
                           oracle.product_state(rho0), m + a)
    errors = []
    for l in (4, 8, 16, 32):
        history = list(propagate_states(full.kernels.with_cutoff(l), rho0, m))
        vals = propagate_correlation(full.kernels.with_cutoff(l), full.three_time_kernels, history,
                                     Superoperator.left(SIGMA_MINUS), SIGMA_PLUS, a, l3=l)
        errors.append(abs(vals[-1] - ref))
    assert errors[0] > errors[1] > errors[2]
    # a cutoff covering the full duration m + a is exact
    assert errors[3] < 1e-12
