import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from svm_oracle import oracle_dual

from pfsynth.numcore import Rng
from pfsynth.preprocess import Spectrogram
from pfsynth.sieve import (
    OcsvmModel,
    SvmConvergenceError,
    SvmFormatError,
    decision_value,
    featurize,
    filter_samples,
    rbf_kernel,
    rbf_matrix,
    scale_gamma,
    solve_dual,
    train_ocsvm,
)
from pfsynth.toy import toy_image


# -- kernel and features -------------------------------------------------------------

def test_kernel_examples():
    assert rbf_kernel([0.0, 0.0], [0.0, 0.0], 3.0) == 1.0
    assert rbf_kernel([1.0, 0.0], [0.0, 0.0], 1.0) == pytest.approx(math.exp(-1), abs=1e-12)
    assert rbf_kernel([1.0, 0.0], [0.0, 0.0], 1.0) == pytest.approx(0.367879, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0))
def test_kernel_symmetry_and_matrix(seed, gamma):
    x, y = np.random.default_rng(seed).normal(size=(2, 6))
    assert rbf_kernel(x, y, gamma) == rbf_kernel(y, x, gamma)
    assert rbf_matrix(x, y, gamma)[0, 0] == pytest.approx(rbf_kernel(x, y, gamma), rel=1e-9, abs=1e-300)


def test_kernel_errors():
    with pytest.raises(ValueError):
        rbf_kernel([1.0], [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        rbf_kernel([1.0], [1.0], 0.0)


def test_featurize_pools_channel_zero():
    img = np.zeros((8, 8, 3))
    img[:4, :4, 0] = 1.0
    img[:, :, 1] = 5.0
    f = featurize(img, 2)
    np.testing.assert_array_equal(f, [1.0, 0.0, 0.0, 0.0])
    assert featurize(Spectrogram(img, "preictal"), 4).shape == (16,)
    with pytest.raises(ValueError):
        featurize(img, 3)


def test_scale_gamma():
    x = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert scale_gamma(x) == pytest.approx(1.0 / (2 * 1.0))
    assert scale_gamma(np.ones((3, 4))) == 1.0


# -- dual solver ---------------------------------------------------------------------

def test_single_point():
    m = train_ocsvm([[0.3, -1.0]], nu=0.4, gamma=1.0)
    np.testing.assert_array_equal(m.beta, [1.0])
    assert decision_value(m, [0.3, -1.0]) >= 0


def test_six_points_match_oracle():
    x = np.random.default_rng(6).normal(size=(6, 2))
    K = rbf_matrix(x, x, 1.0)
    sol = solve_dual(K, 0.5)
    obj, beta, rho = oracle_dual(K, 0.5)
    assert sol.objective == pytest.approx(obj, abs=1e-6)
    np.testing.assert_allclose(sol.beta, beta, atol=1e-6)
    m = train_ocsvm(x, 0.5, 1.0)
    q = np.random.default_rng(7).normal(size=(5, 2))
    oracle_dec = rbf_matrix(q, x, 1.0) @ beta - rho
    np.testing.assert_allclose(m.decision(q), oracle_dec, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.floats(0.05, 1.0), st.floats(0.1, 3.0), st.integers(0, 2**31 - 1))
def test_solver_matches_oracle_property(l, nu, gamma, seed):
    x = np.random.default_rng(seed).normal(size=(l, 2))
    K = rbf_matrix(x, x, gamma)
    sol = solve_dual(K, nu)
    obj, _, _ = oracle_dual(K, nu)
    assert sol.objective == pytest.approx(obj, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.floats(0.05, 1.0), st.integers(0, 2**31 - 1))
def test_dual_feasibility(l, nu, seed):
    x = np.random.default_rng(seed).normal(size=(l, 3))
    sol = solve_dual(rbf_matrix(x, x, 0.5), nu)
    C = 1.0 / (nu * l)
    assert sol.beta.sum() == pytest.approx(1.0, abs=1e-15)
    assert sol.beta.min() >= -1e-12 and sol.beta.max() <= C + 1e-12
    assert sol.residual <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 60), st.floats(0.05, 0.9), st.integers(0, 2**31 - 1))
def test_nu_property(l, nu, seed):
    x = np.random.default_rng(seed).normal(size=(l, 2))
    m = train_ocsvm(x, nu, 0.5)
    outliers = np.mean(m.decision(x) < 0)
    sv_fraction = len(m.beta) / l
    assert outliers <= nu + 1.0 / l
    assert sv_fraction >= nu - 1.0 / l


def test_margin_sv_and_far_point():
    x = np.random.default_rng(8).normal(size=(30, 2))
    m = train_ocsvm(x, 0.2, 1.0)
    C = 1.0 / (0.2 * 30)
    free = (m.beta > 1e-9) & (m.beta < C - 1e-9)
    assert free.any()
    assert np.all(np.abs(m.decision(m.support_vectors[free])) <= 1e-5)
    assert decision_value(m, [1e3, 1e3]) == pytest.approx(-m.rho, abs=1e-12)
    assert m.rho > 0


def test_decision_continuous_in_query_and_gamma():
    x = np.random.default_rng(9).normal(size=(20, 2))
    m = train_ocsvm(x, 0.3, 1.0)
    q = np.array([0.2, -0.1])
    assert abs(decision_value(m, q + 1e-7) - decision_value(m, q)) < 1e-5
    m2 = OcsvmModel(m.support_vectors, m.beta, m.rho, m.gamma * (1 + 1e-7), m.nu)
    assert abs(decision_value(m2, q) - decision_value(m, q)) < 1e-5


def test_order_invariance():
    x = np.random.default_rng(10).normal(size=(25, 3))
    perm = np.random.default_rng(11).permutation(25)
    a = train_ocsvm(x, 0.25, 0.7)
    b = train_ocsvm(x[perm], 0.25, 0.7)
    q = np.random.default_rng(12).normal(size=(50, 3))
    np.testing.assert_allclose(a.decision(q), b.decision(q), atol=1e-8)


def test_convergence_error_carries_residual():
    x = np.random.default_rng(13).normal(size=(30, 2))
    with pytest.raises(SvmConvergenceError) as err:
        solve_dual(rbf_matrix(x, x, 1.0), 0.1, max_iter=1)
    assert err.value.residual > 0 and err.value.iterations == 1


def test_bad_nu():
    with pytest.raises(ValueError):
        train_ocsvm([[0.0]], nu=0.0)
    with pytest.raises(ValueError):
        train_ocsvm([[0.0]], nu=1.5)


# -- model file ----------------------------------------------------------------------

def test_model_round_trip(tmp_path):
    x = np.random.default_rng(14).normal(size=(12, 4))
    m = train_ocsvm(x, 0.3)
    m.save(tmp_path / "m.pfsv")
    back = OcsvmModel.load(tmp_path / "m.pfsv")
    assert back.to_bytes() == m.to_bytes()
    np.testing.assert_array_equal(back.decision(x), m.decision(x))
    with pytest.raises(SvmFormatError):
        OcsvmModel.from_bytes(m.to_bytes()[:-3])
    with pytest.raises(SvmFormatError):
        OcsvmModel.from_bytes(b"XXXX" + m.to_bytes()[4:])


# -- filtering -----------------------------------------------------------------------

def specs_from(images):
    return [Spectrogram(im, "preictal", "synthetic", f"s{i}") for i, im in enumerate(images)]


def test_filter_empty_and_order():
    m = train_ocsvm(np.random.default_rng(0).normal(size=(5, 4)), 0.5, 1.0)
    assert filter_samples(m, [], 2).kept == []
    imgs = np.random.default_rng(1).uniform(-1, 1, size=(20, 2, 2, 3))
    res = filter_samples(m, specs_from(imgs), 2)
    ids = [s.source_id for s in res.kept]
    assert ids == sorted(ids, key=lambda s: int(s[1:]))
    assert res.kept_count + res.discarded_count == 20
    assert all(v >= 0 for v in res.decisions[[int(s[1:]) for s in ids]])


def test_filter_keeps_most_training_points():
    rng = Rng(2)
    train = [toy_image("preictal", rng, 32) for _ in range(30)]
    m = train_ocsvm(np.stack([featurize(t) for t in train]), 0.1)
    res = filter_samples(m, specs_from(train))
    assert res.kept_count >= math.ceil((1 - 0.1) * 30)


def test_filter_idempotent():
    rng = np.random.default_rng(3)
    m = train_ocsvm(rng.normal(size=(20, 4)), 0.3, 0.5)
    imgs = rng.normal(scale=1.5, size=(40, 2, 2, 1)).clip(-1, 1)
    once = filter_samples(m, specs_from(imgs), 2).kept
    twice = filter_samples(m, once, 2).kept
    assert [s.source_id for s in twice] == [s.source_id for s in once]


def test_noise_images_mostly_discarded():
    rng = Rng(4)
    real = [toy_image("preictal", rng, 32) for _ in range(40)]
    m = train_ocsvm(np.stack([featurize(r) for r in real]), 0.1)
    noise = Rng(5).uniform((40, 32, 32, 3), -1.0, 1.0)
    res = filter_samples(m, specs_from(noise))
    assert res.discarded_count > 20
