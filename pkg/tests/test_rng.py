import numpy as np
import pytest

from coteach.rng import BetaParams, SeededRng, sample_beta, sample_gamma, sample_uniform


def test_uniform_determinism_and_range():
    a = SeededRng(1234)
    b = SeededRng(1234)
    draws_a = [sample_uniform(a) for _ in range(1000)]
    draws_b = [sample_uniform(b) for _ in range(1000)]
    assert draws_a == draws_b
    assert all(0.0 <= u < 1.0 for u in draws_a)


def test_uniform_mean_law_of_large_numbers():
    rng = SeededRng(7)
    draws = np.array([rng.uniform() for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01
    assert draws.min() >= 0.0 and draws.max() < 1.0


def test_split_streams_differ_and_reproduce():
    root = SeededRng(42)
    a1 = [root.split("alpha").uniform() for _ in range(3)]
    a2 = [SeededRng(42).split("alpha").uniform() for _ in range(3)]
    b = [SeededRng(42).split("beta").uniform() for _ in range(3)]
    assert a1 == a2
    assert a1 != b
    # nested paths are distinct from flat tags
    assert SeededRng(42).split("a").split("b").uniform() != SeededRng(42).split("ab").uniform()


def test_split_does_not_disturb_parent():
    r1 = SeededRng(9)
    r2 = SeededRng(9)
    r1.split("anything")
    assert r1.uniform() == r2.uniform()


def test_gamma_moments():
    rng = SeededRng(100)
    exp_draws = np.array([sample_gamma(1.0, rng) for _ in range(100_000)])
    assert abs(exp_draws.mean() - 1.0) < 0.02  # Gamma(1) is Exponential(1)
    big = np.array([sample_gamma(10.0, rng) for _ in range(100_000)])
    assert abs(big.mean() - 10.0) < 0.1


def test_gamma_support_and_small_shape_boost():
    rng = SeededRng(5)
    draws = np.array([sample_gamma(0.3, rng) for _ in range(20_000)])
    assert (draws > 0.0).all()
    assert abs(draws.mean() - 0.3) < 0.03


def test_gamma_rejects_bad_shape():
    rng = SeededRng(0)
    with pytest.raises(ValueError):
        sample_gamma(0.0, rng)
    with pytest.raises(ValueError):
        sample_gamma(-1.5, rng)


def test_beta_uniform_case():
    rng = SeededRng(808)
    draws = np.array([sample_beta(BetaParams(1.0, 1.0), rng) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01
    # empirical CDF within 0.01 of uniform at the deciles
    for decile in np.arange(0.1, 1.0, 0.1):
        assert abs((draws < decile).mean() - decile) < 0.01


def test_beta_10_1_paper_expectation():
    rng = SeededRng(909)
    draws = np.array([sample_beta(BetaParams(10.0, 1.0), rng) for _ in range(100_000)])
    assert abs(draws.mean() - 0.909) < 0.01


def test_beta_mirror_symmetry():
    n = 20_000
    fwd = SeededRng(33)
    rev = SeededRng(34)
    m1 = np.mean([sample_beta(BetaParams(2.0, 5.0), fwd) for _ in range(n)])
    m2 = np.mean([sample_beta(BetaParams(5.0, 2.0), rev) for _ in range(n)])
    assert abs(m1 - (1.0 - m2)) < 0.01


@pytest.mark.parametrize("alpha,beta", [(0.5, 0.5), (1.0, 3.0), (10.0, 1.0), (4.0, 4.0)])
def test_beta_mean_within_three_standard_errors(alpha, beta):
    n = 100_000
    rng = SeededRng(int(alpha * 1000 + beta))
    draws = np.array([sample_beta(BetaParams(alpha, beta), rng) for _ in range(n)])
    mean = alpha / (alpha + beta)
    var = alpha * beta / ((alpha + beta) ** 2 * (alpha + beta + 1.0))
    assert abs(draws.mean() - mean) < 3.0 * np.sqrt(var / n)
    assert draws.min() > 0.0 and draws.max() < 1.0


def test_beta_params_validation():
    with pytest.raises(ValueError):
        BetaParams(0.0, 1.0)
    with pytest.raises(ValueError):
        BetaParams(1.0, -2.0)
    assert BetaParams(10, 1).mean() == pytest.approx(10.0 / 11.0)
