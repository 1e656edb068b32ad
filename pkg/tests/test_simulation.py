import numpy as np
import pytest

from kroncov import linalg
from kroncov.errors import ConfigError, DimensionError
from kroncov.linalg import KroneckerCov, random_orthogonal, random_spd
from kroncov.simulation import (
    RiskRow,
    Scenario,
    applicable,
    cell_losses,
    convergence_rate_check,
    predicted_rate,
    relative_frobenius_loss,
    risk_experiment,
)

from oracles import frobenius_loss_loop


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture
def small_cap():
    old = linalg.MATERIALIZE_CAP
    linalg.set_materialize_cap(4)
    yield
    linalg.set_materialize_cap(old)


class TestLoss:
    def test_zero(self):
        kc = KroneckerCov((random_spd(2, rng(1)), random_spd(3, rng(2))))
        assert relative_frobenius_loss(kc, kc, 10) == pytest.approx(0.0, abs=1e-12)

    def test_double(self):
        kc = KroneckerCov((random_spd(2, rng(1)), random_spd(3, rng(2))))
        two = KroneckerCov(kc.factors, 2 * kc.scale)
        assert relative_frobenius_loss(two, kc, 1) == pytest.approx(1.0)

    def test_oracle(self):
        g = rng(3)
        a = KroneckerCov((random_spd(2, g), random_spd(3, g)), 1.3)
        b = KroneckerCov((random_spd(2, g), random_spd(3, g)), 0.4)
        want = frobenius_loss_loop(a.materialize(), b.materialize(), 7)
        assert relative_frobenius_loss(a, b, 7) == pytest.approx(want, rel=1e-12)

    def test_factorized_matches_dense(self, small_cap):
        g = rng(4)
        a = KroneckerCov((random_spd(2, g), random_spd(3, g), random_spd(2, g)), 1.3)
        b = KroneckerCov((random_spd(2, g), random_spd(3, g), random_spd(2, g)), 0.9)
        want = frobenius_loss_loop(linalg.kron_all(a.factors) * a.scale, linalg.kron_all(b.factors) * b.scale, 3)
        assert relative_frobenius_loss(a, b, 3) == pytest.approx(want, rel=1e-10)

    def test_dims_mismatch(self):
        with pytest.raises(DimensionError):
            relative_frobenius_loss(KroneckerCov((np.eye(2), np.eye(3))), KroneckerCov((np.eye(3), np.eye(2))), 1)


class TestScenario:
    def test_profiles(self):
        sc = Scenario(dims=(3, 2), profile="linear")
        assert [list(s) for s in sc.spectra()] == [[1, 2, 3], [1, 2]]
        assert sc.label == "linear"
        assert np.allclose(sc.truth().materialize(), np.kron(np.diag([1, 2, 3]), np.diag([1, 2])))

    def test_per_mode_spectra(self):
        sc = Scenario(dims=(2, 2), profile=[[1.0, 4.0], [2.0, 3.0]])
        assert np.allclose(sc.spectra()[0], [1, 4])

    @pytest.mark.parametrize(
        "kw",
        [
            {"dims": ()},
            {"dims": (0, 2)},
            {"estimators": ("XYZ",)},
            {"n_grid": ()},
            {"n_grid": (0,)},
            {"reps": 1},
            {"reps": 10, "max_reps": 5},
            {"target_rel_se": 0.0},
            {"profile": [[1.0, 2.0]]},
        ],
    )
    def test_invalid(self, kw):
        kw = {"dims": (2, 2), **kw}
        with pytest.raises((ConfigError, DimensionError)):
            Scenario(**kw)

    def test_row_dict(self):
        row = RiskRow("PT", 50, (3, 3), "constant", 2.0, 0.1, 200)
        d = row.to_dict()
        assert d["dims"] == "3x3" and d["k"] == 2 and d["status"] == "ok"


class TestApplicable:
    def test_cases(self):
        assert applicable("PT", (2, 2, 2), 1) is None
        assert "k=2" in applicable("MLE", (2, 2, 2), 100)
        assert "k=2" in applicable("RPT", (2, 2, 2), 100)
        assert "n >= p" in applicable("RPT", (3, 3), 5)
        assert applicable("RPT", (3, 3), 9) is None
        assert applicable("MLE", (3, 3), 5) is None


class TestRiskExperiment:
    def test_deterministic_and_thread_independent(self):
        sc = Scenario(dims=(2, 3), profile="linear", n_grid=(10, 40), reps=20, max_reps=20, seed=5)
        a = risk_experiment(sc, threads=1)
        b = risk_experiment(sc, threads=1)
        c = risk_experiment(sc, threads=3)
        for x, y, z in zip(a.rows, b.rows, c.rows):
            assert x.to_dict() == y.to_dict()
            assert np.array_equal([x.mean_loss], [z.mean_loss], equal_nan=True)

    def test_not_applicable_cell(self):
        sc = Scenario(dims=(3, 3), n_grid=(5,), reps=10, max_reps=10)
        row = risk_experiment(sc).get("RPT", 5)
        assert row.status == "not-applicable" and row.reps == 0 and np.isnan(row.mean_loss)

    def test_escalation(self):
        sc = Scenario(dims=(2, 2), estimators=("PT",), n_grid=(20,), reps=4, max_reps=4096, target_rel_se=0.05)
        row = risk_experiment(sc).rows[0]
        assert row.status == "ok"
        assert row.mc_se < 0.05 * row.mean_loss
        assert row.reps in {4 * 2**i for i in range(11)} and row.reps > 4

    def test_se_target_missed(self):
        sc = Scenario(dims=(2, 2), estimators=("PT",), n_grid=(20,), reps=4, max_reps=4, target_rel_se=1e-4)
        row = risk_experiment(sc).rows[0]
        assert row.status == "se-target-missed" and row.reps == 4

    def test_rel_error_column(self):
        sc = Scenario(dims=(2, 2), estimators=("PT",), n_grid=(20,), reps=50, max_reps=50)
        out = cell_losses(sc.truth(), ["PT"], 20, range(50), sc.seed)
        row = risk_experiment(sc).rows[0]
        assert row.mean_rel_error == pytest.approx(np.mean([np.sqrt(o["PT"] / 20) for o in out]))
        assert row.mean_loss == pytest.approx(np.mean([o["PT"] for o in out]))

    def test_failures_counted(self):
        # one 2x4 draw leaves tr_2(S) and the second flip-flop iterate at rank 2, so every fit fails
        sc = Scenario(dims=(2, 4), estimators=("PT", "MLE"), n_grid=(1,), reps=6, max_reps=6)
        tab = risk_experiment(sc)
        for row in tab.rows:
            assert row.failures == 6 and row.reps == 0 and np.isnan(row.mean_loss)
            assert row.status == "se-target-missed"

    def test_losses_positive(self):
        out = cell_losses(Scenario(dims=(2, 3), profile="exponential").truth(), ["PT", "MLE", "RPT"], 30, range(20), 1)
        for o in out:
            assert all(v is not None and np.isfinite(v) and v > 0 for v in o.values())

    def test_orthogonal_invariance(self):
        g = rng(6)
        truth = Scenario(dims=(3, 3), profile="linear").truth()
        o1, o2 = random_orthogonal(3, g), random_orthogonal(3, g)
        rotated = KroneckerCov((o1 @ truth.factors[0] @ o1.T, o2 @ truth.factors[1] @ o2.T))
        ests = ["PT", "MLE", "RPT"]
        a = cell_losses(truth, ests, 20, range(400), 7)
        b = cell_losses(rotated, ests, 20, range(400), 8)
        for e in ests:
            x = np.array([o[e] for o in a])
            y = np.array([o[e] for o in b])
            se = np.sqrt(x.var(ddof=1) / x.size + y.var(ddof=1) / y.size)
            assert abs(x.mean() - y.mean()) <= 3 * se

    def test_pt_large_n_identity(self):
        # at Sigma = I, PT is the projection onto the tangent space, each direction carrying variance 2,
        # so the large-n risk is 2 (6 + 6 - 1) / 9
        sc = Scenario(dims=(3, 3), estimators=("PT",), n_grid=(2500,), reps=400, max_reps=400)
        row = risk_experiment(sc).rows[0]
        want = 22 / 9
        assert abs(row.mean_loss - want) <= 3 * row.mc_se


class TestConvergenceRate:
    def test_predicted_rate_constant(self):
        spectra = [np.ones(4)] * 3
        assert predicted_rate(spectra, 1) == pytest.approx(4 / np.sqrt(64))

    def test_k3_decreasing(self):
        tab = convergence_rate_check(3, (2, 4, 8), reps=30)
        assert np.all(np.diff(tab.empirical) < 0)
        assert np.all(np.diff(tab.predicted) < 0)

    def test_k3_slope(self):
        tab = convergence_rate_check(3, (8, 16, 32), reps=20, seed=1)
        assert tab.slope == pytest.approx(1.0, abs=0.2)

    def test_k2_flat(self):
        tab = convergence_rate_check(2, (4, 8, 16), reps=40)
        assert np.isnan(tab.slope)
        assert np.allclose(tab.predicted, 1.0)
        assert tab.empirical.max() / tab.empirical.min() < 2.0

    def test_k2_exponential_no_decay(self):
        tab = convergence_rate_check(2, (4, 8, 16), profile="exponential", reps=40)
        assert tab.empirical[-1] > 0.5 * tab.empirical[0]

    def test_needs_k2(self):
        with pytest.raises(ConfigError):
            convergence_rate_check(1, (2, 3))
