import numpy as np
import pytest

from iqattack.attack import (
    AttackConfig,
    decay_schedule,
    gamma_at,
    init_perturbation,
    perturb,
    rng_for_image,
    run_attack,
    square_size,
)
from iqattack.image import ImageTensor, linf_distance
from iqattack.loss import LossKind
from iqattack.oracle import (
    MeanBrightnessScorer,
    OracleFailure,
    QualityOracle,
    ScoreBounds,
)

from conftest import grid_image

BOUNDS = ScoreBounds(0.0, 10.0)
RHO = 3.0 / 255.0


def config(**kw):
    defaults = dict(max_iterations=50, num_patches=2, gamma0=0.04, rho=RHO,
                    bounds=BOUNDS, loss=LossKind.BI_DIRECTIONAL, seed=7)
    defaults.update(kw)
    return AttackConfig(**defaults)


class FailingOracle(QualityOracle):
    """Mean-brightness scorer that dies after a fixed number of queries."""

    def __init__(self, fail_after: int):
        self._inner = MeanBrightnessScorer(BOUNDS)
        self._fail_after = fail_after

    def score(self, img):
        if self._inner.queries_used() >= self._fail_after:
            raise OracleFailure("injected failure")
        return self._inner.score(img)

    def bounds(self):
        return BOUNDS

    def queries_used(self):
        return self._inner.queries_used()


class TestSquareSize:
    def test_direct_evaluation(self):
        assert square_size(0.04, 512, 512) == 102

    def test_lower_clamp(self):
        assert square_size(1e-9, 64, 64) == 1

    def test_upper_clamp(self):
        assert square_size(1.0, 10, 10) == 10
        assert square_size(1.0, 10, 20) == 10


class TestDecaySchedule:
    def test_full_budget_milestones(self):
        assert decay_schedule(10000) == [10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000]

    def test_half_budget(self):
        assert decay_schedule(5000) == [5, 25, 100, 250, 500, 1000, 2000, 3000, 4000]

    def test_tiny_budget_drops_and_rounds(self):
        assert decay_schedule(100) == [1, 2, 5, 10, 20, 40, 60, 80]

    def test_dedupe(self):
        # T=20: 10->0(drop), 50->0.1->0(drop), 200->0.4->0(drop), 500->1,
        # 1000->2, 2000->4, 4000->8, 6000->12, 8000->16
        assert decay_schedule(20) == [1, 2, 4, 8, 12, 16]

    def test_gamma_at_halves_at_milestones(self):
        milestones = decay_schedule(10000)
        assert gamma_at(9, 0.04, milestones) == 0.04
        assert gamma_at(10, 0.04, milestones) == 0.02
        assert gamma_at(50, 0.04, milestones) == 0.01
        assert gamma_at(10000, 0.04, milestones) == 0.04 / 2**9


class TestInitPerturbation:
    def test_disabled_returns_input(self, rng):
        x = grid_image(rng, 4, 4)
        assert init_perturbation(x, RHO, rng, init_random=False) is x

    def test_two_point_support_and_frequency(self):
        rng = np.random.default_rng(3)
        x = ImageTensor(np.full((64, 64, 1), 0.5))
        out = init_perturbation(x, RHO, rng)
        values = out.array - 0.5
        assert set(np.round(values.flatten(), 12)) <= {round(-RHO, 12), round(RHO, 12)}
        assert abs(float(np.mean(values > 0)) - 0.5) < 0.05

    def test_clipping_at_zero(self):
        rng = np.random.default_rng(4)
        x = ImageTensor(np.zeros((8, 8, 3)))
        out = init_perturbation(x, RHO, rng)
        assert set(np.round(out.array.flatten(), 12)) <= {0.0, round(RHO, 12)}


class TestPerturb:
    def test_full_cover_patch_replicates_channels(self):
        rng = np.random.default_rng(5)
        x = ImageTensor(np.full((6, 6, 3), 0.5))
        cfg = config(num_patches=1, gamma0=1.0, max_iterations=10000)
        out = perturb(x, x, t=1, config=cfg, rng=rng, milestones=[])
        delta = out.array - 0.5
        assert set(np.round(delta.flatten(), 12)) == {round(-RHO, 12), round(RHO, 12)}
        assert np.array_equal(delta[:, :, 0], delta[:, :, 1])
        assert np.array_equal(delta[:, :, 0], delta[:, :, 2])

    def test_constant_per_channel_mode(self):
        rng = np.random.default_rng(6)
        x = ImageTensor(np.full((6, 6, 3), 0.5))
        cfg = config(num_patches=1, gamma0=1.0, patch_mode="constant-per-channel")
        out = perturb(x, x, t=1, config=cfg, rng=rng, milestones=[])
        delta = out.array - 0.5
        for ch in range(3):
            assert len(set(np.round(delta[:, :, ch].flatten(), 12))) == 1

    def test_budget_holds_brute_force_small_images(self):
        rng = np.random.default_rng(7)
        cfg = config(max_iterations=100)
        x = grid_image(rng, 4, 4)
        x_opt = init_perturbation(x, RHO, rng)
        for t in range(1, 101):
            x_opt = perturb(x, x_opt, t, cfg, rng)
            assert linf_distance(x_opt, x) <= RHO + 1e-9

    def test_deterministic_given_seed(self):
        x = ImageTensor(np.full((8, 8, 3), 0.4))
        cfg = config()
        a = perturb(x, x, 3, cfg, np.random.default_rng(42))
        b = perturb(x, x, 3, cfg, np.random.default_rng(42))
        assert a == b


class TestRunAttack:
    def test_zero_iterations(self, rng):
        x = grid_image(rng, 8, 8)
        oracle = MeanBrightnessScorer(BOUNDS)
        result = run_attack(x, oracle, config(max_iterations=0))
        assert result.queries == 1
        assert result.adversarial == init_perturbation(
            x, RHO, np.random.default_rng(np.random.SeedSequence(7)), True
        )

    def test_query_accounting(self, rng):
        for T in (0, 1, 17, 100):
            x = grid_image(rng, 8, 8)
            oracle = MeanBrightnessScorer(BOUNDS)
            result = run_attack(x, oracle, config(max_iterations=T))
            assert result.queries == 1 + T
            # one extra (uncounted) query fetched the branch anchor
            assert oracle.queries_used() == result.queries + 1

    def test_accepted_losses_strictly_decrease(self, rng):
        x = grid_image(rng, 12, 12)
        result = run_attack(x, MeanBrightnessScorer(BOUNDS), config(max_iterations=200))
        accepted = [loss for _, loss, ok in result.loss_trace if ok]
        assert all(b < a for a, b in zip(accepted, accepted[1:]))

    def test_direction_above_midpoint(self):
        x = ImageTensor(np.full((12, 12, 3), 0.8))
        result = run_attack(x, MeanBrightnessScorer(BOUNDS), config(max_iterations=150))
        assert result.final_score < result.original_score

    def test_direction_below_midpoint(self):
        x = ImageTensor(np.full((12, 12, 3), 0.2))
        result = run_attack(x, MeanBrightnessScorer(BOUNDS), config(max_iterations=150))
        assert result.final_score > result.original_score

    def test_budget_and_linf_field(self):
        x = ImageTensor(np.full((10, 10, 3), 0.6))
        seen = []
        result = run_attack(
            x,
            MeanBrightnessScorer(BOUNDS),
            config(max_iterations=80),
            on_candidate=lambda t, cand: seen.append(linf_distance(cand, x)),
        )
        assert len(seen) == 80
        assert max(seen) <= RHO + 1e-9
        assert result.linf <= RHO + 1e-9

    def test_determinism_bitwise(self, rng):
        x = grid_image(rng, 10, 10)
        cfg = config(max_iterations=60, seed=99)
        r1 = run_attack(x, MeanBrightnessScorer(BOUNDS), cfg)
        r2 = run_attack(x, MeanBrightnessScorer(BOUNDS), cfg)
        assert r1.adversarial == r2.adversarial
        assert r1.loss_trace == r2.loss_trace
        assert r1.final_score == r2.final_score

    def test_bounds_mismatch_rejected(self, rng):
        x = grid_image(rng, 8, 8)
        oracle = MeanBrightnessScorer(ScoreBounds(1.0, 10.0))
        with pytest.raises(ValueError, match="bounds"):
            run_attack(x, oracle, config())

    def test_abort_keeps_partial_trace(self, rng):
        x = grid_image(rng, 8, 8)
        oracle = FailingOracle(fail_after=12)
        result = run_attack(x, oracle, config(max_iterations=100), original_score=7.0)
        assert result.aborted
        assert "injected failure" in result.abort_reason
        assert result.queries == 12  # init + 11 completed iterations
        assert len(result.loss_trace) == 12

    def test_mse_loss_deviates(self):
        x = ImageTensor(np.full((12, 12, 3), 0.8))
        result = run_attack(
            x, MeanBrightnessScorer(BOUNDS), config(max_iterations=200, loss=LossKind.MSE_BASELINE)
        )
        assert abs(result.final_score - result.original_score) > 0.0

    def test_linear_oracle_progress(self):
        # the accept-if-improved loop should claw back a meaningful share of
        # the analytic optimum on the linear scorer
        x = ImageTensor(np.full((16, 16, 3), 0.7))
        result = run_attack(x, MeanBrightnessScorer(BOUNDS), config(max_iterations=500, seed=1))
        optimum = 10.0 * (0.7 - RHO)
        achieved = result.original_score - result.final_score
        assert achieved >= 0.4 * (result.original_score - optimum)


class TestRngStreams:
    def test_image_streams_are_order_independent(self):
        a = rng_for_image(42, 3).integers(0, 2**31)
        _ = rng_for_image(42, 1).integers(0, 2**31)
        b = rng_for_image(42, 3).integers(0, 2**31)
        assert a == b

    def test_distinct_streams_per_index(self):
        vals = {int(rng_for_image(42, i).integers(0, 2**62)) for i in range(16)}
        assert len(vals) == 16
