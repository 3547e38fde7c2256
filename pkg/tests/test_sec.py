import numpy as np
import pytest

from cslr import sec
from cslr.autodiff import Tensor, backward, finite_diff_check


@pytest.fixture
def params():
    return sec.init_see_params(d=8, t_max=12, dtcn_kernel=5, rng=np.random.default_rng(0))


class TestSeeForward:
    def test_output_is_d_vector_for_any_length(self, params):
        rng = np.random.default_rng(1)
        for t in (1, 4, 12):
            out = sec.see_forward(Tensor(rng.normal(size=(t, 8))), params, n_heads=2)
            assert out.shape == (8,)

    def test_sequence_longer_than_table_rejected(self, params):
        with pytest.raises(ValueError, match="positional table"):
            sec.see_forward(Tensor(np.zeros((13, 8))), params, n_heads=2)

    def test_perturbing_one_frame_changes_embedding(self, params):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 8))
        base = sec.see_forward(Tensor(x), params, n_heads=2).data
        x2 = x.copy()
        x2[3] += 0.5
        pert = sec.see_forward(Tensor(x2), params, n_heads=2).data
        assert np.abs(base - pert).max() > 0

    def test_deterministic_shared_extractor(self, params):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 8))
        a = sec.see_forward(Tensor(x), params, n_heads=2).data
        b = sec.see_forward(Tensor(x), params, n_heads=2).data
        np.testing.assert_array_equal(a, b)

    def test_gradient_reaches_sen_token(self, params):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 8)))
        from cslr import autodiff as ad

        out = ad.reduce_sum(sec.see_forward(x, params, n_heads=2))
        backward(out)
        assert params["sen"].grad is not None
        assert np.abs(params["sen"].grad).max() > 0


class TestNegativeIndices:
    def test_pair_swaps(self):
        assert sec.negative_indices(2) == [1, 0]

    def test_four_is_cyclic_shift(self):
        assert sec.negative_indices(4) == [1, 2, 3, 0]

    @pytest.mark.parametrize("b", range(2, 9))
    def test_no_fixed_points(self, b):
        assert all(i != j for i, j in enumerate(sec.negative_indices(b)))

    def test_singleton_rejected(self):
        with pytest.raises(ValueError, match="no negative available"):
            sec.negative_indices(1)


class TestCosineDistance:
    def test_self_distance_zero(self):
        x = Tensor([1.0, 2.0, 3.0])
        assert sec.cosine_distance(x, x).item() == pytest.approx(0.0, abs=1e-12)

    def test_antiparallel_is_two(self):
        x = Tensor([1.0, -2.0, 0.5])
        y = Tensor(-x.data)
        assert sec.cosine_distance(x, y).item() == pytest.approx(2.0)

    def test_orthogonal_is_one(self):
        assert sec.cosine_distance(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(1.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero vector"):
            sec.cosine_distance(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(2, 6))
        base = sec.cosine_distance(Tensor(x), Tensor(y)).item()
        scaled = sec.cosine_distance(Tensor(3.7 * x), Tensor(0.02 * y)).item()
        assert abs(base - scaled) <= 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=5), requires_grad=True)
        y = Tensor(rng.normal(size=5))
        assert finite_diff_check(lambda t: sec.cosine_distance(t, y), x) <= 1e-5


class TestSecLoss:
    def test_perfect_separation_is_zero(self):
        a = Tensor([1.0, 0.0])
        assert sec.sec_loss(a, Tensor([2.0, 0.0]), Tensor([-1.0, 0.0]), margin=2.0).item() == 0.0

    def test_equal_distances_give_margin(self):
        a = Tensor([1.0, 0.0])
        p = Tensor([0.0, 1.0])
        n = Tensor([0.0, -1.0])
        assert sec.sec_loss(a, p, n, margin=2.0).item() == pytest.approx(2.0)

    def test_reported_distance_pair(self):
        # diagonal/off-diagonal sentence-pair distances 0.01 and 1.99
        assert max(0.01 - 1.99 + 2.0, 0.0) == pytest.approx(0.02)
        a = Tensor([1.0, 0.0])
        theta_p = np.arccos(1 - 0.01)
        theta_n = np.arccos(1 - 1.99)
        p = Tensor([np.cos(theta_p), np.sin(theta_p)])
        n = Tensor([np.cos(theta_n), np.sin(theta_n)])
        assert sec.sec_loss(a, p, n, margin=2.0).item() == pytest.approx(0.02, abs=1e-12)

    def test_range_bound(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a, p, n = (Tensor(rng.normal(size=4)) for _ in range(3))
            val = sec.sec_loss(a, p, n, margin=2.0).item()
            assert 0.0 <= val <= 4.0

    def test_gradient_zero_when_hinge_inactive(self):
        a = Tensor([1.0, 0.0], requires_grad=True)
        p = Tensor([1.0, 1e-3])
        n = Tensor([-1.0, 1e-3])
        loss = sec.sec_loss(a, p, n, margin=1.0)  # d_p ~ 0, d_n ~ 2 -> hinge off
        assert loss.item() == 0.0
        backward(loss)
        np.testing.assert_array_equal(a.grad, np.zeros(2))

    def test_gradient_off_hinge_active_region(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.normal(size=4), requires_grad=True)
        p = Tensor(rng.normal(size=4))
        n = Tensor(rng.normal(size=4))
        loss = sec.sec_loss(a, p, n, margin=2.0)
        assert loss.item() > 1e-3  # active, away from the kink
        assert finite_diff_check(lambda t: sec.sec_loss(t, p, n, margin=2.0), a) <= 1e-5

    def test_batch_loss_uses_cyclic_negatives(self):
        rng = np.random.default_rng(9)
        anchors = [Tensor(rng.normal(size=4)) for _ in range(3)]
        positives = [Tensor(rng.normal(size=4)) for _ in range(3)]
        got = sec.batch_sec_loss(anchors, positives, margin=2.0).item()
        neg = sec.negative_indices(3)
        expect = np.mean([
            sec.sec_loss(anchors[i], positives[i], positives[neg[i]], 2.0).item()
            for i in range(3)
        ])
        assert got == pytest.approx(expect, abs=1e-12)
