"""
Tape objective: finite-difference gradient check with plans held fixed,
stop-gradient on the key branch, and agreement with the plain loss path.
"""

import numpy as np
import pytest

from emd_loss import emd_loss
from encoder import PARAM_NAMES, EncoderParams, as_leaves, forward, init_params
from objective import ObjectiveSettings, symmetric_objective
from ot_solver import SinkhornConfig
from pyramid import PyramidSpec

H = 1e-4
GRID = 2
SETTINGS = ObjectiveSettings(
    sinkhorn=SinkhornConfig(lambda_=25, iterations=10),
    pyramid=PyramidSpec((2, 1)),
    marginals="vector",
)


def _params(seed: int) -> EncoderParams:
    """Random init with small nonzero biases so no ReLU sits exactly at zero."""
    rng = np.random.default_rng(seed + 100)
    base = init_params(seed)
    return EncoderParams({
        n: (rng.normal(0.0, 0.1, size=v.shape) if n.endswith(".bias") else v)
        for n, v in base.tensors.items()
    })


def _views(seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed + 200)
    return [rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3)), rng.uniform(size=(8, 8, 3))]


def _loss_at(theta: EncoderParams, xi: EncoderParams, views, plans) -> float:
    result = symmetric_objective(
        as_leaves(theta, False), as_leaves(xi, False), views, SETTINGS, GRID, plans=plans
    )
    return float(result.loss.data)


def _shifted(theta: EncoderParams, name: str, idx, delta: float) -> EncoderParams:
    moved = theta.copy()
    moved.tensors[name][idx] += delta
    return moved


# Head tensors sit after the last ReLU, so the loss is smooth in each of
# their entries; every entry is checked. Conv tensors are checked on a
# sample, skipping entries whose stencil straddles a ReLU kink.
HEAD_TENSORS = [name for name in PARAM_NAMES if not name.startswith("conv")]
CONV_WEIGHT_SAMPLES = 48


class TestGradientCheck:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_analytic_matches_central_differences(self, seed):
        theta, xi = _params(seed), _params(seed + 50)
        views = _views(seed)
        q_leaves = as_leaves(theta, True)
        result = symmetric_objective(q_leaves, as_leaves(xi, False), views, SETTINGS, GRID)
        result.loss.backward()

        def loss_shifted(name, idx, d):
            return _loss_at(_shifted(theta, name, idx, d * H), xi, views, result.plans)

        def assert_close(name, idx, fd):
            analytic = q_leaves[name].grad[idx]
            assert abs(analytic - fd) <= 1e-4 * max(abs(analytic), abs(fd)) + 1e-7, (name, idx)

        for name in HEAD_TENSORS:
            for idx in np.ndindex(theta[name].shape):
                fd = (loss_shifted(name, idx, 1) - loss_shifted(name, idx, -1)) / (2 * H)
                assert_close(name, idx, fd)

        rng = np.random.default_rng(seed)
        checked = skipped = 0
        for name in PARAM_NAMES:
            if name in HEAD_TENSORS:
                continue
            shape = theta[name].shape
            size = int(np.prod(shape))
            if name.endswith(".bias"):
                flat = range(size)
            else:
                flat = rng.choice(size, size=min(CONV_WEIGHT_SAMPLES, size), replace=False)
            for f in flat:
                idx = np.unravel_index(int(f), shape)
                losses = {d: loss_shifted(name, idx, d) for d in (-2, -1, 1, 2)}
                fd_h = (losses[1] - losses[-1]) / (2 * H)
                fd_2h = (losses[2] - losses[-2]) / (4 * H)
                if abs(fd_h - fd_2h) > 1e-5 * max(1.0, abs(fd_h)):
                    skipped += 1
                    continue
                assert_close(name, idx, fd_h)
                checked += 1
        assert checked >= 0.9 * (checked + skipped)

    def test_key_branch_receives_no_gradient(self):
        theta, xi = _params(0), _params(1)
        k_leaves = as_leaves(xi, False)
        result = symmetric_objective(as_leaves(theta, True), k_leaves, _views(0), SETTINGS, GRID)
        result.loss.backward()
        for leaf in k_leaves.values():
            assert not leaf.requires_grad
            np.testing.assert_array_equal(leaf.grad, 0.0)

    def test_rejects_trainable_key_leaves(self):
        theta = _params(0)
        with pytest.raises(ValueError):
            symmetric_objective(as_leaves(theta, True), as_leaves(theta, True), _views(0), SETTINGS, GRID)


class TestComponents:
    def test_direction_labels(self):
        theta, xi = _params(0), _params(1)
        views = _views(0)
        three = symmetric_objective(as_leaves(theta, True), as_leaves(xi, False), views, SETTINGS, GRID)
        two = symmetric_objective(as_leaves(theta, True), as_leaves(xi, False), views[:2], SETTINGS, GRID)
        assert {"emd_sa", "emd_sb", "vec_sa", "vec_sb"} <= set(three.components)
        assert "emd_sa" not in two.components
        assert len(three.plans) == 4 and len(two.plans) == 2
        for key, value in three.components.items():
            if key != "total":
                assert 0.0 <= value <= 4.0 + 1e-12

    def test_emd_term_matches_plain_loss(self):
        theta, xi = _params(2), _params(3)
        a, b, _ = _views(2)
        settings = ObjectiveSettings(sinkhorn=SETTINGS.sinkhorn, pyramid=None, marginals="vector")
        result = symmetric_objective(as_leaves(theta, True), as_leaves(xi, False), [a, b], settings, GRID)

        qa_map, _ = forward(theta, a, "query", GRID)
        ka_map, ka_vec = forward(xi, a, "key", GRID)
        kb_map, kb_vec = forward(xi, b, "key", GRID)
        plain = emd_loss(qa_map, kb_map, v_x=ka_vec, v_y=kb_vec, cfg=settings.sinkhorn)
        assert result.components["emd_ab"] == pytest.approx(plain.emd_loss, abs=1e-10)

    def test_byol_objective_has_no_emd(self):
        theta, xi = _params(0), _params(1)
        settings = ObjectiveSettings(objective="byol")
        result = symmetric_objective(as_leaves(theta, True), as_leaves(xi, False), _views(0)[:2], settings, GRID)
        assert result.components["emd_ab"] == 0.0 and result.plans == []
        assert result.components["total"] == pytest.approx(
            result.components["vec_ab"] + result.components["vec_ba"]
        )

    def test_unknown_objective(self):
        with pytest.raises(ValueError):
            ObjectiveSettings(objective="simclr")
