import numpy as np
import pytest

from sitegen import flow
from sitegen.model import SiteModel, MODE_DESIGN, mask_rows

from conftest import make_complex


class TestInterpolate:
    def test_midpoint_no_noise(self):
        x0 = np.zeros((1, 3))
        x1 = np.array([[2.0, 0.0, 0.0]])
        out = flow.interpolate(x0, x1, 0.5, 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]])

    def test_endpoints_exact(self):
        rng = np.random.default_rng(1)
        x0, x1 = rng.normal(size=(2, 4, 3))
        np.testing.assert_array_equal(flow.interpolate(x0, x1, 0.0, 0.0, rng), x0)
        np.testing.assert_array_equal(flow.interpolate(x0, x1, 1.0, 0.0, rng), x1)

    def test_noise_variance(self):
        rng = np.random.default_rng(2)
        x0 = np.zeros((1, 3))
        draws = np.stack(
            [flow.interpolate(x0, x0, 0.5, 0.5, rng) for _ in range(100_000)]
        )
        assert draws.var() == pytest.approx(0.25, rel=0.02)


class TestLossReport:
    def test_total_recomputes_exactly(self):
        weights = {"l_cfm": 1.0, "l_refine": 1.0, "l_type": 0.2, "l_torsion": 0.5}
        rep = flow.LossReport(
            l_cfm=0.5, l_refine=1.25, l_type=2.0, l_torsion=0.125, weights=weights
        )
        assert rep.total == 0.5 + 1.25 + 0.2 * 2.0 + 0.5 * 0.125

    def test_discrete_weight_default(self):
        assert flow.DEFAULT_WEIGHTS["l_type"] == 0.2


class TestTrainStep:
    def test_deterministic(self, toy_complex):
        reports = []
        for _ in range(2):
            model = SiteModel(mode=MODE_DESIGN, seed=3)
            rng = np.random.default_rng(7)
            reports.append(flow.train_step([toy_complex], model, rng))
        assert reports[0].row() == reports[1].row()

    def test_uniform_logits_type_loss(self, toy_complex):
        """Zero-initialized heads give uniform residue probabilities."""
        model = SiteModel(mode=MODE_DESIGN, seed=3)
        for p in model.parameters():
            if p.name.startswith("inv.type_head"):
                p.node.value[:] = 0.0
        losses = flow.sample_losses(
            toy_complex, model, 0.5, np.random.default_rng(0), train=False
        )
        assert float(losses["l_type"].value) == pytest.approx(np.log(20), rel=1e-6)

    def test_refine_sums_intermediate_layers(self, toy_complex):
        model = SiteModel(mode="harmonicflow", seed=3)
        losses = flow.sample_losses(
            toy_complex, model, 0.5, np.random.default_rng(5), train=False
        )
        # zero-initialized position heads: every layer predicts x_t, so the
        # refinement term is (K-1) times the final term
        k = model.equi_cfg.layers
        assert float(losses["l_refine"].value) == pytest.approx(
            (k - 1) * float(losses["l_cfm"].value)
        )

    def test_loss_decreases_over_steps(self, toy_complex):
        model = SiteModel(mode="harmonicflow", seed=3)
        rng = np.random.default_rng(0)
        totals = [flow.train_step([toy_complex], model, rng).total for _ in range(60)]
        # individual steps are noisy (random t and path noise); compare means
        assert np.mean(totals[-10:]) < np.mean(totals[:10])


class TestSelfConditioningDetach:
    def test_first_pass_gradient_is_zero(self, toy_complex):
        """The detached first pass contributes exactly zero gradient."""
        from sitegen import autodiff as ad

        model = SiteModel(mode=MODE_DESIGN, seed=3)
        prng = np.random.default_rng(1)
        for p in model.parameters():
            p.node.value += prng.normal(scale=0.02, size=p.node.value.shape)
        rng = np.random.default_rng(0)
        x1 = toy_complex.ligand.coords
        x = x1 + rng.normal(scale=0.5, size=x1.shape)

        first = model.forward(
            toy_complex, x, x1.copy(), mask_rows(len(toy_complex.pocket)), 0.5,
            train=False,
        )
        x_sc = first.prediction.detach()
        out = model.forward(
            toy_complex, x, x_sc.value, mask_rows(len(toy_complex.pocket)), 0.5,
            train=False,
        )
        diff = ad.sub(out.prediction, ad.Node(x1))
        ad.backward(ad.mean(ad.mul(diff, diff)))
        # nothing reachable through the first pass may hold a gradient
        assert x_sc.grad is None
        assert first.prediction.grad is None
        for node in first.layer_preds:
            assert node.grad is None


class TestEulerIntegrate:
    def _oracle(self, sample):
        target = sample.ligand.coords

        def forward(sample, x_t, x_sc, a_sc, t):
            return target.copy(), None

        return forward

    @pytest.mark.parametrize("steps", [1, 5, 20])
    def test_oracle_exactness(self, toy_complex, steps):
        traj, x1, _ = flow.euler_integrate(
            None, toy_complex, steps=steps, rng=np.random.default_rng(0),
            forward=self._oracle(toy_complex),
        )
        assert len(traj) == steps
        np.testing.assert_allclose(x1, toy_complex.ligand.coords, atol=1e-6)

    def test_single_update_formula(self):
        x_t = np.zeros((1, 3))
        x1 = np.array([[1.0, 0.0, 0.0]])
        dt = 0.05
        step = x_t + dt * (x1 - x_t) / (1.0 - 0.0)
        np.testing.assert_allclose(step, [[0.05, 0.0, 0.0]])

    def test_t1_is_one_shot(self, toy_complex):
        calls = []

        def forward(sample, x_t, x_sc, a_sc, t):
            calls.append(t)
            return x_t + 1.0, None

        traj, x1, _ = flow.euler_integrate(
            None, toy_complex, steps=1, rng=np.random.default_rng(0), forward=forward
        )
        assert calls == [0.0]
        np.testing.assert_array_equal(x1, traj[0].x_t + 1.0)

    def test_nonfinite_aborts_with_step(self, toy_complex):
        def forward(sample, x_t, x_sc, a_sc, t):
            out = x_t.copy()
            if t > 0.3:
                out[0, 0] = np.nan
            return out, None

        with pytest.raises(flow.IntegrationError, match="step"):
            flow.euler_integrate(
                None, toy_complex, steps=10, rng=np.random.default_rng(0),
                forward=forward,
            )

    def test_invalid_steps(self, toy_complex):
        with pytest.raises(ValueError):
            flow.euler_integrate(None, toy_complex, steps=0)


class TestEntropyTrace:
    def test_final_rmsd_zero(self):
        states = [
            flow.FlowState(t=0.0, x_t=np.zeros((2, 3)), x1_estimate=np.ones((2, 3))),
            flow.FlowState(t=0.5, x_t=np.zeros((2, 3)), x1_estimate=np.zeros((2, 3))),
        ]
        rows = flow.entropy_trace(states)
        assert rows[-1][1] == 0.0
        assert rows[0][1] == pytest.approx(np.sqrt(3.0))

    def test_uniform_and_onehot_entropy(self):
        uniform = np.full((4, 20), 0.05)
        onehot = np.zeros((4, 20))
        onehot[:, 2] = 1.0
        states = [
            flow.FlowState(
                t=0.0, x_t=np.zeros((1, 3)), x1_estimate=np.zeros((1, 3)),
                residue_probs=uniform,
            ),
            flow.FlowState(
                t=1.0, x_t=np.zeros((1, 3)), x1_estimate=np.zeros((1, 3)),
                residue_probs=onehot,
            ),
        ]
        rows = flow.entropy_trace(states)
        assert rows[0][2] == pytest.approx(np.log(20))
        assert rows[1][2] == pytest.approx(0.0, abs=1e-9)
