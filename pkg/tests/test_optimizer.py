import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dshash.data import synth_multimodal
from dshash.errors import InvalidArgumentError, InvalidDataError, SingularSystemError
from dshash.optimizer import (
    OptState,
    TrainConfig,
    alpha_from_losses,
    b_subproblem,
    compute_Q,
    dcc_update_row,
    modality_losses,
    objective,
    sgn,
    train,
    update_B_dcc,
    update_D,
    update_P,
    update_W,
    update_alpha,
)

from helpers import (
    brute_force_row,
    central_gradient,
    objective_oracle,
    random_config,
    random_state,
    subproblem_D,
    subproblem_P,
    subproblem_W,
)


def test_sgn_zero_is_plus_one():
    np.testing.assert_array_equal(sgn([-2.0, 0.0, -0.0, 3.0]), [-1, 1, 1, 1])


class TestConfig:
    @pytest.mark.parametrize("field,value", [
        ("lam", -1.0), ("beta", -0.1), ("eta", np.inf), ("gamma", 1.0),
        ("r", 0), ("tol", -1e-3), ("dcc_sweeps", 0), ("max_iters", 0), ("M", 0),
    ])
    def test_rejects(self, field, value):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**{field: value}).validate()

    def test_defaults(self):
        cfg = TrainConfig().validate()
        assert (cfg.lam, cfg.beta, cfg.eta, cfg.gamma, cfg.M, cfg.dcc_sweeps) == (1e-4, 1.0, 1.0, 2.0, 500, 3)


class TestObjective:
    def test_codes_only(self):
        r, n = 4, 5
        K = np.ones((3, n))
        state = OptState(B=np.ones((r, n)), W=np.zeros((1, r)), D=np.zeros((r, 1)),
                         P=[np.zeros((r, 3))], alpha=np.array([1.0]), kappa=[K])
        L = np.ones((1, n))
        cfg = TrainConfig(beta=0, eta=0, lam=0)
        assert objective(state, cfg, L) == r * n

    def test_regularizer_only(self):
        rng = np.random.default_rng(0)
        r, n, M = 3, 6, 6
        K = np.eye(M)
        P = rng.standard_normal((r, M))
        W = rng.standard_normal((2, r))
        D = rng.standard_normal((r, 2))
        state = OptState(B=P @ K, W=W, D=D, P=[P], alpha=np.array([1.0]), kappa=[K])
        cfg = TrainConfig(beta=0, eta=0, lam=0.3)
        L = np.ones((2, n))
        expected = 0.3 * (np.sum(D**2) + np.sum(W**2) + np.sum(P**2))
        assert objective(state, cfg, L) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        state, L = random_state(rng, n=12, r=4, c=3, Ms=(3, 5))
        cfg = random_config(rng, r=4)
        assert objective(state, cfg, L) == pytest.approx(objective_oracle(state, cfg, L), rel=1e-10)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        state, L = random_state(rng)
        with pytest.raises(InvalidArgumentError):
            objective(state, TrainConfig(), L[:, :-1])


class TestUpdateW:
    def test_hand_case(self):
        B = np.array([[1.0, 1.0], [1.0, -1.0]])
        L = np.array([[1.0, 0.0]])
        state = OptState(B=B, W=np.zeros((1, 2)), D=np.zeros((2, 1)), P=[], alpha=np.array([]), kappa=[])
        W = update_W(state, TrainConfig(beta=1, lam=0), L)
        np.testing.assert_allclose(W, [[0.5, 0.5]], atol=1e-15)
        np.testing.assert_allclose(W @ B, L, atol=1e-15)

    def test_zero_beta(self):
        state, L = random_state(np.random.default_rng(0))
        np.testing.assert_array_equal(update_W(state, TrainConfig(beta=0), L), 0)

    def test_singular(self):
        B = np.ones((2, 3))
        state = OptState(B=B, W=np.zeros((1, 2)), D=np.zeros((2, 1)), P=[], alpha=np.array([]), kappa=[])
        with pytest.raises(SingularSystemError):
            update_W(state, TrainConfig(beta=1, lam=0), np.ones((1, 3)))

    def test_stationary(self):
        rng = np.random.default_rng(11)
        state, L = random_state(rng, n=40, r=8, c=3)
        cfg = random_config(rng)
        W = update_W(state, cfg, L)
        G = central_gradient(lambda w: subproblem_W(w, state.B, L, cfg), W)
        assert np.linalg.norm(G) < 1e-6 * max(1.0, subproblem_W(W, state.B, L, cfg))


class TestUpdateP:
    def test_zero_weight(self):
        state, _ = random_state(np.random.default_rng(0))
        state.alpha = np.array([0.0, 1.0])
        np.testing.assert_array_equal(update_P(state, TrainConfig(), 0), 0)

    def test_scalar_case(self):
        state = OptState(B=np.array([[1.0, -1.0]]), W=np.zeros((1, 1)), D=np.zeros((1, 1)),
                         P=[np.zeros((1, 1))], alpha=np.array([1.0]), kappa=[np.array([[1.0, 1.0]])])
        P = update_P(state, TrainConfig(lam=1.0, gamma=2.0), 0)
        assert P.shape == (1, 1) and P[0, 0] == 0.0

    def test_perturbation_oracle(self):
        rng = np.random.default_rng(3)
        state, L = random_state(rng)
        cfg = random_config(rng)
        state.P[1] = update_P(state, cfg, 1)
        base = objective(state, cfg, L)
        P = state.P[1]
        for _ in range(200):
            state.P[1] = P + 1e-3 * rng.standard_normal(P.shape)
            assert objective(state, cfg, L) >= base
        state.P[1] = P

    def test_stationary(self):
        rng = np.random.default_rng(12)
        state, _ = random_state(rng)
        cfg = random_config(rng)
        P = update_P(state, cfg, 0)
        G = central_gradient(lambda p: subproblem_P(p, state, cfg, 0), P)
        assert np.linalg.norm(G) < 1e-6 * max(1.0, subproblem_P(P, state, cfg, 0))


class TestUpdateD:
    def test_zero_eta(self):
        state, L = random_state(np.random.default_rng(0))
        np.testing.assert_array_equal(update_D(state, TrainConfig(eta=0), L), 0)

    def test_identity_labels(self):
        rng = np.random.default_rng(1)
        n = 5
        B = sgn(rng.standard_normal((3, n)))
        state = OptState(B=B, W=np.zeros((n, 3)), D=np.zeros((3, n)), P=[], alpha=np.array([]), kappa=[])
        D = update_D(state, TrainConfig(eta=1, lam=1e-12), np.eye(n))
        np.testing.assert_allclose(D, B, atol=1e-10)

    def test_stationary(self):
        rng = np.random.default_rng(13)
        state, L = random_state(rng)
        cfg = random_config(rng)
        D = update_D(state, cfg, L)
        G = central_gradient(lambda d: subproblem_D(d, state.B, L, cfg), D)
        assert np.linalg.norm(G) < 1e-6 * max(1.0, subproblem_D(D, state.B, L, cfg))


class TestDCC:
    def test_zero_classifier(self):
        rng = np.random.default_rng(0)
        state, L = random_state(rng)
        state.W[:] = 0
        cfg = random_config(rng)
        Q = compute_Q(state, cfg, L)
        np.testing.assert_array_equal(update_B_dcc(state, cfg, L), sgn(Q.T))

    @pytest.mark.parametrize("seed", range(10))
    def test_row_is_exhaustive_argmin(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 11))
        state, L = random_state(rng, n=n, r=5, c=3)
        cfg = random_config(rng, r=5)
        Q = compute_Q(state, cfg, L)
        B = state.B.copy()
        for k in range(B.shape[0]):
            B[k] = dcc_update_row(B, Q, state.W, k, cfg.beta)
            best = brute_force_row(B, Q, state.W, k, cfg.beta)
            assert b_subproblem(B, Q, state.W, cfg.beta) == pytest.approx(best, rel=1e-12, abs=1e-9)

    def test_sweeps_monotone_and_fixed_point(self):
        rng = np.random.default_rng(4)
        state, L = random_state(rng, n=60, r=12)
        cfg = random_config(rng, r=12, dcc_sweeps=1)
        Q = compute_Q(state, cfg, L)
        values = [b_subproblem(state.B, Q, state.W, cfg.beta)]
        for _ in range(30):
            B = update_B_dcc(state, cfg, L)
            values.append(b_subproblem(B, Q, state.W, cfg.beta))
            if np.array_equal(B, state.B):
                break
            state.B = B
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(values, values[1:]))
        for k in range(state.r):
            np.testing.assert_array_equal(dcc_update_row(state.B, Q, state.W, k, cfg.beta), state.B[k])

    def test_codes_constant_norm(self):
        # ||B||^2 = r n whatever the signs, so it drops out of the B subproblem
        state, _ = random_state(np.random.default_rng(5), n=33, r=7)
        assert np.sum(state.B**2) == 7 * 33


class TestAlpha:
    def test_equal_losses(self):
        np.testing.assert_allclose(alpha_from_losses([2.0, 2.0, 2.0], 2.0), [1 / 3] * 3, rtol=1e-15)

    def test_hand_case(self):
        np.testing.assert_allclose(alpha_from_losses([1.0, 4.0], 3.0), [2 / 3, 1 / 3], atol=1e-12)

    def test_zero_loss(self):
        np.testing.assert_array_equal(alpha_from_losses([0.0, 3.0, 0.0], 2.0), [0.5, 0, 0.5])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=6),
        st.floats(1.05, 8.0),
        st.floats(1e-3, 1e3),
    )
    def test_simplex_order_and_scale(self, losses, gamma, scale):
        a = alpha_from_losses(losses, gamma)
        assert abs(a.sum() - 1) < 1e-12 and np.all(a >= 0)
        order = np.argsort(losses)
        assert np.all(np.diff(a[order]) <= 1e-15)
        np.testing.assert_allclose(alpha_from_losses(np.array(losses) * scale, gamma), a, atol=1e-12)

    def test_minimizes_weighted_loss(self):
        rng = np.random.default_rng(0)
        C = rng.random(3) * 10
        gamma = 2.5
        a = alpha_from_losses(C, gamma)
        best = np.sum(a**gamma * C)
        for _ in range(500):
            trial = rng.dirichlet(np.ones(3))
            assert np.sum(trial**gamma * C) >= best - 1e-12

    def test_update_uses_losses(self):
        state, _ = random_state(np.random.default_rng(2))
        cfg = TrainConfig(gamma=3.0)
        np.testing.assert_array_equal(update_alpha(state, cfg), alpha_from_losses(modality_losses(state), 3.0))


class TestTrain:
    def setup_method(self):
        ds = synth_multimodal(3, 40, [8, 12], noise=0.3, seed=0)
        self.X, self.L = ds.modalities, ds.labels

    def test_single_iteration(self):
        _, state, trace = train(self.X, self.L, TrainConfig(r=8, M=30, tol=np.inf))
        assert state.iterations == 1 and len(trace) == 2

    def test_block_monotone(self):
        values = []
        cfg = TrainConfig(r=8, M=30, max_iters=15, tol=0)

        def record(name, state):
            values.append(objective(state, cfg, self.L))

        _, _, trace = train(self.X, self.L, cfg, callback=record)
        values = [trace[0]] + values
        assert len(values) == 1 + 15 * 6
        for a, b in zip(values, values[1:]):
            assert b <= a + 1e-9 * abs(a)

    def test_converges(self):
        _, state, trace = train(self.X, self.L, TrainConfig(r=16, M=60, tol=1e-4))
        assert state.converged and state.iterations <= 50

    def test_model_contents(self):
        model, state, _ = train(self.X, self.L, TrainConfig(r=8, M=20, max_iters=3))
        assert model.r == 8 and model.n_modalities == 2
        for m, rec in enumerate(model.modalities):
            np.testing.assert_array_equal(rec.projection, state.P[m])
            np.testing.assert_allclose(rec.mean, self.X[m].mean(axis=1))
            assert rec.kernel_map.n_anchors == 20
        np.testing.assert_array_equal(model.alpha, state.alpha)

    def test_deterministic(self):
        cfg = TrainConfig(r=8, M=20, max_iters=5, seed=9)
        m1, s1, _ = train(self.X, self.L, cfg)
        m2, s2, _ = train(self.X, self.L, cfg)
        assert m1 == m2
        np.testing.assert_array_equal(s1.B, s2.B)

    def test_inconsistent_n(self):
        with pytest.raises(InvalidArgumentError):
            train([self.X[0], self.X[1][:, :-1]], self.L, TrainConfig(M=10))

    def test_bad_labels(self):
        L = self.L.copy()
        L[:, 0] = 0
        with pytest.raises(InvalidDataError):
            train(self.X, L, TrainConfig(M=10))


def test_iteration_permutation_equivariant():
    from dshash.optimizer import run_iteration

    rng = np.random.default_rng(21)
    state, L = random_state(rng, n=30, r=6)
    cfg = random_config(rng, r=6)
    perm = rng.permutation(30)
    permuted = OptState(B=state.B[:, perm], W=state.W.copy(), D=state.D.copy(),
                        P=[P.copy() for P in state.P], alpha=state.alpha.copy(),
                        kappa=[K[:, perm] for K in state.kappa])
    run_iteration(state, cfg, L)
    run_iteration(permuted, cfg, L[:, perm])
    np.testing.assert_array_equal(permuted.B, state.B[:, perm])
    np.testing.assert_allclose(permuted.W, state.W, atol=1e-10)
    np.testing.assert_allclose(permuted.D, state.D, atol=1e-10)
    np.testing.assert_allclose(permuted.alpha, state.alpha, atol=1e-10)
