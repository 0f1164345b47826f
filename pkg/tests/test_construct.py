import numpy as np
import pytest

from uniesn.construct import (
    BudgetError,
    ChainBoundError,
    ConstructionConfig,
    ConstructionError,
    LagBlockNet,
    assemble_esn,
    build_identity_chain,
    chained_functional,
    closed_form_state,
    compose_chain,
    construct_universal_esn,
    direct_functional,
    identity_chain_radii,
    identity_error_gain,
    split_lag_blocks,
    verify_chain_bound,
)
from uniesn.esn import check_finite_memory, check_nilpotent
from uniesn.filters import ExpFadingFilter, FIRFilter
from uniesn.linalg import operator_norm
from uniesn.shallow import ShallowNet, WidthPolicy, get_activation
from uniesn.windows import InputWindow, sample_ball, sample_window_array

TANH = get_activation("tanh")


def random_net(width, in_dim, out_dim, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return ShallowNet(
        hidden_matrix=rng.standard_normal((width, in_dim)) * scale,
        hidden_bias=rng.standard_normal(width) * scale,
        readout=rng.standard_normal((out_dim, width)) * scale,
        activation=TANH,
    )


def random_split(K, d, collector_width, seed, scale=1.0):
    net = random_net(collector_width, (K + 1) * d, 1, seed, scale)
    return split_lag_blocks(net, d)


def small_cfg(eps, seed=0, **overrides):
    kwargs = dict(
        eps=eps,
        seed=seed,
        static_policy=WidthPolicy(start_width=32, max_width=4096, train_samples=2000, val_samples=2000),
        identity_policy=WidthPolicy(start_width=32, max_width=1024, train_samples=1000, val_samples=2000),
        chain_samples=1500,
        budget_windows=1500,
        budget_window_len=20,
        closed_form_check_windows=40,
    )
    kwargs.update(overrides)
    return ConstructionConfig(**kwargs)


class TestSplitAndGain:
    def test_blocks_reassemble_bitwise(self):
        split = random_split(K=3, d=2, collector_width=7, seed=1)
        stacked = np.hstack(split.column_blocks)
        assert np.array_equal(stacked, split.net.hidden_matrix)

    def test_lag_block_indexing(self):
        split = random_split(K=2, d=1, collector_width=4, seed=2)
        # stacked input layout is (z_{-K}; ...; z_0): lag 0 is the last block
        assert np.array_equal(split.lag_block(0), split.column_blocks[-1])
        assert np.array_equal(split.lag_block(2), split.column_blocks[0])

    def test_gain_two_term_example(self):
        w_bar = np.array([[2.0]])
        blocks = [np.array([[1.0]]), np.array([[1.0]])]  # lags 0 and 1, both norm 1
        assert identity_error_gain(w_bar, 1.0, blocks) == pytest.approx(2.0)

    def test_gain_zero_blocks(self):
        blocks = [np.zeros((3, 2)) for _ in range(3)]
        assert identity_error_gain(np.ones((1, 3)), 1.0, blocks) == 0.0

    def test_gain_matches_dense_svd_oracle(self):
        rng = np.random.default_rng(3)
        w_bar = rng.standard_normal((2, 5))
        blocks = [rng.standard_normal((5, 2)) for _ in range(3)]
        got = identity_error_gain(w_bar, 1.0, blocks)
        svd = lambda a: float(np.linalg.svd(a, compute_uv=False)[0])
        want = svd(w_bar) * sum(j * svd(b) for j, b in enumerate(blocks))
        assert abs(got - want) <= 1e-10 * max(1.0, want)

    def test_gain_ignores_present_lag_block(self):
        rng = np.random.default_rng(4)
        w_bar = rng.standard_normal((1, 4))
        blocks = [rng.standard_normal((4, 1)) for _ in range(3)]
        altered = [rng.standard_normal((4, 1)) * 100] + blocks[1:]
        assert identity_error_gain(w_bar, 1.0, blocks) == identity_error_gain(w_bar, 1.0, altered)

    def test_split_rejects_bad_lag_dim(self):
        net = random_net(4, 5, 1, seed=5)
        with pytest.raises(ValueError):
            split_lag_blocks(net, 2)


class TestIdentityChain:
    def test_no_horizon_means_no_nets(self):
        assert identity_chain_radii(1.0, 0, 0.3, 0.0) == []
        pol = WidthPolicy(start_width=8, max_width=8, train_samples=32, val_samples=32)
        assert build_identity_chain(1, 1.0, 0, 0.3, 0.0, pol, seed=0) == []

    def test_radii_formula(self):
        eps, gain = 0.3, 2.0
        radii = identity_chain_radii(1.0, 2, eps, gain)
        step = eps / (3 * gain)
        assert radii == [1.0, 1.0 + step]

    def test_gain_must_be_positive_with_horizon(self):
        with pytest.raises(ValueError):
            identity_chain_radii(1.0, 2, 0.3, 0.0)

    def test_each_net_meets_its_tolerance_on_fresh_samples(self):
        eps, gain, M, K = 0.3, 5.0, 1.0, 3
        pol = WidthPolicy(start_width=32, max_width=512, train_samples=1000, val_samples=2000)
        chain = build_identity_chain(1, M, K, eps, gain, pol, seed=6)
        tol = eps / (3 * gain)
        radii = identity_chain_radii(M, K, eps, gain)
        for net, radius in zip(chain, radii):
            fresh = sample_ball(1, radius, 4000, seed=999)
            err = np.max(np.abs(net.forward(fresh) - fresh))
            assert err <= tol

    def test_fit_failure_annotated_with_position(self):
        pol = WidthPolicy(start_width=2, max_width=2, train_samples=64, val_samples=64)
        with pytest.raises(ConstructionError, match="identity net 1"):
            build_identity_chain(1, 1.0, 2, 1e-9, 1.0, pol, seed=7)


class TestComposeChain:
    def test_depth_zero_is_identity(self):
        chain = [random_net(4, 1, 1, seed=8)]
        z = np.array([[0.3], [0.7]])
        assert np.array_equal(compose_chain(chain, 0, z), z)

    def test_depth_one_is_first_net(self):
        chain = [random_net(4, 1, 1, seed=9)]
        z = np.array([[0.3]])
        assert np.array_equal(compose_chain(chain, 1, z), chain[0].forward(z))

    def test_composition_order(self):
        chain = [random_net(4, 1, 1, seed=10), random_net(4, 1, 1, seed=11)]
        z = np.array([[0.5]])
        want = chain[1].forward(chain[0].forward(z))
        assert np.array_equal(compose_chain(chain, 2, z), want)


class TestVerifyChainBound:
    def _fitted_chain(self, eps, gain, M=1.0, K=3, seed=12):
        pol = WidthPolicy(start_width=32, max_width=512, train_samples=1000, val_samples=2000)
        return build_identity_chain(1, M, K, eps, gain, pol, seed=seed)

    def test_bounds_hold_for_fitted_chain(self):
        eps, gain = 0.3, 5.0
        chain = self._fitted_chain(eps, gain)
        records = verify_chain_bound(chain, 1.0, eps, gain, n_samples=3000, seed=13)
        step = eps / (3 * gain)
        assert len(records) == 3
        for j, rec in enumerate(records, start=1):
            assert rec["sup_error"] < j * step
            assert rec["sup_norm"] <= 1.0 + j * step

    def test_empty_chain(self):
        assert verify_chain_bound([], 1.0, 0.3, 0.0, 100, seed=0) == []

    def test_violation_reports_depth_and_witness(self):
        # a net that shifts everything by a constant violates the drift bound
        bad = ShallowNet(
            hidden_matrix=np.zeros((1, 1)), hidden_bias=np.array([1.0]),
            readout=np.array([[10.0]]), activation=TANH,
        )
        with pytest.raises(ChainBoundError) as exc_info:
            verify_chain_bound([bad], 1.0, 0.3, 1.0, n_samples=50, seed=14)
        assert exc_info.value.j == 1
        assert exc_info.value.witness.shape == (1,)


class TestAssemble:
    def _chain_for(self, split, seed=15):
        rng = np.random.default_rng(seed)
        d = split.lag_dim
        nets = []
        for j in range(split.horizon):
            width = int(rng.integers(2, 6))
            nets.append(random_net(width, d, d, seed=seed + j + 1))
        return nets

    def test_degenerate_static_system(self):
        split = random_split(K=0, d=2, collector_width=5, seed=16)
        esn = assemble_esn(split, [])
        assert esn.state_dim == 5
        assert np.all(esn.A == 0.0)
        assert np.array_equal(esn.C, split.lag_block(0))
        assert np.array_equal(esn.zeta, split.bias)
        assert np.array_equal(esn.W, split.readout)
        assert esn.structure.widths == (5,)

    def test_block_pattern_by_entry_enumeration(self):
        split = random_split(K=2, d=1, collector_width=5, seed=17)
        chain = [random_net(3, 1, 1, seed=18), random_net(4, 1, 1, seed=19)]
        esn = assemble_esn(split, chain)
        widths = (3, 4, 5)
        assert esn.structure.widths == widths
        assert esn.state_dim == 12
        off = [0, 3, 7, 12]
        expected = {
            (1, 0): chain[1].hidden_matrix @ chain[0].readout,
            (2, 0): split.lag_block(1) @ chain[0].readout,
            (2, 1): split.lag_block(2) @ chain[1].readout,
        }
        for r in range(3):
            for c in range(3):
                block = esn.A[off[r] : off[r + 1], off[c] : off[c + 1]]
                if (r, c) in expected:
                    assert np.array_equal(block, expected[(r, c)])
                else:
                    assert np.all(block == 0.0)
        # input matrix feeds first carrier and collector only
        assert np.array_equal(esn.C[0:3], chain[0].hidden_matrix)
        assert np.all(esn.C[3:7] == 0.0)
        assert np.array_equal(esn.C[7:12], split.lag_block(0))
        # bias stacking
        assert np.array_equal(esn.zeta[0:3], chain[0].hidden_bias)
        assert np.array_equal(esn.zeta[3:7], chain[1].hidden_bias)
        assert np.array_equal(esn.zeta[7:12], split.bias)
        # readout sees only the collector
        assert np.all(esn.W[:, :7] == 0.0)
        assert np.array_equal(esn.W[:, 7:], split.readout)

    def test_assembled_is_nilpotent(self):
        split = random_split(K=3, d=2, collector_width=6, seed=20)
        chain = self._chain_for(split)
        esn = assemble_esn(split, chain)
        assert check_nilpotent(esn) == (True, 4)

    def test_rejects_wrong_chain_dims(self):
        split = random_split(K=1, d=2, collector_width=4, seed=21)
        with pytest.raises(ValueError):
            assemble_esn(split, [random_net(3, 1, 1, seed=22)])


class TestClosedForm:
    def test_degenerate_formula(self):
        split = random_split(K=0, d=1, collector_width=4, seed=23)
        w = InputWindow(entries=np.array([[0.4]]), bound=1.0)
        want = TANH(split.lag_block(0) @ np.array([0.4]) + split.bias)
        np.testing.assert_allclose(closed_form_state(split, [], w), want, atol=1e-15)

    def test_matches_recursion_within_tolerance(self):
        rng = np.random.default_rng(24)
        for trial in range(20):
            K = int(rng.integers(0, 5))
            d = int(rng.integers(1, 3))
            split = random_split(K=K, d=d, collector_width=int(rng.integers(2, 7)), seed=100 + trial)
            chain = [
                random_net(int(rng.integers(2, 6)), d, d, seed=200 + 10 * trial + j)
                for j in range(K)
            ]
            esn = assemble_esn(split, chain)
            T = K + 2
            arr = sample_window_array(d, 1.0, T, 50, seed=300 + trial)
            states = esn.run_batch(arr)
            collector = states[:, esn.state_dim - split.net.width :]
            direct = closed_form_state(split, chain, arr)
            gap = np.max(np.linalg.norm(collector - direct, axis=1))
            assert gap <= 1e-10

    def test_chained_functional_is_readout_of_state(self):
        split = random_split(K=2, d=1, collector_width=5, seed=25)
        chain = [random_net(3, 1, 1, seed=26), random_net(3, 1, 1, seed=27)]
        arr = sample_window_array(1, 1.0, 4, 10, seed=28)
        want = closed_form_state(split, chain, arr) @ split.readout.T
        assert np.array_equal(chained_functional(split, chain, arr), want)

    def test_window_too_short(self):
        split = random_split(K=3, d=1, collector_width=4, seed=29)
        chain = [random_net(2, 1, 1, seed=30 + j) for j in range(3)]
        with pytest.raises(ValueError, match="too short"):
            closed_form_state(split, chain, sample_window_array(1, 1.0, 2, 3, seed=31))


class TestDirectFunctional:
    def test_equals_net_forward_on_stacked_lags(self):
        split = random_split(K=2, d=2, collector_width=5, seed=32)
        arr = sample_window_array(2, 1.0, 6, 10, seed=33)
        stacked = arr[:, 3:, :].reshape(10, 6)
        assert np.array_equal(direct_functional(split, arr), split.net.forward(stacked))

    def test_single_window_variant(self):
        split = random_split(K=1, d=1, collector_width=4, seed=34)
        arr = sample_window_array(1, 1.0, 3, 4, seed=35)
        w = InputWindow(entries=arr[2], bound=1.0)
        np.testing.assert_allclose(
            direct_functional(split, w), direct_functional(split, arr)[2], rtol=1e-12
        )

    def test_zero_ingredients_give_zero(self):
        net = ShallowNet(
            hidden_matrix=np.zeros((3, 2)), hidden_bias=np.zeros(3),
            readout=np.zeros((1, 3)), activation=TANH,
        )
        split = split_lag_blocks(net, 1)
        arr = sample_window_array(1, 1.0, 3, 5, seed=36)
        assert np.all(direct_functional(split, arr) == 0.0)

    def test_lipschitz_estimate_per_sample(self):
        # the drift each lag suffers through the chain, weighted by block norms
        # and the readout norm, bounds the output discrepancy pointwise
        split = random_split(K=3, d=1, collector_width=6, seed=37, scale=0.7)
        pol = WidthPolicy(start_width=32, max_width=512, train_samples=800, val_samples=1600)
        eps, gain = 0.3, 5.0
        chain = build_identity_chain(1, 1.0, 3, eps, gain, pol, seed=38)
        arr = sample_window_array(1, 1.0, 6, 500, seed=39)
        K, T = 3, 6
        w_norm = operator_norm(split.readout)
        block_norms = [operator_norm(split.lag_block(j)) for j in range(K + 1)]
        lhs = np.linalg.norm(direct_functional(split, arr) - chained_functional(split, chain, arr), axis=1)
        rhs = np.zeros(arr.shape[0])
        for j in range(K + 1):
            z_j = arr[:, T - 1 - j, :]
            drift = np.linalg.norm(compose_chain(chain, j, z_j) - z_j, axis=1)
            rhs += block_norms[j] * drift
        rhs *= w_norm * TANH.lipschitz_const
        assert np.all(lhs <= rhs + 1e-12)


class TestPipeline:
    def test_demo_target_end_to_end(self):
        f = ExpFadingFilter(in_dim=1, out_dim=1, input_bound=1.0, matrix=np.array([[1.0]]), decay=0.5)
        res = construct_universal_esn(f, small_cfg(eps=0.3, seed=99))
        assert res.horizon == 4
        b = res.budget
        assert b.truncation_analytic == pytest.approx(0.0625)
        assert b.truncation_analytic < 0.1
        assert b.net_fit_sampled < 0.1
        assert b.chain_sampled < 0.1
        assert b.total_sampled < 0.3
        assert b.total_sampled <= b.truncation_analytic + b.net_fit_sampled + b.chain_sampled
        assert check_nilpotent(res.esn) == (True, 5)
        assert res.closed_form_check_max <= 1e-10

    def test_memoryless_fir_degenerates_cleanly(self):
        f = FIRFilter(in_dim=1, out_dim=1, input_bound=1.0, coeffs=(np.array([[0.8]]),))
        res = construct_universal_esn(f, small_cfg(eps=0.2, seed=7))
        assert res.horizon == 0
        assert res.chain == []
        assert res.budget.truncation_analytic == 0.0
        assert res.budget.chain_sampled == 0.0
        assert np.all(res.esn.A == 0.0)
        assert res.budget.total_sampled < 0.2

    def test_finite_memory_of_constructed_system(self):
        f = ExpFadingFilter(in_dim=1, out_dim=1, input_bound=1.0, matrix=np.array([[1.0]]), decay=0.5)
        res = construct_universal_esn(f, small_cfg(eps=0.4, seed=5))
        K = res.horizon
        T = 12
        arr = sample_window_array(1, 1.0, T, 4, seed=41)[3]
        w1 = InputWindow(entries=arr, bound=1.0)
        modified = arr.copy()
        modified[: T - (K + 1)] = 1.0
        w2 = InputWindow(entries=modified, bound=1.0)
        assert check_finite_memory(res.esn, w1, w2)

    def test_impossible_static_tolerance_tags_stage(self):
        f = ExpFadingFilter(in_dim=1, out_dim=1, input_bound=1.0, matrix=np.array([[1.0]]), decay=0.5)
        cfg = small_cfg(
            eps=1e-9,
            static_policy=WidthPolicy(start_width=4, max_width=4, train_samples=64, val_samples=64),
        )
        with pytest.raises(ConstructionError) as exc_info:
            construct_universal_esn(f, cfg)
        assert exc_info.value.stage == "fit_static_net"

    def test_horizon_cap_tags_stage(self):
        f = ExpFadingFilter(in_dim=1, out_dim=1, input_bound=1.0, matrix=np.array([[1.0]]), decay=0.999)
        with pytest.raises(ConstructionError) as exc_info:
            construct_universal_esn(f, small_cfg(eps=1e-200))
        assert exc_info.value.stage == "choose_horizon"

    def test_budget_error_carries_term(self):
        err = BudgetError("total", value=0.5, limit=0.3)
        assert err.stage == "budget"
        assert err.term == "total"

    def test_multivariate_target(self):
        f = ExpFadingFilter(
            in_dim=2, out_dim=2, input_bound=1.0,
            matrix=np.array([[0.8, 0.1], [0.0, -0.5]]), decay=0.4,
        )
        res = construct_universal_esn(f, small_cfg(eps=0.5, seed=301))
        assert res.budget.total_sampled < 0.5
        assert res.esn.in_dim == 2
        assert res.esn.out_dim == 2

    def test_second_order_target(self):
        from uniesn.filters import QuadTerm, Volterra2Filter

        f = Volterra2Filter(
            in_dim=1, out_dim=1, input_bound=1.0,
            coeffs=(np.array([[1.0]]), np.array([[-0.4]])),
            quad=(QuadTerm(j=0, k=1, b=np.array([0.5])), QuadTerm(j=2, k=2, b=np.array([-0.3]))),
        )
        res = construct_universal_esn(f, small_cfg(eps=0.5, seed=302))
        assert res.horizon == 2  # lag-2 quadratic term fixes the memory
        assert res.budget.truncation_analytic == 0.0
        assert res.budget.total_sampled < 0.5

    def test_raw_filter_escape_hatch_flagged(self):
        from uniesn.filters import RawFilter

        def clipped_sum(arr):
            tail = arr[:, -3:, :]  # depends on the last three entries only
            return np.tanh(np.sum(tail, axis=(1, 2)))[:, None]

        f = RawFilter(in_dim=1, out_dim=1, input_bound=1.0, fn=clipped_sum, claimed_memory=2)
        assert not f.certified
        assert f.choose_horizon(0.1) == 2
        res = construct_universal_esn(f, small_cfg(eps=0.5, seed=303))
        assert res.target_certified is False
        assert res.budget.total_sampled < 0.5

    def test_deterministic_given_seed(self):
        f = ExpFadingFilter(in_dim=1, out_dim=1, input_bound=1.0, matrix=np.array([[1.0]]), decay=0.5)
        r1 = construct_universal_esn(f, small_cfg(eps=0.4, seed=11))
        r2 = construct_universal_esn(f, small_cfg(eps=0.4, seed=11))
        assert np.array_equal(r1.esn.A, r2.esn.A)
        assert np.array_equal(r1.esn.C, r2.esn.C)
        assert r1.budget == r2.budget
