import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from solarcast.autograd import Tensor, finite_difference_check
from solarcast.graph import (
    AdjacencyFactors,
    StglParams,
    learn_adjacency,
    normalize_adjacency,
    smp_propagate,
    stgl_forward,
    tgcl,
)

import reference


def factors(n, dim, seed):
    return AdjacencyFactors.init(n, dim, np.random.default_rng(seed))


class TestAdjacency:
    def test_zero_embeddings_give_one_half(self):
        f = factors(4, 3, 0)
        f.E1.data[:] = 0.0
        f.E2.data[:] = 0.0
        assert_allclose(learn_adjacency(f).data, np.full((4, 4), 0.5))

    @pytest.mark.parametrize("seed", range(5))
    def test_complementary_entries_sum_to_one(self, seed):
        A = learn_adjacency(factors(6, 4, seed)).data
        assert_allclose(A + A.T, np.ones((6, 6)), atol=1e-12)
        assert_allclose(np.diag(A), 0.5, atol=1e-12)

    def test_matches_loop_reference(self):
        f = factors(5, 3, 7)
        A = learn_adjacency(f).data
        assert_allclose(A, reference.adjacency(f.E1.data, f.E2.data, f.W1.data, f.W2.data),
                        atol=1e-12)


class TestNormalize:
    def test_zero_adjacency_gives_identity(self):
        assert_allclose(normalize_adjacency(Tensor(np.zeros((3, 3)))).data, np.eye(3))

    def test_all_ones_two_nodes(self):
        out = normalize_adjacency(Tensor(np.ones((2, 2)))).data
        assert_allclose(out, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])

    def test_rows_sum_to_one_for_sigmoid_entries(self):
        A = learn_adjacency(factors(7, 4, 3))
        assert_allclose(normalize_adjacency(A).data.sum(axis=1), 1.0, atol=1e-12)


class TestTgcl:
    def test_closed_gate_gives_zero(self):
        h = Tensor(np.ones((1, 2, 5, 3)))
        Wf = Tensor(np.ones((2, 3, 4)))
        Wg = Tensor(np.full((2, 3, 4), -100.0))
        assert_allclose(tgcl(h, Wf, Wg).data, 0.0, atol=1e-12)

    def test_zero_filter_gives_zero(self):
        h = Tensor(np.random.default_rng(0).normal(size=(1, 2, 5, 3)))
        out = tgcl(h, Tensor(np.zeros((2, 3, 4))), Tensor(np.ones((2, 3, 4))))
        assert_array_equal(out.data, 0.0)

    def test_single_tap_hand_case(self):
        h = Tensor(np.array([0.5, -1.0]).reshape(1, 1, 2, 1))
        out = tgcl(h, Tensor(np.array([[[2.0]]])), Tensor(np.array([[[1.0]]]))).data.ravel()
        expected = [np.tanh(1.0) / (1 + np.exp(-0.5)), np.tanh(-2.0) / (1 + np.exp(1.0))]
        assert_allclose(out, expected)

    @given(t=st.integers(0, 9), seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_output_is_causal(self, t, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, 10, 3))
        Wf, Wg = Tensor(rng.normal(size=(3, 3, 2))), Tensor(rng.normal(size=(3, 3, 2)))
        y = x.copy()
        y[:, :, t + 1 :] = rng.normal(size=y[:, :, t + 1 :].shape)
        a = tgcl(Tensor(x), Wf, Wg).data[:, :, : t + 1]
        b = tgcl(Tensor(y), Wf, Wg).data[:, :, : t + 1]
        assert_array_equal(a, b)


class TestSmp:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.h2 = Tensor(rng.normal(size=(2, 3, 4)))
        self.prev = Tensor(rng.normal(size=(2, 3, 4)))
        self.A = normalize_adjacency(Tensor(rng.uniform(size=(3, 3))))

    def test_full_retention_returns_h2(self):
        assert_allclose(smp_propagate(self.h2, self.prev, self.A, 1.0).data, self.h2.data)

    def test_no_retention_with_identity_returns_previous(self):
        out = smp_propagate(self.h2, self.prev, Tensor(np.eye(3)), 0.0)
        assert_allclose(out.data, self.prev.data)

    def test_two_node_hand_case(self):
        h2 = Tensor(np.array([[[1.0], [0.0]]]))
        prev = Tensor(np.array([[[2.0], [4.0]]]))
        A = Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]))
        out = smp_propagate(h2, prev, A, 0.2).data.ravel()
        assert_allclose(out, [0.2 * 1 + 0.8 * 3.0, 0.8 * 3.5])

    def test_beta_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            StglParams.init(3, 4, 4, 2, 3, 1.5, np.random.default_rng(0))


def stgl_case(n=3, d=5, seed=0, depth=2):
    rng = np.random.default_rng(seed)
    f = AdjacencyFactors.init(n, 3, rng)
    p = StglParams.init(d, 4, 6, depth, 3, 0.05, rng)
    p.ln_gain.data[:] = rng.normal(size=6)
    p.ln_bias.data[:] = rng.normal(size=6)
    h1 = rng.normal(size=(2, n, 12, d))
    return f, p, h1


def as_dict(f, p):
    d = {"adj.E1": f.E1.data, "adj.E2": f.E2.data, "adj.W1": f.W1.data, "adj.W2": f.W2.data,
         "stgl.Wf": p.Wf.data, "stgl.Wg": p.Wg.data, "stgl.ln_gain": p.ln_gain.data,
         "stgl.ln_bias": p.ln_bias.data}
    for i, w in enumerate(p.layer_weights):
        d[f"stgl.layer{i + 2}"] = w.data
    return d


class TestStglForward:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_reference(self, seed):
        f, p, h1 = stgl_case(seed=seed)
        out = stgl_forward(Tensor(h1), f, p).data
        for b in range(2):
            ref = reference.stgl(h1[b], as_dict(f, p), p.beta, len(p.layer_weights) - 1)
            assert_allclose(out[b], ref, atol=1e-10)

    def test_output_shape(self):
        f, p, h1 = stgl_case()
        assert stgl_forward(Tensor(h1), f, p).shape == (2, 3, 6)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_node_permutation_equivariance(self, seed):
        f, p, h1 = stgl_case(n=4, seed=seed)
        perm = np.random.default_rng(seed).permutation(4)
        base = stgl_forward(Tensor(h1), f, p).data
        g = AdjacencyFactors(Tensor(f.E1.data[perm]), Tensor(f.E2.data[perm]), f.W1, f.W2)
        permuted = stgl_forward(Tensor(h1[:, perm]), g, p).data
        assert_allclose(permuted, base[:, perm], atol=1e-10)

    def test_gradients_match_finite_differences(self):
        f, p, h1 = stgl_case(seed=4)
        x = Tensor(h1)
        w = np.random.default_rng(9).normal(size=(2, 3, 6))
        leaves = [f.E1, f.E2, f.W1, f.W2, p.Wf, p.Wg, *p.layer_weights, p.ln_gain, p.ln_bias]
        err = finite_difference_check(lambda: (stgl_forward(x, f, p) * w).sum(), leaves)
        assert err < 1e-6
