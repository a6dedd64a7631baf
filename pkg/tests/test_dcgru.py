import numpy as np
import pytest
import torch

from gaets.dcgru import (
    DCGRUCell,
    DiffusionConv,
    Seq2SeqForecaster,
    degree_normalize,
    diffusion_conv,
)
from gaets.errors import DimensionError
from gaets.nnutils import seeded_generator


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def brute_force_diffusion(adjacency, features, theta_fwd, theta_bwd, bias=None):
    """Oracle: explicit matrix powers, summed term by term."""
    a = np.asarray(adjacency, dtype=np.float64)
    out_deg = a.sum(axis=1)
    in_deg = a.sum(axis=0)
    fwd = a * np.divide(1.0, out_deg, out=np.zeros_like(out_deg),
                        where=out_deg > 0)[:, None]
    bwd = a.T * np.divide(1.0, in_deg, out=np.zeros_like(in_deg),
                          where=in_deg > 0)[:, None]
    acc = np.zeros(features.shape[:-1] + (theta_fwd.shape[-1],))
    for k in range(theta_fwd.shape[0]):
        acc = acc + np.linalg.matrix_power(fwd, k) @ features @ theta_fwd[k]
        acc = acc + np.linalg.matrix_power(bwd, k) @ features @ theta_bwd[k]
    if bias is not None:
        acc = acc + bias
    return acc


class TestDegreeNormalize:
    def test_identity_self_loops(self):
        eye = torch.eye(3, dtype=torch.float64)
        fwd, bwd = degree_normalize(eye)
        assert torch.equal(fwd, eye)
        assert torch.equal(bwd, eye)

    def test_all_ones_row_normalized(self):
        ones = torch.ones(2, 2, dtype=torch.float64)
        fwd, bwd = degree_normalize(ones)
        assert torch.allclose(fwd, torch.full((2, 2), 0.5, dtype=torch.float64))
        assert torch.allclose(bwd, torch.full((2, 2), 0.5, dtype=torch.float64))

    def test_zero_matrix_no_division_error(self):
        zero = torch.zeros(4, 4, dtype=torch.float64)
        fwd, bwd = degree_normalize(zero)
        assert torch.equal(fwd, zero)
        assert torch.equal(bwd, zero)
        assert torch.isfinite(fwd).all()

    def test_degree_orientation(self):
        # Single edge 0 -> 1: out-degree of 0 is 1, in-degree of 1 is 1.
        a = torch.zeros(3, 3, dtype=torch.float64)
        a[0, 1] = 1.0
        fwd, bwd = degree_normalize(a)
        assert fwd[0, 1] == 1.0  # forward walk follows 0 -> 1
        assert bwd[1, 0] == 1.0  # backward walk reverses it (node 1 pulls from 0)
        assert bwd[0, 1] == 0.0

    def test_gradient_safe_for_soft_adjacency(self):
        soft = torch.rand(3, 3, dtype=torch.float64,
                          generator=seeded_generator(0)).requires_grad_(True)
        fwd, bwd = degree_normalize(soft)
        (fwd.sum() + bwd.sum()).backward()
        assert torch.isfinite(soft.grad).all()

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            degree_normalize(torch.zeros(2, 3))


class TestDiffusionConv:
    def _random_filter(self, k, d_in, d_out, seed):
        gen = seeded_generator(seed)
        theta_fwd = torch.randn(k + 1, d_in, d_out, dtype=torch.float64, generator=gen)
        theta_bwd = torch.randn(k + 1, d_in, d_out, dtype=torch.float64, generator=gen)
        bias = torch.randn(d_out, dtype=torch.float64, generator=gen)
        return theta_fwd, theta_bwd, bias

    def test_degree_zero_ignores_adjacency(self):
        theta_fwd, theta_bwd, bias = self._random_filter(0, 3, 2, seed=1)
        y = torch.randn(4, 3, dtype=torch.float64, generator=seeded_generator(2))
        dense = diffusion_conv(torch.rand(4, 4, dtype=torch.float64), y,
                               theta_fwd, theta_bwd, bias)
        empty = diffusion_conv(torch.zeros(4, 4, dtype=torch.float64), y,
                               theta_fwd, theta_bwd, bias)
        expected = y @ (theta_fwd[0] + theta_bwd[0]) + bias
        assert torch.allclose(dense, expected, atol=1e-12)
        assert torch.allclose(empty, expected, atol=1e-12)

    def test_identity_adjacency_sums_filters(self):
        k = 3
        theta_fwd, theta_bwd, bias = self._random_filter(k, 2, 2, seed=3)
        y = torch.randn(5, 2, dtype=torch.float64, generator=seeded_generator(4))
        out = diffusion_conv(torch.eye(5, dtype=torch.float64), y,
                             theta_fwd, theta_bwd, bias)
        expected = sum(y @ (theta_fwd[i] + theta_bwd[i]) for i in range(k + 1)) + bias
        assert torch.allclose(out, expected, atol=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        for trial in range(30):
            n = int(rng.integers(2, 7))
            k = int(rng.integers(0, 4))
            d_in, d_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            adjacency = (rng.random((n, n)) < 0.5).astype(np.float64)
            y = rng.normal(size=(n, d_in))
            tf = rng.normal(size=(k + 1, d_in, d_out))
            tb = rng.normal(size=(k + 1, d_in, d_out))
            bias = rng.normal(size=d_out)
            out = diffusion_conv(
                torch.as_tensor(adjacency), torch.as_tensor(y),
                torch.as_tensor(tf), torch.as_tensor(tb), torch.as_tensor(bias),
            ).numpy()
            expected = brute_force_diffusion(adjacency, y, tf, tb, bias)
            np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_batched_matches_loop(self):
        theta_fwd, theta_bwd, bias = self._random_filter(2, 3, 4, seed=6)
        gen = seeded_generator(7)
        adjacency = (torch.rand(4, 4, generator=gen) > 0.5).double()
        y = torch.randn(6, 4, 3, dtype=torch.float64, generator=gen)
        batched = diffusion_conv(adjacency, y, theta_fwd, theta_bwd, bias)
        for b in range(6):
            single = diffusion_conv(adjacency, y[b], theta_fwd, theta_bwd, bias)
            assert torch.allclose(batched[b], single, atol=1e-12)

    def test_shape_mismatch(self):
        theta_fwd, theta_bwd, bias = self._random_filter(1, 3, 2, seed=8)
        with pytest.raises(DimensionError):
            diffusion_conv(torch.eye(4, dtype=torch.float64),
                           torch.zeros(4, 5, dtype=torch.float64),
                           theta_fwd, theta_bwd, bias)


def numpy_plain_gru(x_seq, h0, weights):
    """Independent plain GRU with the [x || r*h] candidate convention."""
    (w_r, b_r), (w_u, b_u), (w_c, b_c) = weights
    h = np.asarray(h0, dtype=np.float64)
    for x in x_seq:
        xh = np.concatenate([x, h], axis=-1)
        r = sigmoid(xh @ w_r + b_r)
        u = sigmoid(xh @ w_u + b_u)
        c = np.tanh(np.concatenate([x, r * h], axis=-1) @ w_c + b_c)
        h = u * h + (1.0 - u) * c
    return h


def combined_weights(cell):
    out = []
    for conv in (cell.reset_gate, cell.update_gate, cell.candidate):
        w = (conv.theta_fwd[0] + conv.theta_bwd[0]).detach().numpy()
        out.append((w, conv.bias.detach().numpy()))
    return out


class TestDCGRUCell:
    def make_cell(self, input_dim=1, hidden_dim=5, max_degree=2, seed=0):
        cell = DCGRUCell(input_dim, hidden_dim, max_degree, torch.float64)
        cell.reset_parameters(seeded_generator(seed))
        return cell

    def test_update_gate_saturated_high_freezes_state(self):
        cell = self.make_cell()
        with torch.no_grad():
            cell.update_gate.bias.fill_(60.0)
        gen = seeded_generator(1)
        supports = degree_normalize(torch.eye(3, dtype=torch.float64))
        x = torch.randn(2, 3, 1, dtype=torch.float64, generator=gen)
        h = torch.randn(2, 3, 5, dtype=torch.float64, generator=gen)
        h_new = cell(supports, x, h)
        assert torch.allclose(h_new, h, atol=1e-15)

    def test_update_gate_saturated_low_overwrites_state(self):
        cell = self.make_cell(seed=2)
        with torch.no_grad():
            cell.update_gate.bias.fill_(-60.0)
        gen = seeded_generator(3)
        adjacency = torch.eye(4, dtype=torch.float64)
        supports = degree_normalize(adjacency)
        x = torch.randn(1, 4, 1, dtype=torch.float64, generator=gen)
        h = torch.randn(1, 4, 5, dtype=torch.float64, generator=gen)
        h_new = cell(supports, x, h)
        xh = torch.cat([x, h], dim=-1)
        r = torch.sigmoid(cell.reset_gate(supports, xh))
        c = torch.tanh(cell.candidate(supports, torch.cat([x, r * h], dim=-1)))
        assert torch.allclose(h_new, c, atol=1e-15)

    def test_degree_zero_cell_equals_plain_gru(self):
        cell = self.make_cell(input_dim=2, hidden_dim=4, max_degree=0, seed=4)
        gen = seeded_generator(5)
        adjacency = (torch.rand(3, 3, generator=gen) > 0.5).double()
        supports = degree_normalize(adjacency)
        x_seq = torch.randn(6, 2, 3, 2, dtype=torch.float64, generator=gen)
        h = torch.randn(2, 3, 4, dtype=torch.float64, generator=gen)
        h_torch = h
        with torch.no_grad():
            for t in range(6):
                h_torch = cell(supports, x_seq[t], h_torch)
        expected = numpy_plain_gru(
            [x.numpy() for x in x_seq], h.numpy(), combined_weights(cell)
        )
        np.testing.assert_allclose(h_torch.numpy(), expected, atol=1e-6)

    def test_gate_ranges_and_state_bound(self):
        cell = self.make_cell(seed=6)
        gen = seeded_generator(7)
        adjacency = (torch.rand(4, 4, generator=gen) > 0.3).double()
        supports = degree_normalize(adjacency)
        h = torch.randn(3, 4, 5, dtype=torch.float64, generator=gen) * 3
        bound = max(h.abs().max().item(), 1.0)
        for _ in range(20):
            x = torch.randn(3, 4, 1, dtype=torch.float64, generator=gen)
            xh = torch.cat([x, h], dim=-1)
            r = torch.sigmoid(cell.reset_gate(supports, xh))
            u = torch.sigmoid(cell.update_gate(supports, xh))
            c = torch.tanh(cell.candidate(supports, torch.cat([x, r * h], dim=-1)))
            assert ((r > 0) & (r < 1)).all()
            assert ((u > 0) & (u < 1)).all()
            assert ((c > -1) & (c < 1)).all()
            h = cell(supports, x, h)
            assert h.abs().max().item() <= bound + 1e-12


class TestSeq2SeqForecaster:
    def make_forecaster(self, t=80, tau=40, hidden=8, layers=1, seed=0):
        model = Seq2SeqForecaster(t, tau, hidden, layers, 2, torch.float64)
        model.reset_parameters(seeded_generator(seed))
        return model

    def test_paper_shapes(self):
        model = self.make_forecaster()
        gen = seeded_generator(1)
        adjacency = (torch.rand(6, 6, generator=gen) > 0.5).double()
        window = torch.randn(6, 80, dtype=torch.float64, generator=gen)
        out = model(adjacency, window)
        assert out.shape == (6, 40)
        batched = model(adjacency, window[None].repeat(3, 1, 1))
        assert batched.shape == (3, 6, 40)

    def test_single_step_horizon(self):
        model = self.make_forecaster(t=5, tau=1)
        gen = seeded_generator(2)
        adjacency = torch.eye(3, dtype=torch.float64)
        out = model(adjacency, torch.randn(3, 5, dtype=torch.float64, generator=gen))
        assert out.shape == (3, 1)

    def test_zero_parameters_output_projection_bias(self):
        model = self.make_forecaster(t=6, tau=4)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
            model.proj.bias.fill_(0.37)
        adjacency = torch.ones(3, 3, dtype=torch.float64)
        out = model(adjacency, torch.randn(3, 6, dtype=torch.float64,
                                           generator=seeded_generator(3)))
        assert torch.allclose(out, torch.full((3, 4), 0.37, dtype=torch.float64))

    def test_wrong_input_horizon_rejected(self):
        model = self.make_forecaster(t=10, tau=2)
        with pytest.raises(DimensionError):
            model(torch.eye(3, dtype=torch.float64),
                  torch.zeros(3, 9, dtype=torch.float64))

    def test_permutation_equivariance(self):
        model = self.make_forecaster(t=7, tau=3, hidden=6, seed=4)
        gen = seeded_generator(5)
        adjacency = (torch.rand(4, 4, generator=gen) > 0.4).double()
        window = torch.randn(4, 7, dtype=torch.float64, generator=gen)
        perm = torch.tensor([3, 0, 2, 1])
        direct = model(adjacency, window)[perm]
        permuted = model(adjacency[perm][:, perm], window[perm])
        assert torch.allclose(direct, permuted, atol=1e-12)

    def test_teacher_forcing_uses_targets(self):
        model = self.make_forecaster(t=5, tau=4, hidden=4, seed=6)
        gen = seeded_generator(7)
        adjacency = torch.eye(2, dtype=torch.float64)
        window = torch.randn(1, 2, 5, dtype=torch.float64, generator=gen)
        targets = torch.randn(1, 2, 4, dtype=torch.float64, generator=gen)
        free = model(adjacency, window)
        forced = model(adjacency, window, targets=targets,
                       feed_truth=[False, True, True, True])
        # First step identical (GO input), later steps diverge.
        assert torch.equal(free[..., 0], forced[..., 0])
        assert not torch.allclose(free[..., 1:], forced[..., 1:])

    def test_teacher_forcing_requires_targets(self):
        model = self.make_forecaster(t=4, tau=2)
        with pytest.raises(DimensionError):
            model(torch.eye(2, dtype=torch.float64),
                  torch.zeros(2, 4, dtype=torch.float64),
                  feed_truth=[False, True])

    def test_multilayer_shapes(self):
        model = self.make_forecaster(t=6, tau=3, hidden=5, layers=2, seed=8)
        adjacency = torch.eye(3, dtype=torch.float64)
        out = model(adjacency, torch.randn(2, 3, 6, dtype=torch.float64,
                                           generator=seeded_generator(9)))
        assert out.shape == (2, 3, 3)
