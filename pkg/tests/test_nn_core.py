import numpy as np
import pytest
import torch

from ritp.nn import (
    DropLinear,
    FourierEmbedding,
    Mlp,
    RelAttentionBlock,
    apply_masks,
    attend,
    directional_grad_check,
    dropout_sample,
    load_checkpoint,
    masked_weight,
    save_checkpoint,
)

D = 16


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestAutogradIntegrity:
    def test_quadratic_analytic(self):
        x = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
        (x @ x).backward()
        assert np.allclose(x.grad.numpy(), [2.0, 4.0])

    def test_mlp_gradient_check(self):
        mlp = Mlp([4, 8, 3], gen(1))
        x = torch.randn(5, 4, dtype=torch.float64, generator=gen(2))
        params = list(mlp.parameters())
        directional_grad_check(lambda: (mlp(x) ** 2).sum(), params, draws=100)

    def test_fourier_gradient_check(self):
        fe = FourierEmbedding(3, D, gen(3))
        x = torch.randn(7, 3, dtype=torch.float64, generator=gen(4))
        directional_grad_check(lambda: fe(x).sum() + (fe(x) ** 2).sum(),
                               list(fe.parameters()), draws=100)

    def test_attention_gradient_check(self):
        block = RelAttentionBlock(D, 2, gen(5))
        q = torch.randn(3, D, dtype=torch.float64, generator=gen(6))
        kv = torch.randn(4, D, dtype=torch.float64, generator=gen(6))
        rpe = torch.randn(3, 4, D, dtype=torch.float64, generator=gen(6))
        directional_grad_check(lambda: (block(q, kv, rpe)[0] ** 2).sum(),
                               list(block.parameters()), draws=100)

    def test_gru_gradient_check(self):
        rnn = torch.nn.GRU(4, 6, batch_first=True).to(torch.float64)
        x = torch.randn(2, 9, 4, dtype=torch.float64, generator=gen(8))
        directional_grad_check(lambda: rnn(x)[1].pow(2).sum(),
                               list(rnn.parameters()), draws=50)


class TestAttend:
    def test_single_key_returns_value(self):
        q = torch.randn(1, D, dtype=torch.float64, generator=gen(0))
        v = torch.randn(1, 1, D, dtype=torch.float64, generator=gen(1))
        out, valid = attend(q, q.unsqueeze(1), v, num_heads=2)
        assert torch.allclose(out, v[:, 0, :])
        assert bool(valid.all())

    def test_two_identical_keys_average_values(self):
        q = torch.randn(1, D, dtype=torch.float64, generator=gen(2))
        k = torch.randn(1, 1, D, dtype=torch.float64, generator=gen(3)).repeat(1, 2, 1)
        v = torch.randn(1, 2, D, dtype=torch.float64, generator=gen(4))
        out, _ = attend(q, k, v, num_heads=2)
        assert torch.allclose(out[0], v.mean(dim=1)[0])

    def test_key_value_permutation_invariance(self):
        rng = torch.Generator().manual_seed(5)
        q = torch.randn(3, D, dtype=torch.float64, generator=rng)
        k = torch.randn(3, 6, D, dtype=torch.float64, generator=rng)
        v = torch.randn(3, 6, D, dtype=torch.float64, generator=rng)
        out1, _ = attend(q, k, v, num_heads=2)
        perm = torch.randperm(6, generator=rng)
        out2, _ = attend(q, k[:, perm], v[:, perm], num_heads=2)
        assert torch.allclose(out1, out2, atol=1e-12)

    def test_empty_key_rows_masked(self):
        q = torch.randn(2, D, dtype=torch.float64, generator=gen(6))
        k = torch.randn(2, 3, D, dtype=torch.float64, generator=gen(7))
        mask = torch.tensor([[True, True, False], [False, False, False]])
        out, valid = attend(q, k, k, mask=mask, num_heads=2)
        assert bool(valid[0]) and not bool(valid[1])
        assert torch.all(out[1] == 0.0)


class TestColumnDropout:
    def test_p_zero_identity(self):
        layer = DropLinear(8, 4, p=0.0).to(torch.float64)
        masks = dropout_sample(torch.nn.Sequential(layer), gen(0))
        assert all(bool(m.all()) for m in masks.values())

    def test_column_zero_frequency(self):
        layer = DropLinear(100, 4, p=0.5).to(torch.float64)
        net = torch.nn.Sequential(layer)
        g = gen(1)
        zeros = 0
        draws = 1000
        for _ in range(draws):
            masks = dropout_sample(net, g)
            zeros += int((next(iter(masks.values())) == 0).sum())
        n = draws * 100
        p_hat = zeros / n
        sigma = np.sqrt(0.5 * 0.5 / n)
        assert abs(p_hat - 0.5) < 3 * sigma

    def test_same_seed_same_masks(self):
        net = torch.nn.Sequential(DropLinear(16, 8, p=0.3).to(torch.float64))
        m1 = dropout_sample(net, gen(42))
        m2 = dropout_sample(net, gen(42))
        for k in m1:
            assert torch.equal(m1[k], m2[k])

    def test_masked_weight_zeroes_columns(self):
        layer = DropLinear(4, 3, p=0.5).to(torch.float64)
        mask = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        w = masked_weight(layer, mask)
        assert torch.all(w[:, 1] == 0.0) and torch.all(w[:, 3] == 0.0)
        assert torch.equal(w[:, 0], layer.weight[:, 0])

    def test_apply_masks_scopes_the_pass(self):
        layer = DropLinear(4, 4, p=0.5).to(torch.float64)
        net = torch.nn.Sequential(layer)
        x = torch.ones(1, 4, dtype=torch.float64)
        masks = {name: torch.zeros(4, dtype=torch.float64) for name, _ in [("0", layer)]}
        with apply_masks(net, masks):
            inside = net(x)
        outside = net(x)
        assert torch.allclose(inside, layer.bias[None, :])
        assert not torch.allclose(outside, inside) or torch.allclose(layer.weight.sum(), torch.tensor(0.0, dtype=torch.float64))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        tensors = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array(3.5)}
        path = tmp_path / "ck.bin"
        save_checkpoint(path, tensors, meta={"kind": "test", "seed": 7})
        loaded, meta = load_checkpoint(path)
        assert meta == {"kind": "test", "seed": 7}
        assert np.array_equal(loaded["a.weight"], tensors["a.weight"])
        assert loaded["b"].shape == ()

    def test_byte_identical_rewrites(self, tmp_path):
        mlp = Mlp([4, 8, 2], gen(9))
        tensors = {k: v for k, v in mlp.state_dict().items()}
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, tensors)
        save_checkpoint(p2, tensors)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(p)


def test_dropout_helper_passthrough_gradients():
    # standard dropout with p=0 is the identity with gradient passthrough
    from ritp.nn.blocks import _dropout

    x = torch.randn(4, 4, dtype=torch.float64, generator=gen(10), requires_grad=True)
    y = _dropout(x, 0.0, None, training=True)
    y.sum().backward()
    assert torch.all(x.grad == 1.0)
    assert torch.equal(y, x)
