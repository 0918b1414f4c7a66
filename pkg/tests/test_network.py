import numpy as np
import pytest
import torch

from igm.errors import ConfigError
from igm.network import (
    Encoder,
    MultiheadSelfAttention,
    NetConfig,
    TokenEmbed,
    TransformerBlock,
    grad_check,
    parameter_count,
)

TINY = NetConfig(dim=8, layers=1, heads=2, frames=4, joints=3, channels=3)


def _x(config, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    return torch.tensor(
        rng.standard_normal((batch, config.frames, config.joints, config.channels)),
        dtype=torch.float32,
    )


def test_config_validation():
    with pytest.raises(ConfigError):
        NetConfig(dim=10, heads=4).validate()
    with pytest.raises(ConfigError):
        NetConfig(layers=0).validate()
    with pytest.raises(ConfigError):
        NetConfig(token_layout="patch").validate()


def test_embed_zero_everything_gives_zero_tokens():
    embed = TokenEmbed(TINY)
    with torch.no_grad():
        embed.proj.weight.zero_()
        embed.proj.bias.zero_()
        embed.pos_t.zero_()
        embed.pos_v.zero_()
    tokens = embed(torch.zeros(2, 4, 3, 3))
    assert torch.all(tokens == 0)


def test_embed_zero_input_gives_position_sums():
    embed = TokenEmbed(TINY)
    with torch.no_grad():
        embed.proj.bias.zero_()
    tokens = embed(torch.zeros(1, 4, 3, 3))
    expected = (embed.pos_t[:, None, :] + embed.pos_v[None, :, :]).reshape(1, 12, 8)
    assert torch.allclose(tokens, expected)


def test_embed_frame_layout_adds_frame_positions():
    config = NetConfig(dim=8, layers=1, heads=2, frames=4, joints=3, channels=3,
                       token_layout="frame")
    embed = TokenEmbed(config)
    with torch.no_grad():
        embed.proj.bias.zero_()
    tokens = embed(torch.zeros(1, 4, 3, 3))
    assert tokens.shape == (1, 4, 8)
    assert torch.allclose(tokens[0], embed.pos_t)


def test_embed_removing_frame_positions_shifts_rows_by_frame_constant():
    embed = TokenEmbed(TINY)
    x = _x(TINY, batch=1)
    with_pos = embed(x)
    saved = embed.pos_t.detach().clone()
    with torch.no_grad():
        embed.pos_t.zero_()
    without_pos = embed(x)
    delta = (with_pos - without_pos)[0].reshape(4, 3, 8)
    for t in range(4):
        for v in range(3):
            assert torch.allclose(delta[t, v], saved[t], atol=1e-6)


def test_embed_shape_mismatch():
    embed = TokenEmbed(TINY)
    with pytest.raises(ConfigError, match="input shape"):
        embed(torch.zeros(2, 5, 3, 3))


def test_attention_single_token_is_value_then_output_projection():
    attn = MultiheadSelfAttention(8, 2)
    h = torch.randn(3, 1, 8)
    expected = attn.out(attn.v(h))
    assert torch.allclose(attn(h), expected, atol=1e-6)


def test_block_permutation_equivariance():
    block = TransformerBlock(8, 2, 2.0)
    h = torch.randn(1, 6, 8)
    perm = torch.randperm(6)
    out = block(h)
    out_perm = block(h[:, perm])
    assert torch.allclose(out[:, perm], out_perm, atol=1e-5)


def test_block_output_rows_are_normalized():
    block = TransformerBlock(8, 2, 2.0)
    out = block(torch.randn(2, 6, 8)).detach()
    mean = out.mean(dim=-1)
    var = out.var(dim=-1, unbiased=False)
    assert torch.allclose(mean, torch.zeros_like(mean), atol=1e-5)
    assert torch.allclose(var, torch.ones_like(var), atol=1e-4)


def test_encoder_deterministic_and_unit_norm():
    torch.manual_seed(0)
    encoder = Encoder(TINY, max_timestep=10)
    x = _x(TINY)
    a = encoder(x)
    b = encoder(x)
    assert torch.equal(a.pooled, b.pooled)
    norms = a.pooled.norm(dim=-1)
    assert torch.allclose(norms, torch.ones_like(norms), atol=1e-6)


def test_encoder_aux_changes_pooled_features():
    torch.manual_seed(1)
    encoder = Encoder(TINY, max_timestep=10)
    x = _x(TINY)
    z = torch.randn(2, 8)
    t = np.array([3, 5])
    tp = np.array([1, 7])
    plain = encoder(x)
    with_aux = encoder(x, aux=(z, torch.as_tensor(t), torch.as_tensor(tp)))
    assert not torch.allclose(plain.pooled, with_aux.pooled)


def test_encoder_token_count_contract():
    encoder = Encoder(TINY, max_timestep=10)
    x = _x(TINY)
    z = torch.randn(2, 8)
    t = torch.as_tensor(np.array([1, 2]))
    assembled = encoder.assemble_tokens(x, aux=(z, t, t))
    assert assembled.shape[1] == TINY.tokens + 3
    feat = encoder(x, aux=(z, t, t))
    assert feat.tokens.shape[1] == TINY.tokens


def test_encoder_aux_dim_mismatch():
    encoder = Encoder(TINY, max_timestep=10)
    with pytest.raises(ConfigError, match="auxiliary feature dim"):
        encoder.assemble_tokens(_x(TINY), aux=(torch.randn(2, 5),
                                               torch.as_tensor([1, 2]),
                                               torch.as_tensor([1, 2])))


def test_parameter_count_deterministic():
    torch.manual_seed(0)
    a = parameter_count(Encoder(TINY, max_timestep=10))
    torch.manual_seed(5)
    b = parameter_count(Encoder(TINY, max_timestep=10))
    assert a == b > 0


# --- gradient checker ---------------------------------------------------------

def test_grad_check_quadratic_exact():
    p = torch.randn(50, dtype=torch.float64, requires_grad=True)
    err = grad_check(lambda: 0.5 * (p**2).sum(), [p], num_coords=50)
    assert err < 1e-8


def test_grad_check_constant_loss():
    p = torch.randn(10, dtype=torch.float64, requires_grad=True)
    err = grad_check(lambda: torch.zeros((), dtype=torch.float64) + 1.0, [p], num_coords=10)
    assert err == 0.0


def test_grad_check_catches_wrong_gradient():
    p = torch.randn(20, dtype=torch.float64, requires_grad=True)

    class _Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, inp):
            ctx.save_for_backward(inp)
            return (inp**2).sum()

        @staticmethod
        def backward(ctx, grad):
            (inp,) = ctx.saved_tensors
            return 3.0 * inp * grad  # deliberately not 2 * inp

    err = grad_check(lambda: _Wrong.apply(p), [p], num_coords=20)
    assert err > 1e-1


def test_grad_check_rejects_float32():
    p = torch.randn(4, requires_grad=True)
    with pytest.raises(ConfigError, match="float64"):
        grad_check(lambda: (p**2).sum(), [p])


def test_grad_check_non_finite_loss():
    p = torch.randn(4, dtype=torch.float64, requires_grad=True)
    with pytest.raises(ConfigError, match="non-finite"):
        grad_check(lambda: (p / 0.0).sum(), [p])
