import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from fusionnet.blocks import AFM, C3CBAM, CBAM, CBS, ChannelAttention, ConfigError, SpatialAttention


def _ca_params(ca: ChannelAttention):
    w1 = ca.fc1.weight[:, :, 0, 0].tolist()
    b1 = ca.fc1.bias.tolist()
    w2 = ca.fc2.weight[:, :, 0, 0].tolist()
    b2 = ca.fc2.bias.tolist()
    return w1, b1, w2, b2


def _randomize(module, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.5)


def test_channel_attention_matches_scalar_oracle():
    torch.manual_seed(0)
    ca = ChannelAttention(6, reduction=2).double()
    _randomize(ca)
    x = torch.randn(1, 6, 3, 4, dtype=torch.float64)
    got = ca(x)[0, :, 0, 0].tolist()
    want = oracles.channel_attention(x[0].tolist(), *_ca_params(ca))
    assert got == pytest.approx(want, abs=1e-12)


def test_spatial_attention_matches_scalar_oracle():
    sa = SpatialAttention(7).double()
    _randomize(sa, 1)
    x = torch.randn(1, 3, 5, 6, dtype=torch.float64)
    got = sa(x)[0, 0].tolist()
    want = oracles.spatial_attention(x[0].tolist(), sa.conv.weight[0].tolist())
    for r_got, r_want in zip(got, want):
        assert r_got == pytest.approx(r_want, abs=1e-12)


def test_afm_matches_scalar_oracle():
    afm = AFM([2, 3], reduction=2).double()
    _randomize(afm, 2)
    a = torch.randn(1, 2, 3, 3, dtype=torch.float64)
    b = torch.randn(1, 3, 3, 3, dtype=torch.float64)
    got = afm(a, b)[0]
    want = torch.tensor(oracles.afm([a[0].tolist(), b[0].tolist()], *_ca_params(afm.attention)), dtype=torch.float64)
    torch.testing.assert_close(got, want, rtol=0, atol=1e-12)


def test_cbam_matches_scalar_oracle():
    cb = CBAM(4, reduction=2).double()
    _randomize(cb, 3)
    x = torch.randn(1, 4, 5, 5, dtype=torch.float64)
    got = cb(x)[0]
    want = torch.tensor(oracles.cbam(x[0].tolist(), *_ca_params(cb.channel), cb.spatial.conv.weight[0].tolist()),
                        dtype=torch.float64)
    torch.testing.assert_close(got, want, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 12), h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_attention_maps_strictly_inside_unit_interval(c, h, w, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(2, c, h, w, generator=g)
    torch.manual_seed(seed)
    ca, sa = ChannelAttention(c, 4), SpatialAttention()
    for m in (ca(x), sa(x)):
        assert torch.all(m > 0) and torch.all(m < 1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_afm_covariant_under_input_permutation(seed):
    """Swapping inputs equals permuting the concatenated channels and the MLP weights to match."""
    torch.manual_seed(seed)
    ca, cb = 3, 5
    afm_ab = AFM([ca, cb], reduction=2).double()
    afm_ba = AFM([cb, ca], reduction=2).double()
    perm = list(range(ca, ca + cb)) + list(range(ca))  # ba-order -> ab-channel index
    with torch.no_grad():
        afm_ba.attention.fc1.weight.copy_(afm_ab.attention.fc1.weight[:, perm])
        afm_ba.attention.fc1.bias.copy_(afm_ab.attention.fc1.bias)
        afm_ba.attention.fc2.weight.copy_(afm_ab.attention.fc2.weight[perm])
        afm_ba.attention.fc2.bias.copy_(afm_ab.attention.fc2.bias[perm])
    a = torch.randn(2, ca, 4, 4, dtype=torch.float64)
    b = torch.randn(2, cb, 4, 4, dtype=torch.float64)
    torch.testing.assert_close(afm_ba(b, a), afm_ab(a, b)[:, perm], rtol=1e-12, atol=1e-12)


def test_afm_rejects_mismatched_inputs():
    afm = AFM([2, 3])
    with pytest.raises(ValueError):
        afm(torch.zeros(1, 2, 4, 4), torch.zeros(1, 3, 5, 4))
    with pytest.raises(ValueError):
        afm(torch.zeros(1, 2, 4, 4), torch.zeros(1, 4, 4, 4))
    with pytest.raises(ValueError):
        afm(torch.zeros(1, 2, 4, 4))
    with pytest.raises(ConfigError):
        AFM([])


def test_c3cbam_preserves_spatial_size_and_maps_channels():
    m = C3CBAM(16, 24, n=2)
    y = m(torch.randn(2, 16, 9, 7))
    assert y.shape == (2, 24, 9, 7)
    with pytest.raises(ConfigError):
        C3CBAM(8, 8, n=0)


def test_cbs_validates_kernel_and_stride():
    assert CBS(3, 8, 3, 2)(torch.zeros(1, 3, 8, 8)).shape == (1, 8, 4, 4)
    with pytest.raises(ConfigError):
        CBS(3, 8, 2)
    with pytest.raises(ConfigError):
        CBS(3, 8, 3, 3)
