import torch

from daf3d.attention import AttendAll, AttentionModule

from oracles import fd_gradient_check


def _pair(c=8, shape=(6, 6, 6)):
    return torch.randn(1, c, *shape), torch.randn(1, c, *shape)


def test_zero_logits_give_half():
    am = AttentionModule(8, 8, 8, max_gn_groups=32)
    am.zero_init_logits()
    slf, mlf = _pair()
    assert torch.equal(am.weights(slf, mlf), torch.full((1, 8, 6, 6, 6), 0.5))


def test_range_open_interval():
    am = AttentionModule(8, 8, 8)
    for _ in range(10):
        slf, mlf = _pair()
        a = am.weights(slf * 5, mlf * 5)
        assert ((a > 0) & (a < 1)).all()


def test_channel_arithmetic():
    am = AttentionModule(64, 64, 64)
    assert am.attend[0][0].in_channels == 128
    slf, mlf = _pair(64, (4, 4, 4))
    a = am.weights(slf, mlf)
    assert a.shape == (1, 64, 4, 4, 4)
    assert am.refine(slf, mlf, a).shape == (1, 64, 4, 4, 4)


def test_broadcast_variant():
    am = AttentionModule(8, 8, 8, broadcast=True)
    slf, mlf = _pair()
    a = am.weights(slf, mlf)
    assert a.shape == (1, 1, 6, 6, 6)
    assert am.refine(slf, mlf, a).shape == (1, 8, 6, 6, 6)


def test_zero_gate_ignores_mlf():
    am = AttentionModule(8, 8, 8)
    slf, mlf = _pair()
    zero = torch.zeros(1, 8, 6, 6, 6)
    with torch.no_grad():
        out1 = am.refine(slf, mlf, zero)
        out2 = am.refine(slf, torch.randn_like(mlf), zero)
    assert torch.equal(out1, out2)
    assert not am.gate(torch.zeros_like(mlf), torch.rand_like(mlf)).any()


def test_gate_linear_in_attention():
    am = AttentionModule(8, 8, 8)
    _, mlf = _pair()
    a1, a2 = torch.rand(1, 8, 6, 6, 6), torch.rand(1, 8, 6, 6, 6)
    assert torch.allclose(am.gate(mlf, 2 * a1), 2 * am.gate(mlf, a1))
    assert torch.allclose(am.gate(mlf, a1 + a2), am.gate(mlf, a1) + am.gate(mlf, a2), atol=1e-6)


def test_attend_all_shapes_and_isolation():
    aa = AttendAll(slf_channels=8, mlf_channels=8, out_channels=8)
    slfs = [torch.randn(1, 8, 16, 16, 16) for _ in range(4)]
    mlf = torch.randn(1, 8, 16, 16, 16)
    with torch.no_grad():
        outs, maps = aa(slfs, mlf)
        assert all(o.shape == (1, 8, 16, 16, 16) for o in outs + maps)
        for p in aa.levels[0].parameters():
            p.add_(0.1)
        outs2, _ = aa(slfs, mlf)
        assert not torch.equal(outs[0], outs2[0])
        assert all(torch.equal(a, b) for a, b in zip(outs[1:], outs2[1:]))
        # zeroing one level's SLF only changes that level
        slfs3 = list(slfs)
        slfs3[2] = torch.zeros_like(slfs[2])
        outs3, _ = aa(slfs3, mlf)
        assert not torch.equal(outs3[2], outs2[2])
        assert all(torch.equal(outs3[k], outs2[k]) for k in (0, 1, 3))


def test_no_parameter_sharing():
    aa = AttendAll(slf_channels=8, mlf_channels=8, out_channels=8)
    ids = [{id(p) for p in m.parameters()} for m in aa.levels]
    assert all(not (ids[i] & ids[j]) for i in range(4) for j in range(i + 1, 4))


def test_gradient_check():
    am = AttentionModule(4, 4, 4).double()
    slf = torch.randn(1, 4, 5, 5, 4, dtype=torch.float64)
    mlf = torch.randn(1, 4, 5, 5, 4, dtype=torch.float64)
    w = torch.randn(1, 4, 5, 5, 4, dtype=torch.float64)

    def loss():
        out, a = am(slf, mlf)
        return (out * w).sum() + a.sum()

    res = fd_gradient_check(am, loss, n_samples=150, seed=2)
    assert max(r[0] for r in res) < 1e-4
