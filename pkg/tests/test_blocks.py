import numpy as np
import pytest

from dffn.blocks import CSAM, DDAB, DDPB, IAM, IFM, TOPOLOGIES, DualDomainBlock
from dffn.fourier import amplitude, dft2, phase
from dffn.layers import init_uniform
from dffn.tensor import ShapeError, Tensor, no_grad, precision


def feat(rng, *shape):
    return Tensor(rng.standard_normal(shape).astype(np.float32))


@pytest.mark.parametrize("topology", TOPOLOGIES)
@pytest.mark.parametrize("factory", [DDAB, DDPB])
def test_dual_blocks_preserve_shape(rng, factory, topology):
    b = factory(6, topology)
    init_uniform(b, 0)
    x = feat(rng, 2, 6, 8, 8)
    assert b(x).shape == x.shape


def test_block_rejects_wrong_channels(rng):
    b = DDAB(4)
    with pytest.raises(ShapeError):
        b(feat(rng, 1, 5, 8, 8))


def test_block_options_validated():
    with pytest.raises(ValueError):
        DualDomainBlock(4, "magnitude")
    with pytest.raises(ValueError):
        DualDomainBlock(4, "amplitude", "diagonal")


def test_ddab_frequency_branch_keeps_phase(rng):
    """Only the amplitude plane is transformed; the phase of the refined input survives
    wherever the learned amplitude stays positive."""
    from dffn import ops
    with precision(np.float64):
        b = DDAB(3)
        init_uniform(b, 1)
        x = Tensor(rng.standard_normal((1, 3, 8, 8)))
        with no_grad():
            ref = dft2(b.refine(x))
            new_amp = b.outer(ops.relu(b.inner(amplitude(ref)))).data
            s_out = dft2(b.freq_branch(x))
        mask = new_amp > 1e-6
        d = np.angle(np.exp(1j * (phase(s_out).data - phase(ref).data)))
        assert mask.sum() > 20
        assert np.abs(d[mask]).max() < 1e-6


def test_ddpb_frequency_branch_keeps_amplitude_up_to_real_projection(rng):
    """Only the phase plane is transformed; with an identity phase map the branch is the refine conv."""
    with precision(np.float64):
        b = DDPB(3)
        init_uniform(b, 1)
        c = 3
        b.inner.weight.assign(np.eye(c).reshape(c, c, 1, 1))
        b.outer.weight.assign(np.eye(c).reshape(c, c, 1, 1))
        b.inner.bias.assign(np.full(c, 10.0))    # keeps ReLU in its linear region
        b.outer.bias.assign(np.full(c, -10.0))
        x = Tensor(rng.standard_normal((1, c, 8, 8)))
        with no_grad():
            np.testing.assert_allclose(b.freq_branch(x).data, b.refine(x).data, atol=1e-9)


def test_csam_outputs(rng):
    m = CSAM(5)
    init_uniform(m, 0)
    f, low = feat(rng, 2, 5, 8, 8), feat(rng, 2, 3, 8, 8)
    o_a, bridged = m(f, low)
    assert o_a.shape == low.shape and bridged.shape == f.shape


def test_csam_with_zero_weights_is_identity_on_image(rng):
    m = CSAM(4)
    f, low = feat(rng, 1, 4, 8, 8), feat(rng, 1, 3, 8, 8)
    o_a, bridged = m(f, low)
    np.testing.assert_array_equal(o_a.data, low.data)
    np.testing.assert_array_equal(bridged.data, f.data)


def test_csam_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        CSAM(4)(feat(rng, 1, 4, 8, 8), feat(rng, 1, 3, 4, 4))


def test_ifm_outputs_match_sources(rng):
    m = IFM([4, 8, 16])
    init_uniform(m, 0)
    xs = [feat(rng, 1, 4, 16, 16), feat(rng, 1, 8, 8, 8), feat(rng, 1, 16, 4, 4)]
    outs = m(xs)
    assert [o.shape for o in outs] == [x.shape for x in xs]


def test_ifm_source_count_error(rng):
    m = IFM([4, 8, 16])
    with pytest.raises(ShapeError, match="expects 3 sources"):
        m([feat(rng, 1, 4, 16, 16), feat(rng, 1, 8, 8, 8)])


def test_ifm_adapter_resample_commute(rng):
    """Running the 1x1 adapter before or after resampling gives the same result."""
    from dffn import ops
    from dffn.layers import Conv
    with precision(np.float64):
        conv = Conv(4, 6, 1)
        init_uniform(conv, 3)
        conv.bias.assign(rng.standard_normal(6))
        x = Tensor(rng.standard_normal((1, 4, 4, 4)))
        a = ops.resample(conv(x), 8, 8).data
        b = conv(ops.resample(x, 8, 8)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_iam_zero_filter_is_identity(rng):
    m = IAM(4, 3)
    init_uniform(m, 0)
    m.filter_conv.weight.assign(np.zeros_like(m.filter_conv.weight.data))
    u = feat(rng, 1, 4, 8, 8)
    out = m(feat(rng, 1, 4, 8, 8), feat(rng, 1, 4, 8, 8), u)
    np.testing.assert_array_equal(out.data, u.data)


def test_iam_rejects_even_kernel():
    with pytest.raises(ValueError):
        IAM(4, 2)


def test_iam_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        IAM(4)(feat(rng, 1, 4, 8, 8), feat(rng, 1, 4, 4, 4), feat(rng, 1, 4, 8, 8))


@pytest.mark.parametrize("factory", [DDAB, DDPB])
def test_zero_parameters_give_zero_output(rng, factory):
    b = factory(5)
    out = b(feat(rng, 1, 5, 8, 8))
    np.testing.assert_array_equal(out.data, 0.0)


@pytest.mark.parametrize("branch", ["amplitude", "phase"])
def test_block_matches_step_by_step_composition(rng, branch):
    from dffn import ops
    from dffn.fourier import idft2, recompose
    b = DualDomainBlock(4, branch)
    init_uniform(b, 2)
    x = feat(rng, 1, 4, 8, 8)
    w = lambda conv, t: ops.conv2d(t, conv.weight, conv.bias, pad=conv.k // 2)  # noqa: E731
    f_sa = ops.relu(w(b.spatial[1], ops.relu(w(b.spatial[0], x))))
    s = dft2(w(b.refine, x))
    a, p = amplitude(s), phase(s)
    if branch == "amplitude":
        a = w(b.outer, ops.relu(w(b.inner, a)))
    else:
        p = w(b.outer, ops.relu(w(b.inner, p)))
    ref = ops.add(f_sa, idft2(recompose(a, p)))
    np.testing.assert_allclose(b(x).data, ref.data, atol=1e-5)
