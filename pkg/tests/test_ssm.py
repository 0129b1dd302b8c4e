"""State-space layer: discretizations, kernel/scan equivalence, selective scan."""

import numpy as np
import pytest

from simba import gradcheck as gc
from simba import ssm
from simba import tensor as T
from simba.errors import NumericError, ParameterError, ShapeError
from simba.tensor import Tensor


def scalar_system() -> ssm.LtiSsm:
    return ssm.LtiSsm(a=np.array([-1.0]), b=np.array([1.0]), c=np.array([1.0]), d=0.0, delta=1.0)


def random_stable_system(rng, k: int) -> ssm.LtiSsm:
    return ssm.LtiSsm(
        a=-np.exp(rng.uniform(-2.0, 1.0, k)),
        b=rng.uniform(-1.0, 1.0, k),
        c=rng.uniform(-1.0, 1.0, k),
        d=float(rng.uniform(-1.0, 1.0)),
        delta=float(np.exp(rng.uniform(-3.0, 0.0))),
    )


def test_bilinear_scalar_hand_values():
    abar, bbar, cbar = ssm.discretize_bilinear(scalar_system())
    assert abar[0] == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert bbar[0] == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert cbar[0] == 1.0


def test_bilinear_zero_step_limit():
    rng = np.random.default_rng(0)
    s = ssm.LtiSsm(a=rng.uniform(-2, -0.5, 6), b=np.ones(6), c=np.ones(6), delta=1e-8)
    abar, _, _ = ssm.discretize_bilinear(s)
    assert np.abs(abar - 1.0).max() < 1e-6


def test_bilinear_stable_systems_contract():
    rng = np.random.default_rng(1)
    for _ in range(20):
        k = int(rng.integers(1, 9))
        a = -np.exp(rng.uniform(-2, 1, k))
        s = ssm.LtiSsm(a=a, b=np.ones(k), c=np.ones(k), delta=float(np.exp(rng.uniform(-2, 1))))
        abar, _, _ = ssm.discretize_bilinear(s)
        assert np.abs(abar).max() < 1.0


def test_bilinear_dense_matches_diagonal():
    rng = np.random.default_rng(2)
    a = -np.exp(rng.uniform(-1, 1, 5))
    s_diag = ssm.LtiSsm(a=a, b=rng.uniform(-1, 1, 5), c=rng.uniform(-1, 1, 5), delta=0.3)
    s_dense = ssm.LtiSsm(a=np.diag(a), b=s_diag.b, c=s_diag.c, delta=0.3)
    ad, bd, _ = ssm.discretize_bilinear(s_diag)
    an, bn, _ = ssm.discretize_bilinear(s_dense)
    assert np.allclose(np.diag(ad), an, atol=1e-12)
    assert np.allclose(bd, bn, atol=1e-12)


def test_bilinear_singular_resolvent_reports_condition():
    s = ssm.LtiSsm(a=np.array([2.0]), b=np.array([1.0]), c=np.array([1.0]), delta=1.0)
    with pytest.raises(NumericError):
        ssm.discretize_bilinear(s)


def test_zoh_hand_value_and_limits():
    abar, bbar = ssm.discretize_zoh_diag(np.array([[-1.0]]), np.array([1.0]), np.array([np.log(2.0)]))
    assert abar[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert bbar[0, 0] == pytest.approx(np.log(2.0), abs=1e-15)

    abar0, bbar0 = ssm.discretize_zoh_diag(np.array([[-3.0]]), np.array([2.0]), np.array([0.0]))
    assert abar0[0, 0] == 1.0 and bbar0[0, 0] == 0.0


def test_zoh_range_and_negativity_check():
    rng = np.random.default_rng(3)
    a = -np.exp(rng.uniform(-2, 2, (4, 6)))
    delta = np.exp(rng.uniform(-3, 1, 4))
    abar, _ = ssm.discretize_zoh_diag(a, np.ones(6), delta)
    assert ((abar > 0) & (abar < 1)).all()
    with pytest.raises(ParameterError):
        ssm.discretize_zoh_diag(np.array([[0.0]]), np.ones(1), np.ones(1))


def test_lti_scan_hand_unroll():
    y = ssm.lti_scan(scalar_system(), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(y, [2.0 / 3.0, 2.0 / 9.0, 2.0 / 27.0], atol=1e-15)


def test_lti_scan_zero_input():
    rng = np.random.default_rng(4)
    s = random_stable_system(rng, 5)
    assert np.array_equal(ssm.lti_scan(s, np.zeros(10)), np.zeros(10))


def test_lti_scan_single_step_closed_form():
    rng = np.random.default_rng(5)
    s = random_stable_system(rng, 4)
    abar, bbar, cbar = ssm.discretize_bilinear(s)
    u0 = 0.7
    y = ssm.lti_scan(s, np.array([u0]))
    assert y[0] == pytest.approx((cbar @ bbar) * u0 + s.d * u0, rel=1e-12)


def test_lti_kernel_values_and_decay():
    kern = ssm.lti_kernel(scalar_system(), 3)
    assert np.allclose(kern, [2.0 / 3.0, 2.0 / 9.0, 2.0 / 27.0], atol=1e-15)
    assert ssm.lti_kernel(scalar_system(), 1).shape == (1,)

    rng = np.random.default_rng(6)
    s = random_stable_system(rng, 6)
    abar, _, _ = ssm.discretize_bilinear(s)
    radius = np.abs(abar).max()
    kern = ssm.lti_kernel(s, 64)
    mags = np.abs(kern[8:])  # past transients, geometric envelope
    bound = np.abs(kern).max() * radius ** (np.arange(8, 64) - 8) * 8
    assert (mags <= bound + 1e-9).all()


def test_conv_apply_identities():
    rng = np.random.default_rng(7)
    u = rng.uniform(-1, 1, 32)
    delta0 = np.zeros(32)
    delta0[0] = 1.0
    assert np.allclose(ssm.lti_conv_apply(delta0, u), u, atol=1e-12)
    kern = rng.uniform(-1, 1, 32)
    assert np.allclose(ssm.lti_conv_apply(kern, delta0), kern, atol=1e-12)
    with pytest.raises(ShapeError):
        ssm.lti_conv_apply(np.ones(4), np.ones(5))


def test_kernel_conv_matches_scan_on_random_stable_systems():
    rng = np.random.default_rng(8)
    for _ in range(40):
        k = int(rng.integers(1, 17))
        length = int(rng.integers(1, 257))
        s = random_stable_system(rng, k)
        u = rng.uniform(-1.0, 1.0, length)
        y_scan = ssm.lti_scan(s, u)
        y_conv = ssm.lti_conv_apply(ssm.lti_kernel(s, length), u, s.d)
        scale = max(np.abs(y_scan).max(), 1e-12)
        assert np.abs(y_scan - y_conv).max() / scale < 1e-8


def selective_inputs(rng, bsz=2, length=12, p=3, k=4):
    x = Tensor(rng.uniform(-1, 1, (bsz, length, p)))
    delta = Tensor(np.exp(rng.uniform(-2, 0, (bsz, length, p))))
    a = Tensor(-np.exp(rng.uniform(-1, 1, (p, k))))
    b_t = Tensor(rng.uniform(-1, 1, (bsz, length, k)))
    c_t = Tensor(rng.uniform(-1, 1, (bsz, length, k)))
    d = Tensor(rng.uniform(-1, 1, p))
    return x, delta, a, b_t, c_t, d


def test_selective_scan_zero_input():
    rng = np.random.default_rng(9)
    x, delta, a, b_t, c_t, d = selective_inputs(rng)
    x = Tensor(np.zeros(x.shape))
    y = ssm.selective_scan(x, delta, a, b_t, c_t, d)
    assert np.array_equal(y.numpy(), np.zeros(x.shape))


def test_selective_scan_single_step_closed_form():
    rng = np.random.default_rng(10)
    x, delta, a, b_t, c_t, d = selective_inputs(rng, length=1)
    y = ssm.selective_scan(x, delta, a, b_t, c_t, d).numpy()
    xd, dd, bd, cd, dsk = x.numpy(), delta.numpy(), b_t.numpy(), c_t.numpy(), d.numpy()
    h0 = dd[:, 0, :, None] * bd[:, 0, None, :] * xd[:, 0, :, None]
    ref = (h0 * cd[:, 0, None, :]).sum(-1) + dsk * xd[:, 0]
    assert np.abs(y[:, 0] - ref).max() < 1e-12


def test_selective_scan_reduces_to_lti_with_constant_params():
    rng = np.random.default_rng(11)
    for _ in range(10):
        bsz, length, p, k = 2, 24, 3, 5
        a = -np.exp(rng.uniform(-1, 1, (p, k)))
        b_row = rng.uniform(-1, 1, (bsz, 1, k))
        c_row = rng.uniform(-1, 1, (bsz, 1, k))
        d_row = np.exp(rng.uniform(-2, 0, (bsz, 1, p)))
        x = rng.uniform(-1, 1, (bsz, length, p))
        dsk = rng.uniform(-1, 1, p)
        y = ssm.selective_scan(
            Tensor(x),
            Tensor(np.tile(d_row, (1, length, 1))),
            Tensor(a),
            Tensor(np.tile(b_row, (1, length, 1))),
            Tensor(np.tile(c_row, (1, length, 1))),
            Tensor(dsk),
        ).numpy()
        for b in range(bsz):
            for ch in range(p):
                abar, bbar = ssm.discretize_zoh_diag(
                    a[ch : ch + 1], b_row[b, 0], d_row[b, 0, ch : ch + 1]
                )
                ref = ssm.scan_discrete(abar[0], bbar[0], c_row[b, 0], dsk[ch], x[b, :, ch])
                scale = max(np.abs(ref).max(), 1e-12)
                assert np.abs(y[b, :, ch] - ref).max() / scale < 1e-8


def test_selective_scan_invariant_violations():
    rng = np.random.default_rng(12)
    x, delta, a, b_t, c_t, d = selective_inputs(rng)
    with pytest.raises(ParameterError):
        ssm.selective_scan(x, delta, Tensor(np.abs(a.numpy())), b_t, c_t, d)
    bad_delta = delta.numpy().copy()
    bad_delta[0, 0, 0] = 0.0
    with pytest.raises(ParameterError):
        ssm.selective_scan(x, Tensor(bad_delta), a, b_t, c_t, d)


def test_selective_scan_state_decay_after_input_stops():
    rng = np.random.default_rng(13)
    bsz, length, p, k = 1, 30, 2, 4
    x = rng.uniform(-1, 1, (bsz, length, p))
    x[:, 10:] = 0.0
    delta = np.exp(rng.uniform(-2, 0, (bsz, length, p)))
    a = -np.exp(rng.uniform(-1, 1, (p, k)))
    b_t = rng.uniform(-1, 1, (bsz, length, k))
    c_t = rng.uniform(-1, 1, (bsz, length, k))
    _, states = ssm.selective_scan(
        Tensor(x), Tensor(delta), Tensor(a), Tensor(b_t), Tensor(c_t),
        Tensor(np.zeros(p)), return_states=True,
    )
    assert states.shape == (bsz, length, p, k)
    norms = np.linalg.norm(states[0].reshape(length, -1), axis=1)
    diffs = np.diff(norms[10:])
    assert (diffs <= 1e-12).all()


def test_selective_scan_gradients():
    rng = np.random.default_rng(14)
    x, delta, a, b_t, c_t, d = selective_inputs(rng)
    for t in (x, delta, a, b_t, c_t, d):
        t.requires_grad = True
    w = Tensor(rng.uniform(-1, 1, x.shape))

    def f():
        return T.sum_(T.mul(ssm.selective_scan(x, delta, a, b_t, c_t, d), w))

    err = gc.max_rel_error(f, [x, delta, a, b_t, c_t, d], max_coords_per_leaf=30,
                           rng=np.random.default_rng(0))
    assert err < 1e-4


def test_conv1d_causal_left_padding():
    rng = np.random.default_rng(15)
    x = Tensor(rng.uniform(-1, 1, (1, 6, 2)))
    w = Tensor(rng.uniform(-1, 1, (2, 3)))
    b = Tensor(np.zeros(2))
    y = ssm.conv1d_depthwise(x, w, b).numpy()
    # position 0 sees only x[0]; the most recent tap is the last column
    ref0 = x.numpy()[0, 0] * w.numpy()[:, -1]
    assert np.allclose(y[0, 0], ref0, atol=1e-12)


def test_conv1d_gradients():
    rng = np.random.default_rng(16)
    x = Tensor(rng.uniform(-1, 1, (2, 7, 3)), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (3,)), requires_grad=True)
    wts = Tensor(rng.uniform(-1, 1, (2, 7, 3)))

    def f():
        return T.sum_(T.mul(ssm.conv1d_depthwise(x, w, b), wts))

    assert gc.max_rel_error(f, [x, w, b]) < 1e-4


def test_mamba_block_shape_contract():
    rng = np.random.default_rng(17)
    p = ssm.init_ssm_params(rng, dim=64, expand=2, state=16)
    x = Tensor(rng.uniform(-1, 1, (2, 96, 64)))
    assert ssm.mamba_block(x, p).shape == (2, 96, 64)
    with pytest.raises(ShapeError):
        ssm.mamba_block(Tensor(np.zeros((2, 8, 12))), p)


def test_mamba_block_zero_out_projection_gives_zero():
    rng = np.random.default_rng(18)
    p = ssm.init_ssm_params(rng, dim=8, state=4)
    p.proj_out.data[:] = 0.0
    x = rng.uniform(-1, 1, (2, 10, 8))
    assert np.array_equal(ssm.mamba_block(Tensor(x), p).numpy(), np.zeros((2, 10, 8)))


@pytest.mark.parametrize("probe", range(3))
def test_mamba_block_causality(probe):
    rng = np.random.default_rng(100 + probe)
    p = ssm.init_ssm_params(rng, dim=6, state=4, init_std=0.2)
    x0 = rng.uniform(-1, 1, (1, 14, 6))
    t = int(rng.integers(1, 13))
    x1 = x0.copy()
    x1[0, t] += rng.uniform(0.5, 1.5, 6)
    with T.no_grad():
        y0 = ssm.mamba_block(Tensor(x0), p).numpy()
        y1 = ssm.mamba_block(Tensor(x1), p).numpy()
    assert np.array_equal(y0[0, :t], y1[0, :t])
    assert np.abs(y1[0, t:] - y0[0, t:]).max() > 0.0


def test_mamba_block_reverse_flag():
    rng = np.random.default_rng(19)
    p = ssm.init_ssm_params(rng, dim=6, state=4, init_std=0.2, reverse=True)
    x0 = rng.uniform(-1, 1, (1, 14, 6))
    t = 6
    x1 = x0.copy()
    x1[0, t] += rng.uniform(0.5, 1.5, 6)  # per-channel, so the pre-norm sees it
    with T.no_grad():
        y0 = ssm.mamba_block(Tensor(x0), p).numpy()
        y1 = ssm.mamba_block(Tensor(x1), p).numpy()
    # anti-causal in time: positions after t unaffected beyond the conv halo
    halo = p.conv_weight.shape[1] - 1
    assert np.array_equal(y0[0, t + halo + 1 :], y1[0, t + halo + 1 :])
    assert np.abs(y1[0, :t] - y0[0, :t]).max() > 0.0


def test_mamba_block_gradients():
    rng = np.random.default_rng(20)
    p = ssm.init_ssm_params(rng, dim=6, expand=2, state=4, init_std=0.15)
    x = Tensor(rng.uniform(-1, 1, (2, 8, 6)), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (2, 8, 6)))
    leaves = [x] + list(p.named_parameters().values())

    def f():
        return T.sum_(T.mul(ssm.mamba_block(x, p), w))

    err = gc.max_rel_error(f, leaves, max_coords_per_leaf=12, rng=np.random.default_rng(0))
    assert err < 1e-4


def test_a_parameterization_always_negative():
    rng = np.random.default_rng(21)
    p = ssm.init_ssm_params(rng, dim=4, state=8)
    for shift in (-5.0, 0.0, 7.0):
        a = -np.exp(p.a_log.numpy() + shift)
        assert (a < 0).all()
