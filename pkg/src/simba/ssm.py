"""State-space sequence mixing.

Two layers of machinery live here:

* a plain-numpy linear time-invariant reference path (discretization,
  recurrent scan, convolution kernel, FFT convolution) whose only job is
  to be checkable against hand-derived values and against the selective
  path;
* the selective (input-dependent) scan and the gated block built on it,
  which are tape-differentiable and carry the training path.

The state matrix of the selective path is diagonal and parameterized as
``A = -exp(A_log)``, so every entry is strictly negative for all
parameter values and both discretizations are contractions
(``0 < exp(delta * A) < 1``) whenever ``delta > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .errors import NumericError, ParameterError, ShapeError
from .tensor import Tensor

DEFAULT_STATE_DIM = 16
DEFAULT_EXPAND = 2
DEFAULT_CONV_WIDTH = 4


# -- linear time-invariant reference path ---------------------------------


@dataclass
class LtiSsm:
    """A single-input single-output continuous-time linear system.

    ``a`` is the state matrix, square ``(k, k)`` or diagonal ``(k,)``;
    ``b`` and ``c`` are the input/output projections, ``d`` the skip term,
    ``delta`` the positive discretization step.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        self.d = float(self.d)
        self.delta = float(self.delta)
        if self.delta <= 0:
            raise ParameterError(f"LtiSsm: delta must be > 0, got {self.delta}")
        k = self.b.shape[0]
        if self.a.ndim == 1:
            if self.a.shape[0] != k:
                raise ShapeError(f"LtiSsm: diagonal a has {self.a.shape[0]} entries, b has {k}")
        elif self.a.shape != (k, k):
            raise ShapeError(f"LtiSsm: a shape {self.a.shape} incompatible with state size {k}")
        if self.c.shape[0] != k:
            raise ShapeError(f"LtiSsm: c has {self.c.shape[0]} entries, expected {k}")

    @property
    def state_dim(self) -> int:
        return self.b.shape[0]

    @property
    def diagonal(self) -> bool:
        return self.a.ndim == 1


def discretize_bilinear(s: LtiSsm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear (Tustin) discretization.

    ``abar = (I - delta/2 a)^-1 (I + delta/2 a)``,
    ``bbar = (I - delta/2 a)^-1 delta b``, ``cbar = c``.
    """
    half = 0.5 * s.delta
    if s.diagonal:
        denom = 1.0 - half * s.a
        if np.any(np.abs(denom) < 1e-300):
            raise NumericError(
                f"discretize_bilinear: resolvent is singular (min |1 - delta/2 a| = {np.abs(denom).min():.3e})"
            )
        abar = (1.0 + half * s.a) / denom
        bbar = s.delta * s.b / denom
        return abar, bbar, s.c.copy()
    k = s.state_dim
    m = np.eye(k) - half * s.a
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericError(f"discretize_bilinear: resolvent ill-conditioned (cond = {cond:.3e})")
    abar = np.linalg.solve(m, np.eye(k) + half * s.a)
    bbar = np.linalg.solve(m, s.delta * s.b)
    return abar, bbar, s.c.copy()


def discretize_zoh_diag(
    a_diag: np.ndarray, b: np.ndarray, delta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal zero-order-hold step: ``abar = exp(delta a)``, ``bbar = delta b``.

    ``a_diag`` is ``(p, k)`` with strictly negative entries, ``delta`` is
    ``(p,)`` non-negative, ``b`` broadcasts against ``(p, k)``.  Every
    ``abar`` entry lies in ``(0, 1]``, with 1 only at ``delta = 0``.
    """
    a_diag = np.asarray(a_diag, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(a_diag >= 0):
        raise ParameterError(
            f"discretize_zoh_diag: state matrix must be strictly negative, max entry {a_diag.max():.3e}"
        )
    if np.any(delta < 0):
        raise ParameterError("discretize_zoh_diag: delta must be non-negative")
    abar = np.exp(delta[..., None] * a_diag)
    bbar = delta[..., None] * np.broadcast_to(np.asarray(b, dtype=np.float64), a_diag.shape)
    return abar, bbar


def scan_discrete(
    abar: np.ndarray, bbar: np.ndarray, c: np.ndarray, d: float, u: np.ndarray
) -> np.ndarray:
    """Run ``x_k = abar x_{k-1} + bbar u_k``, ``y_k = c x_k + d u_k`` from x = 0."""
    u = np.asarray(u, dtype=np.float64)
    diagonal = abar.ndim == 1
    k = bbar.shape[0]
    x = np.zeros(k)
    y = np.empty_like(u)
    for t in range(u.shape[0]):
        x = (abar * x if diagonal else abar @ x) + bbar * u[t]
        y[t] = c @ x + d * u[t]
    return y


def lti_scan(s: LtiSsm, u: np.ndarray) -> np.ndarray:
    """Sequential recurrence of the bilinear-discretized system."""
    abar, bbar, cbar = discretize_bilinear(s)
    return scan_discrete(abar, bbar, cbar, s.d, u)


def lti_kernel(s: LtiSsm, length: int) -> np.ndarray:
    """Impulse response ``(c b, c abar b, ..., c abar^(L-1) b)``."""
    if length < 1:
        raise ParameterError(f"lti_kernel: length must be >= 1, got {length}")
    abar, bbar, cbar = discretize_bilinear(s)
    kernel = np.empty(length)
    x = bbar.copy()
    for i in range(length):
        kernel[i] = cbar @ x
        x = abar * x if s.diagonal else abar @ x
    return kernel


def lti_conv_apply(kernel: np.ndarray, u: np.ndarray, d: float = 0.0) -> np.ndarray:
    """Causal convolution ``y = kernel * u + d u`` via zero-padded FFT.

    The transform length is at least ``2 L - 1`` so that circular wrap
    never aliases into the causal window.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if kernel.shape != u.shape:
        raise ShapeError(f"lti_conv_apply: kernel length {kernel.shape} != input length {u.shape}")
    n = u.shape[0]
    size = 1 << (2 * n - 1).bit_length()
    prod = np.fft.rfft(kernel, size) * np.fft.rfft(u, size)
    return np.fft.irfft(prod, size)[:n] + d * u


# -- selective scan --------------------------------------------------------


def selective_scan(
    x: Tensor,
    delta: Tensor,
    a_diag: Tensor,
    b_t: Tensor,
    c_t: Tensor,
    d_skip: Tensor,
    return_states: bool = False,
) -> Union[Tensor, tuple[Tensor, np.ndarray]]:
    """Input-dependent state-space scan, sequential in time.

    Per channel ``p`` and state ``k``::

        h_t = exp(delta_t a) h_{t-1} + delta_t b_t x_t,   h_{-1} = 0
        y_t = sum_k c_t[k] h_t[k] + d_skip x_t

    Shapes: ``x, delta (B, L, P)``; ``a_diag (P, K)`` strictly negative;
    ``b_t, c_t (B, L, K)``; ``d_skip (P,)``.  ``return_states`` also hands
    back the detached state trajectory ``(B, L, P, K)``.
    """
    x, delta = T.as_tensor(x), T.as_tensor(delta)
    a_diag, b_t, c_t, d_skip = map(T.as_tensor, (a_diag, b_t, c_t, d_skip))
    if x.ndim != 3:
        raise ShapeError(f"selective_scan: x must be (batch, length, channels), got {x.shape}")
    bsz, length, p = x.shape
    k = a_diag.shape[-1]
    if delta.shape != (bsz, length, p):
        raise ShapeError(f"selective_scan: delta shape {delta.shape} != x shape {x.shape}")
    if a_diag.shape != (p, k):
        raise ShapeError(f"selective_scan: a_diag shape {a_diag.shape} incompatible with channels {p}")
    if b_t.shape != (bsz, length, k) or c_t.shape != (bsz, length, k):
        raise ShapeError(
            f"selective_scan: b_t {b_t.shape} / c_t {c_t.shape} must be ({bsz}, {length}, {k})"
        )
    if d_skip.shape != (p,):
        raise ShapeError(f"selective_scan: d_skip shape {d_skip.shape} != ({p},)")
    if np.any(a_diag.data >= 0):
        raise ParameterError("selective_scan: state matrix entries must be strictly negative")
    if np.any(delta.data <= 0):
        raise ParameterError("selective_scan: delta must be strictly positive")

    xd, dd, ad, bd, cd, skipd = (t.data for t in (x, delta, a_diag, b_t, c_t, d_skip))
    # time-major internals: contiguous per-step slabs for the recurrences
    d_l = np.ascontiguousarray(dd.transpose(1, 0, 2))  # (L, B, P)
    x_l = xd.transpose(1, 0, 2)
    b_l = bd.transpose(1, 0, 2)  # (L, B, K)
    c_l = np.ascontiguousarray(cd.transpose(1, 0, 2))
    da = np.exp(d_l[..., None] * ad.astype(dd.dtype))  # (L, B, P, K)
    dx_l = d_l * x_l
    dbx = dx_l[..., None] * b_l[:, :, None, :]
    states = np.empty_like(da)
    prev = np.zeros((bsz, p, k), dtype=da.dtype)
    for t in range(length):
        out_t = states[t]
        np.multiply(da[t], prev, out=out_t)
        out_t += dbx[t]
        prev = out_t
    flat = (length * bsz, p, k)
    y = np.matmul(states.reshape(flat), c_l.reshape(length * bsz, k, 1))
    y = y.reshape(length, bsz, p).transpose(1, 0, 2) + skipd * xd

    def bwd(gy):
        gy = gy.astype(da.dtype, copy=False)
        gy_l = np.ascontiguousarray(gy.transpose(1, 0, 2))  # (L, B, P)
        lam = np.empty_like(states)
        np.multiply(gy_l[-1][..., None], c_l[-1][:, None, :], out=lam[-1])
        for t in range(length - 2, -1, -1):
            out_t = lam[t]
            np.multiply(da[t + 1], lam[t + 1], out=out_t)
            out_t += gy_l[t][..., None] * c_l[t][:, None, :]
        # d loss / d (exp argument): lam_t h_{t-1} da_t, with h_{-1} = 0
        ga_step = np.empty_like(states)
        ga_step[0] = 0.0
        np.multiply(lam[1:], states[:-1], out=ga_step[1:])
        ga_step *= da
        lam_flat = lam.reshape(length * bsz, p, k)
        lam_b = np.matmul(lam_flat, b_l.reshape(length * bsz, k, 1)).reshape(length, bsz, p)
        g_x = skipd * gy + (d_l * lam_b).transpose(1, 0, 2)
        g_delta = (np.einsum("lbpk,pk->lbp", ga_step, ad) + lam_b * x_l).transpose(1, 0, 2)
        g_a = np.einsum("lbpk,lbp->pk", ga_step, d_l)
        g_b = np.matmul(
            lam_flat.transpose(0, 2, 1), dx_l.reshape(length * bsz, p, 1)
        ).reshape(length, bsz, k).transpose(1, 0, 2)
        g_c = np.matmul(
            states.reshape(length * bsz, p, k).transpose(0, 2, 1),
            gy_l.reshape(length * bsz, p, 1),
        ).reshape(length, bsz, k).transpose(1, 0, 2)
        g_d = np.einsum("blp,blp->p", gy, xd)
        return g_x, g_delta, g_a, g_b, g_c, g_d

    out = T.from_op(y, (x, delta, a_diag, b_t, c_t, d_skip), bwd)
    if return_states:
        return out, states.transpose(1, 0, 2, 3).copy()
    return out


def conv1d_depthwise(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Causal per-channel 1-D convolution over the sequence axis.

    ``x (B, L, P)``, ``weight (P, W)``, ``bias (P,)``; the output at
    position ``t`` sees inputs ``t - W + 1 .. t`` (left zero padding), so
    the operation never looks ahead.
    """
    x, weight, bias = map(T.as_tensor, (x, weight, bias))
    if x.ndim != 3 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"conv1d_depthwise: expected x (B, L, P), weight (P, W), bias (P,), "
            f"got {x.shape}, {weight.shape}, {bias.shape}"
        )
    bsz, length, p = x.shape
    if weight.shape[0] != p or bias.shape[0] != p:
        raise ShapeError(f"conv1d_depthwise: channel counts differ: x has {p}, weight {weight.shape[0]}")
    width = weight.shape[1]
    xpad = np.zeros((bsz, length + width - 1, p), dtype=x.data.dtype)
    xpad[:, width - 1 :] = x.data
    out = np.broadcast_to(bias.data, (bsz, length, p)).copy()
    for j in range(width):
        out += weight.data[:, j] * xpad[:, j : j + length]

    def bwd(g):
        gx_pad = np.zeros_like(xpad)
        gw = np.empty_like(weight.data)
        for j in range(width):
            gx_pad[:, j : j + length] += g * weight.data[:, j]
            gw[:, j] = (g * xpad[:, j : j + length]).sum(axis=(0, 1))
        gb = g.sum(axis=(0, 1))
        return gx_pad[:, width - 1 :], gw, gb

    return T.from_op(out, (x, weight, bias), bwd)


# -- the gated selective block ---------------------------------------------


@dataclass
class SsmParams:
    """Parameters of one selective-SSM mixer over ``dim``-wide tokens.

    The inner width is ``p = expand * dim``; the state size per channel is
    ``k``.  ``a_log`` parameterizes the state matrix as ``-exp(a_log)``.
    ``norm_gamma`` / ``norm_beta``, when present, apply the learnable
    affine of the block's pre-normalization.
    """

    a_log: Tensor
    conv_weight: Tensor
    conv_bias: Tensor
    proj_in_x: Tensor
    proj_in_z: Tensor
    proj_b: Tensor
    proj_c: Tensor
    proj_delta: Tensor
    delta_bias: Tensor
    d_skip: Tensor
    proj_out: Tensor
    norm_gamma: Optional[Tensor] = None
    norm_beta: Optional[Tensor] = None
    norm_eps: float = 1e-5
    reverse: bool = False

    @property
    def dim(self) -> int:
        return self.proj_in_x.shape[0]

    @property
    def inner_dim(self) -> int:
        return self.proj_in_x.shape[1]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {
            f"{prefix}a_log": self.a_log,
            f"{prefix}conv_weight": self.conv_weight,
            f"{prefix}conv_bias": self.conv_bias,
            f"{prefix}proj_in_x": self.proj_in_x,
            f"{prefix}proj_in_z": self.proj_in_z,
            f"{prefix}proj_b": self.proj_b,
            f"{prefix}proj_c": self.proj_c,
            f"{prefix}proj_delta": self.proj_delta,
            f"{prefix}delta_bias": self.delta_bias,
            f"{prefix}d_skip": self.d_skip,
            f"{prefix}proj_out": self.proj_out,
        }
        if self.norm_gamma is not None:
            out[f"{prefix}norm_gamma"] = self.norm_gamma
            out[f"{prefix}norm_beta"] = self.norm_beta
        return out


def init_ssm_params(
    rng: np.random.Generator,
    dim: int,
    expand: int = DEFAULT_EXPAND,
    state: int = DEFAULT_STATE_DIM,
    conv_width: int = DEFAULT_CONV_WIDTH,
    init_std: float = 0.02,
    norm_affine: bool = True,
    norm_eps: float = 1e-5,
    reverse: bool = False,
    dtype: str = T.REAL64,
) -> SsmParams:
    """Fresh block parameters.

    ``a_log`` starts at ``log(1 .. state)`` per channel so the state
    matrix begins at ``-(1 .. state)``; the delta bias is drawn so that
    the initial softplus output is log-uniform in ``[1e-3, 1e-1]``.
    """
    p = expand * dim
    nd = T.np_dtype(dtype)

    a_log = np.tile(np.log(np.arange(1, state + 1, dtype=np.float64)), (p, 1))
    dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=p))
    delta_bias = np.log(np.expm1(dt))
    bound = 1.0 / np.sqrt(conv_width)

    def param(arr):
        return Tensor(arr.astype(nd), requires_grad=True)

    return SsmParams(
        a_log=param(a_log),
        conv_weight=param(rng.uniform(-bound, bound, size=(p, conv_width))),
        conv_bias=param(np.zeros(p)),
        proj_in_x=param(rng.normal(0.0, init_std, size=(dim, p))),
        proj_in_z=param(rng.normal(0.0, init_std, size=(dim, p))),
        proj_b=param(rng.normal(0.0, init_std, size=(p, state))),
        proj_c=param(rng.normal(0.0, init_std, size=(p, state))),
        proj_delta=param(rng.normal(0.0, init_std, size=(p, 1))),
        delta_bias=param(delta_bias),
        d_skip=param(np.ones(p)),
        proj_out=param(rng.normal(0.0, init_std, size=(p, dim))),
        norm_gamma=param(np.ones(dim)) if norm_affine else None,
        norm_beta=param(np.zeros(dim)) if norm_affine else None,
        norm_eps=norm_eps,
        reverse=reverse,
    )


def _project_scan_inputs(x: Tensor, p: SsmParams):
    """Shared head of the block: norm, projections, conv, gate input."""
    x = T.as_tensor(x)
    if x.ndim != 3 or x.shape[2] != p.dim:
        raise ShapeError(f"mamba_block: expected (B, N, {p.dim}), got {x.shape}")
    h = T.layer_norm(x, p.norm_eps)
    if p.norm_gamma is not None:
        h = T.add(T.mul(h, p.norm_gamma), p.norm_beta)
    xin = T.matmul(h, p.proj_in_x)
    z = T.matmul(h, p.proj_in_z)
    xc = T.silu(conv1d_depthwise(xin, p.conv_weight, p.conv_bias))
    b_t = T.matmul(xc, p.proj_b)
    c_t = T.matmul(xc, p.proj_c)
    delta = T.softplus(T.add(T.matmul(xc, p.proj_delta), p.delta_bias))
    return xc, z, b_t, c_t, delta


def block_delta(x: Tensor, p: SsmParams) -> np.ndarray:
    """The per-(token, channel) step sizes the block would scan with."""
    with T.no_grad():
        _, _, _, _, delta = _project_scan_inputs(x, p)
    return delta.numpy()


def mamba_block(
    x: Tensor,
    p: SsmParams,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Normalize, project, convolve, selectively scan, gate, project back.

    Maps ``(B, N, D) -> (B, N, D)``; the residual connection around the
    block belongs to the caller.  Deterministic; ``train``/``rng`` are
    accepted for mixer-interface uniformity.
    """
    del train, rng
    xc, z, b_t, c_t, delta = _project_scan_inputs(x, p)
    a = T.neg(T.exp(p.a_log))

    if p.reverse:
        xc, delta, b_t, c_t = (T.flip(t, 1) for t in (xc, delta, b_t, c_t))
    y = selective_scan(xc, delta, a, b_t, c_t, p.d_skip)
    if p.reverse:
        y = T.flip(y, 1)

    y = T.mul(y, T.silu(z))
    return T.matmul(y, p.proj_out)
