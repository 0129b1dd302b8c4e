"""Frequency-domain channel mixing.

The pipeline: orthonormal real-input FFT, two complex block-diagonal
gating layers (Einstein matrix multiplication expanded into real and
imaginary parts), soft shrinkage, inverse FFT.  All stages are tape
differentiable; the FFT adjoints account for the Hermitian-redundant
half-spectrum representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ParameterError, ShapeError
from .tensor import ComplexTensor, Tensor

#: A half spectrum: ``n // 2 + 1`` frequency bins of a length-``n`` real
#: signal along the transformed axis.  Bin 0 (and the Nyquist bin for even
#: ``n``) of a real-input transform carries no imaginary part.
SpectrumHalf = ComplexTensor

SEQUENCE_AXIS = "sequence"
CHANNEL_AXIS = "channel"


def spectrum_bins(n: int) -> int:
    """Number of non-redundant frequency bins of a length-``n`` real signal."""
    return n // 2 + 1


def _complex_of(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    ctype = np.complex64 if re.dtype == np.float32 else np.complex128
    out = np.empty(re.shape, dtype=ctype)
    out.real = re
    out.imag = im
    return out


def _interior_slice(n: int, axis: int, ndim: int):
    """Slicer for the double-counted bins of a length-``n`` half spectrum."""
    bins = spectrum_bins(n)
    stop = bins - 1 if n % 2 == 0 else bins
    if stop <= 1:
        return None
    key = [slice(None)] * ndim
    key[axis] = slice(1, stop)
    return tuple(key)


def _edge_keys(n: int, axis: int, ndim: int):
    """Index keys of the bins whose imaginary part is structurally zero."""
    keys = []
    dc = [slice(None)] * ndim
    dc[axis] = 0
    keys.append(tuple(dc))
    if n % 2 == 0 and n > 1:
        nyq = [slice(None)] * ndim
        nyq[axis] = spectrum_bins(n) - 1
        keys.append(tuple(nyq))
    return keys


def fft_real(x: Tensor, axis: int = -1) -> SpectrumHalf:
    """Orthonormal real-input DFT along ``axis`` (scale 1/sqrt(n))."""
    x = T.as_tensor(x)
    if isinstance(x, ComplexTensor):
        raise ShapeError("fft_real: input must be real")
    axis = int(axis) % x.ndim
    n = x.shape[axis]
    if n < 1:
        raise ShapeError(f"fft_real: extent along axis {axis} must be >= 1, got shape {x.shape}")
    spec = np.fft.rfft(x.data, axis=axis, norm="ortho")
    interior = _interior_slice(n, axis, spec.ndim)
    edges = _edge_keys(n, axis, spec.ndim)

    def bwd(gs):
        g_re, g_im = gs
        shape = spec.shape
        h = _complex_of(
            g_re if g_re is not None else np.zeros(shape, x.data.dtype),
            g_im if g_im is not None else np.zeros(shape, x.data.dtype),
        )
        # adjoint of the half-spectrum map: single-count interior bins,
        # drop the structurally-zero imaginary components
        if interior is not None:
            h[interior] *= 0.5
        for key in edges:
            h[key] = h[key].real
        return (np.fft.irfft(h, n=n, axis=axis, norm="ortho").astype(x.data.dtype),)

    re, im = T.from_op(
        [np.ascontiguousarray(spec.real), np.ascontiguousarray(spec.imag)], (x,), bwd, multi=True
    )
    return ComplexTensor(re, im)


def ifft_real(s: SpectrumHalf, n: int, axis: int = -1) -> Tensor:
    """Inverse of :func:`fft_real` back to a length-``n`` real signal.

    The imaginary parts of bin 0 and (for even ``n``) the Nyquist bin do
    not influence the output; their gradients are exactly zero.
    """
    if not isinstance(s, ComplexTensor):
        raise ShapeError("ifft_real: expected a complex half spectrum")
    n = int(n)
    axis = int(axis) % s.re.ndim
    if s.shape[axis] != spectrum_bins(n):
        raise ShapeError(
            f"ifft_real: spectrum extent {s.shape[axis]} along axis {axis} "
            f"inconsistent with signal length {n} (expected {spectrum_bins(n)})"
        )
    re, im = s.re, s.im
    out = np.fft.irfft(_complex_of(re.data, im.data), n=n, axis=axis, norm="ortho")
    interior = _interior_slice(n, axis, re.ndim)

    def bwd(g):
        spec = np.fft.rfft(g, axis=axis, norm="ortho")
        if interior is not None:
            spec[interior] *= 2.0
        g_re = np.ascontiguousarray(spec.real).astype(re.data.dtype)
        g_im = np.ascontiguousarray(spec.imag).astype(im.data.dtype)
        return g_re, g_im

    return T.from_op(out.astype(re.data.dtype), (re, im), bwd)


# -- Einstein matrix multiplication ---------------------------------------


def _emm_real(i: Tensor, w: Tensor) -> Tensor:
    if i.ndim < 2 or w.ndim != 3:
        raise ShapeError(f"emm: expected (..., blocks, dim) x (blocks, dim, dim), got {i.shape} and {w.shape}")
    if w.shape[1] != w.shape[2]:
        raise ShapeError(f"emm: weight blocks must be square, got {w.shape}")
    if i.shape[-2] != w.shape[0] or i.shape[-1] != w.shape[1]:
        raise ShapeError(f"emm: input block layout {i.shape[-2:]} does not match weights {w.shape}")
    cb, cd = w.shape[0], w.shape[1]
    # one GEMM per block, written straight into a contiguous output
    i_blocks = i.data.reshape(-1, cb, cd)
    out = np.empty_like(i_blocks)
    for b in range(cb):
        np.matmul(i_blocks[:, b, :], w.data[b], out=out[:, b, :])

    def bwd(g):
        g_blocks = g.reshape(-1, cb, cd)
        gi = np.empty_like(g_blocks)
        gw = np.empty_like(w.data)
        for b in range(cb):
            np.matmul(g_blocks[:, b, :], w.data[b].T, out=gi[:, b, :])
            np.matmul(i_blocks[:, b, :].T, g_blocks[:, b, :], out=gw[b])
        return gi.reshape(i.shape), gw

    return T.from_op(out.reshape(i.shape), (i, w), bwd)


def emm(i, w):
    """Per-block matrix product over the trailing (blocks, dim) layout.

    ``out[..., b, :] = i[..., b, :] @ w[b]``, equivalent to multiplying by
    one block-diagonal matrix assembled from the ``w[b]``.  Accepts a real
    tensor pair or complex pairs (expanded via the complex product rule).
    """
    if isinstance(i, ComplexTensor) or isinstance(w, ComplexTensor):
        if not (isinstance(i, ComplexTensor) and isinstance(w, ComplexTensor)):
            raise ShapeError("emm: mixed real/complex operands are not supported")
        re = T.sub(_emm_real(i.re, w.re), _emm_real(i.im, w.im))
        im = T.add(_emm_real(i.re, w.im), _emm_real(i.im, w.re))
        return ComplexTensor(re, im)
    return _emm_real(i, w)


def complex_gate_layer(
    h: ComplexTensor,
    w: ComplexTensor,
    b: ComplexTensor,
    activation: str = "none",
) -> ComplexTensor:
    """One spectral gating layer: block-diagonal complex affine + activation.

    Real and imaginary output parts are built from four real EMMs by the
    complex multiplication rule; the activation is applied to each part
    separately.
    """
    if activation not in ("relu", "none"):
        raise ParameterError(f"complex_gate_layer: unknown activation {activation!r}")
    re = T.add(T.sub(_emm_real(h.re, w.re), _emm_real(h.im, w.im)), b.re)
    im = T.add(T.add(_emm_real(h.re, w.im), _emm_real(h.im, w.re)), b.im)
    if activation == "relu":
        re, im = T.relu(re), T.relu(im)
    return ComplexTensor(re, im)


def soft_shrink(x, threshold: float):
    """sign(x) * max(|x| - threshold, 0), elementwise.

    Applied independently to the real and imaginary parts of complex
    input.  Never expands energy: ``sum(out**2) <= sum(x**2)``.
    """
    lam = float(threshold)
    if lam < 0:
        raise ParameterError(f"soft_shrink: threshold must be >= 0, got {lam}")
    if isinstance(x, ComplexTensor):
        return ComplexTensor(soft_shrink(x.re, lam), soft_shrink(x.im, lam))
    x = T.as_tensor(x)
    out = np.sign(x.data) * np.maximum(np.abs(x.data) - lam, 0.0)

    def bwd(g):
        return (g * (np.abs(x.data) > lam),)

    return T.from_op(out, (x,), bwd)


# -- the assembled channel mixer ------------------------------------------


@dataclass
class EinFftParams:
    """Block-diagonal complex gating weights for one channel mixer.

    ``num_blocks * block_dim`` must equal the mixed dimension: the channel
    count when transforming along the sequence axis, or the channel
    spectrum size (``channels // 2 + 1``) when transforming along the
    channel axis.
    """

    num_blocks: int
    block_dim: int
    w1: ComplexTensor
    b1: ComplexTensor
    w2: ComplexTensor
    b2: ComplexTensor
    sparsity_threshold: float = 0.01
    fft_axis: str = SEQUENCE_AXIS

    def __post_init__(self):
        cb, cd = self.num_blocks, self.block_dim
        if cb < 1 or cd < 1:
            raise ConfigError("einfft", f"block counts must be positive, got ({cb}, {cd})")
        if not cb < cd:
            raise ConfigError("einfft", f"num_blocks must be < block_dim, got ({cb}, {cd})")
        if self.sparsity_threshold < 0:
            raise ConfigError("einfft", f"sparsity_threshold must be >= 0, got {self.sparsity_threshold}")
        if self.fft_axis not in (SEQUENCE_AXIS, CHANNEL_AXIS):
            raise ConfigError("einfft", f"fft_axis must be 'sequence' or 'channel', got {self.fft_axis!r}")
        for name, t, shape in (
            ("w1", self.w1, (cb, cd, cd)),
            ("w2", self.w2, (cb, cd, cd)),
            ("b1", self.b1, (cb, cd)),
            ("b2", self.b2, (cb, cd)),
        ):
            if t.shape != shape:
                raise ConfigError(f"einfft.{name}", f"expected shape {shape}, got {t.shape}")

    @property
    def mixed_dim(self) -> int:
        return self.num_blocks * self.block_dim

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, c in (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)):
            out[f"{prefix}{name}.re"] = c.re
            out[f"{prefix}{name}.im"] = c.im
        return out


def init_einfft_params(
    rng: np.random.Generator,
    channels: int,
    num_blocks: int = 4,
    sparsity_threshold: float = 0.01,
    fft_axis: str = SEQUENCE_AXIS,
    init_std: float = 0.02,
    dtype: str = T.REAL64,
) -> EinFftParams:
    """Fresh gating parameters: normal(0, init_std) weights, zero biases."""
    mixed = channels if fft_axis == SEQUENCE_AXIS else spectrum_bins(channels)
    if mixed % num_blocks != 0:
        raise ConfigError(
            "einfft", f"mixed dimension {mixed} is not divisible by num_blocks {num_blocks}"
        )
    cd = mixed // num_blocks

    def cpx(shape, std):
        if std == 0.0:
            return ComplexTensor(T.zeros(shape, dtype, requires_grad=True),
                                 T.zeros(shape, dtype, requires_grad=True))
        return ComplexTensor(T.normal(rng, shape, std=std, dtype=dtype, requires_grad=True),
                             T.normal(rng, shape, std=std, dtype=dtype, requires_grad=True))

    return EinFftParams(
        num_blocks=num_blocks,
        block_dim=cd,
        w1=cpx((num_blocks, cd, cd), init_std),
        b1=cpx((num_blocks, cd), 0.0),
        w2=cpx((num_blocks, cd, cd), init_std),
        b2=cpx((num_blocks, cd), 0.0),
        sparsity_threshold=sparsity_threshold,
        fft_axis=fft_axis,
    )


def einfft_forward(
    x: Tensor,
    p: EinFftParams,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mix channels in the frequency domain; output shape equals input shape.

    FFT along the configured axis, rearrange the mixed dimension into
    (blocks, block_dim), two gating layers (ReLU between them), soft
    shrinkage on both parts, inverse FFT.  The pipeline is deterministic;
    ``train``/``rng`` are accepted for interface uniformity with the other
    mixers.
    """
    del train, rng
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"einfft_forward: expected (batch, seq, channels), got {x.shape}")
    channels = x.shape[2]
    axis = 1 if p.fft_axis == SEQUENCE_AXIS else 2
    n = x.shape[axis]
    mixed = channels if p.fft_axis == SEQUENCE_AXIS else spectrum_bins(channels)
    if mixed % p.num_blocks != 0:
        raise ConfigError(
            "einfft", f"mixed dimension {mixed} is not divisible by num_blocks {p.num_blocks}"
        )
    if mixed != p.mixed_dim:
        raise ConfigError(
            "einfft",
            f"mixed dimension {mixed} does not match parameters "
            f"({p.num_blocks} x {p.block_dim} = {p.mixed_dim})",
        )

    spec = fft_real(x, axis=axis)
    flat_shape = spec.shape
    block_shape = flat_shape[:-1] + (p.num_blocks, p.block_dim)
    h = ComplexTensor(T.reshape(spec.re, block_shape), T.reshape(spec.im, block_shape))
    h = complex_gate_layer(h, p.w1, p.b1, activation="relu")
    h = complex_gate_layer(h, p.w2, p.b2, activation="none")
    h = soft_shrink(h, p.sparsity_threshold)
    h = ComplexTensor(T.reshape(h.re, flat_shape), T.reshape(h.im, flat_shape))
    return ifft_real(h, n, axis=axis)
