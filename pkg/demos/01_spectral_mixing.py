"""Frequency-domain channel mixing, piece by piece.

Walks the spectral stack bottom-up: the orthonormal FFT pair and its
energy-preservation property, block-diagonal Einstein matrix
multiplication against its dense equivalent, the complex gating layer,
and finally the assembled mixer on a toy signal.

Run:  python demos/01_spectral_mixing.py
"""

import numpy as np

from simba import spectral as S
from simba.tensor import ComplexTensor, Tensor

rng = np.random.default_rng(0)

# ---------------------------------------------------------------- FFT pair
# The transform is orthonormal (1/sqrt(N) both ways), so energy is the
# same on either side of it and the inverse is exact.
n = 96
x = rng.normal(size=n)
spec = S.fft_real(Tensor(x))
back = S.ifft_real(spec, n).numpy()

weights = np.ones(spec.shape[0])
weights[1 : -1 if n % 2 == 0 else None] = 2.0  # interior bins carry both half-spectra
energy_time = (x**2).sum()
energy_freq = (weights * np.abs(spec.numpy()) ** 2).sum()

print(f"signal length {n}: {spec.shape[0]} non-redundant bins")
print(f"roundtrip max abs error: {np.abs(back - x).max():.3e}")
print(f"energy, time vs frequency: {energy_time:.6f} vs {energy_freq:.6f}")

# --------------------------------------------------- block-diagonal mixing
# Mixing channels in Cb independent blocks multiplies activations by one
# big block-diagonal matrix, at 1/Cb of the dense FLOPs.
tokens, cb, cd = 8, 4, 8
i = Tensor(rng.normal(size=(tokens, cb, cd)))
w = Tensor(rng.normal(size=(cb, cd, cd)))
y = S.emm(i, w)

dense = np.zeros((cb * cd, cb * cd))
for b in range(cb):
    dense[b * cd : (b + 1) * cd, b * cd : (b + 1) * cd] = w.numpy()[b]
y_dense = (i.numpy().reshape(tokens, -1) @ dense).reshape(tokens, cb, cd)
print(f"\nEMM vs dense block-diagonal matmul: max abs diff {np.abs(y.numpy() - y_dense).max():.3e}")
print(f"FLOP ratio: {tokens * cb * cd * cd} vs {tokens * (cb * cd) ** 2}  (= 1/{cb})")

# -------------------------------------------------------- the gating layer
# Complex multiplication expanded into its real/imaginary parts; a scalar
# case is easy to verify by hand: (1 + 2j)(3 + 4j) = -5 + 10j.
h = ComplexTensor(Tensor(np.full((1, 1, 1), 1.0)), Tensor(np.full((1, 1, 1), 2.0)))
wc = ComplexTensor(Tensor(np.full((1, 1, 1), 3.0)), Tensor(np.full((1, 1, 1), 4.0)))
bc = ComplexTensor(Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1))))
out = S.complex_gate_layer(h, wc, bc, activation="none")
print(f"\nscalar gate: (1+2j)(3+4j) = {out.re.item():+.0f}{out.im.item():+.0f}j")

# -------------------------------------------------------- soft shrinkage
# Shrinkage kills small spectral coefficients and never adds energy.
vals = Tensor(np.array([-0.03, -0.005, 0.0, 0.008, 0.4]))
print(f"soft_shrink(lambda=0.01): {vals.numpy()} -> {S.soft_shrink(vals, 0.01).numpy()}")

# ----------------------------------------------------- the assembled mixer
# A cosine has a real, non-negative spectrum, so identity gate weights
# pass it through the whole pipeline unchanged.
channels = 8
params = S.init_einfft_params(rng, channels=channels, num_blocks=2, sparsity_threshold=0.0, init_std=0.0)
eye = np.stack([np.eye(channels // 2)] * 2)
params.w1.re.data[:] = eye
params.w2.re.data[:] = eye

seq = np.cos(2 * np.pi * 3 * np.arange(16) / 16)
batch = np.tile(seq[None, :, None], (1, 1, channels))
mixed = S.einfft_forward(Tensor(batch), params).numpy()
print(f"\nidentity-gated mixer on a cosine: max abs deviation {np.abs(mixed - batch).max():.3e}")

# Random weights actually mix: a single active channel spreads into all of
# them, which is the whole point of the channel mixer.
params = S.init_einfft_params(rng, channels=channels, num_blocks=2, init_std=0.3)
single = np.zeros((1, 16, channels))
single[0, :, 0] = seq
mixed = S.einfft_forward(Tensor(single), params).numpy()
print(f"energy per channel after mixing one active channel: {np.round((mixed[0] ** 2).sum(axis=0), 3)}")
