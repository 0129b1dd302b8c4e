"""Linear state-space systems: recurrence, kernel, convolution.

A discretized linear time-invariant system can be run step by step or
applied in one shot as a causal convolution with its impulse response.
This script shows both discretizations, unrolls the equivalence, and
times the two paths as the sequence grows.

Run:  python demos/02_state_space_kernels.py
"""

import time

import numpy as np

from simba import ssm

rng = np.random.default_rng(1)

# ------------------------------------------------------- discretization
# The scalar system a=-1, b=c=1 with step 1 lands exactly on
# abar = 1/3, bbar = 2/3 under the bilinear transform.
scalar = ssm.LtiSsm(a=np.array([-1.0]), b=np.array([1.0]), c=np.array([1.0]), delta=1.0)
abar, bbar, cbar = ssm.discretize_bilinear(scalar)
print(f"bilinear scalar: abar={abar[0]:.6f} bbar={bbar[0]:.6f}")

abar_z, bbar_z = ssm.discretize_zoh_diag(np.array([[-1.0]]), np.array([1.0]), np.array([np.log(2.0)]))
print(f"zero-order hold with delta=ln 2: abar={abar_z[0, 0]:.6f} (exactly 1/2)")

# Stability is structural: negative state matrix + positive step means
# every discrete transition magnitude sits inside the unit circle.
a = -np.exp(rng.uniform(-2, 1, 16))
sys = ssm.LtiSsm(a=a, b=rng.normal(size=16), c=rng.normal(size=16), delta=0.1)
abar, _, _ = ssm.discretize_bilinear(sys)
print(f"random stable system: max |abar| = {np.abs(abar).max():.4f} < 1")

# --------------------------------------------------- kernel == recurrence
impulse = np.zeros(8)
impulse[0] = 1.0
print(f"\nimpulse response by scan:   {np.round(ssm.lti_scan(scalar, impulse), 6)}")
print(f"kernel by closed form:      {np.round(ssm.lti_kernel(scalar, 8), 6)}")

u = rng.normal(size=256)
y_scan = ssm.lti_scan(sys, u)
y_conv = ssm.lti_conv_apply(ssm.lti_kernel(sys, len(u)), u, sys.d)
print(f"scan vs FFT convolution, max rel err: "
      f"{np.abs(y_scan - y_conv).max() / np.abs(y_scan).max():.3e}")

# ------------------------------------------------------------ which wins
# Building the kernel is itself a recurrence, so kernel+FFT only pays off
# when one kernel serves many sequences: the convolution is then nearly
# free while each scan pays the full sequential cost again.
batch = 16
print(f"\napplying one system to {batch} sequences:")
print("   L      scan x batch   kernel once + FFT x batch")
for length in (512, 2048, 8192):
    us = rng.normal(size=(batch, length))

    t0 = time.perf_counter()
    for u in us:
        ssm.lti_scan(sys, u)
    t_scan = time.perf_counter() - t0

    t0 = time.perf_counter()
    kernel = ssm.lti_kernel(sys, length)
    for u in us:
        ssm.lti_conv_apply(kernel, u, sys.d)
    t_conv = time.perf_counter() - t0
    print(f"{length:6d}  {t_scan * 1e3:11.2f}ms  {t_conv * 1e3:14.2f}ms")
