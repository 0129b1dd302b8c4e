"""Timing evidence for the complexity claims.

Two suites:

* ``ssm-kernel``: wall time of the sequential selective scan versus the
  FFT convolution-kernel path over sequence length, with analytic
  operation counts;
* ``einfft``: block-diagonal EMM versus an equivalent dense matmul over
  channel count; the analytic FLOP columns are ``N * Cb * Cd^2`` and
  ``N * C^2``, whose ratio is exactly ``1 / Cb``.

Timings are best-of-``reps`` after a warmup call.
"""

from __future__ import annotations

import time

import numpy as np

from . import ssm
from . import tensor as T
from .errors import ParameterError
from .tensor import Tensor

DEFAULT_SCAN_LENGTHS = (256, 512, 1024, 2048, 4096, 8192, 16384)
DEFAULT_EMM_CHANNELS = (64, 128, 256, 512)


def best_time(fn, reps: int = 3) -> float:
    """Seconds for the fastest of ``reps`` calls (one untimed warmup)."""
    fn()
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def fit_loglog_slope(sizes, seconds) -> float:
    """Least-squares slope of log(time) against log(size)."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(seconds, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def bench_ssm_kernel(
    lengths=DEFAULT_SCAN_LENGTHS, state: int = 4, channels: int = 2, reps: int = 3
) -> list[dict]:
    """Time the sequential scan and the FFT kernel path per sequence length.

    The default state/channel sizes keep the per-step slabs cache-resident
    over the whole length range, so the fit measures the scaling law in L
    rather than a cache-regime transition.

    Operation counts: the scan does ~6 multiply-adds per (step, channel,
    state) lane; the kernel path builds an L-tap kernel (3 L K) and runs
    three length-``nfft`` transforms (~2.5 nfft log2 nfft each).
    """
    rng = np.random.default_rng(0)
    a_diag = -np.exp(rng.uniform(-1.0, 1.0, (channels, state)))
    sys = ssm.LtiSsm(
        a=-np.exp(rng.uniform(-1.0, 1.0, state)),
        b=rng.uniform(-1.0, 1.0, state),
        c=rng.uniform(-1.0, 1.0, state),
        d=0.3,
        delta=0.05,
    )
    rows = []
    for length in lengths:
        u = rng.uniform(-1.0, 1.0, length)
        x = Tensor(rng.uniform(-1.0, 1.0, (1, length, channels)))
        delta = Tensor(np.full((1, length, channels), 0.05))
        b_t = Tensor(rng.uniform(-1.0, 1.0, (1, length, state)))
        c_t = Tensor(rng.uniform(-1.0, 1.0, (1, length, state)))
        d_skip = Tensor(np.full(channels, 0.3))
        a_t = Tensor(a_diag)

        with T.no_grad():
            t_scan = best_time(
                lambda: ssm.selective_scan(x, delta, a_t, b_t, c_t, d_skip), reps
            )
        rows.append(
            {
                "suite": "ssm-kernel",
                "case": "scan",
                "size": length,
                "seconds": t_scan,
                "flops": 6 * length * channels * state,
            }
        )

        def fft_path():
            kernel = ssm.lti_kernel(sys, length)
            return ssm.lti_conv_apply(kernel, u, sys.d)

        nfft = 1 << (2 * length - 1).bit_length()
        rows.append(
            {
                "suite": "ssm-kernel",
                "case": "fft-kernel",
                "size": length,
                "seconds": best_time(fft_path, reps),
                "flops": 3 * length * state + int(7.5 * nfft * np.log2(nfft)),
            }
        )
    return rows


def bench_einfft(
    channels=DEFAULT_EMM_CHANNELS, tokens: int = 512, blocks: int = 4, reps: int = 5
) -> list[dict]:
    """Time block-diagonal EMM against the equivalent dense matmul."""
    rng = np.random.default_rng(0)
    rows = []
    for c in channels:
        if c % blocks:
            raise ParameterError(f"bench_einfft: channels {c} not divisible by blocks {blocks}")
        cd = c // blocks
        i_blocked = Tensor(rng.uniform(-1.0, 1.0, (tokens, blocks, cd)))
        w_blocked = Tensor(rng.uniform(-1.0, 1.0, (blocks, cd, cd)))
        i_dense = np.ascontiguousarray(i_blocked.data.reshape(tokens, c))
        w_dense = np.zeros((c, c))
        for b in range(blocks):
            w_dense[b * cd : (b + 1) * cd, b * cd : (b + 1) * cd] = w_blocked.data[b]

        from . import spectral

        with T.no_grad():
            t_emm = best_time(lambda: spectral.emm(i_blocked, w_blocked), reps)
        t_dense = best_time(lambda: i_dense @ w_dense, reps)
        rows.append(
            {
                "suite": "einfft",
                "case": "emm",
                "size": c,
                "seconds": t_emm,
                "flops": tokens * blocks * cd * cd,
            }
        )
        rows.append(
            {
                "suite": "einfft",
                "case": "dense",
                "size": c,
                "seconds": t_dense,
                "flops": tokens * c * c,
            }
        )
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    lines = ["suite,case,size,seconds,flops"]
    for r in rows:
        lines.append(f"{r['suite']},{r['case']},{r['size']},{r['seconds']!r},{r['flops']}")
    return "\n".join(lines) + "\n"
