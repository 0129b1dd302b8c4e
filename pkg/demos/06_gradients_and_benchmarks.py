"""Gradient audit and complexity measurements.

Every differentiable operation ships with a hand-derived backward pass;
this script replays the finite-difference audit over the spectral and
state-space scopes, then times the two sequence-mixing paths and the two
channel-mixing paths to show where the FLOP savings land.

Run:  python demos/06_gradients_and_benchmarks.py   (~1 minute on CPU)
"""

from simba import audit, bench

print("finite-difference audit (central differences, h = 1e-5, real64):")
for scope in ("spectral", "ssm", "block"):
    for name, err in audit.run_audit(scope, seed=0):
        print(f"  {name:22s} max rel err {err:.2e}  {'ok' if err < 1e-4 else 'FAIL'}")

print("\nsequential scan vs kernel+FFT, wall time by sequence length:")
rows = bench.bench_ssm_kernel((256, 1024, 4096, 16384))
for length in (256, 1024, 4096, 16384):
    scan = next(r for r in rows if r["case"] == "scan" and r["size"] == length)
    fft = next(r for r in rows if r["case"] == "fft-kernel" and r["size"] == length)
    print(f"  L={length:6d}: scan {scan['seconds'] * 1e3:7.2f}ms   kernel+FFT {fft['seconds'] * 1e3:7.2f}ms")
scan_rows = [(r["size"], r["seconds"]) for r in rows if r["case"] == "scan"]
slope = bench.fit_loglog_slope([s for s, _ in scan_rows], [t for _, t in scan_rows])
print(f"  scan log-log slope: {slope:.2f} (linear in L)")

print("\nblock-diagonal vs dense channel mixing at 512 channels (4 blocks):")
rows = bench.bench_einfft((512,))
emm = next(r for r in rows if r["case"] == "emm")
dense = next(r for r in rows if r["case"] == "dense")
print(f"  emm   {emm['seconds'] * 1e3:6.2f}ms  ({emm['flops']:>10d} flops)")
print(f"  dense {dense['seconds'] * 1e3:6.2f}ms  ({dense['flops']:>10d} flops)")
print(f"  analytic flop ratio: 1/{dense['flops'] // emm['flops']}")
