# Runtime scaling: FFT kernels vs direct dense convolution
# ----------------------------------------------------------
# The point of circular FFT convolution is that a kernel covering the whole
# feature map costs O(P log P) in the pixel count P, where evaluating the
# same kernel by direct summation costs O(P^2).  The benchmark times each
# token-interaction op (inputs and kernels prepared outside the clock) and
# fits a log-log slope of time against pixel count.
#
# The dense reference at 256x256 takes a few seconds per repeat.

from fftmix import bench_runtime

table = bench_runtime(
    ["global2d", "separable2d", "bidirectional", "dense2d"],
    extents=[32, 64, 128],
    channels=1,
    repeats=5,
)

print(f"{'variant':14s} {'extent':>6s} {'pixels':>8s} {'median':>12s}")
for row in table.rows:
    print(f"{row.variant:14s} {row.extent:6d} {row.pixels:8d} {row.median_seconds * 1e3:10.2f}ms")

print("\nfitted log-log slopes (time vs pixels):")
for variant, slope in table.slopes.items():
    print(f"  {variant:14s} {slope:.2f}")
print("\nnear 1.0 = linear scaling; 2.0 = quadratic (the dense reference).")
