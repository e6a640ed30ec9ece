# The model zoo: presets, shape ladder, and parameter counts
# ------------------------------------------------------------
# Models are four stages of mixer blocks over a strided patch stem.  The
# preset names combine a mixer layout (hpx = 2D global kernels everywhere,
# hb = flattened bidirectional sequences, chpx = local convolutions first,
# 2D global kernels later) with a depth (s4/s12/s18).

import numpy as np

from fftmix import Tensor, build_model, count_params, micro_config, preset_config

for name in ("hpx-s18", "hb-s18", "chpx-s18"):
    config = preset_config(name)
    model = build_model(config, seed=0)
    ladder = " -> ".join(f"{fy}x{fx}x{c}" for fy, fx, c in model.shape_ladder())
    print(f"{name}: {count_params(model):,} params")
    print(f"   {ladder}")
    kernels = [config.mixer_config(s).filter_extent() for s in range(4)]
    print(f"   long-kernel extents per stage: {kernels}")

# The bidirectional layout flattens each feature map row-major, so its
# stage-1 kernel spans 2*56^2 - 1 = 6271 sequence positions.

# A forward pass on the smallest preset:
model = build_model(micro_config("global2d"), seed=0)
images = Tensor(np.random.default_rng(0).normal(size=(2, 32, 32, 3)))
logits = model(images)
print("micro model logits:", logits.shape)
