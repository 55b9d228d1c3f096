"""Build the network, push an image through it, and account for its cost.

    python demos/01_architecture_tour.py
"""

import torch

from hetnet.assembly import GRIDS, ablation_grid, build_network, forward, variant_config
from hetnet.efficiency import count_macs, count_params, describe, macs_by_module

torch.manual_seed(0)

# The tiny backbone keeps the full topology (five stages, heads, GE, fusion tree)
# at a width that runs comfortably on a laptop CPU.
net = build_network(variant_config("HetNet", "tiny"))
out = forward(net, torch.rand(2, 3, 64, 64), mode="train")
print("backbone stages :", [tuple(f.shape[1:]) for f in out.f[:5]])
print("global extractor:", tuple(out.f[5].shape[1:]))
print("main / edge     :", tuple(out.main_output.shape[1:]), tuple(out.edge_output.shape[1:]))
print("aux maps        :", [tuple(a.shape[-2:]) for a in out.aux_outputs])

# At inference only the main map comes back.
print("eval returns aux?", forward(net, torch.rand(1, 3, 64, 64)).aux_outputs is not None)

# Where the multiply-accumulates go at 352x352, by top-level module.
rows = describe(net, (352, 352))
for name, macs in sorted(macs_by_module(rows).items(), key=lambda kv: -kv[1]):
    print(f"  {name:<10} {macs / 1e6:9.1f} MMac")

# Full scale is accounted on the meta device, so nothing is allocated.
print("\nfull-scale variants at 352x352")
for grid in GRIDS:
    for label, cfg in ablation_grid(grid, "full"):
        full = build_network(cfg)
        print(f"  {grid:<13}{label:<10}{count_params(full):7.2f}M {count_macs(full):7.2f} GMac")
