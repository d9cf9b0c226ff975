"""
A brute-force reference on tiny instances
=========================================

For two antennas and two users, rank-one designs can be enumerated on a
direction and power-split grid and scored exactly. The search also covers
designs that switch a user off, which the alternating algorithm never does:
its targets start positive and only grow.
"""

import numpy as np

from robust_miso import ChannelSet, SystemConfig, sample_channels
from robust_miso.evaluate import oracle_grid_design, worst_case_report
from robust_miso.wcum import run

cfg = SystemConfig(n_tx=2, n_users=2, power_budget=10.0, noise_powers=0.01)

print("inst  corr   alternating (rates)        grid (rates)")
for i in range(6):
    ch = ChannelSet(sample_channels(cfg, np.random.SeedSequence(8, spawn_key=(i,))), 0.1)
    h = ch.estimates
    corr = abs(np.vdot(h[0], h[1])) / np.prod(np.linalg.norm(h, axis=1))
    rep = worst_case_report(run(ch, cfg).final.covs, ch, cfg)
    covs, u_grid = oracle_grid_design(ch, cfg, grid_resolution=8)
    grid = worst_case_report(covs, ch, cfg)
    fmt = lambda r: "(" + ", ".join(f"{u.exact_worst_rate:5.2f}" for u in r.per_user) + ")"
    print(f"{i:3d}  {corr:5.3f}  {rep.utility_exact:6.3f} {fmt(rep)}   {u_grid:6.3f} {fmt(grid)}")

# On strongly correlated channels the best sum rate serves one user only.
