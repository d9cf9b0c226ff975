"""
Worst-case SINR of a fixed design
=================================

The true channel of user k is the estimate plus an error of norm at most r.
The exact worst case comes from an S-lemma certificate; sampling errors on
the sphere gives an upper estimate that approaches it from above.
"""

import math

import numpy as np

from robust_miso import ChannelSet, CovarianceSet, SystemConfig, sample_channels
from robust_miso.evaluate import exact_worst_sinr, mc_worst_rate

# One user, estimate (1, 0), full power on the estimate direction.
# The worst error points against the beam, so the SINR is P (|h| - r)^2 / sigma^2.
cfg = SystemConfig(n_tx=2, n_users=1, power_budget=10.0, noise_powers=0.01)
h = np.array([[1.0, 0.0]], dtype=complex)
ch = ChannelSet(h, 0.1)
covs = CovarianceSet(10.0 * np.einsum("ki,kj->kij", h, h.conj()))
print("exact worst-case SINR:", exact_worst_sinr(covs, ch, cfg, 0))  # 810.0

# Two users sharing the antennas with equal-power matched beams
cfg = SystemConfig(n_tx=4, n_users=2, power_budget=10.0, noise_powers=0.01)
est = sample_channels(cfg, seed=1)
w = np.sqrt(5.0) * est / np.linalg.norm(est, axis=1, keepdims=True)
covs = CovarianceSet(np.einsum("ki,kj->kij", w, w.conj()))

print("\n radius  user  exact rate  sampled rate (1e3 / 1e4 / 1e5)")
for r in (0.0, 0.05, 0.1, 0.2):
    ch = ChannelSet(est, r)
    for k in range(2):
        exact = math.log2(1 + exact_worst_sinr(covs, ch, cfg, k))
        mc = [mc_worst_rate(covs, ch, cfg, k, n, seed=7) for n in (1_000, 10_000, 100_000)]
        print(f"  {r:4.2f}    {k}    {exact:8.4f}   " + " / ".join(f"{v:.4f}" for v in mc))

# The sampled minimum only shrinks as the sample grows and never falls below
# the exact value; larger radii cost both users rate.
