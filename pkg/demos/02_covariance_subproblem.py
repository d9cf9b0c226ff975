"""
The covariance step as a semidefinite program
=============================================

At fixed SINR targets the covariances, S-lemma multipliers and slacks solve
a linear SDP. Hermitian blocks are handed to the conic solver as real
symmetric matrices of twice the size.
"""

import io

import numpy as np

from robust_miso import ChannelSet, CovarianceSet, SystemConfig, sample_channels
from robust_miso import conic
from robust_miso.lmi import build_phi, min_eig

# A Hermitian matrix and its real embedding share eigenvalues (each doubled)
m = np.array([[2.0, 1j], [-1j, 1.0]])
print("eig(M)      :", np.round(np.linalg.eigvalsh(m), 6))
print("eig(embed M):", np.round(np.linalg.eigvalsh(conic.embed_hermitian(m)), 6))

cfg = SystemConfig(n_tx=3, n_users=2, power_budget=10.0, noise_powers=0.01)
ch = ChannelSet(sample_channels(cfg, seed=2), 0.1)
t = np.array([1.0, 2.0])
prob = conic.build_subproblem_q(t, ch, cfg)
print(f"\n{prob.n_lmi} LMIs of size {cfg.n_tx + 1}, {prob.n_psd_vars} PSD covariances, "
      f"{prob.n_linear} linear constraint(s)")

sol = conic.solve(prob)
print("status:", sol.status, " slack sum:", round(sol.objective_value, 6))

# Plugging the solution back into the S-lemma matrices leaves z_k of headroom
covs = CovarianceSet(np.array([sol[conic.q_name(j)] for j in range(2)]))
for k in range(2):
    phi = build_phi(t[k], sol[conic.lambda_name(k)], covs, ch, cfg, k)
    print(f"user {k}: z = {sol[conic.z_name(k)]:.6f}, min eig Phi = {min_eig(phi)[0]:.6f}")

# The cvxpy path solves the same problem and serves as a reference
ref = conic.solve(prob, backend=conic.CvxpyBackend("CLARABEL"))
print("cvxpy reference slack sum:", round(ref.objective_value, 6))

# For solver debugging the lowered problem can be dumped in CBF format
buf = io.StringIO()
conic.write_cbf(prob, buf)
print("\nCBF dump starts with:", " | ".join(buf.getvalue().split("\n")[:8]))
