"""How much does Z add to X for predicting Y?

Three simulated settings with known answers, each measured with the graph
estimator and the RKHS estimator.

    python3 demos/estimate_dependence.py
"""

import math

from kpc import GraphSpec, KernelSpec, RkhsConfig, SimModel, VariableRoles, kpc_graph, kpc_rkhs, simulate
from kpc.rkhs import eps_schedule


def show(title, ds, kernel, graph_k, truth, rkhs_cfg=None):
    roles = VariableRoles.of(ds, "y", "z", "x")
    graph = kpc_graph(ds, roles, kernel, GraphSpec(k=graph_k)).value
    rkhs = kpc_rkhs(ds, roles, rkhs_cfg or RkhsConfig(kernel_y=kernel)).value
    print(f"{title:<44} graph {graph:6.3f}   rkhs {rkhs:6.3f}   population {truth}")


# Y = X + Z + noise: Z explains half of what X leaves unexplained.
show("linear model, linear kernel", simulate(SimModel("model_I", 2000, seed=1)), KernelSpec("linear"), 2, "0.5")

# Binary Y whose success probability depends on Z only.
truth = (2 * math.sqrt(6) + 2 * math.sqrt(3) - 3 * math.sqrt(2) - 3) / 3
show("binary Y, discrete kernel", simulate(SimModel("model_II", 2000, seed=1)), KernelSpec("discrete"), 2,
     f"{truth:.4f}")

# Y = X + Z (mod 1): a deterministic function of (X, Z) that is independent of X alone.
# The RKHS estimator needs a shrinking ridge here and approaches 1 slowly.
narrow = KernelSpec.gaussian_coef(5.0)
show("wrap-around sum, Gaussian kernel", simulate(SimModel("model_III", 2000, seed=1)), narrow, 1, "1",
     RkhsConfig(eps=eps_schedule, kernel_y=narrow, kernel_x=narrow, kernel_xz=KernelSpec.gaussian_coef(2.0)))

# Rotation-valued responses: Y = R1(X) R3(Z) depends on Z, Y = R1(X) R3(noise) does not.
for name, truth in (("model_IV_so3", "1"), ("model_V_so3", "0")):
    ds = simulate(SimModel(name, 2000, seed=1))
    est = kpc_graph(ds, VariableRoles.of(ds, "y", "z", "x"), KernelSpec("so3")).value
    print(f"{'rotations (' + name + '), so3 kernel':<44} graph {est:6.3f}   population {truth}")
