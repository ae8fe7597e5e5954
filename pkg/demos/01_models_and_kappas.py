# %% [markdown]
# # Built-in models and the expansion invariants
#
# Each closed-form model has umbilic leaves {x = eps} with known mean curvature.
# We check H against the closed form and print kappa1, kappa2 for a perturbed metric.

# %%
import numpy as np

from foliation_forge import Grid, kappas, mean_curvature, model
from foliation_forge.hj import extend

g = Grid((32, 32))

# %%
exact = {"hyperbolic_ball": lambda e: 2 * (4 + e * e) / (4 - e * e),
         "fuchsian": lambda e: 2 * (4 - e * e) / (4 + e * e),
         "horospherical": lambda e: 2.0}
for name, H_exact in exact.items():
    m = model(name, g)
    ef = extend(np.zeros(g.shape), m, 1.2)
    for eps in (0.1, 0.5, 1.0):
        H = mean_curvature(m, ef, eps).H
        print(f"{name:16s} eps={eps:.1f}  H={H.mean():.12f}  exact={H_exact(eps):.12f}")

# %% [markdown]
# A perturbed Fuchsian metric: h2 gets a conformal cos mode, so kappa2 varies over the torus.

# %%
m = model("fuchsian", g, perturbation={2: 0.1 * g.conformal(g.mode((1, 0), "cos"))})
k = kappas(m)
print("kappa1 range", k.kappa1.min(), k.kappa1.max())
print("kappa2 range", k.kappa2.min(), k.kappa2.max())
