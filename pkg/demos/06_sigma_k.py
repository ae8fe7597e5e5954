# %% [markdown]
# # Constant sigma_k leaves
#
# sigma_2 is the Gauss-Kronecker curvature for surfaces. Fuchsian leaves are
# exact; a perturbed metric gets a Newton-solved Gauss foliation.

# %%
import numpy as np

from foliation_forge import Grid, model, sk_expansion
from foliation_forge.sigma_k import sigma_k_foliation

g = Grid((32, 32))
fol = sigma_k_foliation(model("fuchsian", g), [0.1, 0.5, 1.0], 2)
for lf in fol.leaves:
    print(f"eps={lf.eps}  sigma2={lf.sigma.mean():.14f}  exact={((4 - lf.eps**2) / (4 + lf.eps**2))**2:.14f}")

# %%
m = model("fuchsian", g, perturbation={2: 0.1 * g.conformal(g.mode((1, 0), "cos")),
                                       3: 0.2 * g.conformal(g.mode((0, 1), "sin"))})
gauss = sigma_k_foliation(m, np.geomspace(0.02, 0.4, 6), 2)
for lf in gauss.leaves:
    print(f"eps={lf.eps:.4f}  sigma2 mean={lf.sigma.mean():.10f}  spread={np.ptp(lf.sigma):.1e}")

# %% [markdown]
# The x^2 coefficient of sigma_k along the boundary, fitted vs closed forms.

# %%
e2 = sk_expansion(m, 2)
print("discrepancies:", e2.discrepancy)
