# %% [markdown]
# # Hamilton-Jacobi extension of a boundary factor
#
# A boundary factor phi0 extends into the collar so that x e^phi is again a
# special defining function. Two independent routes: RK4 on the grid, and
# characteristics launched from every grid point.

# %%
import numpy as np

from foliation_forge import Grid, characteristics_oracle, extend, locate_level_set, model
from foliation_forge import grid as fc

g = Grid((24, 24))
y1, y2 = g.coords
phi0 = 0.05 * np.sin(2 * np.pi * y1) + 0.025 * np.cos(2 * np.pi * (y1 - y2))
m = model("fuchsian", g, perturbation={2: 0.1 * g.conformal(g.mode((1, 0), "cos"))})

# %%
ef = extend(phi0, m, 0.5, 128)
orc = characteristics_oracle(phi0, m, 0.5)
print("grid vs characteristics at x=0.5:", np.max(np.abs(ef.phi[-1] - orc.phi[1])))

# %% [markdown]
# Near x = 0 the extension is phi0 - |grad phi0|^2 x^2 / 4 + O(x^3).

# %%
d = g.grad(phi0)
gsq = np.einsum("ij...,i...,j...->...", fc.inverse(m.h0), d, d)
x = 1e-2
ef_small = extend(phi0, m, x, 32)
print("x^2 coefficient mismatch at x=0.01 (O(x) from the cubic term):", np.max(np.abs((ef_small.phi[-1] - phi0) / x**2 + 0.25 * gsq)))

# %%
ls = locate_level_set(ef, 0.2)
print("level set {x e^phi = 0.2}: x in", ls.x_star.min(), ls.x_star.max(), "residual", ls.residual)
