# %% [markdown]
# # Resonances when kappa1 < 0
#
# On the exponential collar the linearized operator eps Lap + q_eps loses
# invertibility at a sequence of eps accumulating at 0. A leaf ladder that hits
# one of the gaps skips it and reports a foliation with gaps.

# %%
import numpy as np

from foliation_forge import Grid, continue_foliation, eigenvalue_speed_check, model, scan_resonances
from foliation_forge.foliation import collar_crossings, improved_approximation

g = Grid((16, 16))
m = model("exponential_collar", g, sign=-1, x_max=0.5)
rep = scan_resonances(m, (1e-3, 1e-1), n_samples=120)
pred = collar_crossings(2, [1, 2, 4, 5, 8])
for c, p in zip(rep.crossings[:5], pred):
    print(f"crossing eps={c.eps:.6f}  Fourier root={p:.6f}")
print("counting slope", rep.counting_slope(), " speed check", eigenvalue_speed_check(rep)["C"])

# %% [markdown]
# Improved approximate solutions: each step gains one power of eps.

# %%
pert = {3: g.conformal(0.5 * g.mode((1, 0), "cos") + 0.3 * g.mode((0, 1), "sin"))}
mp = model("exponential_collar", g, sign=-1, x_max=0.5, perturbation=pert)
for q in (0, 1, 2):
    print(q, [f"{np.max(np.abs(improved_approximation(mp, e, q).residuals[-1])):.1e}" for e in (0.005, 0.01, 0.02)])

# %% [markdown]
# Foliation with gaps: ladder points inside a resonant interval are skipped.

# %%
spec = scan_resonances(mp, (0.005, 0.05), n_samples=60, N=3)
lo, hi = max(spec.gap_intervals, key=lambda t: t[0])
ladder = sorted(list(np.linspace(0.006, 0.03, 5)) + [0.5 * (lo + hi)])
fol = continue_foliation(mp, ladder, spectrum=spec)
print("leaves", [round(lf.eps, 4) for lf in fol.leaves], "skipped", fol.skipped, "gaps", fol.gaps)
