# %% [markdown]
# # Compressing a signed momentum
#
# A momentum matrix is stored as two non-negative vectors plus a one-bit sign
# map. Rank-1 magnitudes come back exactly; anything else is approximated
# while keeping every sign and the total absolute mass.

# %%
import numpy as np

from smmf import compress, decompress

rng = np.random.default_rng(1)
u, v = rng.random(6) + 0.1, rng.random(4) + 0.1
signs = rng.choice([-1.0, 1.0], size=(6, 4))
m = signs * np.outer(u, v)

factors, bitmap = compress(m)
print("r =", np.round(factors.r, 4))
print("c =", np.round(factors.c, 4))
print("sign bytes:", bitmap.bits.tolist(), f"({bitmap.nbytes} B for {m.size} signs)")
print("max error on rank-1 input:", np.max(np.abs(decompress(factors, bitmap) - m)))

# %% [markdown]
# A generic Gaussian matrix is not rank-1 in magnitude. The reconstruction
# then differs elementwise, yet the error sums to zero.

# %%
g = rng.normal(size=(6, 4))
rec = decompress(*compress(g))
print("signs kept:", bool(np.all(np.sign(rec) == np.sign(g))))
print("mass:", np.abs(g).sum(), "->", np.abs(rec).sum())
print("relative elementwise error:", np.round(np.max(np.abs(rec - g) / np.abs(g)), 3))
