# %% [markdown]
# # Square matricization
#
# Any tensor with N elements can be relabelled as an n x m matrix with
# n * m = N. Picking the most square such pair keeps n + m, and therefore the
# factor vectors stored per momentum, as small as possible.

# %%
import numpy as np

from smmf import effective_shape, square_matricize, unmatricize
from smmf.matricize import brute_force_effective_shape

for shape in [(512, 512, 3, 3), (30522, 768), (4, 3, 3, 3), (1000,), (7,)]:
    es = effective_shape(shape)
    print(f"{str(shape):>20} N={es.numel:>10,} -> {es.n_hat} x {es.m_hat}  (n+m = {es.n_hat + es.m_hat})")

# %% [markdown]
# The fast search walks down from isqrt(N); an exhaustive scan over all
# divisors agrees.

# %%
assert all(effective_shape(n).matrix_shape == brute_force_effective_shape(n) for n in range(1, 5001))

# %% [markdown]
# Reshaping is row-major relabelling, so it round-trips exactly.

# %%
kernel = np.random.default_rng(0).normal(size=(4, 3, 3, 3))
es = effective_shape(kernel.shape)
mat = square_matricize(kernel, es)
print(mat.shape, np.array_equal(unmatricize(mat, es), kernel))
