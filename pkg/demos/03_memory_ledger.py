# %% [markdown]
# # Optimizer state memory
#
# Byte counts are analytic. Adam keeps two dense moments, Adafactor keeps
# row/column sums per trailing 2-D slice, and SMMF keeps two factor pairs
# plus a packed sign map.

# %%
from smmf import MIB, ShapeManifest, report, state_bytes

for shape in [(512, 512, 3, 3), (30522, 768), (768,)]:
    row = {k: state_bytes(k, shape) for k in ("adam", "adafactor", "smmf")}
    print(shape, {k: f"{v / MIB:.3f} MiB" for k, v in row.items()})

# %% [markdown]
# A small ResNet-style bottleneck block. The 1x1 projections are where
# Adafactor's slicing stops paying off.

# %%
manifest = ShapeManifest.parse("""
reduce: 64x256x1x1
conv3: 64x64x3x3
expand: 256x64x1x1
fc: 1000x2048
fc_bias: 1000
""")
rep = report(manifest)
print(rep.to_table())
print()
print(rep.to_csv())
