# %% [markdown]
# # Empirical regret
#
# Each step sees one fresh sample. After the run a comparator is fitted to
# the whole stream, and the regret is the summed loss gap between the online
# iterates and that fixed point. Quadrupling the horizon should much less
# than quadruple the regret.

# %%
from smmf import ExperimentConfig, regret_track

totals = {}
for steps in (1000, 4000, 16000):
    cfg = ExperimentConfig(model="logreg", dataset_options={"separation": 0.5, "label_noise": 0.05},
                           steps=steps, batch_size=1, cadence=steps)
    totals[steps] = regret_track(cfg).total
    print(f"T={steps:>6}  R(T)={totals[steps]:8.2f}  R(T)/T={totals[steps] / steps:.4f}")

print("R(4k)/R(1k) =", round(totals[4000] / totals[1000], 2))
print("R(16k)/R(4k) =", round(totals[16000] / totals[4000], 2))
