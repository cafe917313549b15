# %% [markdown]
# # Ring cost model and scaling efficiency
#
# Iteration time = compute + 2(W-1) hops of latency + 2(W-1)/W of the payload
# over the link. Efficiency is compute time over iteration time.

# %%
from largebatch import CostModel, fit_cost_model, scaling_efficiency, solve_for_efficiencies
from largebatch.collective import iteration_time, ring_time

payload = 51_200_000  # 25.6M parameters in binary16
model = CostModel()
for w in (1, 2, 8, 64, 256, 1024):
    print(f"W={w:5d} ring {ring_time(payload, w, model) * 1e3:7.2f} ms  eff {scaling_efficiency(w, model, payload):.3f}")

# %% [markdown]
# Which latency and bandwidth give 70% at 1024 workers and 80% of the
# 8-worker efficiency?

# %%
m = solve_for_efficiencies({1024: 0.70, 8: 0.875}, gamma_compute=0.1, payload_bytes=payload)
print(m)
e8, e1024 = (scaling_efficiency(w, m, payload) for w in (8, 1024))
print(f"eff(8)={e8:.3f} eff(1024)={e1024:.3f} ratio={e1024 / e8:.3f}")

# %% [markdown]
# Fitting recovers the parameters from (workers, seconds) pairs.

# %%
ws = [1, 4, 16, 64, 256, 1024]
fit = fit_cost_model(ws, [iteration_time(payload, w, m) for w in ws], payload)
print(fit.model)
print("max |residual|:", abs(fit.residuals).max())
