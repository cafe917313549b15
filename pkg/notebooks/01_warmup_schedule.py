# %% [markdown]
# # Warm-up blend and slow-start schedule
#
# The optimizer starts as RMSprop and hands over to momentum SGD. `alpha_sgd`
# is the SGD share of the update; the learning rate follows a piecewise
# constant schedule scaled with the total batch.

# %%
import numpy as np

from largebatch import ClusterShape, OptimizerHyper, blend_at, eta_base, goyal_schedule, slow_start_schedule

base = eta_base(ClusterShape(n_workers=1024, b_local=32))
print("eta_base for 1024 x 32:", base)

# %%
slow = slow_start_schedule(base, 90)
goyal = goyal_schedule(base, 90)
print("phases (start, end, factor):")
for p in slow.phases:
    print("  slow_start", p)
for p in goyal.phases:
    print("  goyal     ", p)

# %% [markdown]
# The blend is exponential until epoch 10, then linear for 2.5 epochs.

# %%
hyper = OptimizerHyper()
print(f"{'epoch':>6} {'lr':>8} {'alpha_sgd':>10} {'alpha_rms':>10}")
for e in np.arange(0, 16, 1.25):
    b = blend_at(e, slow(e), hyper)
    print(f"{e:6.2f} {b.eta:8.3f} {b.alpha_sgd:10.5f} {b.alpha_rmsprop:10.3e}")

# %% [markdown]
# Shorter runs compress the whole story: with 30 epochs the phases and the
# blend window shrink by a factor of three.

# %%
short = OptimizerHyper().scaled(30 / 90)
print("30-epoch transition centre:", short.beta_center, "width:", short.beta_period)
print("30-epoch slow start:", slow_start_schedule(0.1, 30).phases)
