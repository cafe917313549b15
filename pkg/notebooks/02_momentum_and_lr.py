# %% [markdown]
# # The momentum buffer carries no learning rate
#
# `delta` accumulates raw (blended) gradients and the learning rate only
# multiplies it on the way into the parameters. A drop in lr therefore takes
# effect immediately instead of lingering in the momentum.

# %%
import numpy as np

from largebatch import BlendCoefficients, OptimizerHyper, OptimizerState, step

hyper = OptimizerHyper()
rng = np.random.default_rng(0)
grads = rng.standard_normal((40, 3))


def trajectory(etas):
    theta, state, deltas = np.zeros(3), OptimizerState.zeros_like(np.zeros(3)), []
    for g, eta in zip(grads, etas):
        theta, state = step(theta, g, state, BlendCoefficients(1.0, 0.0, eta), hyper)
        deltas.append(state.delta.copy())
    return theta, np.array(deltas)


# %%
flat = np.full(40, 1.0)
dropped = np.where(np.arange(40) < 20, 1.0, 0.1)
theta_a, d_a = trajectory(flat)
theta_b, d_b = trajectory(dropped)
print("delta sequences identical:", np.array_equal(d_a, d_b))
print("final params, constant lr:", theta_a)
print("final params, lr cut at 20:", theta_b)

# %% [markdown]
# Pure RMSprop (alpha_sgd=0, alpha_rmsprop=1) normalizes each coordinate by
# its running RMS, so badly scaled gradients move all coordinates alike.

# %%
scaled = grads * np.array([1e-3, 1.0, 1e3])
theta, state = np.zeros(3), OptimizerState.zeros_like(np.zeros(3))
for g in scaled:
    theta, state = step(theta, g, state, BlendCoefficients(0.0, 1.0, 1e-2), hyper)
print("rmsprop step sizes per coordinate:", np.abs(theta))
