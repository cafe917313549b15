# %% [markdown]
# # Batch norm without moving averages
#
# Each worker keeps the statistics of its last training minibatch. Before
# validation they are averaged across workers and used for inference.

# %%
import numpy as np

from largebatch import BnLayerState, sync_statistics
from largebatch.syncbn import SyncError, bn_forward_eval, bn_forward_train

rng = np.random.default_rng(1)
workers = [BnLayerState.init(4) for _ in range(4)]
for k, st in enumerate(workers):
    bn_forward_train(rng.standard_normal((32, 4)) + k, st)
    print(f"worker {k} last mean {np.round(st.last_mean, 3)}")

# %%
try:
    bn_forward_eval(np.zeros((1, 4)), workers[0])
except SyncError as exc:
    print("before sync:", exc)

sync_statistics(workers)
print("synced mean:", np.round(workers[0].synced_mean, 3))
print("synced var (average of worker variances):", np.round(workers[0].synced_var, 3))

# %% [markdown]
# The pooled variant adds the spread of the worker means, which here is large
# because each worker saw shifted data.

# %%
sync_statistics(workers, pooled=True)
print("pooled var:", np.round(workers[0].synced_var, 3))

# %%
# another training step invalidates the synced statistics
bn_forward_train(rng.standard_normal((32, 4)), workers[0])
print("still synced after a train step:", workers[0].is_synced)
