# %% [markdown]
# # Ring all-reduce with a binary16 wire format
#
# Chunks travel as 16-bit floats; every receiver accumulates in float64.
# Error grows slowly with the number of workers.

# %%
import warnings

import numpy as np

from largebatch import CommPrecision, CommStats, Rng, all_reduce, rand_normal
from largebatch.collective import rel_l2_error

for w in (2, 4, 8, 16, 32):
    payloads = [rand_normal(Rng(0, k), 100_000) for k in range(w)]
    exact = all_reduce(payloads, "sum", CommPrecision.FULL64)
    stats = CommStats()
    half = all_reduce(payloads, "sum", CommPrecision.HALF16, stats)
    print(f"W={w:3d} rel L2 error {rel_l2_error(half, exact):.2e}  bytes sent {stats.bytes_sent}")

# %% [markdown]
# Values beyond the binary16 range saturate at +/-65504 with a warning
# rather than turning into infinity.

# %%
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    stats = CommStats()
    out = all_reduce([np.array([7e4, 1.0]), np.array([1.0, 1.0])], "sum", CommPrecision.HALF16, stats)
print(out, "saturated:", stats.saturated, "warnings:", [str(w.message) for w in caught][:1])
