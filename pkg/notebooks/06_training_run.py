# %% [markdown]
# # A short data-parallel run, and why the warm-up matters
#
# Four simulated workers train a small MLP on a synthetic 4-class problem.
# Then both optimizers get a learning rate eight times too large.

# %%
from largebatch import Config, run, warmup_comparison

cfg = Config(
    seed=0, workers=4, b_local=32, epochs=8, layers=(32, 64, 4),
    dataset_examples=8000, dataset_separation=5.0, precision="half16",
)
result = run(cfg)
for epoch, loss, acc in result.log.epochs:
    print(f"epoch {epoch}: val loss {loss:.4f} acc {acc:.4f}")

# %% [markdown]
# The stress setup is the full default desk config (8 workers, 30 epochs,
# 10 classes) without batch norm. On tiny problems like the one above both
# optimizers survive the inflated rate; here plain SGD gets stuck at chance.
# About half a minute.

# %%
stress = Config(batchnorm=False)
cmp = warmup_comparison(stress, seed=0, eta_scale=8.0)
print("recipe:", cmp.recipe_accuracy, "finite" if cmp.recipe_finite else "diverged")
print("momentum sgd + goyal:", cmp.sgd_accuracy, "finite" if cmp.sgd_finite else "diverged")
print("recipe wins:", cmp.recipe_wins)
