# %% [markdown]
# # MSE, squared bias and variance as observation bias grows
#
# A reduced version of the full sweep (20 seeds instead of 100); run
# `ope-mnar sweep --config <file> --out <dir>` for the full-size one.

# %%
from pathlib import Path

from ope_mnar.harness import SweepConfig, alpha_sweep
from ope_mnar.plotting import render_svg

cfg = SweepConfig(n_seeds=20, n_mc=20_000)
summary = alpha_sweep(cfg)

# %%
print(f"{'alpha':>5} {'estimator':<22} {'mse':>10} {'bias^2':>10} {'variance':>10}")
for r in summary.rows:
    print(f"{r.alpha:>5g} {r.estimator:<22} {r.mse:>10.4g} {r.squared_bias:>10.4g} {r.variance:>10.4g}")

# %%
best = min(summary.estimators(), key=lambda name: summary.row(3.0, name).mse)
gain = 1 - summary.row(3.0, "mips-heuristic-roips").mse / summary.row(3.0, "mips").mse
print(f"lowest MSE at alpha=3: {best}; heuristic ROIPS vs MIPS: {gain:.1%} lower MSE")

out = Path("alpha_sweep_demo.svg")
out.write_text(render_svg(summary))
print("chart written to", out.resolve())
