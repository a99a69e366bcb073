"""
A small correlation sweep
=========================

Inclusion probabilities from both backends are scored against enumeration as
the adjacent-feature correlation grows. The full-size versions of this and
of the box-plot study ship as presets (``rotmarg simulate --preset fig1`` and
``--preset fig23``); here the replicate count is cut down so the script runs
in under a minute.
"""

from rotmarg.sim import SimConfig, run_study

config = SimConfig(
    n=100,
    p=12,
    beta_true=(3.0, 1.5, 2.0) + (0.0,) * 9,
    rho_grid=(0.0, 0.5, 0.9),
    snr=2.0,
    replicates=5,
    lambda0=0.25,
    bcr={"m": 5, "K": 10},
    seed=7,
)
result = run_study(config)
print(result.summary_csv())

###############################################################################
# Box-plot study with tuned hyperparameters on two cells.
box = run_study(SimConfig(study="boxplot", n=100, p=7, beta_true=(3.0, 1.5, 2.0, 0, 0, 0, 0),
                          cells=((0.0, 1.0), (0.7, 10.0)), replicates=5, seed=7))
for row in box.summary:
    print(f"rho={row['rho']} snr={row['snr']} {row['method']}: extremeness={row['extremeness']:.2f}")
