"""Check trial/target overlap before trusting a weighted estimator.

The weighting estimators assume every target covariate profile has a
positive probability of appearing in the trial. This demo fits the
source-membership scores, prints the overlap coefficient (shared histogram
mass of the two score distributions), and shows how the density-ratio
weights spread out as the populations separate.

Run:  python3 demos/overlap_diagnostics.py
"""

import numpy as np

from rctgen import (
    MethodSpec,
    SimulationConfig,
    estimate_density_ratio,
    overlap_diagnostics,
    simulate,
    stack,
)


def describe(s, label):
    report = overlap_diagnostics(s)
    rhat, _ = estimate_density_ratio(s)
    ess = rhat.sum() ** 2 / (rhat**2).sum()
    print(f"{label}:")
    print(f"  overlap coefficient     {report.overlap_coefficient:6.3f}")
    print(f"  density ratio range     [{rhat.min():.3f}, {rhat.max():.3f}]")
    print(f"  effective sample size   {ess:.0f} of {s.n_trial} trial rows\n")


def main():
    rng = np.random.default_rng(4)

    trial, target, _ = simulate(SimulationConfig(), rng)
    describe(stack(trial, target), "standard selection model (moderate shift)")

    # An artificial no-shift benchmark: the trial is a subsample of the
    # target covariate distribution, so the scores barely separate.
    trial2, target2, _ = simulate(SimulationConfig(), rng)
    x = target2.covariates.take(slice(0, trial2.n))
    from rctgen import TrialSample

    same = TrialSample(x, trial2.treatment[: x.n_rows], trial2.outcome[: x.n_rows])
    describe(stack(same, target2), "no covariate shift (reference)")


if __name__ == "__main__":
    main()
