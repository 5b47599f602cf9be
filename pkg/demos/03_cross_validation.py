"""
Out-of-sample accuracy: one profile or two?
============================================

Four-fold cross-validation by individual.  Each held-out person is
predicted without using any of their own answers: memberships are drawn
from the fitted population distribution.  A single profile predicts
single answers about as well as two profiles do, but only the mixture
captures how one person's answers move together, which shows up in the
joint rate phi_i.
"""

import numpy as np

from tgom import (
    CVSettings,
    DirichletParams,
    FitConfig,
    GeneratorSpec,
    SamplerConfig,
    TrajectoryParams,
    cross_validate,
    generate_dataset,
    to_days,
)

age50 = np.array([[97, 95, 93, 96, 92, 94],
                  [78, 76, 74, 77, 73, 75.0]])
beta1 = np.full_like(age50, 0.25)
spec = GeneratorSpec(
    params=TrajectoryParams(-beta1 * (age50 - 80), beta1),
    dirichlet=DirichletParams(0.328, (0.824, 0.176)),
    n_individuals=1000,
    wave_dates=tuple(to_days(f"{y}-06-01") for y in (1982, 1984, 1989, 1994, 1999, 2004)),
    dob_range=(to_days("1900-01-01"), to_days("1935-01-01")),
)
data, _ = generate_dataset(spec, seed=11)

config = FitConfig(
    K=2,
    sampler=SamplerConfig(n_iterations=2000, burn_in=700),
    cv=CVSettings(folds=4, models_k=(1, 2), membership_draws=20, max_draws=100),
)
report = cross_validate(data, config, seed=5,
                        progress=lambda e: print(f"  fold {e['fold']} K={e['K']}: phi_i {e['phi_i']:.3f}"))

# Rates, with ratios to the univariate rate as percentages.
print(report.formatted().to_string(index=False))
