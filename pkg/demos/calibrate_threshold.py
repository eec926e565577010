"""Pick a stopping threshold for a target error rate, then check it.

The threshold trades readings against mistakes: a larger value stops
earlier. Calibration searches for the largest one whose simulated error
stays below the target.
"""

import numpy as np

from gridloc import RunConfig, calibrate_threshold, enumerate_events, load_case, model_from_case, run_trial

model = model_from_case(load_case("case14"))
events = enumerate_events(model)

beta = 0.05
cal = calibrate_threshold(model, events, noise_fraction=0.01, beta=beta, n_calib=500, seed=1000, ell=2)
print(f"gamma = {cal.gamma:.4g}, calibration error {cal.error:.3f}")

# error and cost at a few thresholds around the chosen one
for g in np.geomspace(1e-2, 1e2, 5):
    i = np.searchsorted(cal.candidates, g, side="right") - 1
    print(f"  gamma {g:9.4g}: error {cal.errors[i]:.3f}, mean readings {cal.mean_measurements[i]:.1f}")

cfg = RunConfig(ell=2, gamma=cal.gamma, noise_fraction=0.01)
fresh = [run_trial(model, events, cfg, np.random.default_rng(5000 + i)) for i in range(500)]
err = 1 - np.mean([r.correct for r in fresh])
print(f"fresh trials: error {err:.3f} (target {beta}), mean readings {np.mean([r.measurements_used for r in fresh]):.1f}")
