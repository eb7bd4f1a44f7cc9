"""ENSO shocks, crop calendars and postharvest conflict.

Pipeline pieces, bottom-up:

- :mod:`ensoconflict.ingest` -- CSV schemas, event gridding, monthly aggregation
- :mod:`ensoconflict.crop_calendar` -- ENSO years, growing seasons, crop-year masks
- :mod:`ensoconflict.teleconnection` -- cell-month ONI regressions and intensities
- :mod:`ensoconflict.panel` -- design matrices for the conflict and yield models
- :mod:`ensoconflict.estimator` -- HDFE OLS, FE Poisson, FE + trend OLS
- :mod:`ensoconflict.inference` -- Conley / cluster covariance, percent effects
- :mod:`ensoconflict.synth` -- synthetic worlds, dense oracle, Monte Carlo
- :mod:`ensoconflict.cli` -- command-line front end
"""

__version__ = "0.1.0"
