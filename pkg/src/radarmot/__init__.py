"""Radar 3D multi-object tracking with uncertainty-aware components.

Subsystems:

- :mod:`radarmot.geometry` -- box / state types and geometric kernels
- :mod:`radarmot.fusion` -- Monte-Carlo detection sample fusion and the
  variance-attenuated regression loss
- :mod:`radarmot.predictor` -- constant-velocity and attention-based motion
  prediction with Monte-Carlo dropout
- :mod:`radarmot.association` -- two-stage Mahalanobis + Doppler matching
- :mod:`radarmot.tracker` -- Kalman filtering and track life-cycle management
- :mod:`radarmot.sim` -- synthetic radar scenario generator
- :mod:`radarmot.metrics` -- recall-swept tracking metrics (AMOTA / AMOTP)
- :mod:`radarmot.cli` -- command-line pipeline (simulate / train / track /
  evaluate / sweep)
"""

__version__ = "0.1.0"
