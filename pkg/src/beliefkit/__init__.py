"""beliefkit: training predictors from weak beliefs instead of hard labels.

The predictor's batch statistics stand in for an unstated generative
model; combining them with per-instance prior beliefs yields an implied
posterior that the predictor is pulled toward.  Subpackages:

- diffcore: reverse-mode autodiff on numpy, Adam, gradient checking
- losses:   implicit-posterior objectives (QR, RQ, pairwise, clustering)
- beliefs:  prior constructors (partial labels, rankings, rasters, admixtures)
- models:   small predictor zoo with checkpoint round-trip
- data:     file formats, samplers, synthetic scenes
- harness:  training loop, metrics, CLI
"""

__version__ = "0.1.0"
