"""pil_lab: a laboratory for model-based imitation learning.

Implements behavior cloning, rollout-based imitation learning, and
predictive imitation learning with multi-step predictors, in both
closed-form (linear) and gradient-trained (neural network) regimes.
"""

__version__ = "0.1.0"
