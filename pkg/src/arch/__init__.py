"""Hierarchical assembly workbench.

A desk-scale simulated workcell with a library of parameterized manipulation
primitives (motion-planned grasp/place/move plus a reinforcement-learned
insertion skill), an imitation-learned primitive selector, point-cloud pose
refinement in the SE(3) tangent space, and the evaluation metrics to score
long-horizon assembly rollouts.
"""

__version__ = "0.1.0"
