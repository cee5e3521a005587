"""Language-grounded action primitives with soft-label contrastive alignment.

Continuous 7-DoF end-effector actions are projected onto interpretable
translation / rotation / gripper primitives with canonical natural-language
descriptions.  Action embeddings are trained so that their geometry mirrors
the symbolic affinity between primitives, jointly with an imitation objective
whose weight is balanced adaptively.
"""

__version__ = "0.1.0"
