"""Domain-invariant feature learning for binary image classification.

A feature generator is trained adversarially against a domain discriminator
so that features from a labeled source domain and an unlabeled target domain
become indistinguishable, while a label classifier keeps them predictive.
Everything runs on a small self-contained reverse-mode autodiff core.
"""

__version__ = "0.1.0"
