"""Source-free domain adaptation with consistency regularization, on numpy.

Modules:

``nn``         MLP with a weight-normalized classifier, exact backprop, SGD
``augment``    weak and strong stochastic views of vector inputs
``pseudo``     sharpened pseudo-labels, consistency loss, sample selection
``calib``      memory bank, class weights, prototypes and the agreement gate
``synthdata``  synthetic Gaussian-blob domain pairs
``engine``     source pretraining, adaptation loop, evaluation, ablations
``config``     flat dotted-key experiment configs
``cli``        the ``sfdalab`` command
"""

__version__ = "0.1.0"
