"""Few-view fan-beam CT reconstruction toolkit.

Submodules
----------
geometry   : acquisition descriptions and view subsampling
projector  : sparse forward model and filtered backprojection
transforms : Haar / gradient sparsifying transforms and shrinkage
solvers    : variational reconstruction (alternating shrinkage, primal-dual)
autodiff   : reverse-mode differentiation over numpy arrays
sugar      : unrolled reconstruction network, training, two-stage pipeline
data       : phantoms, noise models, metrics, file formats
cli        : command-line experiment harness
"""

__version__ = "0.1.0"
