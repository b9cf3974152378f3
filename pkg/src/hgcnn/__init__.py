"""
Hypergraph convolutional networks for face presentation attack detection on
RGB-D landmark data.

Modules: ``hypergraph`` (incidence, degrees, normalized Laplacians),
``landmarks`` (augmentation, k-NN hypergraphs, sample files), ``spectral``
(Jacobi eigensolver, Fourier transform, Chebyshev filters), ``nn`` (layers
and optimizer), ``model`` (network, training, checkpoints), ``metrics``
(PAD metrics and protocols), ``synthdata`` (synthetic benchmark) and ``cli``.
"""

__version__ = "0.1.0"
