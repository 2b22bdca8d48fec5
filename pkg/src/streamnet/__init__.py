"""Multi-stream CNNs over intensity slices, built from scratch on numpy.

Submodules:
  tensor    conv/relu/pool/linear/cross-entropy with analytic backwards
  slicing   intensity-slice decomposition and the zero-noise protocol
  networks  the five cube-vertex architectures (V1, V5, V6, V7, V8)
  optim     Adam with bias correction
  training  epoch loop, evaluation, noise sweep
  analysis  first-layer weight histograms and KL-vs-uniform reports
  data_io   CIFAR-10 binary / raw dumps / synthetic data, checkpoints, PPM
  cli       command-line front end (see ``streamnet --help``)
"""

__version__ = "0.1.0"
