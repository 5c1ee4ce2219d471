"""pqbench: perceptual-quality benchmarking and subjective-rating toolkit.

The package bundles four related tools:

* reference-based image quality metrics (PSNR, SSIM, MS-SSIM) together
  with image-space gradients for optimization,
* an Elo rating engine for turning pairwise human judgements into mean
  opinion scores, plus a simulation harness for validating its behaviour,
* classical distortion generators (noise, blur, spatial warping) and a
  correlation benchmark over dataset manifests,
* shift-robust feature comparison layers (l2 pooling, windowed best-match
  differences) and a constrained counter-example optimizer.

Everything is reachable from the ``pqbench`` command line tool and, for
live rating experiments, from the bundled HTTP service.
"""

__version__ = "0.1.0"
