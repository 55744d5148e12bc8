"""Digital H&E staining of reflectance confocal microscopy (RCM) images.

A single grayscale confocal image is translated into an H&E-stained color
image by two channel generators (hematoxylin and eosin), a trainable RGB
composition layer, and three adversarial critics, trained with an
alternating inner/outer schedule. The package also ships the preprocessing
(surface extraction, inpainting, dataset splitting), Beer-Lambert ground
truth synthesis, a phantom data generator, the full metric suite, and a
batch CLI.
"""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
