"""Hybrid quantum-classical residual network for binary image classification.

Subpackages: qsim (statevector simulator), pqc (data re-uploading circuit and
parameter-shift gradients), autodiff (reverse-mode tape over dense tensors),
model (backbone + projection + quantum layer + fusion head), data (synthetic
patches, augmentation, patient-grouped splits), train (AdamW, plateau
scheduler, fit loop), metrics (confusion-matrix suite and ROC AUC), cli.
"""

__version__ = "0.1.0"
