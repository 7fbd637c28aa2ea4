"""Desk-scale benchmarking toolkit for global forest-type mapping.

Subpackages:
  numerics  - float64 tensors with reverse-mode autodiff, attention, Adam
  labels    - reference-label fusion rules and dataset statistics
  sampling  - geographic block splits and stratified plot selection
  datagen   - deterministic synthetic multi-modal plot generator
  model     - multi-modal temporal-spatial vision transformer (MTSViT)
  metrics   - confusion matrices and F1 reporting
  harness   - on-disk formats, training loop, ablations, CLI
"""

__version__ = "0.1.0"
