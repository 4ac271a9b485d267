"""Desk-scale pipeline for discourse-oriented encoder-decoder pre-training.

The package is organized along the pipeline:

* :mod:`depth_lab.corpus` -- deterministic corpus ingestion and train/val split
* :mod:`depth_lab.segment` -- rule-based sentence segmentation
* :mod:`depth_lab.tokenizer` -- byte-pair subword vocabulary with reserved
  sentinel / sentence-token ID ranges
* :mod:`depth_lab.corruption` -- span masking, sentence shuffling, and
  encoder/decoder/target construction for the "depth" and "t5" objectives
* :mod:`depth_lab.masks` -- hierarchical boolean attention masks plus an
  independent rule verifier
* :mod:`depth_lab.model` -- a small encoder-decoder transformer that consumes
  arbitrary boolean masks
* :mod:`depth_lab.objective` -- decomposed loss, sentence-token accuracy, and
  learning-rate schedules
* :mod:`depth_lab.trainer` -- training / evaluation / checkpointing
* :mod:`depth_lab.cli` -- the ``depth-lab`` command line entry point
"""

__version__ = "0.1.0"
