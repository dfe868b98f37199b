"""Toolkit for building and scoring per-frame instance masks in video datasets.

Submodules:
    masks     dense/RLE mask primitives and the string codec
    dataset   annotation data model and JSON file format
    scoring   pair confidence scores, candidate selection, tracklet matching
    pipeline  overlap cleanup, keyframes, propagation, fusion, gt filters
    losses    reference loss kernels with analytic gradients
    synth     deterministic synthetic video benchmark generator
    reports   histograms, coverage, and tube-IoU statistics
    cli       command-line interface
"""

__version__ = "0.1.0"
