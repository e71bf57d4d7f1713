"""Event-camera streams to binary frames to a small 6D pose regressor.

The pipeline: parse/validate event streams, accumulate them into
polarity-binarized 100 ms frames labeled with poses, and train or
evaluate a compact dual-head convolutional regressor in formal (ReLU)
or spiking (parametric-LIF) variants on sequences of 10 frames.
"""

__version__ = "0.1.0"
