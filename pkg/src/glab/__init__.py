"""Desk-scale guided image synthesis lab.

A small self-trained latent diffusion stack plus gradient-guided synthesis
from stroke paintings, cross-attention region control, inversion baselines,
and faithfulness/realism evaluation.
"""

__version__ = "0.1.0"
