"""Two-stage personalized VAS estimation from facial landmarks.

Stage 1 is a frame-level multi-task MLP trained with sequence labels
broadcast to frames; stage 2 summarizes each sequence's frame estimates
into statistics and regresses VAS with an RBF-ARD Gaussian process.
"""

__version__ = "0.1.0"
