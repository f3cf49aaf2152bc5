"""ConVoice: frame-by-frame zero-shot voice conversion.

Four independently trained networks (convolutional content encoder, LSTM
speaker encoder, conditioned convolutional decoder, Griffin-Lim vocoder
substitute) behind a conversion pipeline, checkpoint format, CLI, and
FastAPI service.
"""

__version__ = "0.1.0"
