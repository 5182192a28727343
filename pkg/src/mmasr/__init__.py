"""Desk-scale multimodal speech recognition with a dual cross-attention
fusion decoder, CTC-trained Conformer-lite encoder, synthetic homophone
corpus generator, and S/D/I error scoring."""

__version__ = "0.1.0"
