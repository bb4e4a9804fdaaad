"""Core engines: container codec, segmentation, SSM autoencoder, training, detection and evaluation."""
