"""File formats: PPM/STFR frames, checkpoints and dataset manifests."""
