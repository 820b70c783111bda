"""Label spaces, metrics, losses and the training and experiment loops."""
