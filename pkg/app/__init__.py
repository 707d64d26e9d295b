# Multiscale filter MLE
