"""Experiment orchestration: segmentation, LOSO folds, training, evaluation, CLI."""
