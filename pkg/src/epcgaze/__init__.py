"""Unsupervised domain adaptation for gaze regression via embedding/prediction consistency."""
