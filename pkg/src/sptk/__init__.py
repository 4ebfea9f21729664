"""Desk-scale self-pretraining toolkit.

Builds pretraining corpora out of labeled datasets, pretrains micro
transformer encoders with MLM or replaced-token-detection objectives,
finetunes them on six task families, and runs the comparative analyses
(benefit percentages, cross-dataset matrices, error inconsistency,
calibrated ensembles, TF-IDF corpus reordering).
"""

__version__ = "0.1.0"
