"""Outcome-aware clustering of patient trajectories.

A variational autoencoder over windowed patient features is trained with a
weighted sum of reconstruction, KL, Cox partial-likelihood and self-training
cluster losses.  Everything runs on numpy through a small reverse-mode
autodiff engine.
"""

from .autodiff import ParamSet, Tensor, grad_check
from .baselines import fit_rsf_cluster, fit_survival_tree, kmeans, pca, pca_kmeans, rsf_cluster
from .losses import SCENARIOS, LossWeights, cluster_loss, cox_loss, kl_loss, recon_loss, total_loss
from .metrics import (adjusted_rand_index, kaplan_meier, logrank_test,
                      normalized_mutual_information)
from .network import ModelConfig, TrajectoryModel, soft_assign, target_distribution
from .synthetic import SyntheticConfig, SyntheticDataset, generate_dataset
from .trainer import Cohort, TrainConfig, finetune_cluster, pretrain

__version__ = "0.1.0"
