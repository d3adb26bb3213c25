"""Post-hoc interpretation of trained models: clusters, surrogate trees,
nonparametric tests and PCA."""
from .cart import CartNode, FeatureFrequency, best_split, fit_cart, gini, tree_feature_frequency
from .clusters import (
    LOW_CONFIDENCE_N,
    ClusterProfile,
    TreatmentCell,
    assign_clusters,
    cluster_feature_means,
    cluster_letter,
    cluster_treatment_table,
    feature_histograms,
    patient_feature_similarity,
    patient_latent_similarity,
    patient_report,
    profile_from_rates,
    rank_treatments,
)
from .pca import PcaResult, pca, pca_matrix
from .stats import DunnResult, dunn_test, feature_tests, kruskal_wallis

__all__ = [
    "CartNode", "FeatureFrequency", "best_split", "fit_cart", "gini", "tree_feature_frequency",
    "LOW_CONFIDENCE_N", "ClusterProfile", "TreatmentCell", "assign_clusters", "cluster_feature_means",
    "cluster_letter", "cluster_treatment_table", "feature_histograms", "patient_feature_similarity",
    "patient_latent_similarity", "patient_report", "profile_from_rates", "rank_treatments",
    "PcaResult", "pca", "pca_matrix", "DunnResult", "dunn_test", "feature_tests", "kruskal_wallis",
]
