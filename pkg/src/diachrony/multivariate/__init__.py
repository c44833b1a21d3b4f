"""Correspondence analysis, clustering and tree-based models."""
from .ca import CaSolution, correspondence_analysis, jacobi_svd
from .cluster import Dendrogram, Merge, hclust, vnc
from .trees import CiConfig, CiTree, ImportanceReport, RfConfig, citree, rf_importance

__all__ = [
    "CaSolution", "correspondence_analysis", "jacobi_svd",
    "Dendrogram", "Merge", "hclust", "vnc",
    "CiConfig", "CiTree", "ImportanceReport", "RfConfig", "citree", "rf_importance",
]
