"""Asymmetric low-rank edge embeddings trained on random-walk co-occurrences."""

from .estimator import AsymProjEmbedding, NeighborhoodScorer
from .graph import (EdgeSplit, Graph, NegativeSets, build_negative_sets,
                    extend_directed_test_negatives, largest_wcc, load_edge_list,
                    sample_negative_edges, split_edges)
from .metrics import (adamic_adar, common_neighbors, embedding_norm_stats,
                      evaluate_link_prediction, generalization_ratio, jaccard, roc_auc)
from .model import (ALL_KINDS, EdgeModel, EdgeModelKind, ModelDims, edge_score,
                    edge_score_multi, export_edge_representations, init_params,
                    project_unit_norm)
from .training import TrainConfig, graph_log_likelihood, nce_objective, percent_delta_step, train
from .walks import (CooccurrenceCounts, WalkConfig, WalkCorpus, count_cooccurrences,
                    extract_context_pairs, make_transition_pr, sample_walks)

__version__ = "0.1.0"
