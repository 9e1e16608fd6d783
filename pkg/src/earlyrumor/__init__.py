"""Rumour early detection with generated comments from a routed mixture of low-rank experts."""
from .config import RunConfig, load_config
from .data import PostRecord, generate_synthetic_corpus, load_dataset
from .detector import Detector, DetectorConfig, evaluate, predict, train_detector
from .fusion import controversy_feature, fuse, pool_subset, stance_split
from .generator import TuningConfig, generate_comments, tune_generator
from .knowledge import KnowledgeBase, build_knowledge_dataset, extract_entities, summarize_descriptions
from .metrics import MetricsReport, compute_auc, metrics_report
from .pipeline import balance_counts, run_ablations, run_experiment, sweep_comments
from .quality import diversity, style_similarity
from .routing import (build_similarity_graph, connected_components, count_combinations,
                      sample_routing_plan)

__version__ = "0.1.0"
