"""coldwarm: estimate cold-warm interaction thresholds for recommender datasets.

Given an interaction log and a collaborative-filtering model, the package
measures the minimal number of interactions at which items start being
recommended (retraining scan with probe-item subsampling) and at which user
histories saturate recommendation quality (inference scan with truncated
histories), then locates the transition point on the resulting metric curves
with a sliding-window slope detector.
"""

__version__ = "0.1.0"

from .data import (
    ColumnSchema,
    DatasetStats,
    InteractionLog,
    InteractionMatrix,
    build_matrix,
    compute_stats,
    ingest_log,
    pcore_filter,
)
from .itemscan import ItemScanConfig, run_item_scan, sample_probe_items, successive_evaluate_item
from .metrics import (
    EvalUnit,
    MetricPoint,
    aggregate_item_metric,
    confidence_interval,
    hr_at_k,
    hr_star,
    ndcg_at_k,
    ndcg_star,
    stability_at_k,
)
from .models import (
    EaseModel,
    ItemKnnModel,
    PopularityModel,
    PureSvdModel,
    Recommender,
    recommend_topk,
    register_model,
    train_ease,
    train_itemknn,
    train_popularity,
    train_puresvd,
    tune_random_search,
)
from .splitting import (
    GlobalTimepointSplit,
    ItemScanSplit,
    TestUserRecord,
    UserScanSplit,
    build_item_scan_split,
    build_user_scan_split,
    materialize_train,
    split_global_timepoint,
)
from .threshold import Curve, ThresholdReport, bootstrap_threshold_ci, detect_threshold, window_slopes
from .userscan import UserScanConfig, run_user_scan, truncate_history

__all__ = [name for name in dir() if not name.startswith("_")]
