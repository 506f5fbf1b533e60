from .data import (
    RENDERS, SCHEMA_VERSION, Dataset, Renderer, SyntheticTaskConfig, generate_dataset, load_dataset,
    make_renderer, save_dataset,
)
from .ensemble import Ensemble, QueryRun, query_experiment, random_queries, select_queries, train_bears_ensemble
from .loop import (
    OBJECTIVES, Divergence, EvalMetrics, TrainConfig, TrainResult, estimate_alpha, evaluate, fit,
    objective_grads, predict_labels, readout_for, supervision_mask, train,
)
from .model import ConstantExtractor, Extractor, OracleExtractor, Unsupported, softmax_backward
