from .count import (
    DEFAULT_BUDGET, BudgetExceeded, Enumeration, IdentityExcluded, count_rss_bruteforce,
    enumerate_rss, family_size, is_rs,
)
from .metrics import (
    DiagnosticsReport, KCResult, count_rss, KnowledgeWarning, MixtureVerdict, collapse_metric,
    default_label_dist, diagnose, knowledge_complexity, knowledge_complexity_detail, label_preserving_fraction,
    remap_collapse, rs_risk, verify_mixture_is_rs,
)
from .remap import (
    SHAPES, BoundFamily, ConceptRemap, EmpiricalRemap, PartialRemap, RemapFamily, StochasticRemap, mix_remaps,
)
from .sat import CNF, ModelCounter, count_models, count_rss_sat, encode
