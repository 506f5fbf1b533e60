from .dsl import ParseError, parse_formula, parse_task, pretty_print, task_from_json, task_to_json
from .formula import (
    And, Atom, Const, Formula, Iff, Implies, MissingVariable, Poly, Relation, lin_eq, Not, Or, Xor,
    desugar, evaluate, evaluate_batch, to_text,
)
from .spaces import DEFAULT_CAP, Space, TaskError
from .task import (
    DeterminismViolation, InferenceTable, KUnambiguity, NoConsistentLabel, TaskSpec,
    build_beta_star, check_k_unambiguity, enumerate_models,
)
