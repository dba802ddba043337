"""Probability models over base-editing outcomes.

The package predicts, for a reference sequence and a base editor, the full
probability distribution over reachable outcome sequences.  It factors the
problem into overall editing efficiency and the conditional proportion of
each edited outcome, with one-stage and multi-task alternatives, and ships
its own reverse-mode autodiff core so the models have no framework
dependency.
"""

from .seqcore import (
    EditorClass,
    OutcomeSequence,
    ReferenceSequence,
    RepresentationMode,
    enumerate_outcomes,
    parse_reference,
)
from .models import (
    ModelMeta,
    MultiTaskModel,
    OneStageModel,
    TwoStageModel,
    init_multitask,
    init_one_stage,
    init_two_stage,
    predict_distribution,
)
from .nn import EncoderConfig
from .numcore import RngStream, Tape, Tensor, grad_check
from .data import (
    LibraryDataset,
    OracleEditorProfile,
    generate_synthetic_screen,
    load_checkpoint,
    load_library,
    save_checkpoint,
    write_library,
)
from .training import TrainConfig, split_dataset, train_multitask, train_two_stage
from .evaluation import EvalReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "EditorClass",
    "EncoderConfig",
    "EvalReport",
    "LibraryDataset",
    "ModelMeta",
    "MultiTaskModel",
    "OneStageModel",
    "OracleEditorProfile",
    "ReferenceSequence",
    "OutcomeSequence",
    "RepresentationMode",
    "RngStream",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TwoStageModel",
    "enumerate_outcomes",
    "evaluate",
    "generate_synthetic_screen",
    "grad_check",
    "init_multitask",
    "init_one_stage",
    "init_two_stage",
    "load_checkpoint",
    "load_library",
    "parse_reference",
    "predict_distribution",
    "save_checkpoint",
    "split_dataset",
    "train_multitask",
    "train_two_stage",
    "write_library",
]
