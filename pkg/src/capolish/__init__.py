"""capolish: polish fixed-length token canvases by per-position resampling.

A run repeatedly re-opens each editable slot, asks a masked language
model for replacement candidates, rescores the candidate sentences with
an image-text matcher and an optional control scorer, and keeps the
fused argmax. Scorers are pluggable: deterministic table fixtures for
testing, or a remote model server over a line-delimited wire protocol.
"""

from .control import (
    ControlTask,
    InfillSpec,
    PosTemplate,
    SentimentLexicon,
    build_infill_task,
    build_length_task,
    pos_match_scores,
    sentiment_scores,
)
from .core import (
    BackendManifest,
    CandidateSet,
    CaptionState,
    CallCounts,
    FusionWeights,
    IterationSnapshot,
    RunConfig,
    RunResult,
    ScorerBackend,
    Vocabulary,
    fuse,
    select_argmax,
    softmax,
    validate_config,
)
from .engine import PositionOrder, gibbs_lm_sample, make_order, polish_position, run, run_iteration
from .errors import (
    CapabilityError,
    CapolishError,
    ConfigError,
    ConfigIssue,
    EnumerationBudgetError,
    NothingToEditError,
    NumericError,
    ProtocolError,
    ScorerError,
    StaleHandleError,
    TransportError,
)
from .metrics import CaptionSet, bleu_n, bsim, div_n, matcher_score_summary, vocab_size
from .rng import Rng
from .synthetic import (
    BagMatcher,
    SyntheticBackend,
    TableMlm,
    bag_match_score,
    load_backend_dir,
    oracle_enumerate,
    oracle_select,
    table_mlm_predict,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
