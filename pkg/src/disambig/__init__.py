"""Pre-inference prompt disambiguation driven by small language models.

The package rewrites a user prompt before it reaches the target model: a
small model flags semantically risky spans, two independent readings of each
span are checked for consistency by embedding similarity, conflicts are
resolved, and the settled clarifications are aggregated into a context block
appended to the original prompt.  An evaluation harness and attention-export
analyzer round out the toolkit.
"""

from .core import (
    Channel,
    ConsistencyVerdict,
    DisambiguatedPrompt,
    EmbeddingVector,
    EnhancedContext,
    Interpretation,
    ResolvedExplanation,
    RiskKind,
    RiskPoint,
    RiskType,
    validate_risk_point,
)
from .clients import (
    BackendConfig,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    Role,
    ScriptedBackend,
    UsageLedger,
    UsageRecord,
    chat,
    embed,
    scripted_mock,
)
from .pipeline import (
    Ablation,
    PipelineConfig,
    PipelineTrace,
    cosine_similarity,
    disambiguate,
)
from .evaluation import (
    BenchmarkItem,
    EvalRunRecord,
    MetricsReport,
    augment_item,
    load_benchmark,
    normalize_answer,
    run_eval,
)
from .attention import (
    AttentionExport,
    Category,
    FocusSpec,
    HeadMode,
    category_reallocation,
    entropy_focus_distribution,
    focus_ratio,
    layerwise_focus_curve,
    load_export,
    shannon_entropy,
)

__version__ = "0.1.0"
