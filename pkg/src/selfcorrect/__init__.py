"""Self-correction toolkit: corpus construction, loss masking, a toy trainer
with exact gradients, multi-round correction runs, and the metric suite."""

from .builder import (
    BAD,
    GOOD,
    NEGATIVE,
    POSITIVE,
    BuildConfig,
    CorpusStats,
    GrammarError,
    SampleRejected,
    Segment,
    SelfCorrectionSample,
    build_corpus,
    build_sample,
    generate_corrected_cot,
    read_corpus,
    render_answer,
    render_sample,
    validate_sample,
    write_corpus,
)
from .gateway import (
    AuthenticationError,
    GatewayError,
    HttpChatGateway,
    LMRequest,
    LMResponse,
    MalformedReplyError,
    SamplingParams,
    StubGateway,
    StubScriptError,
    TransportError,
    sample_answers,
)
from .grading import (
    CORRECT,
    UNPARSEABLE,
    WRONG,
    ExtractionResult,
    QuestionRecord,
    extract_choice,
    grade,
    load_questions,
    write_questions,
)
from .masking import (
    CharTokenizer,
    TokenizedSample,
    TokenizerError,
    assign_loss_flags,
    full_answer_flags,
    masked_loss,
    masked_loss_and_grad,
    read_masked_corpus,
    tokenize_and_mask,
    write_masked_corpus,
)
from .metrics import (
    EvalResult,
    accuracy_by_round,
    classify_transition,
    compute_metrics,
    consistency_check,
)
from .prompts import (
    ComposedQuestion,
    PromptPools,
    DEFAULT_POOLS,
    compose_question,
    load_pools,
    per_question_seed,
    rewrite_prompt,
    write_pools,
)
from .runner import (
    CorrectionTrace,
    RoundRecord,
    VerificationLexicon,
    parse_output,
    parse_verification_chain,
    read_traces,
    run_dataset,
    run_item,
    write_traces,
)
from .toylm import (
    BigramModel,
    DivergenceError,
    ToyLMConfig,
    TrainReport,
    grad_check,
    init_model,
    sequence_logprob,
    train,
)

__version__ = "0.1.0"
