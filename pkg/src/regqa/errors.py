"""Exception types raised across the pipeline."""


class RegqaError(Exception):
    """Base class for all pipeline errors."""


# -- corpus ------------------------------------------------------------------

class ParseError(RegqaError):
    """Input file is malformed for the declared format profile."""


class DuplicateRefConflict(RegqaError):
    """Same (doc_id, passage_id) seen with two different texts."""


class EmptyCorpus(RegqaError):
    """Operation requires at least one passage."""


# -- embeddings / dense search -----------------------------------------------

class DimensionMismatch(RegqaError):
    """Vector length disagrees with the declared dimension."""


class DuplicateId(RegqaError):
    """Embedding id appears more than once."""


class ZeroVector(RegqaError):
    """Zero row cannot be normalized into cosine space."""


# -- fusion ------------------------------------------------------------------

class QueryMismatch(RegqaError):
    """Input ranked lists do not share one query id."""


class UnknownRetriever(RegqaError):
    """Ranked list names a retriever absent from the fusion config."""


# -- training-data construction ----------------------------------------------

class UnlabeledQuestion(RegqaError):
    """Question lacks gold references where labels are required."""


class ScorerFailure(RegqaError):
    """Relevance scorer failed or returned out-of-range values."""


class TrainerUnavailable(RegqaError):
    """No trainer reachable and dry-run not requested."""


# -- answers / metrics ---------------------------------------------------------

class EmptyInput(RegqaError):
    """Answer strategy requires a non-empty passage list."""


class GeneratorFailure(RegqaError):
    """Text generator failed."""


class EmptyAnswer(RegqaError):
    """Answer has no sentences to score."""


class NliFailure(RegqaError):
    """NLI capability failed or returned invalid scores."""


class EmptyGold(RegqaError):
    """Retrieval metric requires a non-empty gold set."""


# -- scorer gateway ------------------------------------------------------------

class Timeout(RegqaError):
    """Remote scorer did not answer in time."""


class ProtocolViolation(RegqaError):
    """Response violates the line-protocol contract."""


class RemoteError(RegqaError):
    """Remote scorer reported a failure for the batch."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
