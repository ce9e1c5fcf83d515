"""Exception types shared across the package."""


class TabfuseError(Exception):
    """Base class for all package-specific errors."""


class UnparsableHtml(TabfuseError):
    """No element structure could be recovered from the input at all."""


class UnknownTagger(TabfuseError):
    """A tokenizer/tagger plugin name is not registered."""


class ShapeMismatch(TabfuseError):
    """Tensor operands have incompatible shapes."""


class IndexOutOfRange(TabfuseError):
    """A vocabulary index fell outside the embedding table."""


class EmptyCorpus(TabfuseError):
    """An operation that needs at least one table received none."""


class VocabularyFrozen(TabfuseError):
    """Attempted to grow a frozen vocabulary."""


class InvalidDistribution(TabfuseError):
    """A probability vector does not sum to one within tolerance."""


class EmptyBatch(TabfuseError):
    """A batch loss was asked to score zero nodes."""


class ZeroCount(TabfuseError):
    """Class-weight computation saw a class with zero occurrences."""


class LengthMismatch(TabfuseError):
    """Predicted and gold label sequences differ in length."""


class TooFewSources(TabfuseError):
    """Fewer distinct sources than requested folds."""


class ClassMismatch(TabfuseError):
    """Corpus labels are not covered by the checkpoint's class list."""


class DivergedLoss(TabfuseError):
    """Training hit a non-finite loss and aborted."""


class NonDeterministicLoss(TabfuseError):
    """Two evaluations of a supposedly deterministic loss disagreed."""


class UnknownClass(TabfuseError):
    """Extraction was asked for a class the model does not know."""


class DuplicateTableId(TabfuseError):
    """Two extraction sets share one table id."""


class IoFailure(TabfuseError):
    """Reading or writing an artifact file failed."""
