"""Exception hierarchy shared across the toolkit."""


class SynthPrivError(Exception):
    """Base class for every error raised by synthpriv."""


# capture_io
class CaptureError(SynthPrivError):
    pass


class BadMagic(CaptureError):
    pass


class TruncatedHeader(CaptureError):
    pass


class UnsupportedLinkType(CaptureError):
    pass


class InconsistentRecord(CaptureError):
    pass


class TooFewLabels(SynthPrivError):
    pass


# token_model / extraction_attack
class MixedSchemes(SynthPrivError):
    pass


class SchemeMismatch(SynthPrivError):
    pass


class EmptyGenerationSet(SynthPrivError):
    pass


class UnalignedIndex(SynthPrivError):
    pass


# identifier_attack
class EmptyTrainingSet(SynthPrivError):
    pass


class EmptyGeneratedSet(SynthPrivError):
    pass


class BadBins(SynthPrivError):
    pass


# property_attack / topology_attack
class NoSamplesForField(SynthPrivError):
    pass


class DomainMismatch(SynthPrivError):
    pass


class BothEmpty(SynthPrivError):
    pass


class EmptyGraph(SynthPrivError):
    pass


# mia_harness / utility
class RaggedRows(SynthPrivError):
    pass


class DuplicateSampleId(SynthPrivError):
    pass


class EmptyTable(SynthPrivError):
    pass


class DegenerateLabels(SynthPrivError):
    pass


class LabelMismatch(SynthPrivError):
    pass


class EmptyCorpus(SynthPrivError):
    pass


# mitigation
class PseudonymSpaceExhausted(SynthPrivError):
    pass


class NoPerturbableFields(SynthPrivError):
    pass


class ConfigError(SynthPrivError):
    """Invalid audit configuration; ``problems`` maps field name to message."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = {"config": problems}
        self.problems = dict(problems)
        msg = "; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items()))
        super().__init__(msg)
