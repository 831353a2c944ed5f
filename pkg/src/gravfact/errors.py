"""Exception types shared across the package.

Each error carries a stable ``code`` so the CLI can map failures to exit
statuses and reports can name them.
"""

from __future__ import annotations


class GravfactError(Exception):
    code = "error"


class SingularMetric(GravfactError):
    code = "singular_metric"


class OutOfChart(GravfactError):
    code = "out_of_chart"


class DimensionUnsupported(GravfactError):
    code = "dimension_unsupported"


class ModeUnsupported(GravfactError):
    code = "mode_unsupported"


class ClaimViolation(GravfactError):
    code = "claim_violation"


class InvariantViolation(GravfactError):
    code = "invariant_violation"


class UnsupportedBackground(GravfactError):
    code = "unsupported_background"


class NonDiamondRegion(GravfactError):
    code = "non_diamond_region"


class OverlappingRegions(GravfactError):
    code = "overlapping_regions"


class NotTimeOrderable(GravfactError):
    code = "not_time_orderable"


class EmptyCover(GravfactError):
    code = "empty_cover"


class QuadratureDivergence(GravfactError):
    code = "quadrature_divergence"


class ModeCutoffTooLow(GravfactError):
    code = "mode_cutoff_too_low"


class SupportTooCloseToBoundary(GravfactError):
    code = "support_too_close_to_boundary"


class CutoffOutsideImage(GravfactError):
    code = "cutoff_outside_image"


class NotCauchy(GravfactError):
    code = "not_cauchy"


class OverlappingImages(GravfactError):
    code = "overlapping_images"


class ConfigParse(GravfactError):
    code = "config_parse"


class UnsupportedCombination(GravfactError):
    code = "unsupported_combination"


class GaugeViolation(UserWarning):
    """Warning: a transverse-traceless formula was used on a non-TT field."""


class IOFailure(GravfactError):
    code = "io_failure"


class SupportEscapesImage(GravfactError):
    code = "support_escapes_image"
