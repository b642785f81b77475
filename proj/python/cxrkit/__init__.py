"""Chest X-ray grounding toolkit: coordinate/text codecs, preprocessing and
evaluation metrics backed by the C++ core."""

from ._core import (
    __version__,
    bleu,
    build_prompt,
    classification_report,
    check_gradient,
    cider,
    dedup_findings,
    denormalize_box,
    evaluate_run,
    fused_forward,
    gelu,
    global_labels,
    group_tokens,
    iou,
    local_labels,
    meteor,
    normalize_box,
    normalize_pixels,
    parse_diagnoses,
    parse_grounded_report,
    read_dicom,
    rouge,
    serialize_diagnoses,
    serialize_findings,
    strip_localization,
    CxrkitError,
)

__all__ = [
    "__version__",
    "bleu",
    "build_prompt",
    "classification_report",
    "check_gradient",
    "cider",
    "dedup_findings",
    "denormalize_box",
    "evaluate_run",
    "fused_forward",
    "gelu",
    "global_labels",
    "group_tokens",
    "iou",
    "local_labels",
    "meteor",
    "normalize_box",
    "normalize_pixels",
    "parse_diagnoses",
    "parse_grounded_report",
    "read_dicom",
    "rouge",
    "serialize_diagnoses",
    "serialize_findings",
    "strip_localization",
    "CxrkitError",
]
