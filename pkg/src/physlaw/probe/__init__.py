"""Parsing rendered videos back into states and scoring them."""
from __future__ import annotations

from .anomaly import AnomalyReport, anomaly_check
from .attributes import Attributes, classify_attribute_outcome, measure_attributes
from .metrics import ErrorReport, SplitSummary, aggregate, psnr, ssim, velocity_error
from .tracks import Detection, TrackSet, detect_centers, labels_for, parse_video, valid_frames

__all__ = [
    "AnomalyReport", "Attributes", "Detection", "ErrorReport", "SplitSummary", "TrackSet",
    "aggregate", "anomaly_check", "classify_attribute_outcome", "detect_centers", "labels_for",
    "measure_attributes", "parse_video", "psnr", "ssim", "valid_frames", "velocity_error",
]
