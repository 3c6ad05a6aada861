"""Toolkit for building, segmenting, clustering and reviewing bird-vocalisation datasets."""

__version__ = "0.1.0"

from vocalkit.params import Parameters, validate_parameters
from vocalkit.project import AnnotationMeta, Catalogue, ProjectDirs, ingest, init_project
from vocalkit.signal import (
    Spectrogram,
    UnitSegmentation,
    amplitude_envelope,
    bandpass,
    compute_spectrogram,
    dereverberate,
    extract_unit_spectrograms,
    segment_into_units,
)

__all__ = [
    "AnnotationMeta",
    "Catalogue",
    "Parameters",
    "ProjectDirs",
    "Spectrogram",
    "UnitSegmentation",
    "amplitude_envelope",
    "bandpass",
    "compute_spectrogram",
    "dereverberate",
    "extract_unit_spectrograms",
    "ingest",
    "init_project",
    "segment_into_units",
    "validate_parameters",
]
