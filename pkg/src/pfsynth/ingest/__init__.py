"""EDF parsing, seizure annotations, labeling policy and segment storage."""

from .annotations import (
    AnnotationError,
    SeizureAnnotation,
    format_annotations,
    merge_leading_seizures,
    parse_annotations,
    read_annotations,
)
from .dataset import (
    LabelPolicy,
    NoEligiblePatientsError,
    PatientRecordings,
    PlannedSegment,
    build_dataset,
    max_seizures_in_window,
    plan_segments,
)
from .edf import (
    EdfError,
    EdfHeaderFieldError,
    EdfMagicError,
    EdfRecording,
    EdfSignal,
    EdfTruncatedDataError,
    EdfTruncatedHeaderError,
    parse_edf,
    read_edf,
    serialize_edf,
)
from .manifest import DatasetManifest, ManifestEntry, ManifestError
from .segment import (
    SegmentChecksumError,
    SegmentFormatError,
    SegmentVersionError,
    SignalSegment,
    load_segment,
    read_segment,
    save_segment,
    write_segment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
