"""ECG-based AF risk prediction: cohort labeling, residual CNN, metrics, survival."""

__version__ = "0.1.0"

from .cohort import (  # noqa: F401
    ExamRecord,
    Label,
    LabeledExam,
    PatientGroup,
    PatientHistory,
    Split,
    SurvivalRecord,
    build_survival_records,
    classify_exams,
    histories_from_exams,
    split_by_patient,
)
from .errors import (  # noqa: F401
    AfHorizonError,
    CollinearityError,
    MissingArtifactError,
    NumericalError,
    ValidationError,
)
