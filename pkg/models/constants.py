"""
Constants for the Measuring the Data pipeline.
Enumerations shared by the library, the configuration layer and the CLI.
"""
from enum import Enum


class Metric(str, Enum):
    """Distance used to build the neighbor graph."""
    EUCLIDEAN = "euclidean"
    WASSERSTEIN2 = "wasserstein2"


class PlanOrientation(str, Enum):
    """Which sample plays the transport source when a tangent is computed at an anchor."""
    FORWARD = "forward"    # source = anchor f0, target = neighbor f_i
    REVERSE = "reverse"    # source = neighbor f_i, target = anchor f0; T is evaluated on f0's support


class TangentMethod(str, Enum):
    """How tangent vectors are produced at an anchor."""
    TRANSPORT = "transport"
    CHORD = "chord"


class Aggregation(str, Enum):
    """Aggregation of per-point local IDs into a global ID."""
    MODE = "mode"
    MAX = "max"
    MEDIAN = "median"


class Objective(str, Enum):
    """Koopman Regularization objective."""
    UNIT_VELOCITY = "unit_velocity"
    COORDINATES = "coordinates"


class AlphaMode(str, Enum):
    """How tangent coefficients are updated during optimization."""
    REFIT = "refit"
    GRADIENT = "gradient"


class ModelInit(str, Enum):
    """Starting point of a coordinate fit."""
    UNIFORM = "uniform"    # weights uniform in +-1/sqrt(fan_in)
    CHART = "chart"        # one hidden unit per anchor and tangent-frame direction


class Layout(str, Enum):
    """CSV layouts accepted by load_matrix."""
    GRID_HEADER = "grid-header"
    SEPARATE_GRID = "separate-grid"


class PlotKind(str, Enum):
    """Plot-data exports."""
    DATASET = "dataset"
    SPECTRUM = "spectrum"
    EMBEDDING = "embedding"


class Stage(str, Enum):
    """Pipeline stages in execution order."""
    GENERATE = "generate"
    TRANSPORT = "transport"
    TANGENTS = "tangents"
    ID = "id"
    COORDS = "coords"

    @classmethod
    def ordered(cls):
        return [cls.GENERATE, cls.TRANSPORT, cls.TANGENTS, cls.ID, cls.COORDS]

    @property
    def position(self):
        return Stage.ordered().index(self)


class ExitCode:
    """Process exit codes."""
    SUCCESS = 0
    VALIDATION = 1
    NUMERICAL = 2


# Numerical tolerances
MASS_TOLERANCE = 1e-9
NORMALIZED_CHECK_TOLERANCE = 1e-6
UNIFORM_GRID_TOLERANCE = 1e-12
SUPPORT_CDF_CUTOFF = 1e-12
DEGENERATE_ROW_NORM = 1e-12
DISTANCE_TIE_DECIMALS = 9
SINGULAR_JACOBIAN_SV = 1e-8

# Artifact file names inside the output directory
class Artifact:
    """File names of the stage artifacts."""
    DATASET = "dataset.csv"
    DATASET_LABELS = "dataset_labels.csv"
    GRAPH = "graph.json"
    PLANS_DIR = "plans"
    PLANS_INDEX = "plans_index.csv"
    BUNDLES = "bundles.csv"
    SPECTRUM = "spectrum.csv"
    ID_ESTIMATE = "id_estimate.json"
    CHECKPOINT = "checkpoint.json"
    ALPHAS = "alphas.csv"
    FIT_REPORT = "fit_report.json"
    EMBEDDING = "embedding.csv"
    REPORT = "report.json"
    PLOT_DIR = "plot_data"
