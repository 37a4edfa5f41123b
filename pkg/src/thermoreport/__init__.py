"""Pulsed active-thermography analysis and structured reporting.

Turns a pulsed thermal sequence into PCT, TSR, and PPT feature maps,
fuses the complementary detections into a consensus anomaly mask with
region statistics, and produces a schema-constrained conservation
report either offline or through a vision-language-model endpoint.
"""

from .cube_io import OpticalImage, Roi, ThermalCube, crop, export_map_png, read_cube, write_cube
from .detect import (
    AnomalyMask,
    DetectConfig,
    FeatureMap,
    Modality,
    Region,
    filter_small,
    label_regions,
    mask_area_percent,
    standardize,
    suppress_border,
    threshold_percentile,
    threshold_z,
)
from .errors import (
    FlatCurveError,
    InputError,
    PipelineError,
    ReportSchemaError,
    ThermoError,
    TransportError,
    ZeroVarianceError,
)
from .fusion import (
    ConsensusResult,
    MetricsRecord,
    RepresentativePc,
    fuse_consensus,
    select_representative_pc,
    summarize,
)
from .pct import PctResult, pct_decompose, pct_magnitude
from .pipeline import PipelineConfig, run_analysis
from .ppt import PptResult, ppt_phase_gradient, ppt_transform
from .preprocess import (
    PreprocessConfig,
    PulseTiming,
    base_median_range,
    detect_pulse,
    repair_nonfinite,
    smooth_sg,
    subtract_baseline,
)
from .report import (
    EndpointConfig,
    PromptSpec,
    StructuredReport,
    VlmInputSet,
    build_prompt,
    call_vlm,
    generate_offline_report,
    parse_report,
)
from .synth import DefectSpec, SynthSpec, generate
from .tsr import TsrResult, tsr_fit, tsr_slope_map

__version__ = "0.1.0"
