from .constants import *
from .exceptions import *
from .types import *
from .utils import *
from .tensorcore import FeatureMap, Kernel2D, PaddingMode, PaddingSpec, Precision
from .tvl1 import FlowField, TvParams, endpoint_error, tv_energy, tvl1_flow, tvl1_solve
from .repflow import GradientBundle, rep_flow_backward, rep_flow_forward, unroll_backward, unroll_forward
from .dataset import ToyDatasetConfig, VideoSample, gen_motion_dataset
from .classes import (
    BaseClass,
    AblationBase,
    BenchCase,
    BenchResult,
    Benchmark,
    EvaluationReport,
    FcfGradients,
    FlowConvFlow,
    FlowLayer,
    FlowMode,
    FlowParams,
    GradientChecker,
    LayerWeights,
    LeafReport,
    LearnFlags,
    MomentumSGD,
    MomentumState,
    TinyModel,
    TrainHyper,
    check_flow_stages,
    cross_entropy,
    evaluate,
    fcf_checker,
    flow_checker,
    flow_conv_flow,
    fof,
    layer_checker,
    layer_forward,
    normalize_255,
    run_ablation,
    step_parameters,
    train,
)
