from .base import BaseClass
from .benchmark import BenchCase, BenchResult, Benchmark
from .flow_conv_flow import FcfGradients, FlowConvFlow, check_flow_stages, flow_conv_flow, fof
from .flow_layer import FlowLayer, LayerWeights, layer_forward, normalize_255
from .flow_params import FlowParams, LearnFlags
from .gradcheck import GradientChecker, LeafReport, fcf_checker, flow_checker, layer_checker
from .optimizer import MomentumSGD, MomentumState, step_parameters
from .tiny_model import FlowMode, TinyModel, cross_entropy
from .trainer import AblationBase, EvaluationReport, TrainHyper, evaluate, run_ablation, train
