"""Ultrasound tongue image classification with texture fusion.

A from-scratch numpy pipeline: local binary pattern texture features,
CNN/DNN/fusion classifiers with SGD training, speaker-scenario dataset
splits, and confusion-matrix evaluation, plus a batch CLI.
"""

from .lbp import LBPConfig, LBPFeatures, lbp_code, lbp_histogram, lbp_map, to_grayscale
from .models import (
    ArrayDataset,
    History,
    Model,
    ModelConfig,
    build_cnn,
    build_dnn,
    build_fusionnet,
    build_model,
    train,
)
from .nn import SGDConfig, cross_entropy, sgd_step
from .tensor import Conv2DSpec, conv2d, matmul, maxpool2d, softmax
from .data import (
    DatasetRecord,
    SplitPlan,
    SynthSpec,
    load_dataset,
    make_split,
    map_phone_to_class,
    preprocess,
    stack_records,
    synth_dataset,
)
from .evaluation import ConfusionMatrix, EvalReport, confusion, precision_macro, predict_and_report
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
