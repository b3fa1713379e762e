"""Classical layers, losses, optimizers and the hybrid model builders."""
from .functional import cross_entropy, cross_entropy_grad, cross_entropy_per_sample, log_softmax, softmax
from .layers import (BatchNorm, Conv2d, Dense, Flatten, Layer, MaxPool2d, ParallelQuantumDense, Quanv2d,
                     ReLU)
from .models import Model, ModelSpec, ParamTable, Variant, build_model, count_parameters
from .optim import SGD, Adam, OptimizerConfig, make_optimizer

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "Dense", "Flatten", "Layer", "MaxPool2d", "Model", "ModelSpec",
    "OptimizerConfig", "ParallelQuantumDense", "ParamTable", "Quanv2d", "ReLU", "SGD", "Variant",
    "build_model", "count_parameters", "cross_entropy", "cross_entropy_grad", "cross_entropy_per_sample",
    "log_softmax", "make_optimizer", "softmax",
]
