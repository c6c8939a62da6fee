"""Gradient-guided annealing for multi-domain training on small differentiable models."""
from .data import (CompositeMinibatch, DomainDataset, GaussianToyConfig, GenerativeConfig,
                   leave_one_out_splits, make_gaussian_toy, make_generative, sample_composite)
from .errors import ConfigError, DomainError, GgaLabError, PreconditionError, ShapeError
from .harness import TrainConfig, domain_reliance, evaluate, run_protocol, sensitivity_sweep, train
from .metrics import GradReport, cosine, grad_report
from .model import ModelSpec, build_model, fd_gradient, forward, gradient, loss
from .optim import AnnealConfig, GgaLConfig, adam_step, gga_anneal, gga_l_step, sgd_step

__version__ = "0.1.0"
