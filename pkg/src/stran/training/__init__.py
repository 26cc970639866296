"""Objective, optimizer, schedule and training loop."""
from .config import PRESETS, ConfigError, TrainConfig, TrainSchedule, format_config, load_config, parse_config
from .data import DatasetError, SampleTriple, collate, load_triples
from .extractors import FeatureExtractor
from .losses import (
    LossWeights,
    discriminator,
    gradient_penalty,
    init_discriminator,
    loss_adv,
    loss_d,
    loss_per,
    loss_rec,
    loss_tex,
    total_loss,
)
from .loop import StepReport, Trainer, TrainingError, load_generator, train_loop
from .optim import Adam
