"""Calibration-aware training losses and evaluation tools for speaker verification."""

from .losses import cllr_ce_loss, cllr_loss, ce_loss, get_loss
from .metrics import ScoreSet, DcfParams, eer, min_dcf, cllr_metric, evaluate, mcnemar

__version__ = "0.1.0"
