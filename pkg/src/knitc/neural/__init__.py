"""Numpy autodiff engine, the instruction-inference networks and their training loop."""
from .losses import ALL_SHIFTS, NO_SHIFT, alpha_mixed_loss, mil_cross_entropy, mil_loss
from .nets import Img2prog, Model, PatchDiscriminator, Refiner, load_model, save_model
from .tensor import ShapeMismatch, Tensor
from .train import BadInputSize, DivergedLoss, EmptyCorpus, TrainingConfig, decode, infer, train
