"""Spiking lottery tickets: sparse subnetworks found by score search in random spiking networks."""
from .errors import (ConfigError, ContractError, DegenerateMaskError, DimensionError, FormatError,
                     GradientError, NumericError, SLTError, TicketIndexError)
from .tensor import Tensor, backward, no_grad
from .snn import LifParams, lif_run
from .layers import MaskedLayer
from .models import SpikeformerToy, SpikingConvNet, SpikingMLP

__version__ = "0.1.0"
