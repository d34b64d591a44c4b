from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_layer
from .layers import LayerSpec, ShapeError, StateError, conv_out
from .model import Model
from .optim import Adam
from .train import ArraySet, DivergenceError, TrainConfig, TrainResult, train, write_history
