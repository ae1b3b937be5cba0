from .layers import (Conv1d, Dense, GlobalAvgPool, MaxPool1d, ReLU, Reshape, Sequential,
                     SoftmaxCrossEntropy, cross_entropy_loss, layer_forward_backward,
                     one_hot, softmax)
from .metrics import confusion_matrix, evaluate, macro_f1
from .model import DualTaskModel, ModelSpec, encode_iq, load_parameters, predict, save_parameters
from .train import TrainConfig, TrainResult, cosine_lr, train_dual, train_single
