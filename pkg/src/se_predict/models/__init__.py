from .gbdt import GbdtModel, GbdtParams, predict_gbdt, train_gbdt
from .io import dumps_model, load_model, loads_model, save_model
from .linear import LinearModel, predict_linear, train_linear
from .metrics import mae, mape
from .mlp import MlpConfig, MlpModel, predict_mlp, train_mlp

__all__ = [
    "GbdtModel", "GbdtParams", "LinearModel", "MlpConfig", "MlpModel",
    "dumps_model", "loads_model", "load_model", "save_model", "mae", "mape",
    "predict_gbdt", "predict_linear", "predict_mlp",
    "train_gbdt", "train_linear", "train_mlp",
]
