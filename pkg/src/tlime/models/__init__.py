from .external import ExternalPredictor
from .forest import RandomForestModel, load_model, rf_predict_proba, rf_train
from .predictor import CallablePredictor, ConstantPredictor, Predictor, checked_predict

__all__ = [
    "CallablePredictor",
    "ConstantPredictor",
    "ExternalPredictor",
    "Predictor",
    "RandomForestModel",
    "checked_predict",
    "load_model",
    "rf_predict_proba",
    "rf_train",
]
