from .estimator import CNNClassifier
from .network import ARCHITECTURES, build_network, extract_cnn_features, forward, gradients, predict_proba

__all__ = ["CNNClassifier", "ARCHITECTURES", "build_network", "extract_cnn_features", "forward", "gradients", "predict_proba"]
