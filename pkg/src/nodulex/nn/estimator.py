import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_binary_labels, check_patches
from ..seeding import sub_seed
from .network import ARCHITECTURES, build_network, canonical_arch, extract_cnn_features, predict_proba
from .training import TrainConfig, train


class CNNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Multi-channel 2-D CNN over ``(N, 5, H, W)`` patch batches.

    ``predict_proba`` uses the network's own softmax head; ``transform``
    returns the 200 penultimate activations used for feature fusion.
    ``checkpoint`` chooses which retained weights serve predictions:
    ``"best"`` (lowest held-out loss) or ``"final"``.
    """

    def __init__(self, arch="CNN21", epochs=300, batch_size=64, learning_rate=1e-3,
                 momentum=0.9, augment=True, checkpoint="best", random_state=0):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.augment = augment
        self.checkpoint = checkpoint
        self.random_state = random_state

    def _input_shape(self):
        return ARCHITECTURES[canonical_arch(self.arch)]

    def fit(self, X, y):
        X = check_patches(X, self._input_shape())
        y = check_binary_labels(y, len(X))
        seed = int(self.random_state)
        self.model_ = build_network(self.arch, seed=sub_seed(seed, "init"))
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            momentum=self.momentum, seed=seed, augment=self.augment,
        )
        self.checkpoints_ = train(self.model_, X, y, config)
        if self.checkpoint == "best" and self.checkpoints_.best:
            self.model_.set_weights(self.checkpoints_.best[0].weights)
        elif self.checkpoint not in ("best", "final"):
            raise ValueError(f"checkpoint must be 'best' or 'final', got {self.checkpoint!r}")
        else:
            self.model_.set_weights(self.checkpoints_.final.weights)
        self.classes_ = np.array([0, 1])
        self.history_ = self.checkpoints_.history
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_patches(X, self._input_shape())
        p = predict_proba(self.model_, X, self.batch_size)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_patches(X, self._input_shape())
        return extract_cnn_features(self.model_, X, self.batch_size)
