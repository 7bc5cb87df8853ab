"""scikit-learn compatible wrapper around the burned-area segmentation network."""
from __future__ import annotations

import contextlib
import copy
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..errors import DivergedTraining, ShapeError
from ..metrics import score_pair
from ..validation import check_label_batch, check_patch_batch, check_probability_map
from .config import FULL_WIDTH, ModelConfig
from .network import BurnSegNet, segmentation_loss

log = logging.getLogger(__name__)


@contextlib.contextmanager
def torch_threads(n):
    previous = torch.get_num_threads()
    torch.set_num_threads(max(int(n), 1))
    try:
        yield
    finally:
        torch.set_num_threads(previous)


class BurnedAreaSegmenter(BaseEstimator):
    """Two-class (burned / not burned) segmenter for 3x128x128 composites.

    ``fit`` keeps the weights of the epoch with the best mean holdout IoU.
    If no holdout set is passed, ``holdout_fraction`` of the training patches
    is set aside for checkpoint selection.

    Parameters mirror :class:`~burnscan.segmodel.config.ModelConfig`;
    ``n_jobs`` caps the torch thread count (results are reproducible for a
    fixed seed and thread count).
    """

    def __init__(
        self,
        width=FULL_WIDTH,
        batch_size=16,
        learning_rate=1e-3,
        max_epochs=20,
        loss="combined",
        holdout_fraction=0.1,
        threshold=0.5,
        random_state=0,
        n_jobs=1,
        verbose=False,
    ):
        self.width = width
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.loss = loss
        self.holdout_fraction = holdout_fraction
        self.threshold = threshold
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.verbose = verbose

    # -- config bridging -----------------------------------------------------

    def get_config(self) -> ModelConfig:
        return ModelConfig(
            width=self.width,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            loss=self.loss,
            holdout_fraction=self.holdout_fraction,
            seed=self.random_state,
        ).validate()

    @classmethod
    def from_config(cls, config: ModelConfig, **kwargs):
        config.validate()
        return cls(
            width=config.width,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            max_epochs=config.max_epochs,
            loss=config.loss,
            holdout_fraction=config.holdout_fraction,
            random_state=config.seed,
            **kwargs,
        )

    def build(self):
        """Initialise an untrained network (deterministic under ``random_state``)."""
        config = self.get_config()
        torch.manual_seed(config.seed)
        self.network_ = BurnSegNet(config.in_channels, config.classes, config.width)
        self.network_.eval()
        self.history_ = []
        self.best_epoch_ = None
        return self

    # -- training ----------------------------------------------------------------

    def _split_holdout(self, X, y):
        n = len(X)
        n_hold = int(round(n * self.holdout_fraction))
        if n_hold == 0 or n_hold >= n:
            return X, y, X, y
        order = np.random.default_rng(self.random_state).permutation(n)
        hold, train = np.sort(order[:n_hold]), np.sort(order[n_hold:])
        return X[train], y[train], X[hold], y[hold]

    def fit(self, X, y, X_holdout=None, y_holdout=None):
        X = check_patch_batch(X)
        if len(X) == 0:
            raise ValueError("at least one training patch is required")
        y = check_label_batch(y, len(X))
        if X_holdout is None:
            X, y, X_holdout, y_holdout = self._split_holdout(X, y)
        else:
            X_holdout = check_patch_batch(X_holdout)
            y_holdout = check_label_batch(y_holdout, len(X_holdout))

        config = self.get_config()
        with torch_threads(self.n_jobs):
            self.build()
            net = self.network_
            optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
            gen = torch.Generator().manual_seed(config.seed)
            Xt, yt = torch.from_numpy(X), torch.from_numpy(y)
            best_iou, best_state = -np.inf, None
            for epoch in range(1, config.max_epochs + 1):
                net.train()
                order = torch.randperm(len(Xt), generator=gen)
                total = 0.0
                for start in range(0, len(order), config.batch_size):
                    idx = order[start : start + config.batch_size]
                    optimizer.zero_grad()
                    loss = segmentation_loss(net(Xt[idx]), yt[idx], config.loss)
                    if not torch.isfinite(loss):
                        raise DivergedTraining(f"non-finite loss at epoch {epoch}")
                    loss.backward()
                    optimizer.step()
                    total += float(loss.detach()) * len(idx)
                train_loss = total / len(Xt)
                val_iou = self._mean_iou(X_holdout, y_holdout)
                self.history_.append({"epoch": epoch, "train_loss": train_loss, "val_metric": val_iou})
                if self.verbose:
                    log.info("epoch %d loss %.4f holdout IoU %.4f", epoch, train_loss, val_iou)
                if val_iou > best_iou:
                    best_iou, self.best_epoch_ = val_iou, epoch
                    best_state = copy.deepcopy(net.state_dict())
            net.load_state_dict(best_state)
            net.eval()
        return self

    def _mean_iou(self, X, y):
        prob = self._forward(X)
        return float(np.mean([score_pair(p >= self.threshold, t).iou for p, t in zip(prob, y)]))

    # -- inference -----------------------------------------------------------

    def _forward(self, X):
        net = self.network_
        net.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(X), self.batch_size):
                logits = net(torch.from_numpy(X[start : start + self.batch_size]))
                out.append(torch.softmax(logits, dim=1)[:, 1].numpy())
        if not out:
            return np.zeros((0,) + X.shape[2:], dtype=np.float32)
        return np.concatenate(out).astype(np.float32)

    def predict_proba(self, X):
        """Burned-class probability per pixel, shaped ``(n, 128, 128)``."""
        check_is_fitted(self, "network_")
        X = check_patch_batch(X)
        with torch_threads(self.n_jobs):
            return self._forward(X)

    def predict(self, X):
        return binarize(self.predict_proba(X), self.threshold)

    def score(self, X, y):
        """Mean per-patch IoU at ``threshold``."""
        prob = self.predict_proba(X)
        y = check_label_batch(y, len(prob))
        return float(np.mean([score_pair(p >= self.threshold, t).iou for p, t in zip(prob, y)]))


def predict_patch(model, channels):
    """128x128 burned probability map for a single 3x128x128 composite window."""
    channels = np.asarray(channels)
    if channels.shape != (3, 128, 128):
        raise ShapeError(f"expected a 3x128x128 patch, got {channels.shape}")
    return model.predict_proba(channels[None])[0]


def binarize(prob, threshold=0.5):
    """1 where probability >= threshold."""
    prob = check_probability_map(prob)
    return (prob >= threshold).astype(np.uint8)
