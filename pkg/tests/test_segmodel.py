import hashlib
import json
import struct

import numpy as np
import pytest
import torch
from sklearn.base import clone

from burnscan.errors import CorruptFile, DivergedTraining, InvalidConfig, ShapeError, VersionMismatch
from burnscan.segmodel import (
    BurnedAreaSegmenter, ModelConfig, binarize, build_model, export_weights, import_weights,
    predict_patch,
)
from burnscan.segmodel.network import BurnSegNet, segmentation_loss
from burnscan.segmodel.serialization import MAGIC

TINY = 4


def state_digest(net):
    h = hashlib.sha256()
    for name, t in net.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()


def toy_data(n, seed=0):
    rng = np.random.default_rng(seed)
    X = np.clip(rng.normal(0.3, 0.05, (n, 3, 128, 128)), 0, 1).astype(np.float32)
    y = np.zeros((n, 128, 128), np.uint8)
    for i in range(n):
        r, c = rng.integers(0, 96, 2)
        y[i, r : r + 32, c : c + 32] = 1
    X[:, 2] += 0.3 * y
    X[:, 0] -= 0.2 * y
    return np.clip(X, 0, 1), y


def test_same_seed_same_initialisation():
    a = BurnedAreaSegmenter(width=TINY, random_state=3).build()
    b = BurnedAreaSegmenter(width=TINY, random_state=3).build()
    c = BurnedAreaSegmenter(width=TINY, random_state=4).build()
    assert state_digest(a.network_) == state_digest(b.network_) != state_digest(c.network_)


def test_output_shape_and_range():
    model = BurnedAreaSegmenter(width=TINY).build()
    X, _ = toy_data(3)
    prob = model.predict_proba(X)
    assert prob.shape == (3, 128, 128) and prob.dtype == np.float32
    assert prob.min() >= 0 and prob.max() <= 1
    assert np.array_equal(model.predict(X), (prob >= 0.5).astype(np.uint8))
    assert np.array_equal(predict_patch(model, X[1]), prob[1])


def test_logits_shape_full_width():
    net = BurnSegNet(width=64).eval()
    with torch.no_grad():
        assert net(torch.zeros(1, 3, 128, 128)).shape == (1, 2, 128, 128)


@pytest.mark.parametrize("shape", [(3, 127, 128), (3, 128, 127), (4, 128, 128), (128, 128)])
def test_predict_patch_rejects_bad_shape(shape):
    model = BurnedAreaSegmenter(width=TINY).build()
    with pytest.raises(ShapeError):
        predict_patch(model, np.zeros(shape, np.float32))


def test_predict_rejects_out_of_range_input():
    model = BurnedAreaSegmenter(width=TINY).build()
    with pytest.raises(ValueError):
        model.predict_proba(np.full((1, 3, 128, 128), 1.5, np.float32))


def test_fit_requires_data():
    with pytest.raises(ValueError):
        BurnedAreaSegmenter(width=TINY, max_epochs=1).fit(np.zeros((0, 3, 128, 128)), np.zeros((0, 128, 128)))
    with pytest.raises(ShapeError):
        BurnedAreaSegmenter(width=TINY, max_epochs=1).fit(np.zeros((2, 3, 128, 128)), np.zeros((3, 128, 128)))


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        BurnedAreaSegmenter(width=TINY).predict(np.zeros((1, 3, 128, 128)))


@pytest.mark.parametrize("threshold, expected", [(0.5, [0, 1, 1, 1]), (0.0, [1, 1, 1, 1]), (1.0, [0, 0, 0, 1])])
def test_binarize_boundaries(threshold, expected):
    assert binarize(np.array([0.49, 0.5, 0.51, 1.0]), threshold).tolist() == expected


def test_binarize_rejects_invalid():
    with pytest.raises(ValueError):
        binarize(np.array([0.2, np.nan]))


def test_fit_is_deterministic_and_records_history():
    X, y = toy_data(6)
    kw = dict(width=TINY, max_epochs=2, batch_size=4, random_state=1)
    a = BurnedAreaSegmenter(**kw).fit(X[:4], y[:4], X[4:], y[4:])
    b = BurnedAreaSegmenter(**kw).fit(X[:4], y[:4], X[4:], y[4:])
    assert state_digest(a.network_) == state_digest(b.network_)
    assert [h["epoch"] for h in a.history_] == [1, 2] and a.history_ == b.history_
    assert a.best_epoch_ in (1, 2)
    best = max(h["val_metric"] for h in a.history_)
    assert a.score(X[4:], y[4:]) == pytest.approx(best)


def test_fit_carves_holdout_when_missing():
    X, y = toy_data(10)
    model = BurnedAreaSegmenter(width=TINY, max_epochs=1, batch_size=8).fit(X, y)
    assert len(model.history_) == 1


def test_divergence_detected():
    X, y = toy_data(2)
    with pytest.raises(DivergedTraining):
        BurnedAreaSegmenter(width=TINY, max_epochs=3, learning_rate=1e30).fit(X, y, X, y)


def test_export_import_round_trip(tmp_path):
    X, y = toy_data(4)
    model = BurnedAreaSegmenter(width=TINY, max_epochs=1, batch_size=4, threshold=0.4).fit(X, y, X, y)
    path = export_weights(model, tmp_path / "m.bsw")
    back = import_weights(path)
    assert back.get_params() == model.get_params()
    assert back.history_ == model.history_ and back.best_epoch_ == model.best_epoch_
    assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
    export_weights(back, tmp_path / "again.bsw")
    assert (tmp_path / "again.bsw").read_bytes() == path.read_bytes()


def test_import_truncated_or_foreign(tmp_path):
    path = export_weights(BurnedAreaSegmenter(width=TINY).build(), tmp_path / "m.bsw")
    raw = path.read_bytes()
    (tmp_path / "cut.bsw").write_bytes(raw[:-100])
    with pytest.raises(CorruptFile):
        import_weights(tmp_path / "cut.bsw")
    (tmp_path / "foreign.bsw").write_bytes(b"PK\x03\x04" + raw[4:])
    with pytest.raises(CorruptFile):
        import_weights(tmp_path / "foreign.bsw")
    with pytest.raises(CorruptFile):
        import_weights(tmp_path / "missing.bsw")


def test_import_version_mismatch(tmp_path):
    path = export_weights(BurnedAreaSegmenter(width=TINY).build(), tmp_path / "m.bsw")
    raw = path.read_bytes()
    pos = len(MAGIC)
    (n,) = struct.unpack("<Q", raw[pos : pos + 8])
    header = json.loads(raw[pos + 8 : pos + 8 + n])
    header["format_version"] = 99
    head = json.dumps(header).encode()
    (tmp_path / "v99.bsw").write_bytes(MAGIC + struct.pack("<Q", len(head)) + head + raw[pos + 8 + n :])
    with pytest.raises(VersionMismatch):
        import_weights(tmp_path / "v99.bsw")


def test_gradient_matches_finite_differences():
    # train mode: batch statistics keep deep gradients well above float64 roundoff
    torch.manual_seed(0)
    net = BurnSegNet(width=TINY).double().train()
    x = torch.rand(2, 3, 128, 128, dtype=torch.float64)
    target = (torch.rand(2, 128, 128) > 0.5).long()

    def loss_fn():
        return segmentation_loss(net(x), target, "combined")

    net.zero_grad()
    loss_fn().backward()
    params = [p for p in net.parameters() if p.requires_grad]
    rng = np.random.default_rng(0)
    eps, worst = 1e-6, 0.0
    for k in range(20):
        p = params[int(rng.integers(len(params)))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = float(p.grad[idx])
        with torch.no_grad():
            orig = float(p[idx])
            p[idx] = orig + eps
            up = float(loss_fn())
            p[idx] = orig - eps
            down = float(loss_fn())
            p[idx] = orig
        numeric = (up - down) / (2 * eps)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    assert worst <= 1e-3


@pytest.mark.parametrize("kind", ["cross-entropy", "dice", "combined"])
def test_loss_perfect_prediction_is_small(kind):
    target = torch.zeros(1, 8, 8, dtype=torch.long)
    target[0, :4] = 1
    logits = torch.stack([1 - target, target], 1).double() * 50
    wrong = torch.stack([target, 1 - target], 1).double() * 50
    assert float(segmentation_loss(logits, target, kind)) < 1e-3
    assert float(segmentation_loss(wrong, target, kind)) > 0.4


def test_sklearn_params_and_clone():
    model = BurnedAreaSegmenter(width=TINY, learning_rate=5e-4)
    params = model.get_params()
    assert params["width"] == TINY and params["learning_rate"] == 5e-4
    twin = clone(model)
    assert twin.get_params() == params and not hasattr(twin, "network_")
    model.set_params(max_epochs=3)
    assert model.get_config().max_epochs == 3


def test_config_validation_and_build_model():
    with pytest.raises(InvalidConfig):
        ModelConfig(encoder="vgg").validate()
    with pytest.raises(InvalidConfig):
        BurnedAreaSegmenter(learning_rate=-1).get_config()
    cfg = ModelConfig(width=TINY, seed=5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    model = build_model(cfg)
    assert model.random_state == 5 and hasattr(model, "network_")
