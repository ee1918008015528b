import numpy as np
import pytest

from specnet import checkpoint
from specnet.errors import FormatError
from specnet.network import Model, model_forward, spec_lenet_mini


@pytest.fixture
def model():
    return Model.init(spec_lenet_mini(beta=0.75), seed=11)


def test_round_trip(model, tmp_path):
    path = tmp_path / "m.spnt"
    checkpoint.save(path, model, {"note": "hi"})
    back, meta = checkpoint.load(path)
    assert meta == {"note": "hi"}
    assert back.spec.describe() == model.spec.describe() and back.spec.beta == 0.75
    for name, arr in model.params.items():
        np.testing.assert_array_equal(back.params[name], arr)
    x = np.random.default_rng(0).standard_normal((2, 1, 12, 12))
    np.testing.assert_array_equal(model_forward(back, x)[0], model_forward(model, x)[0])


def test_bytes_are_stable(model):
    assert checkpoint.dumps(model) == checkpoint.dumps(model.copy())


def test_corruption_detected(model):
    blob = bytearray(checkpoint.dumps(model))
    blob[-20] ^= 0xFF
    with pytest.raises(FormatError):
        checkpoint.loads(bytes(blob))


def test_wrong_magic():
    with pytest.raises(FormatError):
        checkpoint.loads(b"NOPE" + bytes(20))
