import numpy as np
import pytest

from pavekit.checkpoint import CheckpointError, load_arrays, save_arrays
from pavekit.nn import Tensor
from pavekit.optim import AdamState, SgdState, adam_step, sgd_step, zero_grads


def param(value, grad=None):
    t = Tensor(np.array(value, np.float32), requires_grad=True)
    if grad is not None:
        t.grad = np.array(grad, np.float32)
    return t


class TestSgd:
    def test_plain_step(self):
        p = param([3.0], grad=[6.0])
        sgd_step({"w": p}, SgdState(), lr=0.1, momentum=0.0)
        assert p.data[0] == pytest.approx(2.4)

    def test_momentum_accumulates(self):
        p = param([0.0], grad=[1.0])
        state = SgdState()
        sgd_step({"w": p}, state, lr=1.0, momentum=0.5)
        assert p.data[0] == pytest.approx(-1.0)
        p.grad = np.array([1.0], np.float32)
        sgd_step({"w": p}, state, lr=1.0, momentum=0.5)
        # v = 0.5 * 1 + 1 = 1.5
        assert p.data[0] == pytest.approx(-2.5)

    def test_none_grad_leaves_param(self):
        p = param([5.0])
        sgd_step({"w": p}, SgdState(), lr=0.1, momentum=0.9)
        assert p.data[0] == 5.0

    def test_zero_grad_leaves_param(self):
        p = param([5.0], grad=[0.0])
        sgd_step({"w": p}, SgdState(), lr=0.1)
        assert p.data[0] == 5.0


class TestAdam:
    def test_first_step_hand_computed(self):
        # g=1: m=0.1, v=0.001, m_hat=1, v_hat=1 -> theta -= lr/(1+eps)
        p = param([0.5], grad=[1.0])
        adam_step({"w": p}, AdamState(), lr=0.01)
        assert p.data[0] == pytest.approx(0.5 - 0.01 / (1.0 + 1e-8), abs=1e-7)

    def test_zero_grad_keeps_param(self):
        p = param([2.0], grad=[0.0])
        adam_step({"w": p}, AdamState(), lr=0.1)
        assert p.data[0] == 2.0

    def test_sign_magnitude_first_step(self):
        # first step moves by ~lr regardless of gradient magnitude
        for g in (0.001, 1.0, 1000.0):
            p = param([0.0], grad=[g])
            adam_step({"w": p}, AdamState(), lr=0.05)
            assert p.data[0] == pytest.approx(-0.05, rel=1e-4)

    def test_state_persists_across_steps(self):
        p = param([0.0], grad=[1.0])
        state = AdamState()
        adam_step({"w": p}, state, lr=0.01)
        first = p.data[0].item()
        p.grad = np.array([1.0], np.float32)
        adam_step({"w": p}, state, lr=0.01)
        assert state.t == 2
        assert p.data[0] < first

    def test_zero_grads_helper(self):
        p = param([1.0], grad=[1.0])
        zero_grads({"w": p})
        assert p.grad is None


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "encoder.stem.w": rng.standard_normal((4, 1, 3, 3)).astype(np.float32),
            "head/bias": rng.standard_normal(7).astype(np.float32),
            "scalar": np.float32(3.25).reshape(()),
            "unicode-name-é": rng.standard_normal((2, 2)).astype(np.float32),
        }
        path = tmp_path / "model.bin"
        save_arrays(arrays, path)
        loaded = load_arrays(path)
        assert set(loaded) == set(arrays)
        for name, arr in arrays.items():
            assert loaded[name].dtype == np.float32
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == np.asarray(arr).tobytes()

    def test_double_roundtrip_identical_bytes(self, tmp_path):
        arrays = {"a": np.arange(12, dtype=np.float32).reshape(3, 4)}
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_arrays(arrays, p1)
        save_arrays(load_arrays(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_arrays(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "trunc.bin"
        save_arrays({"a": np.ones(10, np.float32)}, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(CheckpointError):
            load_arrays(path)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "h.bin"
        save_arrays({"ab": np.zeros((2, 3), np.float32)}, path)
        blob = path.read_bytes()
        assert blob[:4] == b"I2PC"
        assert blob[4:6] == (1).to_bytes(2, "little")
        assert blob[6:10] == (1).to_bytes(4, "little")
        assert blob[10:12] == (2).to_bytes(2, "little")  # name length
        assert blob[12:14] == b"ab"
        assert blob[14] == 2  # rank
