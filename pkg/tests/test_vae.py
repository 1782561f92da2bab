import numpy as np
import pytest

from invi.errors import ModelLoadError
from invi.vae import BlockCodec, load_vae

from conftest import make_block_frame


class TestBlockCodec:
    def test_shape_contract_512(self):
        codec = BlockCodec()
        latent = codec.encode(np.zeros((512, 512, 3)))
        assert latent.data.shape == (64, 64, 4)

    def test_shape_contract_reduces_each_dim_by_8(self):
        codec = BlockCodec()
        latent = codec.encode(np.zeros((96, 64, 3)))
        assert latent.data.shape == (12, 8, 4)
        assert codec.decode(latent).shape == (96, 64, 3)

    def test_round_trip_exact_on_block_images(self):
        rng = np.random.default_rng(0)
        codec = BlockCodec()
        img = make_block_frame(64, 64, rng)
        out = codec.decode(codec.encode(img))
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_black_image_gives_zero_latent(self):
        latent = BlockCodec().encode(np.zeros((64, 64, 3)))
        np.testing.assert_array_equal(latent.data, np.zeros((8, 8, 4)))

    def test_encode_is_linear(self):
        rng = np.random.default_rng(1)
        codec = BlockCodec()
        a = rng.uniform(0, 1, (32, 32, 3))
        b = rng.uniform(0, 1, (32, 32, 3))
        np.testing.assert_allclose(
            codec.encode(0.5 * a + 0.5 * b).data,
            0.5 * codec.encode(a).data + 0.5 * codec.encode(b).data,
            atol=1e-12)

    def test_dimension_violations_rejected(self):
        codec = BlockCodec()
        with pytest.raises(ValueError, match="divisible"):
            codec.encode(np.zeros((60, 64, 3)))
        with pytest.raises(ValueError):
            codec.encode(np.zeros((64, 64)))


class TestLoadVae:
    def test_toy_descriptor(self):
        assert isinstance(load_vae("toy:block"), BlockCodec)

    def test_missing_weights_raise(self, tmp_path):
        with pytest.raises(ModelLoadError, match="not found"):
            load_vae(str(tmp_path / "vae.safetensors"))
