import pytest
import torch

from diffcodec.autoencoder import AutoencoderConfig, build_autoencoder
from diffcodec.errors import ConfigError, ShapeError


def small_config(**kw):
    defaults = dict(downsample_factor=8, channel_width=16, latent_dim=4,
                    num_res_blocks=1, seed=0)
    defaults.update(kw)
    return AutoencoderConfig(**defaults)


class TestBuild:
    def test_identical_seeds_give_identical_parameters(self):
        e1, d1 = build_autoencoder(small_config())
        e2, d2 = build_autoencoder(small_config())
        for p1, p2 in zip(e1.parameters(), e2.parameters()):
            assert torch.equal(p1, p2)
        for p1, p2 in zip(d1.parameters(), d2.parameters()):
            assert torch.equal(p1, p2)

    def test_different_seeds_differ(self):
        e1, _ = build_autoencoder(small_config(seed=0))
        e2, _ = build_autoencoder(small_config(seed=1))
        assert any(not torch.equal(p1, p2)
                   for p1, p2 in zip(e1.parameters(), e2.parameters()))

    def test_invalid_factor_rejected(self):
        with pytest.raises(ConfigError):
            AutoencoderConfig(downsample_factor=6)

    def test_invalid_dim_rejected(self):
        with pytest.raises(ConfigError):
            AutoencoderConfig(latent_dim=0)


class TestShapes:
    @pytest.mark.parametrize("factor,expected", [(8, 32), (16, 16)])
    def test_latent_shape(self, factor, expected):
        cfg = AutoencoderConfig(downsample_factor=factor, channel_width=16,
                                latent_dim=4, num_res_blocks=1, seed=0)
        encoder, _ = build_autoencoder(cfg)
        x = torch.rand(3, 256, 256, generator=torch.Generator().manual_seed(0))
        latent = encoder(x)
        assert latent.shape == (4, expected, expected)

    def test_decode_shape(self):
        cfg = small_config(downsample_factor=16)
        _, decoder = build_autoencoder(cfg)
        image = decoder.decode(torch.randn(4, 16, 16))
        assert image.shape == (3, 256, 256)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_non_divisible_size_rejected(self):
        cfg = AutoencoderConfig(downsample_factor=16, channel_width=16,
                                latent_dim=4, num_res_blocks=1)
        encoder, _ = build_autoencoder(cfg)
        with pytest.raises(ShapeError):
            encoder(torch.rand(3, 250, 256))

    def test_wrong_channel_count_rejected(self):
        _, decoder = build_autoencoder(small_config())
        with pytest.raises(ShapeError):
            decoder(torch.randn(5, 8, 8))

    def test_round_trip_shape_contract(self):
        encoder, decoder = build_autoencoder(small_config())
        x = torch.rand(3, 64, 96, generator=torch.Generator().manual_seed(1))
        assert decoder.decode(encoder(x)).shape == x.shape


class TestDeterminism:
    def test_encode_deterministic(self):
        encoder, _ = build_autoencoder(small_config())
        x = torch.zeros(3, 64, 64)
        a = encoder(x)
        b = encoder(x)
        assert torch.equal(a, b)
        assert torch.isfinite(a).all()

    def test_round_trip_finite_and_deterministic(self):
        encoder, decoder = build_autoencoder(small_config())
        x = torch.rand(3, 64, 64, generator=torch.Generator().manual_seed(2))
        a = decoder.decode(encoder(x))
        b = decoder.decode(encoder(x))
        assert torch.equal(a, b)
        assert torch.isfinite(a).all()

    def test_batched_matches_looped(self):
        encoder, _ = build_autoencoder(small_config())
        x = torch.rand(2, 3, 64, 64, generator=torch.Generator().manual_seed(3))
        batched = encoder(x)
        for i in range(2):
            single = encoder(x[i])
            assert torch.allclose(batched[i], single, atol=1e-6)

    def test_no_nan_inf_for_unit_range_inputs(self):
        encoder, decoder = build_autoencoder(small_config())
        for value in (0.0, 0.5, 1.0):
            out = decoder(encoder(torch.full((3, 64, 64), value)))
            assert torch.isfinite(out).all()
