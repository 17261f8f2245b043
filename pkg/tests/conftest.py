import numpy as np
import pytest
import torch

from diffcodec.autoencoder import AutoencoderConfig
from diffcodec.model import CodecModel, ModelConfig
from diffcodec.toydata import write_corpus
from diffcodec.training import TrainConfig, fit
from diffcodec.unet import UNetConfig

_acceptance_reports = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        verdict = "PASS" if report.passed else "FAIL"
        _acceptance_reports.append((name, verdict, report.duration))
    elif report.when == "setup" and report.skipped:
        _acceptance_reports.append((name, "SKIP", 0.0))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_reports:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, duration in _acceptance_reports:
        terminalreporter.write_line(f"[{verdict}] {name} ({duration:.1f}s)")


def tiny_model_config(codebook_size=16, seed=0, **kw):
    return ModelConfig(
        autoencoder=AutoencoderConfig(downsample_factor=8, channel_width=16,
                                      latent_dim=4, num_res_blocks=1,
                                      seed=seed),
        unet=UNetConfig(base_width=16, num_scales=2, time_embed_dim=16,
                        seed=seed),
        codebook_size=codebook_size,
        seed=seed,
        **kw,
    )


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, count=28, size=96, seed=100)
    return root


@pytest.fixture(scope="session")
def eval_corpus_dir(tmp_path_factory):
    """Larger images for metrics that need >= 160 px."""
    root = tmp_path_factory.mktemp("eval_corpus")
    write_corpus(root, count=6, size=192, seed=900)
    return root


@pytest.fixture(scope="session")
def tiny_untrained_model():
    model = CodecModel(tiny_model_config())
    model.eval()
    return model


@pytest.fixture(scope="session")
def trained_tiny(corpus_dir, tmp_path_factory):
    """A short real training run shared by integration tests."""
    out = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    log = out.with_suffix(".log.csv")
    config = TrainConfig(batch_size=4, learning_rate=2e-4, iterations=300,
                         crop_size=48, eta_small=0.05, eta_large=0.9,
                         seed=0, checkpoint_every=150)
    model = fit(corpus_dir, config, tiny_model_config(), out, log_path=log)
    return model, out, config
