import numpy as np
import pytest

from peva import aggregate
from peva.errors import CapacityError, ConfigError
from peva.rng import Stream
from peva.store import container_bytes, load_dataset, load_manifest
from peva.synth import SynthConfig, _orthonormal_prototypes, _unit, generate, write_dataset
from peva.trainer import evaluate


def test_noiseless_aligned_is_perfect():
    cfg = SynthConfig(classes=5, views=4, dim=32, shots=2, test_per_class=10,
                      prompt_alignment=1.0, view_noise=0.0, degenerate_fraction=0.0,
                      seed=3)
    train_set, test_set, bank = generate(cfg)
    assert evaluate(test_set, bank, "zero_peva").accuracy == 1.0
    assert evaluate(train_set, bank, "zero_peva").accuracy == 1.0


def test_same_seed_byte_identical_containers():
    cfg = SynthConfig(classes=4, views=5, dim=16, shots=3, test_per_class=4,
                      degenerate_fraction=0.4, seed=11)
    a_train, a_test, a_bank = generate(cfg)
    b_train, b_test, b_bank = generate(cfg)
    assert container_bytes(a_train) == container_bytes(b_train)
    assert container_bytes(a_test) == container_bytes(b_test)
    assert container_bytes(a_bank) == container_bytes(b_bank)


def test_different_seed_differs():
    cfg_a = SynthConfig(classes=3, views=2, dim=16, shots=1, test_per_class=1, seed=1)
    cfg_b = SynthConfig(classes=3, views=2, dim=16, shots=1, test_per_class=1, seed=2)
    assert container_bytes(generate(cfg_a)[2]) != container_bytes(generate(cfg_b)[2])


def test_everything_unit_norm():
    cfg = SynthConfig(classes=4, views=3, dim=24, shots=2, test_per_class=2,
                      view_noise=0.7, degenerate_fraction=0.5, seed=4)
    train_set, test_set, bank = generate(cfg)
    for fs in (train_set, test_set):
        for rec in fs.shapes:
            assert np.abs(np.sqrt((rec.views ** 2).sum(axis=1)) - 1).max() < 1e-12
    assert np.abs(np.sqrt((bank.features ** 2).sum(axis=1)) - 1).max() < 1e-12


def test_prompt_alignment_cosine_is_exact():
    for rho in (0.0, 0.5, 0.9, 1.0):
        cfg = SynthConfig(classes=3, views=1, dim=16, shots=1, test_per_class=1,
                          prompt_alignment=rho, seed=6)
        stream = Stream(cfg.seed)
        protos = _orthonormal_prototypes(stream, 3, 16)
        _, _, bank = generate(cfg)
        cos = (bank.features * protos).sum(axis=1)
        assert np.abs(cos - rho).max() < 1e-12


def test_prototypes_orthonormal():
    protos = _orthonormal_prototypes(Stream(8), 6, 32)
    gram = protos @ protos.T
    assert np.abs(gram - np.eye(6)).max() < 1e-10


def test_capacity_error_when_dim_below_classes():
    with pytest.raises(CapacityError):
        generate(SynthConfig(classes=10, views=1, dim=8, shots=1, test_per_class=1))


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(classes=1).validate()
    with pytest.raises(ConfigError):
        SynthConfig(prompt_alignment=1.5).validate()
    with pytest.raises(ConfigError):
        SynthConfig(degenerate_fraction=1.0).validate()
    with pytest.raises(ConfigError):
        SynthConfig(view_noise=-0.1).validate()


def test_degenerate_views_score_lower():
    # sample well over 1000 views of each kind against one prompt bank
    cfg = SynthConfig(classes=10, views=8, dim=64, shots=16, test_per_class=20,
                      degenerate_fraction=0.0, view_noise=0.3, seed=9)
    stream = Stream(cfg.seed)
    protos = _orthonormal_prototypes(stream, cfg.classes, cfg.dim)
    _, _, bank = generate(cfg)

    sampler = Stream(123)
    inf_scores, deg_scores = [], []
    for i in range(1200):
        label = i % cfg.classes
        informative = _unit(protos[label] + cfg.view_noise * sampler.normals(cfg.dim))
        degenerate = _unit(sampler.normals(cfg.dim))
        s = aggregate.similarity_matrix(bank.features, np.vstack([informative, degenerate]))
        alpha = aggregate.discriminative_scores(s)
        inf_scores.append(alpha[0])
        deg_scores.append(alpha[1])
    assert np.mean(deg_scores) < np.mean(inf_scores)


def test_accuracy_non_increasing_in_noise():
    means = []
    for sigma in (0.0, 0.2, 0.4):
        accs = []
        for seed in range(10):
            cfg = SynthConfig(classes=6, views=4, dim=32, shots=1, test_per_class=10,
                              prompt_alignment=0.9, view_noise=sigma,
                              degenerate_fraction=0.5, seed=seed)
            _, test_set, bank = generate(cfg)
            accs.append(evaluate(test_set, bank, "zero_peva").accuracy)
        means.append(float(np.mean(accs)))
    assert means[0] >= means[1] >= means[2]


def test_write_dataset_round_trips_through_manifest(tmp_path):
    cfg = SynthConfig(classes=3, views=2, dim=16, shots=2, test_per_class=2, seed=14)
    manifest_path = write_dataset(cfg, tmp_path)
    manifest = load_manifest(manifest_path)
    features, bank = load_dataset(manifest, "test")
    assert len(features.shapes) == 6
    assert bank.categories == ["class00", "class01", "class02"]
    train_features, _ = load_dataset(manifest, "train")
    assert len(train_features.shapes) == 6
    assert bank.template
