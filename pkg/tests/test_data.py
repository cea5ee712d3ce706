import math

import numpy as np
import pytest

from coteach.data import (
    DOMAIN_SOURCE,
    DOMAIN_TARGET,
    SPLIT_TEST,
    SPLIT_TRAIN,
    DomainShiftConfig,
    bayes_oracle_accuracy,
    features_matrix,
    generate_domain_pair,
    load_dataset,
    save_dataset,
)


def small_config(**overrides) -> DomainShiftConfig:
    base = dict(
        num_classes=3,
        dim=2,
        cluster_separation=2.0,
        rotation_angle=math.radians(40),
        noise_sigma=0.5,
        ambiguity_rate=0.1,
        n_s=60,
        n_t=60,
        n_test=30,
        seed=7,
    )
    base.update(overrides)
    return DomainShiftConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="ambiguity_rate"):
        small_config(ambiguity_rate=0.5)
    with pytest.raises(ValueError, match="num_classes"):
        small_config(num_classes=1)
    with pytest.raises(ValueError, match="n_test"):
        small_config(num_classes=8, n_test=10)
    with pytest.raises(ValueError, match="translation"):
        small_config(translation=(1.0, 2.0, 3.0))


def test_generation_shapes_labels_and_balance():
    ds = generate_domain_pair(small_config())
    assert len(ds.source_train) == 60
    assert len(ds.target_train) == 60
    assert len(ds.source_test) == len(ds.target_test) == 30
    assert all(s.label is not None for s in ds.source_train)
    assert all(s.label is None for s in ds.target_train)
    assert all(s.label is not None for s in ds.source_test + ds.target_test)
    for subset in (ds.source_train, ds.source_test, ds.target_test):
        counts = np.bincount([s.label for s in subset], minlength=3)
        assert counts.max() - counts.min() <= 1
    assert {s.domain for s in ds.source_train} == {DOMAIN_SOURCE}
    assert {s.split for s in ds.target_test} == {SPLIT_TEST}


def test_generation_is_pure_function_of_config():
    cfg = small_config()
    assert generate_domain_pair(cfg) == generate_domain_pair(cfg)
    other = generate_domain_pair(small_config(seed=8))
    assert other != generate_domain_pair(cfg)


def test_subsets_are_disjoint():
    ds = generate_domain_pair(small_config())
    pools = [ds.source_train, ds.target_train, ds.source_test, ds.target_test]
    seen = set()
    for pool in pools:
        feats = {s.features for s in pool}
        assert not feats & seen
        seen |= feats


def test_zero_shift_means_same_law():
    cfg = small_config(rotation_angle=0.0, ambiguity_rate=0.0, n_test=400)
    ds = generate_domain_pair(cfg)
    mu_s = features_matrix(ds.source_test).mean(axis=0)
    mu_t = features_matrix(ds.target_test).mean(axis=0)
    # same generative law: sample means agree within a few standard errors
    assert np.abs(mu_s - mu_t).max() < 4.0 * cfg.cluster_separation / math.sqrt(400)


def test_ambiguous_minority_present_by_construction():
    cfg = small_config(ambiguity_rate=0.2, n_test=300, rotation_angle=math.radians(120))
    ds = generate_domain_pair(cfg)
    # target-law samples sit near rotated means; count source-test samples
    # closer to the rotated mean set than to the host mean set
    from coteach.data import _class_means

    means_s, means_t = _class_means(cfg)
    x = features_matrix(ds.source_test)
    d_s = ((x[:, None, :] - means_s[None]) ** 2).sum(axis=2).min(axis=1)
    d_t = ((x[:, None, :] - means_t[None]) ** 2).sum(axis=2).min(axis=1)
    n_ambiguous = int((d_t < d_s).sum())
    expect = cfg.ambiguity_rate * cfg.n_test
    sigma = math.sqrt(cfg.n_test * cfg.ambiguity_rate * (1 - cfg.ambiguity_rate))
    assert n_ambiguous >= math.floor(expect) - 3.0 * sigma


def test_bayes_oracle_degenerate_noise_is_perfect():
    cfg = small_config(noise_sigma=1e-6, ambiguity_rate=0.0)
    acc_s, acc_t = bayes_oracle_accuracy(generate_domain_pair(cfg))
    assert acc_s == 1.0 and acc_t == 1.0


def test_bayes_oracle_matches_closed_form_two_gaussians():
    # K=2, rho=0: antipodal means at distance 2*sep, accuracy = Phi(sep/sigma)
    cfg = DomainShiftConfig(
        num_classes=2, dim=2, cluster_separation=1.0, rotation_angle=0.0,
        noise_sigma=1.0, ambiguity_rate=0.0, n_s=100, n_t=100, n_test=20000, seed=3,
    )
    acc_s, acc_t = bayes_oracle_accuracy(generate_domain_pair(cfg))
    closed_form = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    assert abs(acc_s - closed_form) < 0.01
    assert abs(acc_t - closed_form) < 0.01


def test_bayes_oracle_high_separation_benchmark():
    cfg = DomainShiftConfig(
        num_classes=4, cluster_separation=2.0, noise_sigma=0.5,
        rotation_angle=math.radians(60), ambiguity_rate=0.0,
        n_s=100, n_t=100, n_test=4000, seed=1,
    )
    acc_s, acc_t = bayes_oracle_accuracy(generate_domain_pair(cfg))
    assert acc_s >= 0.95 and acc_t >= 0.95


def test_bayes_oracle_monotone_in_ambiguity():
    means = []
    for rho in (0.0, 0.1, 0.2):
        accs = []
        for seed in range(5):
            cfg = DomainShiftConfig(
                num_classes=4, cluster_separation=2.0, noise_sigma=0.5,
                rotation_angle=2.0, ambiguity_rate=rho,
                n_s=100, n_t=100, n_test=2000, seed=seed,
            )
            acc_s, acc_t = bayes_oracle_accuracy(generate_domain_pair(cfg))
            accs.append((acc_s + acc_t) / 2.0)
        means.append(np.mean(accs))
    assert means[0] >= means[1] >= means[2]


def test_bayes_oracle_requires_metadata():
    ds = generate_domain_pair(small_config())
    ds.generator_metadata = None
    with pytest.raises(ValueError, match="metadata"):
        bayes_oracle_accuracy(ds)


def test_save_load_round_trip(tmp_path):
    ds = generate_domain_pair(small_config())
    path = tmp_path / "pair.csv"
    save_dataset(ds, path)
    assert load_dataset(path) == ds


def test_save_is_byte_deterministic(tmp_path):
    cfg = small_config()
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset(generate_domain_pair(cfg), p1)
    save_dataset(generate_domain_pair(cfg), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_truncated_file(tmp_path):
    ds = generate_domain_pair(small_config())
    path = tmp_path / "pair.csv"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ValueError, match="truncated"):
        load_dataset(path)


def test_load_rejects_label_on_target_train(tmp_path):
    ds = generate_domain_pair(small_config())
    path = tmp_path / "pair.csv"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if parts[-2] == DOMAIN_TARGET and parts[-1] == SPLIT_TRAIN:
            parts[-3] = "1"
            lines[i] = ",".join(parts)
            break
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="target train"):
        load_dataset(path)


def test_load_rejects_malformed_record_with_index(tmp_path):
    ds = generate_domain_pair(small_config())
    path = tmp_path / "pair.csv"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    lines[4] = "not,a,valid,record,at,all,x"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="record 3"):
        load_dataset(path)


def test_load_without_metadata_tokens(tmp_path):
    # bare header: loads, but the Bayes oracle then refuses
    path = tmp_path / "bare.csv"
    path.write_text(
        "d=2 K=2\n"
        "0.0,1.0,0,source,train\n"
        "1.0,0.0,1,source,train\n"
        "0.5,0.5,,target,train\n"
        "0.1,0.9,0,source,test\n"
        "0.9,0.1,1,target,test\n"
    )
    ds = load_dataset(path)
    assert ds.generator_metadata is None
    assert len(ds.target_train) == 1
    with pytest.raises(ValueError):
        bayes_oracle_accuracy(ds)
