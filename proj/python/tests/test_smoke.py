import math

import pytest

import nicreg


def test_entropy_of_uniform_pmf():
    assert nicreg.entropy([0.25] * 4) == pytest.approx(2.0, abs=1e-15)


def test_entropy_rejects_unnormalized_pmf():
    with pytest.raises(nicreg.NicregError):
        nicreg.entropy([0.5, 0.6])


def test_interval_rate_of_standard_normal_at_zero():
    expected = -math.log2(math.erf(0.5 / math.sqrt(2.0)))
    assert nicreg.interval_rate_bits(0.0, 0.0, 1.0) == pytest.approx(expected, abs=1e-14)
    assert nicreg.gaussian_interval_mass(0.0, 0.0, 1.0) == pytest.approx(2.0 ** -expected)


def test_bd_rate_of_identical_and_scaled_curves():
    rate = [0.5, 1.0, 1.5, 2.0]
    quality = [20.0, 24.0, 27.0, 29.0]
    assert nicreg.bd_rate(rate, quality, rate, quality) == pytest.approx(0.0, abs=1e-12)
    cheaper = [0.9 * r for r in rate]
    assert nicreg.bd_rate(rate, quality, cheaper, quality) == pytest.approx(-10.0, abs=1e-9)


def test_verify_identities_passes_on_random_codecs():
    entries = nicreg.verify_identities(count=20, seed=3)
    assert len(entries) == 40
    assert {e["kind"] for e in entries} == {"direct", "transform"}
    assert all(e["pass"] for e in entries)


def test_train_and_probe_round_trip(tmp_path):
    config = {
        "lambda": [0.0067],
        "alpha": [0.0, 0.1],
        "seed": [1],
        "steps": 20,
        "batch_size": 16,
        "eval_every": 10,
        "dataset_size": 400,
    }
    runs = nicreg.train(config, tmp_path)
    assert [r["alpha"] for r in runs] == [0.0, 0.1]
    assert all(r["status"] == "completed" for r in runs)
    assert [row["step"] for row in runs[0]["rows"]] == [0, 10, 20]
    assert runs[0]["rows"][-1]["reg_bits"] is None
    assert runs[1]["rows"][-1]["reg_bits"] is not None
    assert nicreg.train(config, tmp_path) == runs

    report = nicreg.identity_probe(runs[1]["checkpoint"], points=8, bins=8)
    assert report["pass"] is True
