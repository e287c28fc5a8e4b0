import json

import numpy as np
import pandas as pd
import pytest

from src.exceptions import ModelSpecError
from src.model_core import simulate_dataset
from src.model_io import (attach_observations, load_model, load_observations, load_toenail,
                          save_model, save_observations, spec_from_dict, spec_to_dict)
from src.templates import ModelTemplates


def test_model_json_round_trip(tmp_path):
    spec = ModelTemplates().build("model08", {"clusters": 5}).fit_spec
    path = tmp_path / "model.json"
    save_model(spec, str(path))
    loaded = load_model(str(path))
    assert loaded.n_latent == spec.n_latent
    assert loaded.hyper_names == spec.hyper_names
    assert loaded.hyper_priors == spec.hyper_priors
    np.testing.assert_array_equal(loaded.design_matrix.toarray(), spec.design_matrix.toarray())
    np.testing.assert_array_equal(loaded.trials, spec.trials)
    np.testing.assert_allclose(loaded.initial_hyper, spec.initial_hyper)


def test_declared_fixed_index_set_must_match():
    data = spec_to_dict(ModelTemplates().build("minimal", {"n": 4}).fit_spec)
    data["fixed_index_set"] = [0, 1]
    with pytest.raises(ModelSpecError):
        spec_from_dict(data)


def test_malformed_descriptions_rejected(tmp_path):
    with pytest.raises(ModelSpecError):
        spec_from_dict({"blocks": []})
    data = spec_to_dict(ModelTemplates().build("minimal", {"n": 4}).fit_spec)
    data["design"] = [[0, 0]]
    with pytest.raises(ModelSpecError):
        spec_from_dict(data)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ModelSpecError):
        load_model(str(bad))


def test_observations_round_trip(tmp_path):
    instance = ModelTemplates().build("model07", {"clusters": 4, "m": 3})
    y = simulate_dataset(instance.simulate_spec, instance.truth, 9)
    path = tmp_path / "obs.csv"
    save_observations(str(path), y, instance.fit_spec.trials)
    loaded, trials = load_observations(str(path))
    np.testing.assert_array_equal(loaded, y)
    np.testing.assert_array_equal(trials, instance.fit_spec.trials)
    spec = attach_observations(instance.fit_spec, str(path))
    np.testing.assert_array_equal(spec.y, y)


def test_observation_numbering_checked(tmp_path):
    path = tmp_path / "obs.csv"
    pd.DataFrame({"obs": [0, 2], "y": [1, 0]}).to_csv(path, index=False)
    with pytest.raises(ModelSpecError):
        load_observations(str(path))
    pd.DataFrame({"obs": [0, 1]}).to_csv(path, index=False)
    with pytest.raises(ModelSpecError):
        load_observations(str(path))


def test_load_toenail_csv(tmp_path):
    rows = []
    for subject in (7, 3):
        for visit, month in enumerate((0.0, 1.0, 2.0)):
            rows.append({"id": subject, "visit": visit, "time": month,
                         "treatment": float(subject == 7), "outcome": float(visit == 0)})
    path = tmp_path / "toenail.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    spec = load_toenail(str(path))
    assert spec.n_obs == 6
    assert spec.blocks[1].size == 2
    assert spec.latent_names[:4] == ("alpha0", "alpha1", "alpha2", "alpha3")
    # subjects are ordered by id: subject 3 is the first random effect
    A = spec.design_matrix.toarray()
    np.testing.assert_array_equal(A[:3, 4], np.ones(3))
    np.testing.assert_array_equal(A[:3, 1], np.zeros(3))
    pd.DataFrame(rows).drop(columns="visit").to_csv(path, index=False)
    with pytest.raises(ModelSpecError):
        load_toenail(str(path))


def test_schema_example_in_json(tmp_path):
    spec = ModelTemplates().build("minimal", {"n": 3}).fit_spec.with_data([1.0, 0.0, 1.0])
    path = tmp_path / "m.json"
    save_model(spec, str(path), include_data=True)
    data = json.loads(path.read_text())
    assert data["y"] == [1.0, 0.0, 1.0]
    assert data["likelihood"] == {"kind": "bernoulli", "precision": 1.0}
    assert load_model(str(path)).y.tolist() == [1.0, 0.0, 1.0]
