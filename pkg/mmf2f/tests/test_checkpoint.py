import json
import os

import numpy as np
import pytest

from ..turntaking.bundle import init_bundle, predict_distribution
from ..turntaking.checkpoint import (FORMAT_VERSION, bundle_to_document, checkpoint_id,
                                     load_checkpoint, save_checkpoint)
from ..turntaking.config import TrainConfig
from ..turntaking.models import DataError, Modality, ModalityMask, SchemaVersionError
from ..turntaking.training import train_joint


class TestCheckpoint:

    def test_round_trip_restores_every_array(self, tmp_path, tiny_bundle):
        path = str(tmp_path / "model.json")
        save_checkpoint(tiny_bundle, path)
        loaded = load_checkpoint(path)
        assert loaded.config == tiny_bundle.config
        assert loaded.vocabulary.tokens == tiny_bundle.vocabulary.tokens
        original = tiny_bundle.arrays()
        restored = loaded.arrays()
        assert set(original) == set(restored)
        for name, value in original.items():
            assert np.array_equal(restored[name], value)

    def test_predictions_survive_reload(self, tmp_path, tiny_bundle, tiny_sample):
        trained = train_joint([tiny_sample], tiny_bundle, TrainConfig(epochs=2, from_scratch=True)).bundle
        path = str(tmp_path / "model.json")
        save_checkpoint(trained, path)
        loaded = load_checkpoint(path)
        assert loaded.stages == trained.stages
        for mask in ModalityMask.all_nonempty():
            a = predict_distribution(trained, tiny_sample, mask).as_array()
            b = predict_distribution(loaded, tiny_sample, mask).as_array()
            assert np.array_equal(a, b)

    def test_saving_twice_is_byte_identical(self, tmp_path, tiny_bundle):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(tiny_bundle, str(a), TrainConfig())
        save_checkpoint(load_checkpoint(str(a)), str(b), TrainConfig())
        assert a.read_bytes() == b.read_bytes()

    def test_no_temporary_file_left(self, tmp_path, tiny_bundle):
        save_checkpoint(tiny_bundle, str(tmp_path / "model.json"))
        assert os.listdir(tmp_path) == ["model.json"]

    def test_training_settings_are_recorded(self, tiny_bundle):
        document = bundle_to_document(tiny_bundle, TrainConfig(learning_rate=1e-3))
        assert document["format_version"] == FORMAT_VERSION
        assert document["adam"]["learning_rate"] == 1e-3
        assert document["train_config"]["modalities"] == "TAV"

    def test_unsupported_version(self, tmp_path, tiny_bundle):
        document = bundle_to_document(tiny_bundle)
        document["format_version"] = FORMAT_VERSION + 1
        path = tmp_path / "model.json"
        path.write_text(json.dumps(document))
        with pytest.raises(SchemaVersionError):
            load_checkpoint(str(path))

    def test_missing_field(self, tmp_path, tiny_bundle):
        document = bundle_to_document(tiny_bundle)
        del document["fusion"]
        path = tmp_path / "model.json"
        path.write_text(json.dumps(document))
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_not_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("not json")
        with pytest.raises(DataError):
            load_checkpoint(str(path))

    def test_precomputed_encoder_round_trip(self, tmp_path, tiny_config, tiny_vocab):
        bundle = init_bundle(tiny_config, tiny_vocab, seed=1, precomputed=[Modality.AUDIO])
        path = str(tmp_path / "model.json")
        save_checkpoint(bundle, path)
        loaded = load_checkpoint(path)
        assert loaded.encoders[Modality.AUDIO].kind == "precomputed"
        assert loaded.encoders[Modality.AUDIO].W_in is None

    def test_checkpoint_id(self):
        assert checkpoint_id("/runs/joint_p01.json") == "joint_p01"
