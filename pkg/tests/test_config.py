import numpy as np
import pytest
from conftest import tiny_model

from covnat.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from covnat.config import RunConfig
from covnat.data import Vocabulary
from covnat.errors import ConfigurationError, DataError
from covnat.teacher import ATModel, TeacherConfig

VOCAB = Vocabulary(["<pad>", "<unk>", "<bos>", "<eos>"] + [f"w{i}" for i in range(8)])


def test_config_text_roundtrip():
    cfg = RunConfig(seed=7).with_overrides({"model.d_model": "32", "train.beta": "0.25",
                                            "disable_sca": "true"})
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.model.d_model == 32 and back.train.beta == 0.25 and back.disable_sca


def test_config_comments_and_blank_lines():
    cfg = RunConfig.from_text("# a run\n\nseed = 3   # trailing\nmodel.k_train = 4\n")
    assert cfg.seed == 3 and cfg.model.k_train == 4


@pytest.mark.parametrize("text", ["nonsense", "model.nope = 1", "seed = x", "model.d_model = 30",
                                  "model.vocab_size = 50", "weird.key = 1", "disable_tcir = maybe"])
def test_config_errors(text):
    with pytest.raises(ConfigurationError):
        RunConfig.from_text(text)


def test_ablation_switches_resolve():
    cfg = RunConfig(disable_tcir=True, disable_sca=True, seed=5)
    assert cfg.model_config(40).use_tcir is False
    assert cfg.train_config().beta == 0.0 and cfg.train_config().seed == 5
    full = RunConfig(seed=5)
    assert full.model_config(40).use_tcir and full.train_config().beta == 0.5


def test_checkpoint_roundtrip(tmp_path):
    model = tiny_model(seed=3)
    model.top.lam.data[:] = 1.75
    save_checkpoint(model, VOCAB, tmp_path / "ck", {"best_step": "12"})
    back, vocab, header = load_checkpoint(tmp_path / "ck")
    assert vocab == VOCAB and header["meta.best_step"] == "12" and float(header["lambda"]) == 1.75
    for name, p in model.named_parameters().items():
        assert np.array_equal(back.named_parameters()[name].data, p.data)
    assert back.config == model.config


def test_teacher_checkpoint_roundtrip(tmp_path):
    teacher = ATModel(TeacherConfig(vocab_size=12, d_model=8, d_hidden=16, n_heads=2, max_len=16), seed=1)
    save_checkpoint(teacher, VOCAB, tmp_path / "t")
    back, _, _ = load_checkpoint(tmp_path / "t", expect="teacher")
    assert isinstance(back, ATModel)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "t", expect="nat")


def test_checkpoint_manifest_lists_shapes(tmp_path):
    save_checkpoint(tiny_model(), VOCAB, tmp_path / "ck")
    _, params = read_manifest(tmp_path / "ck")
    shapes = {name: shape for name, shape, _ in params}
    assert shapes["embed.weight"] == (12, 8) and shapes["decoder.coverage.lambda"] == (1,)
    payload = (tmp_path / "ck" / "params.bin").read_bytes()
    assert len(payload) == 8 * sum(int(np.prod(s)) for s in shapes.values())


def test_checkpoint_shape_mismatch(tmp_path):
    save_checkpoint(tiny_model(), VOCAB, tmp_path / "ck")
    manifest = tmp_path / "ck" / "manifest.txt"
    manifest.write_text(manifest.read_text().replace("param embed.weight 12x8", "param embed.weight 8x12"))
    with pytest.raises(DataError, match="shape"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_corrupt_payload(tmp_path):
    save_checkpoint(tiny_model(), VOCAB, tmp_path / "ck")
    blob = tmp_path / "ck" / "params.bin"
    data = bytearray(blob.read_bytes())
    data[10] ^= 0xFF
    blob.write_bytes(bytes(data))
    with pytest.raises(DataError, match="checksum"):
        load_checkpoint(tmp_path / "ck")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nowhere")
