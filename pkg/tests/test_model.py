import numpy as np
import pytest
from helpers import make_bank, tiny_config

from bpclip import autograd as ag
from bpclip.errors import ConfigurationError, InputError
from bpclip.gradcheck import check_gradients
from bpclip.model import ModelConfig, QualityModel
from bpclip.params import save_parameter_archive, load_parameter_archive


@pytest.fixture(scope="module")
def fr_model():
    cfg = tiny_config(mode="FR")
    return QualityModel(cfg, make_bank(d_text=cfg.d_text))


def rand_img(seed, n=1, size=64):
    return np.random.default_rng(seed).uniform(size=(n, 3, size, size)).astype(np.float32)


def test_forward_shapes_and_similarity_width(fr_model):
    out = fr_model(rand_img(0, 2), rand_img(1, 2))
    assert out["score"].shape == (2,)
    assert len(out["similarities"]) == 4
    assert all(s.shape == (2, 40) for s in out["similarities"])
    assert len(out["projected"]) == 4


def test_mode_input_contracts(fr_model):
    with pytest.raises(InputError):
        fr_model(rand_img(0))  # FR needs reference
    cfg = tiny_config(mode="NR")
    nr = QualityModel(cfg, make_bank(d_text=cfg.d_text))
    with pytest.raises(InputError):
        nr(rand_img(0), rand_img(1))  # NR forbids reference


def test_forward_deterministic_bitwise(fr_model):
    img, ref = rand_img(2), rand_img(3)
    with ag.no_grad():
        a = fr_model(img, ref)["score"].data.tobytes()
        b = fr_model(img, ref)["score"].data.tobytes()
    assert a == b


def test_same_seed_same_init():
    cfg = tiny_config(mode="NR")
    m1 = QualityModel(cfg, make_bank(d_text=cfg.d_text))
    m2 = QualityModel(cfg, make_bank(d_text=cfg.d_text))
    for (na, pa), (nb, pb) in zip(m1.named_parameters(), m2.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_parameter_set_round_trip(tmp_path, fr_model):
    ps = fr_model.parameter_set()
    save_parameter_archive(ps, tmp_path / "m.bpta")
    loaded = load_parameter_archive(tmp_path / "m.bpta")
    cfg = tiny_config(mode="FR")
    fresh = QualityModel(cfg, make_bank(d_text=cfg.d_text))
    fresh.load_parameter_set(loaded)
    img, ref = rand_img(4), rand_img(5)
    with ag.no_grad():
        np.testing.assert_array_equal(fresh(img, ref)["score"].data,
                                      fr_model(img, ref)["score"].data)


def test_frozen_names_survive_parameter_set():
    cfg = tiny_config(mode="FR")
    model = QualityModel(cfg, make_bank(d_text=cfg.d_text))
    frozen = model.freeze_norm_layers()
    assert frozen and all(".norm." in n for n in frozen)
    ps = model.parameter_set()
    assert set(frozen) == ps.frozen
    fresh = QualityModel(cfg, make_bank(d_text=cfg.d_text))
    fresh.load_parameter_set(ps)
    for name, p in fresh.named_parameters():
        assert p.requires_grad == (name not in ps.frozen)


def test_bank_width_mismatch_rejected():
    cfg = tiny_config(mode="NR", d_text=64)
    with pytest.raises(ConfigurationError):
        QualityModel(cfg, make_bank(d_text=32))


def test_text_head_without_bank_rejected():
    cfg = tiny_config(mode="NR")
    model = QualityModel(cfg)
    with pytest.raises(ConfigurationError):
        model(rand_img(0))


def test_score_differentiable_wrt_head_parameters():
    # finite differences against analytic gradients at the score head (f64)
    cfg = tiny_config(mode="NR", input_size=(32, 32), dtype="f64")
    model = QualityModel(cfg, make_bank(d_text=cfg.d_text, dtype=np.float64))
    img = np.random.default_rng(7).uniform(size=(2, 3, 32, 32))
    target = np.asarray([0.3, 0.7])

    def loss():
        diff = ag.sub(model(img)["score"], target)
        return ag.mean(ag.mul(diff, diff))

    sample = {n: p for n, p in model.head.named_parameters()
              if "regress" in n or "proj1" in n}
    report = check_gradients(loss, sample, max_entries_per_tensor=6)
    assert report.passed(1e-6), (report.max_rel_error, report.worst)


def test_config_round_trip_dict():
    cfg = tiny_config(mode="FR", msca_direction="top_down", dual_branch=False)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        tiny_config(mode="XX")
    with pytest.raises(ConfigurationError):
        tiny_config(d_model=30, num_heads=4)
    with pytest.raises(ConfigurationError):
        tiny_config(tau=-1.0)
