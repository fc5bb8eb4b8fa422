import math

import numpy as np
import pytest

from oracles import gan_gradient_errors
from zeroshot_shm.gan import (
    Architecture,
    Discriminator,
    Generator,
    SelectionError,
    TrainConfig,
    TrainingLogEntry,
    discriminator_loss,
    discriminator_loss_logits,
    generator_loss,
    generator_loss_logits,
    load_discriminator,
    load_training_state,
    save_checkpoint,
    scores_from_logits,
    select_checkpoint,
    sequence_steps,
    train,
)


def test_d_loss_uncertain():
    assert discriminator_loss([0.5], [0.5]) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_d_loss_perfect_limit():
    assert discriminator_loss([1.0], [0.0]) < 1e-11


def test_d_loss_hand_example():
    expected = -(math.log(0.9) + math.log(0.8)) / 2 - (math.log(0.9) + math.log(0.8)) / 2
    assert discriminator_loss([0.9, 0.8], [0.1, 0.2]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.3285, abs=1e-4)


def test_g_loss_examples():
    assert generator_loss([0.5]) == pytest.approx(math.log(2))
    assert generator_loss([1.0]) < 1e-11
    assert generator_loss([0.25, 0.5]) == pytest.approx((math.log(4) + math.log(2)) / 2)
    assert generator_loss([0.25, 0.5]) == pytest.approx(1.0397, abs=1e-4)


def test_empty_batches():
    with pytest.raises(ValueError):
        discriminator_loss([], [0.5])
    with pytest.raises(ValueError):
        generator_loss([])


def test_logit_losses_match_probability_losses():
    rng = np.random.default_rng(0)
    a_r, a_f = rng.normal(size=5), rng.normal(size=4)
    p = lambda a: 1 / (1 + np.exp(-a))
    assert discriminator_loss_logits(a_r, a_f)[0] == pytest.approx(discriminator_loss(p(a_r), p(a_f)), rel=1e-12)
    assert generator_loss_logits(a_f)[0] == pytest.approx(generator_loss(p(a_f)), rel=1e-12)


def test_zero_sum_pressure_on_fake_probability():
    # d(l_G)/dp = -1/p ; d(fake term of l_D)/dp = 1/(1-p)
    h = 1e-7
    for p in (0.1, 0.5, 0.9):
        dg = (generator_loss([p + h]) - generator_loss([p - h])) / (2 * h)
        dd = (discriminator_loss([0.5], [p + h]) - discriminator_loss([0.5], [p - h])) / (2 * h)
        assert dg == pytest.approx(-1 / p, rel=1e-6)
        assert dd == pytest.approx(1 / (1 - p), rel=1e-6)
        assert dg < 0 < dd


def test_scores_from_logits():
    assert scores_from_logits(0.0) == pytest.approx(math.log10(2))
    assert scores_from_logits(50.0) < 1e-20
    # far-negative logits give large finite scores, no overflow
    assert scores_from_logits(-1000.0) == pytest.approx(1000 / math.log(10))


@pytest.mark.parametrize("lines,steps", [(128, 16), (32, 16), (1000, 25), (50, 25), (7, 7), (31, 1)])
def test_sequence_steps(lines, steps):
    assert sequence_steps(lines) == steps


def test_generator_layer_rule():
    assert Architecture(15, 1000).generator_layers() == [256, 1024, 3750]
    assert Architecture(4, 128).generator_layers() == [256, 1024]


def test_generator_output_bounded():
    arch = Architecture(2, 32)
    G = Generator.init(arch, np.random.default_rng(0))
    x = G.sample(np.random.default_rng(1), 50)
    assert x.shape == (50, 64)
    assert np.all((x >= 0) & (x <= 10))


def test_discriminator_branches_are_per_channel():
    arch = Architecture(3, 32, lstm_hidden=4, head_hidden=5)
    D = Discriminator.init(arch, np.random.default_rng(0))
    assert D.branches.weights.shape == (3, 16, 2 + 4)
    x = np.random.default_rng(1).uniform(0, 3, (4, 3, 32))
    # flat and (N, L) inputs agree
    np.testing.assert_array_equal(D.raw_logits(x), D.raw_logits(x.reshape(4, -1)))
    with pytest.raises(ValueError):
        D.raw_logits(np.zeros((2, 5)))


@pytest.mark.parametrize("seed", range(2))
def test_gradients_small_models(seed):
    errors = gan_gradient_errors(seed, lstm_hidden=6, head_hidden=7)
    assert max(errors.values()) < 1e-4, errors


def _entry(i, auc, max_score):
    return TrainingLogEntry(i * 25, 0.0, 0.0, auc, max_score)


def test_selection_skips_capped_entry():
    log = [_entry(1, 0.80, 3.0), _entry(2, 0.99, 40.0), _entry(3, 0.95, 12.0), _entry(4, 0.90, 1.0)]
    assert select_checkpoint(log) == 2


def test_selection_ties_go_to_earliest():
    log = [_entry(1, 0.9, 1.0), _entry(2, 0.9, 1.0)]
    assert select_checkpoint(log) == 0


def test_selection_all_capped():
    with pytest.raises(SelectionError, match="below 40"):
        select_checkpoint([_entry(1, 0.9, 40.0), _entry(2, 0.95, 55.0)])


def _toy_features(rng, n, shift):
    lines = np.linspace(0, 1, 16)
    base = np.exp(-((lines - 0.3 - shift) ** 2) / 0.01)
    x = base[None, None, :] * 5 + 0.3 * rng.uniform(size=(n, 2, 16))
    return np.clip(x, 0, 10)


@pytest.fixture(scope="module")
def toy_data():
    rng = np.random.default_rng(0)
    return _toy_features(rng, 80, 0.0), _toy_features(rng, 30, 0.3)


def _toy_config(**kw):
    return TrainConfig(**{"batch_size": 8, "max_iterations": 40, "eval_interval": 10, "seed": 3, **kw})


TOY_ARCH = Architecture(2, 16, lstm_hidden=4, head_hidden=6, generator_hidden=(8, 16))


def test_training_is_deterministic(toy_data):
    a = train(*toy_data, _toy_config(), TOY_ARCH)
    b = train(*toy_data, _toy_config(), TOY_ARCH)
    assert [e.as_dict() for e in a.log] == [e.as_dict() for e in b.log]
    for k, v in a.D.params().items():
        np.testing.assert_array_equal(v, b.D.params()[k])


def test_selected_is_best_uncapped_entry(toy_data):
    st = train(*toy_data, _toy_config(), TOY_ARCH)
    assert len(st.log) == 4
    assert st.best_index == select_checkpoint(st.log)
    assert st.selected.source_auc >= st.log[-1].source_auc
    assert st.selected.max_score_seen < 40


def test_empty_damage_set(toy_data):
    with pytest.raises(ValueError, match="damage"):
        train(toy_data[0], toy_data[0][:0], _toy_config(), TOY_ARCH)


def test_patience_stops_early(toy_data):
    st = train(*toy_data, _toy_config(max_iterations=400, patience=2), TOY_ARCH)
    assert st.iteration < 400
    assert st.evals_since_improvement == 2


def test_resume_equals_uninterrupted(toy_data, tmp_path):
    full = train(*toy_data, _toy_config(), TOY_ARCH)
    half = train(*toy_data, _toy_config(max_iterations=20), TOY_ARCH)
    save_checkpoint(tmp_path / "half.ckpt", half)
    resumed = train(*toy_data, state=load_training_state(tmp_path / "half.ckpt", max_iterations=40))
    assert [e.as_dict() for e in resumed.log] == [e.as_dict() for e in full.log]
    for k, v in full.D.params().items():
        np.testing.assert_array_equal(v, resumed.D.params()[k])


def test_checkpoint_bytes_deterministic(toy_data, tmp_path):
    st = train(*toy_data, _toy_config(), TOY_ARCH)
    save_checkpoint(tmp_path / "a.ckpt", st, {"w": 32})
    save_checkpoint(tmp_path / "b.ckpt", st, {"w": 32})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    D, header = load_discriminator(tmp_path / "a.ckpt")
    assert header["w"] == 32
    np.testing.assert_array_equal(D.raw_logits(toy_data[1]), st.best.raw_logits(toy_data[1]))
