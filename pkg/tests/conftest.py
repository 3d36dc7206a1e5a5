import pytest

from noisekws import data
from noisekws.noise import NoiseBank
from noisekws.profiles import DESK_PROFILE
from noisekws.synth import generate_corpus, generate_noise_dir
from noisekws.train import train_model

CORPUS_SEED = 0


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    return generate_corpus(tmp_path_factory.mktemp("corpus"),
                           clips_per_word=48, seed=CORPUS_SEED)


@pytest.fixture(scope="session")
def noise_dir(tmp_path_factory):
    return generate_noise_dir(tmp_path_factory.mktemp("noise"), seed=CORPUS_SEED)


@pytest.fixture(scope="session")
def corpus_index(corpus_root):
    return data.add_silence_refs(data.scan_corpus(corpus_root), CORPUS_SEED)


@pytest.fixture(scope="session")
def noise_bank(noise_dir):
    return NoiseBank(noise_dir)


@pytest.fixture(scope="session")
def desk_train_sets(corpus_index, corpus_root):
    train_set = data.featurize(data.build_clean_set(corpus_index, "train", 0, corpus_root))
    val_set = data.featurize(data.build_clean_set(corpus_index, "val", 0, corpus_root))
    return train_set, val_set


@pytest.fixture(scope="session")
def desk_baseline(desk_train_sets):
    """Desk-profile baseline model trained once for the whole session."""
    train_set, val_set = desk_train_sets
    params, log = train_model(DESK_PROFILE.arch, train_set, val_set,
                              DESK_PROFILE.train_config(0))
    return params, DESK_PROFILE.arch, log


def rel_err(analytic, numeric, floor=1e-3):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_diff(f, tensor, index, h):
    orig = tensor[index]
    tensor[index] = orig + h
    hi = f()
    tensor[index] = orig - h
    lo = f()
    tensor[index] = orig
    return (hi - lo) / (2.0 * h)


def sample_indices(rng, shape, count):
    return [tuple(int(rng.integers(s)) for s in shape) for _ in range(count)]
