import numpy as np
import pytest

from cpl import autodiff as ad
from cpl.autodiff import Tape
from cpl.corpus import distant_supervision_labels
from cpl.extractor import (Extractor, ExtractorConfig, Suggestion, assign_extractor_rewards,
                           extractor_records)
from cpl.graph import BASE, Triple
from cpl.reasoner import SUGGESTED, Step, Trajectory
from cpl.trainer import extractor_accuracy, pretrain_extractor

from conftest import small_config

TINY = ExtractorConfig(word_dim=4, pos_dim=2, pos_window=10, kernel=3, n_filters=4, relation_dim=4)


@pytest.fixture
def ext(small_data):
    return Extractor(small_data.corpus, small_data.kg, TINY, np.random.default_rng(0))


def _busy_subject(corpus):
    return max(corpus.subject_index, key=lambda e: (len(corpus.subject_index[e]), -e))


def test_encoder_shapes(ext, small_data):
    bag = next(iter(small_data.corpus.bags.values()))
    assert ext.encode_sentence(bag.sentences[0]).shape == (ext.encoding_dim,)
    assert ext.encoding_dim == 3 * TINY.n_filters
    enc = ext.encode_bag(bag)
    assert enc.attention.shape == (ext.n_classes, len(bag.sentences))
    np.testing.assert_allclose(enc.attention.value.sum(axis=1), 1.0)
    assert abs(enc.relation_probs.sum() - 1) < 1e-12
    # only forward relations are extractable
    assert ext.relations == small_data.kg.forward_relations()


def test_action_table_masks_no_relation(ext, small_data):
    e = _busy_subject(small_data.corpus)
    cells, logits = ext.action_table(ext.state(e))
    assert len(cells) == len(small_data.corpus.subject_index[e]) * ext.na
    assert all(j != ext.na for _, j in cells)
    assert logits.shape == (len(cells),)
    assert ext.action_table(ext.state(-1)) == ([], None)
    assert ext.suggest_edges(-1, 3, None, "top") == []


def test_suggestions_use_distinct_bags(ext, small_data):
    e = _busy_subject(small_data.corpus)
    n_bags = len(small_data.corpus.subject_index[e])
    rng = np.random.default_rng(0)
    for k in (1, 2, n_bags + 3):
        for mode in ("top", "sample"):
            out = ext.suggest_edges(e, k, rng, mode)
            assert len(out) == min(k, n_bags)
            assert len({s.bag_key for s in out}) == len(out)
            assert all(s.triple.subject == e and s.triple.object == s.bag_key[1] for s in out)


def test_suggestion_log_probs_come_from_joint_distribution(ext, small_data):
    e = _busy_subject(small_data.corpus)
    cells, logits = ext.action_table(ext.state(e))
    joint = ad.log_softmax(logits).value
    top = ext.suggest_edges(e, 2, None, "top")
    for s in top:
        assert s.log_prob == pytest.approx(joint[cells.index((s.bag_key, s.relation_index))], abs=1e-12)
        assert float(ext.action_log_prob(e, s.bag_key, s.relation_index).value) == pytest.approx(s.log_prob)
    assert top[0].log_prob == pytest.approx(joint.max())


def test_suggestion_argument_checks(ext, small_data):
    e = _busy_subject(small_data.corpus)
    with pytest.raises(ValueError):
        ext.suggest_edges(e, 0)
    with pytest.raises(ValueError):
        ext.suggest_edges(e, 1, None, "sample")
    with pytest.raises(ValueError):
        ext.suggest_edges(e, 1, np.random.default_rng(0), "nope")


def test_cache_follows_parameter_updates(ext, small_data):
    e = _busy_subject(small_data.corpus)
    before = ext.suggest_edges(e, 1, None, "top")[0].log_prob
    tape = Tape()
    cells, logits = ext.action_table(ext.state(e), tape)
    tape.backward(ad.pick(ad.log_softmax(logits), 0))
    ad.adam_update(ext.store, 0.05)
    assert ext.suggest_edges(e, 1, None, "top")[0].log_prob != before


def test_single_bag_loss_decreases(ext, small_data):
    key = sorted(small_data.corpus.bags)[0]
    bag = small_data.corpus.bags[key]
    losses = []
    for _ in range(10):
        tape = Tape()
        loss = ad.scale(ad.pick(ext.labelled_log_probs(bag, 1, tape), 1), -1.0)
        losses.append(float(loss.value))
        tape.backward(loss)
        ad.adam_update(ext.store, 0.01)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_pretraining_fits_keyword_corpus(small_synth, small_data):
    # true generating relations rather than distant supervision: corpus-only
    # facts carry relation keywords but are absent from the graph
    truth = {(t.subject, t.object): t.relation for t in list(small_synth.graph) + small_synth.corpus_facts}
    labels = [(key, truth.get(key, -1)) for key in sorted(small_data.corpus.bags)]
    cfg = small_config(pretrain_lr=0.01, batch_size=16)
    wider = ExtractorConfig(word_dim=8, pos_dim=2, pos_window=10, kernel=3, n_filters=8, relation_dim=8)
    x = Extractor(small_data.corpus, small_data.kg, wider, np.random.default_rng(2))
    curve = pretrain_extractor(x, labels, 20, cfg, np.random.default_rng(3))
    assert curve[-1] < curve[0]
    assert extractor_accuracy(x, labels) >= 0.95
    y = Extractor(small_data.corpus, small_data.kg, wider, np.random.default_rng(2))
    assert pretrain_extractor(y, labels, 3, cfg, np.random.default_rng(3)) == curve[:3]


def test_distant_labels_mark_corpus_only_facts_as_no_relation(small_synth, small_data):
    labels = dict(distant_supervision_labels(small_data.corpus, small_data.kg))
    for t in small_synth.corpus_facts:
        assert labels[(t.subject, t.object)] == -1


def _traj(success, prov):
    sug = [Suggestion(Triple(0, 1, 2), -0.5, (0, 2), 1)]
    steps = [Step(0, 9, [(1, 2, prov), (5, 0, BASE)], 0, prov, -0.1, 0.0, suggestions=sug)]
    return Trajectory(Triple(0, 3, 2), steps, terminal_reward=int(success))


@pytest.mark.parametrize("success,prov,reward", [(True, SUGGESTED, 1.0), (False, SUGGESTED, 0.0),
                                                 (True, BASE, 0.0)])
def test_extractor_reward_needs_success_and_suggested_step(success, prov, reward):
    tr = _traj(success, prov)
    assert assign_extractor_rewards(tr) == [(0, reward)]
    recs = extractor_records(tr)
    assert [r.reward for r in recs] == [reward]
    assert recs[0].bag_key == (0, 2)
