"""Synthetic world: determinism, topic structure, observer independence."""

import numpy as np
import pytest

from embdistill.corpus import TextRecord
from embdistill.errors import DataError
from embdistill.synth import (
    SyntheticWorld,
    WorldConfig,
    build_synthetic_dataset,
    simulate_teacher,
)
from embdistill.teachers import sim_cohere_spec, sim_openai_spec


def tiny_world(noise=0.0, seed=0):
    topics = np.eye(4)  # 4 orthogonal topics in ambient dim 4
    assignments = {"p1": 0, "p2": 0, "p3": 1, "q1": 2}
    return SyntheticWorld(seed=seed, noise=noise, topics=topics, assignments=assignments)


class TestSimulateTeacher:
    def test_noiseless_same_topic_identical(self):
        world = tiny_world(noise=0.0)
        spec = sim_cohere_spec()
        a = simulate_teacher(world, spec, TextRecord("p1", "passage", "x"))
        b = simulate_teacher(world, spec, TextRecord("p2", "passage", "y"))
        np.testing.assert_array_equal(a, b)

    def test_identity_observer_preserves_orthogonality(self):
        world = tiny_world(noise=0.0)
        spec = sim_cohere_spec()
        # Identity slice: observe the first 4 ambient coordinates directly.
        world.observers[spec.name] = np.eye(4)[:4]
        spec = type(spec)(spec.name, dim=4, max_tokens=spec.max_tokens,
                          price_per_million=spec.price_per_million, source=spec.source)
        a = simulate_teacher(world, spec, TextRecord("p1", "passage", "x"))  # topic 0
        b = simulate_teacher(world, spec, TextRecord("p3", "passage", "y"))  # topic 1
        assert abs(float(a @ b)) < 1e-12

    def test_bit_identical_across_calls(self):
        world = tiny_world(noise=0.3)
        spec = sim_openai_spec()
        rec = TextRecord("p1", "passage", "x")
        a = simulate_teacher(world, spec, rec)
        b = simulate_teacher(world, spec, rec)
        assert np.array_equal(a, b)

    def test_unassigned_record_is_error(self):
        world = tiny_world()
        with pytest.raises(DataError, match="topic assignment"):
            simulate_teacher(world, sim_cohere_spec(), TextRecord("zz", "passage", "x"))

    def test_unit_norm_output(self):
        world = tiny_world(noise=0.5)
        vec = simulate_teacher(world, sim_openai_spec(), TextRecord("p1", "passage", "x"))
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-12

    def test_teachers_use_independent_observers_and_noise(self):
        world = tiny_world(noise=0.2)
        rec = TextRecord("p1", "passage", "x")
        a = simulate_teacher(world, sim_cohere_spec(), rec)
        b = simulate_teacher(world, sim_openai_spec(), rec)
        assert a.shape != b.shape  # different dims by construction
        assert not np.array_equal(world.observers["sim-cohere"][:, 0], world.observers["sim-openai"][:, 0])

    def test_noiseless_cosine_depends_only_on_topic_pair(self):
        config = WorldConfig(seed=1, topics=3, ambient_dim=8, noise=0.0, passages=9, queries=3)
        ds = build_synthetic_dataset(config)
        spec = sim_cohere_spec()
        vecs = {r.id: simulate_teacher(ds.world, spec, r) for r in ds.passages.records}
        topic = ds.world.assignments
        cos_by_pair = {}
        ids = list(vecs)
        for i in ids:
            for j in ids:
                pair = (min(topic[i], topic[j]), max(topic[i], topic[j]))
                value = float(vecs[i] @ vecs[j])
                cos_by_pair.setdefault(pair, []).append(value)
        for pair, values in cos_by_pair.items():
            np.testing.assert_allclose(values, values[0], atol=1e-9, err_msg=str(pair))


class TestWorldInvariants:
    def test_identical_topics_rejected(self):
        topics = np.ones((2, 4))
        with pytest.raises(DataError, match="identical"):
            SyntheticWorld(seed=0, noise=0.0, topics=topics, assignments={})

    def test_observer_full_rank(self):
        world = tiny_world()
        obs = world.observer_for("any-teacher", 3)
        assert np.linalg.matrix_rank(obs) == 3

    def test_observer_memoized_and_deterministic(self):
        a = tiny_world().observer_for("t", 3)
        b = tiny_world().observer_for("t", 3)
        assert np.array_equal(a, b)


class TestBuildSyntheticDataset:
    def test_counts_and_kinds(self):
        config = WorldConfig(seed=2, topics=4, ambient_dim=16, passages=20, queries=8)
        ds = build_synthetic_dataset(config)
        assert len(ds.passages) == 20
        assert len(ds.queries) == 8
        assert all(r.kind == "passage" for r in ds.passages.records)
        assert all(r.kind == "query" for r in ds.queries.records)

    def test_qrels_mark_same_topic(self):
        config = WorldConfig(seed=2, topics=4, ambient_dim=16, passages=20, queries=8)
        ds = build_synthetic_dataset(config)
        for (qid, did), rel in ds.qrels.items():
            assert rel == 1
            assert ds.world.assignments[qid] == ds.world.assignments[did]

    def test_deterministic_given_seed(self):
        config = WorldConfig(seed=5, topics=4, ambient_dim=16, passages=10, queries=4)
        a = build_synthetic_dataset(config)
        b = build_synthetic_dataset(config)
        assert [r.text for r in a.passages.records] == [r.text for r in b.passages.records]
        assert np.array_equal(a.world.topics, b.world.topics)

    def test_topic_words_are_disjoint_across_topics(self):
        config = WorldConfig(seed=7, topics=3, ambient_dim=8, passages=30, queries=6)
        ds = build_synthetic_dataset(config)
        topic_words = {}
        shared = set()
        for rec in ds.passages.records:
            words = set(rec.text.split())
            topic_words.setdefault(ds.world.assignments[rec.id], set()).update(words)
        # Words seen under multiple topics must come from the shared pool only.
        seen_in = {}
        for t, words in topic_words.items():
            for w in words:
                seen_in.setdefault(w, set()).add(t)
        multi = {w for w, ts in seen_in.items() if len(ts) > 1}
        for rec in ds.passages.records:
            specific = set(rec.text.split()) - multi
            assert specific, rec.id  # every passage carries topic-specific signal
