"""Quality-scorer tests: assembly, forward/backward, training, weight export."""

import math

import numpy as np
import pytest

from augqual.corpus import (
    CorruptionProfile,
    FeatureSample,
    VerbalScheme,
    corpus_checksum,
    feature_checksum,
    generate_corpus,
    train_eval_split,
)
from augqual.forge import ForgedBatch, ForgedItem, forge_batch
from augqual.metrics import roc_auc
from augqual.numerics import bce_with_logit, finite_diff_grad, flatten_arrays, unflatten_arrays
from augqual.qa import (
    QaConfig,
    QaParams,
    WeightMapConfig,
    assemble_input,
    export_weights,
    init_qa_params,
    load_qa_snapshot,
    load_weight_file,
    map_weight,
    qa_checksum,
    qa_logit,
    qa_loss,
    qa_loss_and_grads,
    sample_weight,
    save_qa_snapshot,
    score_corpus,
    serialize_qa_snapshot,
    serialize_weight_file,
    train_stage0,
    verify_weight_file,
)
from augqual.util import ChecksumError, ValidationError, derived_rng

_VERBAL = VerbalScheme()
PROFILE = CorruptionProfile(sigma_benign=0.05, p_swap=0.15, p_degrade=0.15,
                            degrade_mask_rate=0.5, p_label_noise=0.15)


def _sample(idx, sentiment, d, d_t, audio=True):
    rng = np.random.default_rng(5000 + idx)
    return FeatureSample(
        id=f"q{idx}", h_v=rng.standard_normal(d),
        h_a=rng.standard_normal(d) if audio else None,
        h_t_raw=rng.standard_normal(d_t),
        polarity=1 if sentiment >= 0 else 0, sentiment=sentiment,
        origin="Original", target_tokens=_VERBAL.encode(sentiment))


def _params(d, d_t, hidden, seed=0, trained_shape=True):
    p = init_qa_params(d, d_t, hidden, derived_rng(seed, "test-params"))
    if trained_shape:
        # give the zero-initialized output layer some spread so logits vary
        rng = derived_rng(seed, "test-params", "out")
        p.out_w = rng.standard_normal(hidden) / np.sqrt(hidden)
        p.out_b = rng.standard_normal(1)
    return p


class TestAssemble:
    def test_layout_and_missing_audio(self):
        d, d_t = 6, 4
        params = _params(d, d_t, 5)
        s = _sample(0, 0.4, d, d_t, audio=False)
        x = assemble_input(s, params)
        assert x.shape == (4 * d,)
        np.testing.assert_array_equal(x[:d], s.h_v)
        np.testing.assert_array_equal(x[d:2 * d], np.zeros(d))
        np.testing.assert_array_equal(
            x[2 * d:3 * d], params.text_proj_w @ s.h_t_raw + params.text_proj_b)
        np.testing.assert_array_equal(x[3 * d:], params.polarity_emb[1])

    def test_zero_projection_blanks_text_slot(self):
        d, d_t = 6, 4
        params = _params(d, d_t, 5)
        params.text_proj_w = np.zeros((d, d_t))
        params.text_proj_b = np.zeros(d)
        x = assemble_input(_sample(1, -0.4, d, d_t), params)
        np.testing.assert_array_equal(x[2 * d:3 * d], np.zeros(d))

    def test_polarity_changes_only_last_block(self):
        d, d_t = 6, 4
        params = _params(d, d_t, 5)
        s = _sample(2, 0.4, d, d_t)
        flipped = FeatureSample(id=s.id, h_v=s.h_v, h_a=s.h_a,
                                h_t_raw=s.h_t_raw, polarity=0,
                                sentiment=s.sentiment, origin=s.origin,
                                target_tokens=s.target_tokens)
        xa, xb = assemble_input(s, params), assemble_input(flipped, params)
        np.testing.assert_array_equal(xa[:3 * d], xb[:3 * d])
        assert not np.array_equal(xa[3 * d:], xb[3 * d:])

    def test_dim_mismatch(self):
        params = _params(6, 4, 5)
        with pytest.raises(ValidationError, match="dim mismatch"):
            assemble_input(_sample(3, 0.4, 7, 4), params)


class TestLogit:
    def test_zero_hidden_layer_passes_bias_through(self):
        d, d_t, h = 6, 4, 5
        params = _params(d, d_t, h)
        params.hidden_w = np.zeros((h, 4 * d))
        params.hidden_b = np.zeros(h)
        params.out_b = np.array([2.5])
        x = assemble_input(_sample(4, 0.4, d, d_t), params)
        assert qa_logit(x, params) == pytest.approx(2.5, abs=1e-15)

    def test_rescaling_layers_is_not_an_invariance(self):
        d, d_t, h = 6, 4, 5
        params = _params(d, d_t, h)
        x = assemble_input(_sample(5, 0.4, d, d_t), params)
        before = qa_logit(x, params)
        params.out_w = params.out_w * 2.0
        params.hidden_w = params.hidden_w / 2.0
        params.hidden_b = params.hidden_b / 2.0
        assert qa_logit(x, params) != pytest.approx(before, abs=1e-9)

    def test_wrong_width_rejected(self):
        params = _params(6, 4, 5)
        with pytest.raises(ValidationError):
            qa_logit(np.zeros(10), params)


def _brute_loss(items, params, alpha):
    """Independent reimplementation: pure python loops and math functions."""
    fams = {}
    d, d_t, width = params.d, params.d_t, params.hidden
    for it in items:
        ha = it.h_a if it.h_a is not None else np.zeros(d)
        ht = [sum(params.text_proj_w[r][c] * it.h_t_raw[c] for c in range(d_t))
              + params.text_proj_b[r] for r in range(d)]
        x = list(it.h_v) + list(ha) + ht + list(params.polarity_emb[it.polarity])
        pre = [sum(params.hidden_w[r][c] * x[c] for c in range(4 * d))
               + params.hidden_b[r] for r in range(width)]
        act = [0.5 * z * (1.0 + math.erf(z / math.sqrt(2.0))) for z in pre]
        logit = sum(params.out_w[r] * act[r] for r in range(width)) + params.out_b[0]
        bce = max(logit, 0.0) - logit * it.label + math.log1p(math.exp(-abs(logit)))
        fams.setdefault(it.family, []).append(bce)
    weight = dict(zip(("pos", "mix", "mask", "flip"), alpha))
    norm = sum(weight[f] for f in fams)
    return sum(weight[f] * (sum(v) / len(v)) for f, v in fams.items()) / norm


class TestQaLoss:
    def _forged(self, seed, n=5, d=4, d_t=3):
        sents = [0.8, -0.6, 0.3, -0.9, 0.5, -0.2, 0.7][:n]
        batch = [_sample(100 + seed * 10 + i, y, d, d_t) for i, y in enumerate(sents)]
        return forge_batch(batch, d, derived_rng(seed, "loss-test"))

    def test_equal_alpha_is_mean_of_family_means(self):
        d, d_t = 4, 3
        params = _params(d, d_t, 4, seed=1)
        fb = self._forged(0, d=d, d_t=d_t)
        fam_means = []
        for fam, items in fb.by_family().items():
            vals = [bce_with_logit(qa_logit(assemble_input(i, params), params),
                                   float(i.label)) for i in items]
            fam_means.append(np.mean(vals))
        got = qa_loss(fb, params, (1.0, 1.0, 1.0, 1.0))
        assert got == pytest.approx(np.mean(fam_means), abs=1e-12)

    def test_single_alpha_selects_one_family(self):
        d, d_t = 4, 3
        params = _params(d, d_t, 4, seed=2)
        fb = self._forged(1, d=d, d_t=d_t)
        pos = fb.by_family()["pos"]
        expect = np.mean([bce_with_logit(qa_logit(assemble_input(i, params), params),
                                         1.0) for i in pos])
        got = qa_loss(fb, params, (1.0, 0.0, 0.0, 0.0))
        assert got == pytest.approx(expect, abs=1e-12)

    def test_matches_brute_force(self):
        for seed in range(30):
            d, d_t = 4, 3
            params = _params(d, d_t, 4, seed=seed)
            alpha_rng = derived_rng(seed, "alpha")
            alpha = tuple(alpha_rng.uniform(0.1, 2.0, size=4))
            fb = self._forged(seed, n=4, d=d, d_t=d_t)
            got = qa_loss(fb, params, alpha)
            want = _brute_loss(fb.items, params, alpha)
            assert got == pytest.approx(want, abs=1e-12)

    def test_empty_family_drops_out_of_normalizer(self):
        d, d_t = 4, 3
        params = _params(d, d_t, 4, seed=3)
        single_pol = [_sample(200 + i, y, d, d_t) for i, y in enumerate((0.2, 0.8))]
        fb = forge_batch(single_pol, d, derived_rng(3, "loss-test"))
        assert fb.by_family()["mix"] == []
        got = qa_loss(fb, params, (1.0, 5.0, 1.0, 1.0))
        want = _brute_loss(fb.items, params, (1.0, 5.0, 1.0, 1.0))
        assert got == pytest.approx(want, abs=1e-12)

    def test_all_empty_errors(self):
        params = _params(4, 3, 4)
        with pytest.raises(ValidationError, match="every family is empty"):
            qa_loss(ForgedBatch(items=()), params, (1.0, 1.0, 1.0, 1.0))

    def test_zero_weight_on_every_present_family_errors(self):
        d, d_t = 4, 3
        params = _params(d, d_t, 4)
        fb = self._forged(4, d=d, d_t=d_t)
        with pytest.raises(ValidationError, match="no weighted family"):
            qa_loss(fb, params, (0.0, 0.0, 0.0, 0.0))


class TestGradients:
    def test_analytic_matches_finite_differences(self):
        worst = 0.0
        for seed in range(12):
            d, d_t, h = 5, 4, 3
            params = _params(d, d_t, h, seed=seed)
            sents = [0.7, -0.5, 0.2, -0.8]
            batch = [_sample(300 + seed * 10 + i, y, d, d_t, audio=(i % 2 == 0))
                     for i, y in enumerate(sents)]
            fb = forge_batch(batch, d, derived_rng(seed, "grad-test"))
            alpha = (1.0, 0.7, 1.3, 0.5)
            _, grads = qa_loss_and_grads(fb, params, alpha)
            vec, layout = flatten_arrays(params.to_dict())

            def f(v, _fb=fb, _layout=layout, _alpha=alpha):
                return qa_loss(_fb, QaParams.from_dict(unflatten_arrays(v, _layout)),
                               _alpha)

            fd = finite_diff_grad(f, vec)
            an, _ = flatten_arrays(grads)
            rel = np.abs(an - fd) / np.maximum.reduce(
                [np.abs(an), np.abs(fd), np.full_like(an, 1e-6)])
            worst = max(worst, float(rel.max()))
        assert worst < 1e-4

    def test_loss_value_agrees_with_grad_entry_point(self):
        d, d_t = 4, 3
        params = _params(d, d_t, 4, seed=9)
        batch = [_sample(400 + i, y, d, d_t) for i, y in enumerate((0.5, -0.5))]
        fb = forge_batch(batch, d, derived_rng(9, "grad-test"))
        a = qa_loss(fb, params, (1, 1, 1, 1))
        b, _ = qa_loss_and_grads(fb, params, (1, 1, 1, 1))
        assert a == b


class TestTrainStage0:
    def _corpus(self, n=80, d=12, d_t=16, seed=101, profile=PROFILE, m=2):
        return generate_corpus(n, m, profile, seed=seed, d=d, d_t=d_t)

    def test_zero_steps_returns_init(self):
        c = self._corpus()
        cfg = QaConfig(steps=0, seed=5, hidden=8)
        params, trace = train_stage0(c, cfg)
        want = init_qa_params(c.header.d, c.header.d_t, 8,
                              derived_rng(5, "stage0", "init"))
        for k, arr in params.to_dict().items():
            np.testing.assert_array_equal(arr, want.to_dict()[k])
        assert trace == []

    def test_same_seed_bit_identical(self):
        c = self._corpus()
        cfg = QaConfig(steps=30, seed=6, hidden=8)
        p1, t1 = train_stage0(c, cfg)
        p2, t2 = train_stage0(c, cfg)
        assert t1 == t2
        for k in p1.to_dict():
            np.testing.assert_array_equal(p1.to_dict()[k], p2.to_dict()[k])

    def test_corpus_features_untouched(self):
        c = self._corpus()
        before = feature_checksum(c)
        train_stage0(c, QaConfig(steps=25, seed=7, hidden=8))
        assert feature_checksum(c) == before

    def test_loss_decreases(self):
        c = self._corpus()
        _, trace = train_stage0(c, QaConfig(steps=120, seed=8, hidden=16))
        assert np.mean(trace[-20:]) < 0.5 * np.mean(trace[:20])

    def test_heldout_auc_clean_vs_forged(self):
        c = self._corpus(n=400, d=64, d_t=96, seed=202)
        split = train_eval_split(c, eval_fraction=0.25)
        params, _ = train_stage0(c, QaConfig(seed=9),
                                 train_ids=split.train_originals)
        held = [c.get(i) for i in split.eval_originals]
        scores, labels = [], []
        # a few forge rounds keep the AUC estimate stable
        for r in range(3):
            forged = forge_batch(held, c.header.d,
                                 derived_rng(99, "auc-negatives", r))
            for it in forged.items:
                x = assemble_input(it, params)
                scores.append(1.0 / (1.0 + math.exp(-qa_logit(x, params))))
                labels.append(it.label)
        assert roc_auc(scores, labels) >= 0.95

    def test_train_ids_restriction_changes_result(self):
        c = self._corpus()
        half = tuple(s.id for s in c.originals()[:40])
        cfg = QaConfig(steps=20, seed=10, hidden=8)
        full, _ = train_stage0(c, cfg)
        sub, _ = train_stage0(c, cfg, train_ids=half)
        assert any(not np.array_equal(full.to_dict()[k], sub.to_dict()[k])
                   for k in full.to_dict())

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            QaConfig(alpha=(0.0, 0.0, 0.0, 0.0)).validate()
        with pytest.raises(ValidationError):
            QaConfig(alpha=(-1.0, 1.0, 1.0, 1.0)).validate()
        with pytest.raises(ValidationError):
            QaConfig(batch_size=1).validate()
        with pytest.raises(ValidationError):
            QaConfig(rho=1.2).validate()


class TestScoreCorpus:
    def test_fresh_init_scores_half_everywhere(self):
        c = generate_corpus(6, 1, PROFILE, seed=55, d=8, d_t=8)
        params = init_qa_params(8, 8, 4, derived_rng(0, "init"))
        scores = score_corpus(c, params)
        assert len(scores) == len(c)
        assert all(v == 0.5 for v in scores.values())

    def test_purity_duplicate_features_same_score(self):
        c = generate_corpus(6, 1, CorruptionProfile(sigma_benign=0.0),
                            seed=56, d=8, d_t=8)
        params, _ = train_stage0(c, QaConfig(steps=40, seed=11, hidden=8))
        scores = score_corpus(c, params)
        for a in c.augmented():
            # clean-profile augments are bitwise copies of their parents
            assert scores[a.id] == scores[a.parent_id]

    def test_scores_open_interval(self):
        c = generate_corpus(10, 2, PROFILE, seed=57, d=8, d_t=8)
        params, _ = train_stage0(c, QaConfig(steps=60, seed=12, hidden=8))
        assert all(0.0 < v < 1.0 for v in score_corpus(c, params).values())

    def test_dimension_guard(self):
        c = generate_corpus(4, 0, PROFILE, seed=58, d=8, d_t=8)
        params = init_qa_params(6, 8, 4, derived_rng(0, "init"))
        with pytest.raises(ValidationError, match="different dimensions"):
            score_corpus(c, params)


class TestWeightMap:
    def test_frozen_default_example(self):
        assert map_weight(0.9, WeightMapConfig()) == pytest.approx(1.36, abs=1e-12)

    def test_limits(self):
        cfg = WeightMapConfig(w_min=0.2, w_max=1.8, gamma=2.0)
        assert map_weight(1e-12, cfg) == pytest.approx(0.2, abs=1e-9)
        assert map_weight(1.0 - 1e-12, cfg) == pytest.approx(1.8, abs=1e-9)

    def test_linear_midpoint(self):
        assert map_weight(0.5, WeightMapConfig(w_min=0.0, w_max=2.0, gamma=1.0)) == 1.0

    def test_monotone_and_bounded(self):
        rng = derived_rng(0, "map-test")
        for _ in range(200):
            w_min = rng.uniform(0.0, 1.0)
            w_max = w_min + rng.uniform(0.0, 2.0)
            gamma = rng.uniform(0.05, 5.0)
            cfg = WeightMapConfig(w_min=w_min, w_max=w_max, gamma=gamma)
            grid = np.sort(rng.uniform(1e-9, 1.0 - 1e-9, size=16))
            ws = [map_weight(float(s), cfg) for s in grid]
            assert all(a <= b + 1e-15 for a, b in zip(ws, ws[1:]))
            assert all(w_min - 1e-12 <= w <= w_max + 1e-12 for w in ws)

    def test_origin_rule(self):
        cfg = WeightMapConfig()
        assert sample_weight("Original", 0.123, cfg) == 1.0
        assert sample_weight("Augmented", 0.9, cfg) == pytest.approx(1.36)

    def test_config_and_score_validation(self):
        with pytest.raises(ValidationError):
            map_weight(0.5, WeightMapConfig(w_min=2.0, w_max=1.0))
        with pytest.raises(ValidationError):
            map_weight(0.5, WeightMapConfig(gamma=0.0))
        with pytest.raises(ValidationError):
            map_weight(0.0, WeightMapConfig())
        with pytest.raises(ValidationError):
            map_weight(1.0, WeightMapConfig())


class TestWeightFile:
    def _trained(self, n=12, m=2, profile=PROFILE, seed=60):
        c = generate_corpus(n, m, profile, seed=seed, d=8, d_t=8)
        params, _ = train_stage0(c, QaConfig(steps=40, seed=13, hidden=8))
        return c, params

    def test_all_original_corpus_all_weights_one(self):
        c = generate_corpus(8, 0, PROFILE, seed=61, d=8, d_t=8)
        params, _ = train_stage0(c, QaConfig(steps=10, seed=14, hidden=8))
        wf = export_weights(c, params, WeightMapConfig())
        assert len(wf.entries) == 8
        assert all(e.weight == 1.0 for e in wf.entries)

    def test_reexport_byte_identical(self, tmp_path):
        c, params = self._trained()
        p1, p2 = tmp_path / "w1.json", tmp_path / "w2.json"
        export_weights(c, params, WeightMapConfig(), p1)
        export_weights(c, params, WeightMapConfig(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_entries_sorted_and_complete(self):
        c, params = self._trained()
        wf = export_weights(c, params, WeightMapConfig())
        ids = [e.id for e in wf.entries]
        assert ids == sorted(ids)
        assert set(ids) == {s.id for s in c.samples}

    def test_score_weight_rank_agreement(self):
        c, params = self._trained(n=20, m=3)
        wf = export_weights(c, params, WeightMapConfig(gamma=2.5))
        aug = [e for e in wf.entries if e.origin == "Augmented"]
        by_score = np.argsort([e.score for e in aug], kind="stable")
        by_weight = np.argsort([e.weight for e in aug], kind="stable")
        np.testing.assert_array_equal(by_score, by_weight)

    def test_round_trip(self, tmp_path):
        c, params = self._trained()
        path = tmp_path / "w.json"
        wf = export_weights(c, params, WeightMapConfig(), path)
        back = load_weight_file(path)
        assert back.corpus_checksum == wf.corpus_checksum
        assert back.qa_checksum == qa_checksum(params)
        assert back.weights_by_id() == wf.weights_by_id()
        assert back.scores_by_id() == wf.scores_by_id()
        assert serialize_weight_file(back) == serialize_weight_file(wf)

    def test_verify_binds_to_corpus(self, tmp_path):
        c, params = self._trained()
        wf = export_weights(c, params, WeightMapConfig())
        verify_weight_file(wf, c)
        other = generate_corpus(12, 2, PROFILE, seed=62, d=8, d_t=8)
        with pytest.raises(ChecksumError,
                           match="exported for a different corpus"):
            verify_weight_file(wf, other)

    def test_load_rejects_tampered_original_weight(self, tmp_path):
        c, params = self._trained()
        path = tmp_path / "w.json"
        export_weights(c, params, WeightMapConfig(), path)
        doc = path.read_text().replace('"weight": 1.0', '"weight": 0.7', 1)
        path.write_text(doc)
        with pytest.raises(ValidationError, match="expected 1"):
            load_weight_file(path)


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        c = generate_corpus(6, 1, PROFILE, seed=70, d=8, d_t=12)
        params, _ = train_stage0(c, QaConfig(steps=15, seed=15, hidden=8))
        path = tmp_path / "qa.json"
        save_qa_snapshot(params, c.header, path)
        back, header = load_qa_snapshot(path)
        assert header == c.header
        for k in params.to_dict():
            np.testing.assert_array_equal(back.to_dict()[k], params.to_dict()[k])
        assert qa_checksum(back) == qa_checksum(params)

    def test_serialization_deterministic(self):
        c = generate_corpus(4, 0, PROFILE, seed=71, d=8, d_t=8)
        params, _ = train_stage0(c, QaConfig(steps=5, seed=16, hidden=4))
        assert (serialize_qa_snapshot(params, c.header)
                == serialize_qa_snapshot(params, c.header))

    def test_rejects_foreign_documents(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"kind": "other"}')
        with pytest.raises(ValidationError, match="not a scorer snapshot"):
            load_qa_snapshot(path)
        path.write_text("{broken")
        with pytest.raises(ValidationError, match="bad scorer snapshot"):
            load_qa_snapshot(path)
