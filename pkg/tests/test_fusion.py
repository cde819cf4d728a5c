"""Mock embeddings, provider protocol, fusion rules and query matching."""

import json
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvsprompt3d import fusion
from nvsprompt3d.errors import DegenerateSum, UnnormalizedInput
from nvsprompt3d.scene_io import write_image

PROVIDER_SCRIPT = Path(__file__).parent / "mock_provider.py"


class TestMockEmbed:
    def test_pure_red_one_hot(self):
        image = np.zeros((4, 4, 3))
        image[..., 0] = 1.0
        vec = fusion.mock_embed(image)
        hot = 3 * 16  # bin (3, 0, 0)
        assert vec[hot] == pytest.approx(1.0)
        assert np.linalg.norm(vec) == pytest.approx(1.0)
        assert np.count_nonzero(vec) == 1

    def test_mirror_invariance(self):
        rng = np.random.default_rng(0)
        image = rng.uniform(size=(8, 12, 3))
        np.testing.assert_array_equal(fusion.mock_embed(image),
                                      fusion.mock_embed(image[:, ::-1]))

    def test_half_red_half_green(self):
        image = np.zeros((2, 2, 3))
        image[0, :, 0] = 1.0
        image[1, :, 1] = 1.0
        vec = fusion.mock_embed(image)
        red_bin = 3 * 16
        green_bin = 3 * 4
        assert vec[red_bin] == pytest.approx(1 / np.sqrt(2))
        assert vec[green_bin] == pytest.approx(1 / np.sqrt(2))

    def test_dimension(self):
        assert fusion.MockEmbeddingProvider().dimension() == 64

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_pixel_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        image = rng.uniform(size=(6, 6, 3))
        flat = image.reshape(-1, 3)
        perm = rng.permutation(flat.shape[0])
        shuffled = flat[perm].reshape(6, 6, 3)
        np.testing.assert_array_equal(fusion.mock_embed(image),
                                      fusion.mock_embed(shuffled))


class TestSubprocessProvider:
    def test_protocol_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        paths = []
        for i in range(3):
            img = rng.uniform(size=(8, 8, 3))
            path = tmp_path / f"{i}.png"
            write_image(img, path)
            paths.append(path)
        command = [sys.executable, str(PROVIDER_SCRIPT)]
        with fusion.SubprocessEmbeddingProvider(command) as provider:
            assert provider.dimension() == 64
            remote = [provider.embed_image_file(p) for p in paths]
        local = fusion.MockEmbeddingProvider()
        for p, vec in zip(paths, remote):
            np.testing.assert_allclose(vec, local.embed_image_file(p), atol=1e-12)

    def test_out_of_order_responses(self, tmp_path):
        img_path = tmp_path / "x.png"
        write_image(np.full((8, 8, 3), 0.5), img_path)
        script = tmp_path / "unordered.py"
        script.write_text(textwrap.dedent("""\
            import json, sys
            print(json.dumps({"dimension": 2}), flush=True)
            for line in sys.stdin:
                req = json.loads(line)
                # an unsolicited response first, then the real one
                print(json.dumps({"id": 999 + req["id"], "vector": [0.0, 0.0]}),
                      flush=True)
                print(json.dumps({"id": req["id"], "vector": [1.0, 0.0]}),
                      flush=True)
            """))
        with fusion.SubprocessEmbeddingProvider(
                [sys.executable, str(script)]) as provider:
            vec = provider.embed_image_file(img_path)
        np.testing.assert_array_equal(vec, [1.0, 0.0])

    def test_string_command_form(self, tmp_path):
        img_path = tmp_path / "x.png"
        write_image(np.zeros((8, 8, 3)), img_path)
        provider = fusion.make_provider(
            f"subprocess:{sys.executable} {PROVIDER_SCRIPT}")
        try:
            vec = provider.embed_image_file(img_path)
            assert vec.shape == (64,)
        finally:
            provider.close()


def unit(*values):
    v = np.asarray(values, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestWfbFuse:
    def test_identical_vectors_reduce_to_themselves(self):
        v = unit(1.0, 2.0, 2.0)
        out = fusion.wfb_fuse(fusion.FusionInput(top_k_features=[v, v]))
        np.testing.assert_allclose(out, v, atol=1e-12)

    def test_hand_arithmetic(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        out = fusion.wfb_fuse(fusion.FusionInput(
            top_k_features=[e1, e2], interp_features=[e1],
            n_interp=1, alpha=0.5))
        expected = np.array([1.5, 1.0]) / np.linalg.norm([1.5, 1.0])
        np.testing.assert_allclose(out, expected, atol=1e-12)
        np.testing.assert_allclose(out, [0.8321, 0.5547], atol=1e-4)

    def test_interp_mass_independent_of_n(self):
        v = unit(0.0, 1.0, 1.0)
        w = unit(1.0, 0.0, 0.2)
        outputs = []
        for n in (1, 2, 5):
            lam = n * 1  # k = 2 -> k - 1 = 1 pair
            out = fusion.wfb_fuse(fusion.FusionInput(
                top_k_features=[w, w], interp_features=[v] * lam,
                n_interp=n, alpha=0.7))
            outputs.append(out)
        for other in outputs[1:]:
            np.testing.assert_allclose(outputs[0], other, atol=1e-9)

    def test_empty_interp_matches_average(self):
        rng = np.random.default_rng(2)
        feats = [unit(*rng.normal(size=16)) for _ in range(4)]
        wfb = fusion.wfb_fuse(fusion.FusionInput(top_k_features=feats))
        avg = fusion.average_fuse(feats)
        np.testing.assert_allclose(wfb, avg, atol=1e-9)

    def test_degenerate_sum(self):
        v = unit(1.0, 0.0)
        with pytest.raises(DegenerateSum):
            fusion.wfb_fuse(fusion.FusionInput(top_k_features=[v, -v]))

    def test_needs_n_interp_with_interp_features(self):
        v = unit(1.0, 0.0)
        with pytest.raises(ValueError):
            fusion.FusionInput(top_k_features=[v], interp_features=[v],
                               n_interp=0)

    @given(st.floats(min_value=0.01, max_value=100.0))
    @settings(max_examples=30, deadline=None)
    def test_positive_scale_invariance(self, scale):
        rng = np.random.default_rng(3)
        top = [rng.normal(size=8) for _ in range(2)]
        interp = [rng.normal(size=8) for _ in range(2)]
        a = fusion.wfb_fuse(fusion.FusionInput(
            top_k_features=top, interp_features=interp, n_interp=2, alpha=0.5))
        b = fusion.wfb_fuse(fusion.FusionInput(
            top_k_features=[scale * t for t in top],
            interp_features=[scale * i for i in interp],
            n_interp=2, alpha=0.5))
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_unit_output(self):
        rng = np.random.default_rng(4)
        out = fusion.wfb_fuse(fusion.FusionInput(
            top_k_features=[rng.normal(size=32) for _ in range(3)],
            interp_features=[rng.normal(size=32) for _ in range(4)],
            n_interp=2, alpha=0.9))
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)


class TestAverageFuse:
    def test_single_vector(self):
        v = unit(3.0, 4.0)
        np.testing.assert_allclose(fusion.average_fuse([v]), v, atol=1e-12)

    def test_cancellation(self):
        v = unit(1.0, 1.0)
        with pytest.raises(DegenerateSum):
            fusion.average_fuse([v, -v])

    def test_mean_direction_oracle(self):
        rng = np.random.default_rng(5)
        feats = [unit(*rng.normal(size=8)) for _ in range(3)]
        out = fusion.average_fuse(feats)
        manual = (feats[0] + feats[1] + feats[2]) / 3.0
        manual = manual / np.linalg.norm(manual)
        np.testing.assert_allclose(out, manual, atol=1e-12)


class TestMatchQueries:
    def test_exact_match(self):
        queries = np.stack([unit(1, 0, 0), unit(0, 1, 0), unit(0, 0, 1)])
        sim, labels = fusion.match_queries(queries[2][None, :], queries)
        assert labels[0] == 2
        assert sim[0, 2] == pytest.approx(1.0)

    def test_orthogonal_tie_break(self):
        queries = np.stack([unit(1, 0, 0, 0), unit(0, 1, 0, 0)])
        inst = unit(0, 0, 1, 0)
        sim, labels = fusion.match_queries(inst[None, :], queries)
        np.testing.assert_allclose(sim, 0.0, atol=1e-12)
        assert labels[0] == 0

    def test_matches_dot_oracle(self):
        rng = np.random.default_rng(6)
        inst = np.stack([unit(*rng.normal(size=12)) for _ in range(5)])
        quer = np.stack([unit(*rng.normal(size=12)) for _ in range(4)])
        sim, labels = fusion.match_queries(inst, quer)
        for i in range(5):
            for q in range(4):
                assert abs(sim[i, q] - float(inst[i] @ quer[q])) < 1e-9
            assert labels[i] == int(np.argmax(sim[i]))

    def test_unnormalized_rejected(self):
        with pytest.raises(UnnormalizedInput):
            fusion.match_queries(np.array([[2.0, 0.0]]),
                                 np.array([[1.0, 0.0]]))


class TestNoiseRobustness:
    def test_wfb_beats_plain_averaging(self):
        # top-k features equal the ground-truth direction; interpolated
        # features are noisy copies. Balancing must track the truth better
        # than averaging everything, in at least 90 percent of trials.
        dim, k, n_interp, alpha, sigma = 64, 2, 3, 0.5, 0.8
        lam = n_interp * (k - 1)
        wins = 0
        trials = 200
        for seed in range(trials):
            rng = np.random.default_rng(seed)
            g = unit(*rng.normal(size=dim))
            top = [g, g]
            interp = [unit(*(g + rng.normal(scale=sigma, size=dim)))
                      for _ in range(lam)]
            wfb = fusion.wfb_fuse(fusion.FusionInput(
                top_k_features=top, interp_features=interp,
                n_interp=n_interp, alpha=alpha))
            avg = fusion.average_fuse(top + interp)
            wins += float(wfb @ g) >= float(avg @ g)
        assert wins / trials >= 0.90
