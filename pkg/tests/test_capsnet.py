import math

import numpy as np
import pytest

from qcaps.capsnet import (DeepCapsConfig, LayerKind, LayerSpec, QuantConfig,
                           build_deepcaps_like, build_shallowcaps,
                           dynamic_routing, evaluate, forward, predict,
                           routing_softmax, squash)
from qcaps.fixedpoint import (FixedPointFormat, Quantizer, RandomStream,
                              RoundingScheme)
from qcaps.model_io import LabeledDataset
from qcaps.ops import l2_norm_lastdim


def routing_reference(votes, iterations):
    """Straight-line reference with explicit loops, independent of the
    vectorized implementation."""
    n_in, n_out, d = votes.shape
    b = [[0.0] * n_out for _ in range(n_in)]
    v = None
    for _ in range(iterations):
        c = []
        for i in range(n_in):
            m = max(b[i])
            exps = [math.exp(x - m) for x in b[i]]
            z = sum(exps)
            c.append([e / z for e in exps])
        s = [[sum(c[i][j] * votes[i][j][k] for i in range(n_in))
              for k in range(d)] for j in range(n_out)]
        v = []
        for j in range(n_out):
            nrm2 = sum(x * x for x in s[j])
            f = math.sqrt(nrm2) / (1.0 + nrm2)
            v.append([x * f for x in s[j]])
        for i in range(n_in):
            for j in range(n_out):
                b[i][j] += sum(v[j][k] * votes[i][j][k] for k in range(d))
    return np.array(v)


from helpers import toy_dataset, toy_model


class TestSquash:
    def test_zero_maps_to_zero(self):
        assert np.array_equal(squash(np.zeros(5)), np.zeros(5))

    def test_unit_norm_halves(self):
        v = squash(np.array([1.0, 0.0]))
        assert np.array_equal(v, np.array([0.5, 0.0]))
        assert l2_norm_lastdim(v) == 0.5

    def test_three_four(self):
        v = squash(np.array([3.0, 4.0]))
        want = (25.0 / 26.0) * np.array([0.6, 0.8])
        assert np.allclose(v, want, atol=1e-12)

    def test_norm_below_one_and_monotone(self):
        gen = np.random.default_rng(0)
        directions = gen.standard_normal((50, 6))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        prev = -1.0
        for scale in (0.01, 0.1, 0.5, 1.0, 3.0, 10.0, 100.0):
            norms = l2_norm_lastdim(squash(directions * scale))
            assert np.all(norms > 0) and np.all(norms < 1)
            assert norms[0] > prev
            prev = norms[0]

    def test_direction_preserved(self):
        gen = np.random.default_rng(1)
        s = gen.standard_normal((20, 5))
        v = squash(s)
        cos = np.sum(s * v, axis=-1) / (l2_norm_lastdim(s) * l2_norm_lastdim(v))
        assert np.all(np.abs(cos - 1.0) < 1e-9)

    def test_quantized_input(self):
        q = Quantizer(FixedPointFormat(1, 3), RoundingScheme.TRN)
        v = squash(np.array([0.3, 0.0]), quant=q)
        assert np.array_equal(v, squash(np.array([0.25, 0.0])))


class TestRoutingSoftmax:
    def test_uniform_logits(self):
        c = routing_softmax(np.zeros((2, 3)))
        assert np.array_equal(c, np.full((2, 3), 1.0 / 3.0))

    def test_log_two(self):
        c = routing_softmax(np.array([[math.log(2.0), 0.0]]))
        assert np.allclose(c, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_shift_invariance(self):
        gen = np.random.default_rng(2)
        b = gen.standard_normal((4, 5))
        assert np.allclose(routing_softmax(b), routing_softmax(b + 17.3),
                           atol=1e-12)

    def test_rows_normalized(self):
        gen = np.random.default_rng(3)
        b = gen.standard_normal((10, 7)) * 5
        c = routing_softmax(b)
        assert np.all(np.abs(c.sum(axis=-1) - 1.0) < 1e-6)
        assert np.all((c > 0) & (c < 1))


class TestDynamicRouting:
    def test_single_pair_is_squash(self):
        votes = np.random.default_rng(4).standard_normal((1, 1, 6))
        for iters in (1, 3):
            out = dynamic_routing(votes, iterations=iters)
            assert np.allclose(out, squash(votes[0]), atol=1e-12)

    def test_zero_votes(self):
        out = dynamic_routing(np.zeros((3, 2, 4)), iterations=3)
        assert np.array_equal(out, np.zeros((2, 4)))

    def test_first_iteration_coefficients_uniform(self):
        n_in, n_out = 5, 4
        c = routing_softmax(np.zeros((n_in, n_out)))
        assert np.array_equal(c, np.full((n_in, n_out), 1.0 / n_out))

    def test_matches_reference(self):
        gen = np.random.default_rng(5)
        for trial in range(100):
            n_in = int(gen.integers(1, 6))
            n_out = int(gen.integers(1, 5))
            d = int(gen.integers(1, 5))
            iters = int(gen.integers(1, 5))
            votes = gen.standard_normal((n_in, n_out, d))
            got = dynamic_routing(votes, iterations=iters)
            want = routing_reference(votes, iters)
            assert np.max(np.abs(got - want)) < 1e-9

    def test_iterations_validated(self):
        with pytest.raises(ValueError):
            dynamic_routing(np.zeros((1, 1, 2)), iterations=0)


class TestQuantConfig:
    def test_uniform_ties_routing_to_activations(self):
        model = toy_model()
        cfg = QuantConfig.uniform(model, RoundingScheme.TRN, 8, 6)
        assert cfg.q_w == (8, 8, 8)
        assert cfg.q_a == (6, 6, 6)
        assert cfg.dr_bits(2) == 6

    def test_validate_for(self):
        model = toy_model()
        good = QuantConfig.uniform(model, RoundingScheme.TRN, 4)
        good.validate_for(model)
        with pytest.raises(ValueError, match="covers"):
            QuantConfig(RoundingScheme.TRN, (4, 4), (4, 4), ((2, 4),)) \
                .validate_for(model)
        with pytest.raises(ValueError, match="routing layers"):
            QuantConfig(RoundingScheme.TRN, (4,) * 3, (4,) * 3, ()) \
                .validate_for(model)

    def test_retie(self):
        model = toy_model()
        cfg = QuantConfig.uniform(model, RoundingScheme.TRN, 8)
        moved = cfg.with_q_a((5, 4, 3), retie_dr=True)
        assert moved.dr_bits(2) == 3
        kept = cfg.with_q_a((5, 4, 3))
        assert kept.dr_bits(2) == 8

    def test_negative_bits_rejected(self):
        with pytest.raises(ValueError):
            QuantConfig(RoundingScheme.TRN, (4, -1), (4, 4))


class TestForward:
    def test_shape_and_fp32_default(self):
        model = toy_model(seed=0)
        x = np.random.default_rng(0).random((1, 12, 12))
        out = forward(model, x)
        assert out.shape == (10, 4)
        assert np.all(l2_norm_lastdim(out) < 1.0)

    def test_input_shape_checked(self):
        model = toy_model(seed=0)
        with pytest.raises(ValueError, match="input shape"):
            forward(model, np.zeros((1, 5, 5)))

    def test_high_precision_close_to_fp32(self):
        model = toy_model(seed=1)
        gen = np.random.default_rng(1)
        for _ in range(3):
            x = gen.random((1, 12, 12))
            base = l2_norm_lastdim(forward(model, x))
            cfg = QuantConfig.uniform(model, RoundingScheme.TRN, 24)
            quant = l2_norm_lastdim(forward(model, x, cfg))
            assert np.max(np.abs(base - quant)) < 1e-3

    def test_deviation_shrinks_with_bits(self):
        model = toy_model(seed=2)
        x = np.random.default_rng(2).random((1, 12, 12))
        base = l2_norm_lastdim(forward(model, x))
        devs = []
        for nf in (6, 12, 20):
            cfg = QuantConfig.uniform(model, RoundingScheme.TRN, nf)
            devs.append(np.max(np.abs(l2_norm_lastdim(forward(model, x, cfg)) - base)))
        assert devs[0] > devs[1] > devs[2]

    def test_sr_needs_stream(self):
        model = toy_model(seed=0)
        cfg = QuantConfig.uniform(model, RoundingScheme.SR, 8)
        with pytest.raises(ValueError, match="RandomStream"):
            forward(model, np.zeros((1, 12, 12)), cfg)

    def test_predict_is_argmax_length(self):
        model = toy_model(seed=3)
        x = np.random.default_rng(3).random((1, 12, 12))
        out = forward(model, x)
        assert predict(model, x) == int(np.argmax(l2_norm_lastdim(out)))


class TestEvaluate:
    def test_always_class_zero(self):
        model = toy_model()  # zero weights: all capsules tie at zero length
        ds = toy_dataset(20, labels=np.zeros(20))
        assert evaluate(model, ds) == 1.0

    def test_uniform_labels_hit_rate(self):
        model = toy_model()
        labels = np.repeat(np.arange(10), 10)
        ds = toy_dataset(100, labels=labels)
        assert evaluate(model, ds) == 0.10

    def test_fp32_seed_independent(self):
        model = toy_model(seed=4)
        ds = toy_dataset(10, seed=5)
        assert evaluate(model, ds, seed=0) == evaluate(model, ds, seed=99)

    def test_permutation_invariant_deterministic_schemes(self):
        model = toy_model(seed=5)
        ds = toy_dataset(16, seed=6)
        cfg = QuantConfig.uniform(model, RoundingScheme.TRN, 6)
        perm = np.random.default_rng(7).permutation(len(ds))
        shuffled = LabeledDataset(ds.images[perm], ds.labels[perm])
        assert evaluate(model, ds, cfg) == evaluate(model, shuffled, cfg)

    def test_sr_deterministic_given_seed(self):
        model = toy_model(seed=8)
        ds = toy_dataset(8, seed=9)
        cfg = QuantConfig.uniform(model, RoundingScheme.SR, 4)
        assert evaluate(model, ds, cfg, seed=3) == evaluate(model, ds, cfg, seed=3)

    def test_empty_dataset_rejected(self):
        model = toy_model()
        with pytest.raises(ValueError, match="empty"):
            evaluate(model, toy_dataset(0))


class TestBuilders:
    def test_shallowcaps_reference_shape(self):
        model = build_shallowcaps(num_classes=10, input_shape=(1, 28, 28))
        assert model.num_layers == 3
        assert model.output_shapes[-1] == (10, 16)
        assert model.layers[0].out_channels == 256
        assert model.layers[1].caps_types == 32

    def test_width_factor(self):
        model = build_shallowcaps(width_factor=1 / 8)
        assert model.layers[0].out_channels == 32
        assert model.layers[1].caps_types == 4
        assert model.layers[1].d_out == 8
        assert model.layers[2].d_out == 16

    def test_param_counts(self):
        model = build_shallowcaps(width_factor=1 / 8)
        # primary capsules: 4 types * 6*6 positions, votes into 10 16-D caps
        n_primary = 4 * 6 * 6
        assert model.param_counts[2] == n_primary * 10 * 16 * 8
        assert model.param_counts[0] == 32 * 1 * 9 * 9 + 32
        assert model.weight_shapes[2] == (n_primary, 10, 16, 8)

    def test_deepcaps_layer_census(self):
        model = build_deepcaps_like(DeepCapsConfig())
        assert model.num_layers == 18
        caps_convs = [s for s in model.layers if s.kind is LayerKind.CONV_CAPS]
        assert len(caps_convs) == 16
        parallel = [s for s in caps_convs if s.name.endswith(".par")]
        assert len(parallel) == 4
        assert sum(1 for s in caps_convs if s.uses_dynamic_routing) == 1
        assert model.layers[-1].uses_dynamic_routing

    def test_deepcaps_zero_input_zero_caps(self):
        model = build_deepcaps_like(seed=11)
        out = forward(model, np.zeros((1, 28, 28)))
        assert np.array_equal(out, np.zeros((10, 16)))

    def test_deepcaps_quantized_forward_runs(self):
        model = build_deepcaps_like(seed=12)
        cfg = QuantConfig.uniform(model, RoundingScheme.TRN, 8)
        out = forward(model, np.random.default_rng(0).random((1, 28, 28)), cfg)
        assert out.shape == (10, 16)

    def test_layer_spec_validation(self):
        with pytest.raises(ValueError, match="dynamic routing"):
            LayerSpec(LayerKind.CONV, uses_dynamic_routing=True)
        with pytest.raises(ValueError, match="route"):
            LayerSpec(LayerKind.FC_CAPS, num_caps_out=10, d_out=4,
                      uses_dynamic_routing=False)
        with pytest.raises(ValueError, match="bias"):
            LayerSpec(LayerKind.FC_CAPS, num_caps_out=10, d_out=4,
                      uses_dynamic_routing=True, has_bias=True)
