import numpy as np
import pytest

from yt8m_lab.errors import BadSpecError, UnknownArchitectureError
from yt8m_lab.models.specs import ArchitectureSpec, RegConfig
from yt8m_lab.services import modelzoo

from tests.helpers import gradient_check

INPUT_DIM = 12
CLASSES = 5

# every zoo architecture at the gradient-check geometry; the two deep nets are narrowed
ZOO = [
    ("logreg", {}),
    ("moe", {"num_mixtures": 1}),
    ("moe", {"num_mixtures": 2}),
    ("moe", {"num_mixtures": 7}),
    ("moe_c", {}),
    ("mlp2000", {}),
    ("mlp512_256", {}),
    ("mlp_res5", {}),
    ("mlp_a", {"hidden_sizes": [16] + [10] * 8}),
    ("mlp_e", {"hidden_sizes": [16, 10, 10]}),
    ("ae_clf", {}),
    ("cnn1", {}),
    ("mlp2048", {"hidden_sizes": [32]}),
]


def _ids(entry):
    name, fields = entry
    return name + "".join(f"-{k}{v}" for k, v in fields.items() if k == "num_mixtures")


class TestParameterCounts:

    def test_logreg_full_size(self):
        graph = modelzoo.build_named("logreg", 1152, 4800)
        assert graph.parameter_count() == 1152 * 4800 + 4800 == 5_534_400

    def test_moe_shapes(self):
        graph = modelzoo.build_named("moe", INPUT_DIM, CLASSES, num_mixtures=2)
        params = graph.parameters()
        assert params["gates/weight"].shape == (INPUT_DIM, CLASSES * 3)
        assert "gates/bias" not in params
        assert params["experts/weight"].shape == (INPUT_DIM, CLASSES * 2)

    def test_fixed_skips_are_not_trainable(self):
        graph = modelzoo.build_named("mlp_a", INPUT_DIM, CLASSES, hidden_sizes=[16] + [10] * 8)
        assert "skip0_3/weight" in graph.trainable_keys()
        assert "skip2_4/weight" not in graph.trainable_keys()
        assert graph.parameter_count(trainable_only=True) < graph.parameter_count()


class TestMixtureOfExperts:

    @pytest.mark.parametrize("mixtures", [1, 2, 7])
    def test_gate_probabilities_sum_to_one(self, mixtures, rng):
        graph = modelzoo.build_named("moe", INPUT_DIM, CLASSES, seed=3, num_mixtures=mixtures)
        graph.forward(rng.standard_normal((6, INPUT_DIM)) * 5)
        gates = graph.activation("gates/softmax").reshape(6, CLASSES, mixtures + 1)
        np.testing.assert_allclose(gates.sum(axis=-1), 1.0, atol=1e-9)

    def test_zero_parameters_pin_the_zero_expert(self, rng):
        graph = modelzoo.build_named("moe", INPUT_DIM, CLASSES, num_mixtures=1)
        for key, value in graph.parameters().items():
            graph.set_parameter(key, np.zeros_like(value))
        out = graph.forward(rng.standard_normal((4, INPUT_DIM)))
        np.testing.assert_array_equal(out, 0.25)

    def test_scores_stay_below_one(self, rng):
        graph = modelzoo.build_named("moe", INPUT_DIM, CLASSES, num_mixtures=4)
        for key, value in graph.parameters().items():
            graph.set_parameter(key, rng.standard_normal(value.shape) * 0.5)
        out = graph.forward(rng.standard_normal((20, INPUT_DIM)))
        assert np.all((out >= 0) & (out < 1))

    def test_moe_c_gates_read_raw_input(self):
        graph = modelzoo.build_named("moe_c", INPUT_DIM, CLASSES)
        assert graph.by_name["gates"].inputs == ("input",)
        assert graph.by_name["experts"].inputs == ("expert_hidden/relu",)


class TestResidualEquivalence:

    @pytest.mark.parametrize("name, fields", [
        ("mlp_res5", {}),
        ("mlp_a", {}),
    ])
    def test_zeroed_skips_match_skip_free_twin(self, name, fields, rng):
        with_skips = modelzoo.build_named(name, INPUT_DIM, CLASSES, seed=9, **fields)
        twin = modelzoo.build_named(name, INPUT_DIM, CLASSES, seed=9, skip_connections=False, **fields)
        keys = modelzoo.skip_keys(with_skips)
        assert keys
        for key in keys:
            with_skips.set_parameter(key, np.zeros_like(with_skips.parameters()[key]))
        X = rng.standard_normal((100, INPUT_DIM))
        np.testing.assert_array_equal(with_skips.forward(X), twin.forward(X))

    def test_skips_change_the_output(self, rng):
        with_skips = modelzoo.build_named("mlp_res5", INPUT_DIM, CLASSES, seed=9)
        twin = modelzoo.build_named("mlp_res5", INPUT_DIM, CLASSES, seed=9, skip_connections=False)
        X = rng.standard_normal((5, INPUT_DIM))
        assert not np.array_equal(with_skips.forward(X), twin.forward(X))


class TestEveryArchitecture:

    @pytest.mark.parametrize("entry", ZOO, ids=_ids)
    def test_gradients_match_finite_differences(self, entry, rng):
        name, fields = entry
        graph = modelzoo.build_named(name, INPUT_DIM, CLASSES, seed=0, **fields)
        X = rng.standard_normal((4, INPUT_DIM))
        assert gradient_check(graph, X) <= 1e-4

    @pytest.mark.parametrize("seed", range(6))
    def test_cnn1_gradients_stable_across_seeds(self, seed):
        graph = modelzoo.build_named("cnn1", INPUT_DIM, CLASSES, seed=seed)
        X = np.random.default_rng(seed).standard_normal((4, INPUT_DIM))
        assert gradient_check(graph, X, seed=seed) <= 1e-4

    def test_cnn1_convolution_feeds_the_pool_directly(self):
        graph = modelzoo.build_named("cnn1", INPUT_DIM, CLASSES)
        assert graph.by_name["pool"].inputs == ("conv",)
        assert "conv/relu" not in graph.by_name

    @pytest.mark.parametrize("entry", ZOO, ids=_ids)
    def test_output_shape_and_range(self, entry, rng):
        name, fields = entry
        graph = modelzoo.build_named(name, INPUT_DIM, CLASSES, seed=1, **fields)
        out = graph.forward(rng.standard_normal((7, INPUT_DIM)))
        assert out.shape == (7, CLASSES)
        if graph.output_activation == "softmax":
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        else:
            assert np.all((out > 0) & (out < 1))

    def test_default_heads(self):
        assert modelzoo.build_named("mlp2000", 4, 2, hidden_sizes=[3, 3]).output_activation == "softmax"
        assert modelzoo.build_named("cnn1", 4, 2, hidden_sizes=[3]).output_activation == "softmax"
        assert modelzoo.build_named("mlp512_256", 4, 2, hidden_sizes=[3, 3]).output_activation == "sigmoid"

    def test_softmax_override(self):
        graph = modelzoo.build_named("mlp512_256", 4, 2, hidden_sizes=[3, 3], output_activation="softmax")
        assert graph.output_activation == "softmax"

    def test_logreg_regularization_variants(self):
        assert modelzoo.build_named("logreg", 4, 2).reg == RegConfig(norm="l2", penalty=1e-8)
        graph = modelzoo.build_named("logreg", 4, 2, reg={"norm": "l1", "penalty": 1e-10})
        assert graph.reg == RegConfig(norm="l1", penalty=1e-10)

    def test_feature_subset_spec_is_kept(self):
        graph = modelzoo.build(ArchitectureSpec(name="logreg", features="rgb"), 1024, 3)
        assert graph.features == "rgb"


class TestSpecErrors:

    def test_unknown_architecture(self):
        with pytest.raises(UnknownArchitectureError):
            modelzoo.build_named("lstm", 4, 2)

    def test_wrong_hidden_length(self):
        with pytest.raises(BadSpecError):
            modelzoo.build_named("mlp512_256", 4, 2, hidden_sizes=[3])

    def test_moe_softmax_rejected(self):
        with pytest.raises(BadSpecError):
            modelzoo.build_named("moe", 4, 2, output_activation="softmax")

    def test_keep_prob_range(self):
        with pytest.raises(BadSpecError):
            modelzoo.build_named("mlp_e", 4, 2, keep_prob=0.0)

    def test_mlp_e_projection_widths(self):
        with pytest.raises(BadSpecError):
            modelzoo.build_named("mlp_e", 4, 2, hidden_sizes=[3, 4, 5])

    def test_zero_mixtures(self):
        with pytest.raises(BadSpecError):
            modelzoo.build_named("moe", 4, 2, num_mixtures=0)
