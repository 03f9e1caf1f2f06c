"""Tests for lecam.core.kernels."""

import numpy as np
import pytest

from lecam.core.divergences import mmd2_unbiased
from lecam.core.kernels import KernelFamily, KernelSpec, RngStream, apply_kernel, pathwise_apply, quantize
from lecam.errors import ValidationError


class TestRngStream:
    def test_replays(self):
        a = RngStream(5, 2).child(3).generator().standard_normal(4)
        b = RngStream(5, 2).child(3).generator().standard_normal(4)
        assert np.array_equal(a, b)

    def test_children_differ(self):
        stream = RngStream(5)
        assert not np.array_equal(stream.child(0).generator().random(3), stream.child(1).generator().random(3))

    def test_negative_seed_rejected(self):
        with pytest.raises(ValidationError):
            RngStream(-1)


class TestKernelSpec:
    def test_parse_roundtrip_text(self):
        k = KernelSpec.parse("family=additive_gaussian; sigma=4.899,0")
        assert k.family is KernelFamily.ADDITIVE_GAUSSIAN
        assert k.params == (4.899, 0.0)
        assert KernelSpec.parse(k.to_text()) == k

    def test_parse_tied_and_quantization(self):
        assert KernelSpec.parse("family=additive_gaussian; sigma=2; tied=true").tied
        assert KernelSpec.parse("family=quantization; delta=0.5").params == (0.5,)
        assert KernelSpec.parse("family=identity") == KernelSpec.identity()

    @pytest.mark.parametrize("text", [
        "family=wavelet",
        "family=additive_gaussian; sigma=a,b",
        "family=identity; colour=red",
        "sigma",
    ])
    def test_parse_rejects(self, text):
        with pytest.raises(ValidationError):
            KernelSpec.parse(text)

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            KernelSpec.additive_gaussian([-1.0])
        with pytest.raises(ValidationError):
            KernelSpec.quantization(0.0)
        with pytest.raises(ValidationError):
            KernelSpec(KernelFamily.IDENTITY, (1.0,))

    def test_sigma_broadcasts(self):
        assert np.array_equal(KernelSpec.additive_gaussian(2.0).sigma(3), [2.0, 2.0, 2.0])
        with pytest.raises(ValidationError):
            KernelSpec.additive_gaussian([1.0, 2.0]).sigma(3)


class TestApplyKernel:
    def test_deterministic_given_stream(self, rng):
        x = rng.normal(size=(10, 2))
        k = KernelSpec.additive_gaussian([1.0, 0.5])
        assert np.array_equal(apply_kernel(k, x, RngStream(9)), apply_kernel(k, x, RngStream(9)))

    def test_identity_copies(self, rng):
        x = rng.normal(size=(5, 1))
        out = apply_kernel(KernelSpec.identity(), x, RngStream(0))
        assert np.array_equal(out, x) and out is not x

    def test_quantize_idempotent(self, rng):
        x = rng.normal(size=(100, 1)) * 3
        once = quantize(x, 0.5)
        assert np.array_equal(quantize(once, 0.5), once)
        assert np.all(np.abs(once - x) <= 0.25 + 1e-12)

    def test_additive_variance(self):
        """sigma = 5 adds 25 to the variance of a zero sample."""
        out = apply_kernel(KernelSpec.additive_gaussian(5.0), np.zeros((5000, 1)), RngStream(1))
        assert out.var(ddof=1) == pytest.approx(25.0, rel=0.15)

    def test_pathwise(self):
        out = pathwise_apply(KernelSpec.additive_gaussian(2.0), [[0.0]], [[1.5]])
        assert out[0, 0] == pytest.approx(3.0)

    def test_pathwise_checks_noise_shape(self):
        k = KernelSpec.additive_gaussian([1.0, 2.0])
        x = np.zeros((3, 2))
        with pytest.raises(ValidationError):
            pathwise_apply(k, x, np.ones((2, 3)))
        with pytest.raises(ValidationError):
            pathwise_apply(k, x, np.ones(6))
        assert pathwise_apply(KernelSpec.additive_gaussian(2.0), [0.0, 1.0], [1.0, 1.0])[:, 0] == pytest.approx([2.0, 3.0])

    def test_pathwise_needs_gaussian(self):
        with pytest.raises(ValidationError):
            pathwise_apply(KernelSpec.quantization(1.0), [[0.0]], [[1.0]])

    def test_composition_adds_variances(self):
        """Applying sigma=3 then sigma=4 matches one draw with sigma=5."""
        x = np.zeros((1000, 1))
        twice = apply_kernel(KernelSpec.additive_gaussian(4.0), apply_kernel(KernelSpec.additive_gaussian(3.0), x,
                                                                               RngStream(1)), RngStream(2))
        once = apply_kernel(KernelSpec.additive_gaussian(5.0), x, RngStream(3))
        assert abs(mmd2_unbiased(twice, once, 5.0)) < 0.01

    def test_ignores_labels(self, rng):
        """Permuting the inputs permutes the outputs; nothing else leaks in."""
        x = rng.normal(size=(50, 2))
        perm = rng.permutation(50)
        k = KernelSpec.quantization(0.3)
        assert np.array_equal(apply_kernel(k, x, RngStream(0))[perm], apply_kernel(k, x[perm], RngStream(0)))
