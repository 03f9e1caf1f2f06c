"""Tests for lecam.core.hla."""

import math
from collections import Counter

import numpy as np
import pytest

from lecam.core.hla import (
    METRIC_COLUMNS,
    Allele,
    ConditionalModel,
    Diplotype,
    Haplotype,
    HaplotypeIndex,
    Observation,
    build_population,
    degrade,
    em_fit,
    evaluate_reconstructors,
    lecam_fit,
    posterior,
    reconstruct_em,
    reconstruct_lecam,
    reconstruct_naive,
    sample_diplotypes,
    score,
)
from lecam.core.kernels import KernelSpec, RngStream, apply_kernel
from lecam.errors import IncompatibleObservationError, ValidationError

H1 = Haplotype.parse("A*01:01", "B*08:01")
H2 = Haplotype.parse("A*02:01", "B*07:02")
CROSS_1 = Haplotype.parse("A*01:01", "B*07:01")
CROSS_2 = Haplotype.parse("A*02:01", "B*08:01")
TWIN_COMMON = Haplotype.parse("A*03:01", "B*15:01")
TWIN_RARE = Haplotype.parse("A*03:02", "B*15:01")

# H1+H2 against the swapped phase CROSS_1+CROSS_2 for the table example.
PHASE_POSTERIOR = 0.15 * 0.13 / (0.15 * 0.13 + 0.01 * 0.01)


@pytest.fixture(scope="module")
def population():
    return build_population()


@pytest.fixture
def table_example():
    """Heterozygous at both loci with an ambiguous phase."""
    return Diplotype(H1, H2)


def obs(a1, a2, b1, b2):
    return Observation((Allele.parse(a1), Allele.parse(a2)), (Allele.parse(b1), Allele.parse(b2)))


# =============================================================================
# Types and population
# =============================================================================


class TestTypes:
    def test_allele_parse(self):
        a = Allele.parse("A*02:01")
        assert (a.locus, a.group, a.protein) == ("A", "02", "01")
        assert str(a.low_res()) == "A*02"
        assert a.low_res().is_low_res

    @pytest.mark.parametrize("text", ["A02:01", "C*01:01", "A*"])
    def test_allele_rejects(self, text):
        with pytest.raises(ValidationError):
            Allele.parse(text)

    def test_haplotype_loci_checked(self):
        with pytest.raises(ValidationError):
            Haplotype(Allele.parse("B*08:01"), Allele.parse("A*01:01"))

    def test_observation_is_unordered(self):
        assert obs("A*02", "A*01", "B*08", "B*07") == obs("A*01", "A*02", "B*07", "B*08")

    def test_canonical_diplotype(self):
        assert Diplotype(H2, H1).canonical() == Diplotype(H1, H2)


class TestPopulation:
    def test_table(self, population):
        assert len(population.haplotypes) == 15
        assert population.freqs.sum() == pytest.approx(1.0)
        assert population.freqs[population.index(H1)] == pytest.approx(0.15)

    def test_non01_mass(self, population):
        assert 0.30 <= population.non01_mass() <= 0.45

    def test_protein_level_ambiguity(self, population):
        proteins: dict[str, set[str]] = {}
        for h in population.haplotypes:
            for allele in (h.allele_a, h.allele_b):
                proteins.setdefault(str(allele.low_res()), set()).add(allele.protein)
        assert sum(len(p) > 1 for p in proteins.values()) >= 3

    def test_single_identical_image_pair(self, population):
        images = Counter((str(h.allele_a.low_res()), str(h.allele_b.low_res())) for h in population.haplotypes)
        shared = [image for image, n in images.items() if n > 1]
        assert shared == [("A*03", "B*15")]
        assert population.freqs[population.index(TWIN_COMMON)] + population.freqs[population.index(TWIN_RARE)] <= 0.05

    def test_seed_does_not_change_table(self, population):
        assert np.array_equal(build_population(seed=99).freqs, population.freqs)
        assert population.to_frame().shape == (15, 2)

    def test_sampling(self, population):
        assert sample_diplotypes(population, 0, 1) == []
        draws = sample_diplotypes(population, 20000, 1)
        counts = np.zeros(len(population.haplotypes))
        for d in draws:
            counts[population.index(d.h1)] += 1
            counts[population.index(d.h2)] += 1
        assert np.max(np.abs(counts / counts.sum() - population.freqs)) < 0.01
        assert sample_diplotypes(population, 50, 3) == sample_diplotypes(population, 50, 3)

    def test_homozygous_rate(self, population):
        n = 100000
        draws = sample_diplotypes(population, n, 2)
        rate = sum(d.h1 == H1 and d.h2 == H1 for d in draws) / n
        assert abs(rate - 0.15**2) < 3 * math.sqrt(0.0225 * 0.9775 / n)

    def test_negative_size(self, population):
        with pytest.raises(ValidationError):
            sample_diplotypes(population, -1, 0)


# =============================================================================
# Degradation and naive reconstruction
# =============================================================================


class TestDegrade:
    def test_strips_protein_and_phase(self, table_example):
        assert degrade(table_example) == obs("A*01", "A*02", "B*07", "B*08")

    def test_phase_swap_is_invisible(self, table_example):
        assert degrade(table_example.swapped_phase()) == degrade(table_example)

    def test_kernel_dispatch(self, table_example):
        k = KernelSpec.parse("family=hla_degrade")
        assert apply_kernel(k, [table_example], RngStream(0)) == [degrade(table_example)]

    def test_naive(self, table_example):
        d = reconstruct_naive(degrade(table_example))
        assert d == Diplotype(CROSS_1, CROSS_2)


# =============================================================================
# EM
# =============================================================================


class TestEm:
    def test_single_haplotype(self):
        fit = em_fit([degrade(Diplotype(H1, H1))] * 10, [H1])
        assert fit.freqs == pytest.approx([1.0])

    def test_unambiguous_counting(self):
        data = [degrade(Diplotype(H1, H1))] * 3 + [degrade(Diplotype(H1, H2))] * 2 + [degrade(Diplotype(H2, H2))]
        fit = em_fit(data, [H1, H2])
        assert fit.freqs == pytest.approx([8 / 12, 4 / 12])

    def test_two_haplotype_toy(self):
        other = Haplotype.parse("A*03:01", "B*51:01")
        gen = RngStream(5).generator()
        draws = gen.choice(2, size=(10000, 2), p=[0.7, 0.3])
        haps = (H1, other)
        data = [degrade(Diplotype(haps[i], haps[j])) for i, j in draws]
        fit = em_fit(data, haps)
        assert fit.freqs[0] == pytest.approx(0.7, abs=0.02)

    def test_log_likelihood_monotone(self, population):
        data = [degrade(d) for d in sample_diplotypes(population, 500, 4)]
        fit = em_fit(data, population.haplotypes)
        assert fit.monotone
        assert fit.freqs.sum() == pytest.approx(1.0)
        assert fit.iterations >= 1

    def test_incompatible_observation(self):
        with pytest.raises(IncompatibleObservationError):
            em_fit([obs("A*01", "A*01", "B*44", "B*44")], [H1, H2])

    def test_empty(self):
        with pytest.raises(ValidationError):
            em_fit([], [H1])

    def test_reconstruct_picks_common_pair(self, population, table_example):
        d = reconstruct_em(degrade(table_example), population.freqs, population.haplotypes)
        assert {d.h1, d.h2} == {H1, H2}

    def test_posterior(self, population, table_example):
        index = HaplotypeIndex(population.haplotypes)
        post = posterior(degrade(table_example), population.freqs, index)
        assert sum(post.values()) == pytest.approx(1.0)
        best = max(post, key=post.get)
        assert index.diplotype(best) == Diplotype(H1, H2).canonical()
        assert post[best] == pytest.approx(PHASE_POSTERIOR)
        assert {index.diplotype(p) for p in post} == {Diplotype(H1, H2).canonical(), Diplotype(CROSS_1, CROSS_2).canonical()}

    def test_identical_images_stay_tied(self, population):
        data = [degrade(d) for d in sample_diplotypes(population, 2000, 11)]
        fit = em_fit(data, population.haplotypes)
        common, rare = population.index(TWIN_COMMON), population.index(TWIN_RARE)
        assert fit.freqs[common] == pytest.approx(fit.freqs[rare], rel=1e-9)
        d = reconstruct_em(degrade(Diplotype(TWIN_RARE, H1)), fit.freqs, population.haplotypes)
        assert {d.h1, d.h2} == {H1, TWIN_COMMON}

    def test_distinct_partners_are_separated(self, population):
        data = [degrade(d) for d in sample_diplotypes(population, 4000, 12)]
        fit = em_fit(data, population.haplotypes)
        for a, b in [("A*02:05", "B*44:02"), ("A*02:06", "B*35:01"), ("A*03:01", "B*51:02")]:
            i = population.index(Haplotype.parse(a, b))
            assert fit.freqs[i] == pytest.approx(population.freqs[i], abs=0.015)


# =============================================================================
# Le Cam reconstruction
# =============================================================================


class TestLecam:
    def test_support_is_compatible(self, population):
        model = lecam_fit(population, n_train=2000, seed=1)
        index = HaplotypeIndex(population.haplotypes)
        for key, (pairs, probs) in model.table.items():
            assert probs.sum() == pytest.approx(1.0)
            allowed = {index.diplotype(p) for p in index.pairs(key)}
            assert set(pairs) <= allowed

    def test_matches_posterior(self, population, table_example):
        model = lecam_fit(population, n_train=40000, seed=2)
        key = degrade(table_example)
        pairs, probs = model.table[key]
        learned = dict(zip(pairs, probs, strict=True))
        assert learned.get(Diplotype(H1, H2).canonical(), 0.0) == pytest.approx(PHASE_POSTERIOR, abs=0.01)

    def test_single_support_is_deterministic(self, population):
        model = lecam_fit(population, n_train=2000, seed=3)
        key = degrade(Diplotype(H1, H1))
        for i in range(5):
            d, fell_back = reconstruct_lecam(key, model, RngStream(i))
            assert d == Diplotype(H1, H1) and not fell_back

    def test_more_training_moves_closer_to_posterior(self, population):
        index = HaplotypeIndex(population.haplotypes)

        def gap(model: ConditionalModel, key: Observation) -> float:
            pairs, probs = model.table[key]
            learned = dict(zip(pairs, probs, strict=True))
            exact = {index.diplotype(p): v for p, v in posterior(key, population.freqs, index).items()}
            return 0.5 * sum(abs(exact.get(d, 0.0) - learned.get(d, 0.0)) for d in set(exact) | set(learned))

        small, large = [], []
        for seed in range(10):
            coarse = lecam_fit(population, n_train=1000, seed=seed)
            fine = lecam_fit(population, n_train=10000, seed=seed)
            for key in set(coarse.table) & set(fine.table):
                if len(index.pairs(key)) > 1:
                    small.append(gap(coarse, key))
                    large.append(gap(fine, key))
        assert np.mean(large) < np.mean(small)

    def test_reconstructions_are_compatible(self, population):
        observations = [degrade(d) for d in sample_diplotypes(population, 300, 8)]
        model = lecam_fit(population, n_train=1000, seed=9)
        for i, o in enumerate(observations):
            assert degrade(reconstruct_naive(o)) == o
            assert degrade(reconstruct_em(o, population.freqs, population.haplotypes)) == o
            assert degrade(reconstruct_lecam(o, model, RngStream(i))[0]) == o

    def test_unseen_falls_back(self, table_example):
        key = degrade(table_example)
        d, fell_back = reconstruct_lecam(key, ConditionalModel({}, 0), RngStream(0))
        assert fell_back
        assert d == reconstruct_naive(key)


# =============================================================================
# Scoring
# =============================================================================


class TestScore:
    def test_perfect(self, population):
        truth = sample_diplotypes(population, 300, 6)
        m = score(truth, truth, population.haplotypes)
        assert (m.allele_acc, m.haplotype_acc, m.phase_acc) == (1.0, 1.0, 1.0)
        assert m.freq_corr == pytest.approx(1.0)

    def test_swapped_phase(self, population):
        truth = [d for d in sample_diplotypes(population, 300, 6)
                 if d.h1.allele_a != d.h2.allele_a and d.h1.allele_b != d.h2.allele_b]
        m = score(truth, [d.swapped_phase() for d in truth], population.haplotypes)
        assert m.allele_acc == 1.0
        assert m.phase_acc == 0.0
        assert m.n_double_het == len(truth)

    def test_no_double_hets(self):
        m = score([Diplotype(H1, H1)], [Diplotype(H1, H1)], (H1, H2))
        assert math.isnan(m.phase_acc)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            score([Diplotype(H1, H1)], [], (H1,))

    @pytest.mark.slow
    def test_reconstructor_bands(self):
        run = evaluate_reconstructors(seed=7)
        by = run.metrics.set_index("method")
        assert list(run.metrics.columns) == METRIC_COLUMNS
        assert 0.55 <= by.loc["Naive", "allele_acc"] <= 0.70
        assert by.loc["EM", "allele_acc"] > 0.85
        assert by.loc["LeCam", "allele_acc"] > 0.85
        assert abs(by.loc["EM", "allele_acc"] - by.loc["LeCam", "allele_acc"]) < 0.05
        assert by.loc["LeCam", "freq_corr"] >= 0.99
        assert by.loc["LeCam", "freq_corr"] >= by.loc["EM", "freq_corr"]
        assert by.loc["Naive", "freq_corr"] < 0.3
        assert run.em.monotone
