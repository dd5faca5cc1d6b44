"""Closed-form constants: values, scaling laws, self-consistency."""

import math

import numpy as np
import pytest

from softmatch.bounds import (
    BoundReport,
    Ingredient,
    bound_bounded_contraction,
    bound_component_taus,
    bound_cross_attention,
    bound_pointwise_query,
    bound_unbounded_equal_n,
    bound_unbounded_gaussian,
    loose_gradient_constant,
    ratio_lemma_bound,
    reevaluate,
    tau_lookup,
    tau_pi,
    tau_softmatch_bounded,
    tight_gradient_constant,
)
from softmatch.errors import (
    DegeneratePotential,
    InvalidInput,
    RequiresCompactDomain,
)
from softmatch.kernels import (
    AttentionConfig,
    IdentityLookup,
    LinearLookup,
    apply_lookup,
)
from softmatch.measures import DomainBox, empirical
from softmatch.potentials import (
    GAUSSIAN_LIP,
    DotProduct,
    Gaussian,
    Provenance,
    RegularityStats,
    regularity_stats,
)
from softmatch.transport import w1


def stats_with(lip_left, lip_right, eps, sup=None):
    prov = {
        k: Provenance("analytic")
        for k in ("eps_g", "sup_g", "lip_left", "lip_right", "lip_joint")
    }
    return RegularityStats(
        eps_g=eps,
        sup_g=max(lip_left, lip_right, eps, 1.0) if sup is None else sup,
        lip_left=lip_left,
        lip_right=lip_right,
        lip_joint=max(lip_left, lip_right),
        provenance=prov,
    )


class TestTauPi:
    @pytest.mark.parametrize("d,want", [(1, 1.0), (3, 3.0), (64, 64.0)])
    def test_equals_dimension(self, d, want):
        assert tau_pi(d) == want

    def test_invalid(self):
        with pytest.raises(InvalidInput):
            tau_pi(0)


class TestTauLookup:
    def test_identity(self):
        assert tau_lookup(IdentityLookup(4)) == 1.0

    def test_scaled_identity(self):
        assert tau_lookup(LinearLookup(2.0 * np.eye(3))) == 2.0

    def test_random_matrix_column_norm_and_sampled_ratios(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(3, 3))
        lk = LinearLookup(w)
        want = float(np.abs(w).sum(axis=0).max())
        assert tau_lookup(lk) == want
        # sampled W1 ratios on Dirac pairs never exceed the analytic value
        for _ in range(100):
            a, b = rng.normal(size=(2, 3))
            num = w1(
                apply_lookup(lk, empirical([a])), apply_lookup(lk, empirical([b]))
            ).value
            den = float(np.abs(a - b).sum())
            assert num <= want * den + 1e-9


class TestTauSoftmatch:
    def test_constant_potential_is_zero(self):
        box = DomainBox.cube(1.0, 2)
        stats = regularity_stats(DotProduct(0.0, 2), box)
        assert tau_softmatch_bounded(stats, box) == 0.0

    def test_formula_arithmetic(self):
        box = DomainBox([0.0], [1.0])
        s = 0.7
        stats = stats_with(s, s, 0.25)
        # 2 (s + s) diam / eps with diam = 1
        assert tau_softmatch_bounded(stats, box) == 2.0 * (2 * s) * 1.0 / 0.25

    def test_linear_in_diameter(self):
        stats = stats_with(0.3, 0.4, 0.5)
        small = tau_softmatch_bounded(stats, DomainBox.cube(1.0, 2))
        big = tau_softmatch_bounded(stats, DomainBox.cube(2.0, 2))
        assert big == 2.0 * small

    def test_guards(self):
        stats = stats_with(1.0, 1.0, 0.5)
        with pytest.raises(RequiresCompactDomain):
            tau_softmatch_bounded(stats, DomainBox.unbounded(2))
        degenerate = stats_with(1.0, 1.0, 0.0)
        with pytest.raises(DegeneratePotential):
            tau_softmatch_bounded(degenerate, DomainBox.cube(1.0, 2))


class TestBoundedContraction:
    def test_product_of_components(self):
        box = DomainBox.cube(1.0, 2)
        stats = stats_with(0.5, 0.75, 1.0)  # tau_psi = 2 * 1.25 * 4 / 1 = 10
        cfg = AttentionConfig(DotProduct(1.0, 2), IdentityLookup(2))
        rep = bound_bounded_contraction(cfg, box, stats=stats)
        t_psi = tau_softmatch_bounded(stats, box)
        assert rep.value == 2.0 * t_psi * 1.0
        assert rep.status == "ok"
        assert rep.value == rep.ingredients["tau_pi"].value * \
            rep.ingredients["tau_softmatch"].value * rep.ingredients["tau_lookup"].value

    def test_identity_d2_tau_psi_5_gives_10(self):
        box = DomainBox([0.0, 0.0], [1.0, 1.0])  # l1 diameter 2
        stats = stats_with(0.5, 0.75, 1.0)       # 2 * 1.25 * 2 / 1 = 5
        assert tau_softmatch_bounded(stats, box) == 5.0
        cfg = AttentionConfig(DotProduct(1.0, 2), IdentityLookup(2))
        rep = bound_bounded_contraction(cfg, box, stats=stats)
        assert rep.value == 10.0

    def test_constant_potential_collapses_to_zero(self):
        box = DomainBox.cube(1.0, 2)
        cfg = AttentionConfig(DotProduct(0.0, 2), IdentityLookup(2))
        assert bound_bounded_contraction(cfg, box).value == 0.0

    def test_linear_in_lookup_constant(self):
        box = DomainBox.cube(1.0, 2)
        base = AttentionConfig(DotProduct(1.0, 2), LinearLookup(np.eye(2)))
        double = AttentionConfig(DotProduct(1.0, 2), LinearLookup(2.0 * np.eye(2)))
        assert bound_bounded_contraction(double, box).value == \
            2.0 * bound_bounded_contraction(base, box).value

    def test_reevaluate_bitwise(self):
        box = DomainBox.cube(1.5, 3)
        cfg = AttentionConfig(Gaussian(3), LinearLookup(0.5 * np.eye(3)))
        rep = bound_bounded_contraction(cfg, box)
        assert reevaluate(rep) == rep.value

    def test_inapplicable_on_infinite_seminorm(self):
        box = DomainBox.cube(1.0, 2)
        stats = stats_with(math.inf, 1.0, 0.5, sup=math.inf)
        cfg = AttentionConfig(DotProduct(1.0, 2), IdentityLookup(2))
        rep = bound_bounded_contraction(cfg, box, stats=stats)
        assert rep.status == "inapplicable"

    def test_component_taus_report(self):
        box = DomainBox.cube(1.0, 2)
        cfg = AttentionConfig(Gaussian(2), IdentityLookup(2))
        rep = bound_component_taus(cfg, box)
        assert rep.theorem == "ComponentTaus"
        assert rep.value == bound_bounded_contraction(cfg, box).value


class TestPointwiseCorollary:
    def test_d1_collapses_dimension_factor(self):
        box = DomainBox([0.0], [1.0])
        stats = stats_with(0.5, 0.5, 1.0)
        cfg = AttentionConfig(DotProduct(1.0, 1), IdentityLookup(1))
        got = bound_pointwise_query(cfg, box, stats=stats)
        assert got == 1.0 * 1.0 * 2.0 * 0.5 * 1.0 / 1.0

    def test_d4_dimension_factor_is_8(self):
        box = DomainBox.cube(1.0, 4)
        stats = stats_with(0.5, 0.5, 1.0)
        cfg = AttentionConfig(DotProduct(1.0, 4), IdentityLookup(4))
        got = bound_pointwise_query(cfg, box, stats=stats)
        # 4^{3/2} = 8 times 2 lip_left diam / eps
        assert got == 8.0 * (2.0 * 0.5 * box.diameter_l1() / 1.0)

    def test_constant_potential_is_zero(self):
        box = DomainBox.cube(1.0, 2)
        cfg = AttentionConfig(DotProduct(0.0, 2), IdentityLookup(2))
        assert bound_pointwise_query(cfg, box) == 0.0


class TestUnboundedGaussian:
    def test_min_one_support_term(self):
        rep = bound_unbounded_gaussian(IdentityLookup(2), 2, 1, 5)
        assert rep.ingredients["support_term"].value == pytest.approx(
            math.sqrt(1.0 / (2.0 * math.e)), abs=1e-12
        )
        assert rep.ingredients["support_term"].value == pytest.approx(0.4289, abs=1e-4)

    def test_formula_value(self):
        d, t_l, n = 2, 1.0, 8
        rep = bound_unbounded_gaussian(IdentityLookup(d), d, n, n)
        bracket = 1.0 + (math.sqrt(d) + 2.0) + math.sqrt(d) * math.sqrt(
            math.log(n) + 1.0 / (2.0 * math.e)
        ) * GAUSSIAN_LIP
        assert rep.value == pytest.approx(2.0 * d * t_l * bracket, rel=1e-15)

    def test_corollary_identity_at_equal_sizes(self):
        for d in (1, 2, 4):
            for n in (1, 2, 7, 16):
                thm = bound_unbounded_gaussian(IdentityLookup(d), d, n, n)
                cor = bound_unbounded_equal_n(IdentityLookup(d), d, n)
                assert cor.value == thm.value

    def test_monotone_in_min_size(self):
        b4 = bound_unbounded_gaussian(IdentityLookup(2), 2, 4, 100).value
        b16 = bound_unbounded_gaussian(IdentityLookup(2), 2, 16, 100).value
        assert b4 <= b16

    def test_reevaluate_bitwise(self):
        rep = bound_unbounded_gaussian(LinearLookup(1.3 * np.eye(3)), 3, 5, 9)
        assert reevaluate(rep) == rep.value

    def test_tight_constant_below_loose(self):
        for d in (1, 2, 4):
            tight = tight_gradient_constant(d, restarts=6)
            assert 0.0 < tight <= loose_gradient_constant(d)


class TestCrossAttention:
    def test_constant_potential_is_zero(self):
        box = DomainBox.cube(1.0, 2)
        cfg = AttentionConfig(DotProduct(0.0, 2), IdentityLookup(2))
        assert bound_cross_attention(cfg, box, np.zeros(2)) == 0.0

    def test_identity_lookup_d1_plugin(self):
        box = DomainBox([-1.0], [1.0])
        cfg = AttentionConfig(Gaussian(1), IdentityLookup(1))
        stats = regularity_stats(cfg.potential, box)
        got = bound_cross_attention(cfg, box, np.array([0.3]))
        assert got == 1.0 * 1.0 * 2.0 * GAUSSIAN_LIP * 2.0 / stats.eps_g

    def test_monotone_in_diameter(self):
        cfg = AttentionConfig(Gaussian(2), IdentityLookup(2))
        q = np.zeros(2)
        small = bound_cross_attention(cfg, DomainBox.cube(0.5, 2), q)
        big = bound_cross_attention(cfg, DomainBox.cube(1.0, 2), q)
        assert small <= big

    def test_degenerates_for_zero_query_dot_product(self):
        # sharp edge of the formula: at q = 0 a dot-product potential is
        # constant in its second argument, the per-query seminorm vanishes,
        # and the cap is 0 even though the two attention outputs (plain
        # means of X and Y) differ; the constant does not cover this regime
        box = DomainBox.cube(1.0, 1)
        cfg = AttentionConfig(DotProduct(1.0, 1), IdentityLookup(1))
        q = np.zeros(1)
        assert bound_cross_attention(cfg, box, q) == 0.0
        x, y = empirical([[0.5]]), empirical([[-0.5]])
        from softmatch.kernels import attention_kernel

        dev = abs(
            float(attention_kernel(cfg, q, x)[0] - attention_kernel(cfg, q, y)[0])
        )
        assert dev == 1.0  # the outputs really do differ


class TestRatioLemmaBound:
    def test_n1(self):
        assert ratio_lemma_bound(1) == math.sqrt(1.0 / (2.0 * math.e))
        assert ratio_lemma_bound(1) == pytest.approx(0.42888, abs=1e-5)

    def test_formula(self):
        for n in (2, 7, 100, 1000):
            assert ratio_lemma_bound(n) == math.sqrt(
                math.log(n) + 1.0 / (2.0 * math.e)
            )

    def test_monotone(self):
        vals = [ratio_lemma_bound(n) for n in range(1, 50)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestReportStructure:
    def test_every_formula_ingredient_present(self):
        rep = bound_unbounded_gaussian(IdentityLookup(2), 2, 3, 4)
        for key in ("tau_pi", "tau_lookup", "sup_g", "lip_g", "support_term",
                    "gradient_constant_loose"):
            assert key in rep.ingredients

    def test_failed_assumption_requires_inapplicable(self):
        with pytest.raises(InvalidInput):
            BoundReport(
                "BoundedContraction",
                1.0,
                {"tau_pi": Ingredient(1.0, Provenance("analytic"))},
                (("E compact", False),),
                status="ok",
            )

    def test_to_dict_provenance(self):
        box = DomainBox.cube(1.0, 2)
        cfg = AttentionConfig(Gaussian(2), IdentityLookup(2))
        d = bound_bounded_contraction(cfg, box).to_dict()
        assert d["ingredients"]["eps_g"]["provenance"]["kind"] == "analytic"
        assert d["theorem"] == "BoundedContraction"
