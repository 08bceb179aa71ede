#include <catch2/catch_amalgamated.hpp>

#include <realm/adaptive.hpp>

#include "testmodels.hpp"
#include "testutil.hpp"

#include <numbers>

using namespace realm;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

constexpr double kPi = std::numbers::pi;

std::shared_ptr<const ProjectorSet> basis_set(Eigen::Index d, const std::string& name) {
    std::vector<Projector> members;
    for (Eigen::Index i = 0; i < d; ++i) {
        CVector e = testutil::basis_state(d, i);
        members.push_back(Projector::from_matrix(testutil::ket_bra(e, e)));
    }
    return std::make_shared<const ProjectorSet>(std::move(members), name);
}

std::shared_ptr<const ProjectorSet> block_pair_set(Eigen::Index d, Eigen::Index split,
                                                   const std::string& name) {
    COperator low = COperator::Zero(d, d);
    for (Eigen::Index i = 0; i < split; ++i) low(i, i) = 1.0;
    COperator high = COperator::Identity(d, d) - low;
    std::vector<Projector> members;
    members.push_back(Projector::from_matrix(low));
    members.push_back(Projector::from_matrix(high));
    return std::make_shared<const ProjectorSet>(std::move(members), name);
}

/// Hadamard-like involution on C^2; exp(-iH) applies it in one unit of time.
std::shared_ptr<const Hamiltonian> slit_hamiltonian() {
    COperator w = (testutil::pauli_x() + testutil::pauli_z()) / std::sqrt(2.0);
    return std::make_shared<Hamiltonian>((kPi / 2.0) * (COperator::Identity(2, 2) - w));
}

}  // namespace

TEST_CASE("branch rules produce the advertised assignments", "[adaptive]") {
    testutil::Rng rng(11);

    SECTION("prune with p_min = 0 coincides with fixed refinement") {
        auto m = testutil::make_record_model(rng, 3);
        BranchTree tree(TimeGrid(0.0, {1.0, 3.0}), m.h, m.psi0);
        tree = extend_tree_uniform(tree, StepSet(m.record_set));

        StepAssignment fixed = apply_rule(tree, BranchRule::fixed(m.probe_set));
        StepAssignment prune = apply_rule(tree, BranchRule::prune_threshold(m.probe_set, 0.0));
        REQUIRE(fixed.size() == 3);
        REQUIRE(prune.size() == fixed.size());
        for (const auto& [label, set] : fixed) {
            REQUIRE_FALSE(set.is_trivial());
            REQUIRE(set.set_ptr() == m.probe_set);
            REQUIRE(prune.at(label).set_ptr() == m.probe_set);
        }
    }

    SECTION("zero-probability leaves stay unrefined under any positive p_min") {
        auto m = testutil::make_record_model(rng, 3);
        m.psi0 = tensor_state(testutil::basis_state(3, 0), testutil::basis_state(3, 0));
        BranchTree tree(TimeGrid(0.0, {1.0, 3.0}), m.h, m.psi0);
        tree = extend_tree_uniform(tree, StepSet(m.record_set));

        StepAssignment a = apply_rule(tree, BranchRule::prune_threshold(m.record_set, 1e-12));
        REQUIRE_FALSE(a.at(BranchLabel{0}).is_trivial());
        REQUIRE(a.at(BranchLabel{1}).is_trivial());
        REQUIRE(a.at(BranchLabel{2}).is_trivial());
        REQUIRE_NOTHROW(tree.extend(a));
    }

    SECTION("follow_support keeps high-mass cells and lumps the rest") {
        auto h0 = std::make_shared<Hamiltonian>(COperator::Zero(4, 4));
        auto cells = basis_set(4, "cells");
        CVector psi(4);
        psi << std::sqrt(0.49), std::sqrt(0.47), std::sqrt(0.04), 0.0;
        BranchTree tree(TimeGrid(0.0, {1.0, 2.0}), h0, psi);

        StepAssignment a = apply_rule(tree, BranchRule::follow_support(cells, 0.1));
        const StepSet& root_set = a.at(BranchLabel{});
        REQUIRE_FALSE(root_set.is_trivial());
        REQUIRE(root_set.set().size() == 3);
        COperator lump = root_set.set().member(2).matrix();
        COperator expected = cells->member(2).matrix() + cells->member(3).matrix();
        REQUIRE((lump - expected).norm() <= 1e-12);
        BranchTree grown = tree.extend(a);
        REQUIRE(grown.leaves().size() == 3);
        REQUIRE(grown.node(BranchLabel{0}).probability == Approx(0.49).margin(1e-12));
        REQUIRE(grown.node(BranchLabel{2}).probability == Approx(0.04).margin(1e-12));

        CVector flat = CVector::Constant(4, 0.5);
        BranchTree even(TimeGrid(0.0, {1.0, 2.0}), h0, flat);
        StepAssignment all = apply_rule(even, BranchRule::follow_support(cells, 0.1));
        REQUIRE(all.at(BranchLabel{}).set_ptr() == cells);

        StepAssignment none = apply_rule(tree, BranchRule::follow_support(cells, 0.6));
        REQUIRE(none.at(BranchLabel{}).is_trivial());
    }

    SECTION("composite rules prune first, then follow the support") {
        auto h0 = std::make_shared<Hamiltonian>(COperator::Zero(4, 4));
        auto cells = basis_set(4, "cells");
        CVector psi(4);
        psi << std::sqrt(0.49), std::sqrt(0.47), std::sqrt(0.04), 0.0;
        BranchTree tree(TimeGrid(0.0, {1.0, 2.0}), h0, psi);
        tree = extend_tree_uniform(tree, StepSet(cells));

        StepAssignment a = apply_rule(tree, BranchRule::composite(cells, 0.05, 0.3));
        REQUIRE(a.at(BranchLabel{2}).is_trivial());  // pruned: p = 0.04 < 0.05
        REQUIRE(a.at(BranchLabel{3}).is_trivial());  // pruned: p = 0
        const StepSet& s0 = a.at(BranchLabel{0});
        REQUIRE_FALSE(s0.is_trivial());
        REQUIRE(s0.set().size() == 2);
        REQUIRE((s0.set().member(0).matrix() - cells->member(0).matrix()).norm() <= 1e-12);
        const StepSet& s1 = a.at(BranchLabel{1});
        REQUIRE(s1.set().size() == 2);
        REQUIRE((s1.set().member(0).matrix() - cells->member(1).matrix()).norm() <= 1e-12);
    }

    SECTION("rule and step validation") {
        auto h0 = std::make_shared<Hamiltonian>(COperator::Zero(4, 4));
        auto cells = basis_set(4, "cells");
        BranchTree tree(TimeGrid(0.0, {1.0, 2.0}), h0, testutil::basis_state(4, 0));

        REQUIRE_THROWS_WITH(apply_rule(tree, BranchRule::fixed(cells), 2),
                            ContainsSubstring("next"));
        REQUIRE_THROWS_WITH(BranchRule::prune_threshold(cells, 1.0),
                            ContainsSubstring("p_min"));
        REQUIRE_THROWS_WITH(BranchRule::follow_support(cells, -0.1),
                            ContainsSubstring("threshold"));
        REQUIRE_THROWS_WITH(BranchRule::fixed(nullptr), ContainsSubstring("projector set"));
        auto small = basis_set(2, "small");
        REQUIRE_THROWS_WITH(apply_rule(tree, BranchRule::fixed(small)),
                            ContainsSubstring("dimension"));
    }
}

TEST_CASE("maximal refinement accepts exact splits and is idempotent", "[adaptive]") {
    CVector diag(4);
    diag << 0.0, 1.0, 2.0, 3.0;
    auto h = std::make_shared<Hamiltonian>(COperator(diag.asDiagonal()));
    CVector psi(4);
    psi << 0.6, 0.5, 0.45, 0.43;
    psi.normalize();
    auto blocks = block_pair_set(4, 2, "blocks");
    auto fine = basis_set(4, "levels");

    BranchTree base(TimeGrid(0.0, {1.0, 2.0}), h, psi);
    base = extend_tree_uniform(base, StepSet(blocks));
    base = extend_tree_uniform(base, StepSet(blocks));

    SECTION("empty candidate list leaves the tree unchanged") {
        auto [tree, report] = maximal_refine(base, {}, RefineMode::Medium);
        REQUIRE(report.outcomes.empty());
        REQUIRE(report.accepted_count == 0);
        REQUIRE(tree.leaves().size() == base.leaves().size());
        REQUIRE(report.final_measure <= 1e-12);
    }

    SECTION("splits along conserved eigenspaces are all accepted, in order") {
        std::vector<RefinementCandidate> cands = {
            {1, BranchLabel{}, fine}, {2, BranchLabel{0}, fine}, {2, BranchLabel{1}, fine}};
        auto [tree, report] = maximal_refine(base, cands, RefineMode::Medium);

        REQUIRE(report.accepted_count == 3);
        REQUIRE(report.outcomes.size() == 3);
        for (int i = 0; i < 3; ++i) {
            REQUIRE(report.outcomes[static_cast<size_t>(i)].candidate == i);
            REQUIRE(report.outcomes[static_cast<size_t>(i)].accepted);
            REQUIRE(report.outcomes[static_cast<size_t>(i)].measure <= 1e-12);
        }
        REQUIRE(tree.leaves().size() == 12);  // 4 + 4 fine leaves, 2 + 2 coarse
        REQUIRE(report.final_leaf_count == 12);
        REQUIRE(medium_check(tree).passed);

        auto back = is_coarse_graining_of(base, tree);
        REQUIRE(back.value);
        auto forward = is_coarse_graining_of(tree, base);
        REQUIRE_FALSE(forward.value);
        REQUIRE(forward.max_residual > 0.1);

        auto [again, second] = maximal_refine(tree, cands, RefineMode::Medium);
        REQUIRE(second.accepted_count == 0);
        REQUIRE(again.leaves().size() == tree.leaves().size());
        for (const auto& oc : second.outcomes) {
            REQUIRE_FALSE(oc.accepted);
            REQUIRE_THAT(oc.note, ContainsSubstring("already applied"));
        }
    }

    SECTION("candidates referring to branches created later succeed on a later sweep") {
        BranchTree lazy(TimeGrid(0.0, {1.0, 2.0}), h, psi);
        lazy = extend_tree_uniform(lazy, StepSet(Trivial{}));
        lazy = extend_tree_uniform(lazy, StepSet(Trivial{}));

        std::vector<RefinementCandidate> cands = {{2, BranchLabel{1}, fine},
                                                  {1, BranchLabel{}, fine}};
        auto [tree, report] = maximal_refine(lazy, cands, RefineMode::Medium);
        REQUIRE(report.accepted_count == 2);
        REQUIRE(report.outcomes.size() == 3);
        REQUIRE_THAT(report.outcomes[0].note, ContainsSubstring("no branch"));
        REQUIRE(report.outcomes[1].accepted);
        REQUIRE(report.outcomes[2].accepted);
        REQUIRE(report.outcomes[2].sweep == 1);
        REQUIRE(tree.node(BranchLabel{1}).children.size() == 4);
    }

    SECTION("branch-dependent assignments downstream block earlier-step candidates") {
        BranchTree mixed(TimeGrid(0.0, {1.0, 2.0}), h, psi);
        mixed = extend_tree_uniform(mixed, StepSet(blocks));
        StepAssignment second;
        second.emplace(BranchLabel{0}, StepSet(blocks));
        second.emplace(BranchLabel{1}, StepSet(Trivial{}));
        mixed = mixed.extend(second);

        std::vector<RefinementCandidate> cands = {{1, BranchLabel{}, fine}};
        auto [tree, report] = maximal_refine(mixed, cands, RefineMode::Medium);
        REQUIRE(report.accepted_count == 0);
        REQUIRE(report.outcomes.size() == 1);
        REQUIRE_THAT(report.outcomes[0].note, ContainsSubstring("branch-dependent"));
        REQUIRE(tree.leaves().size() == mixed.leaves().size());
    }
}

TEST_CASE("maximal refinement gates on the selected decoherence notion", "[adaptive]") {
    testutil::Rng rng(12);

    SECTION("splitting a superposition without records is rejected") {
        auto h = slit_hamiltonian();
        auto z = basis_set(2, "slits");
        BranchTree base(TimeGrid(0.0, {1.0, 2.0}), h, testutil::basis_state(2, 0));
        base = extend_tree_uniform(base, StepSet(z));
        base = extend_tree_uniform(base, StepSet(Trivial{}));

        std::vector<RefinementCandidate> cands = {{2, BranchLabel{0}, z},
                                                  {2, BranchLabel{1}, z}};
        auto [tree, report] = maximal_refine(base, cands, RefineMode::Medium);
        REQUIRE(report.accepted_count == 0);
        REQUIRE(report.outcomes.size() == 2);
        for (const auto& oc : report.outcomes) {
            REQUIRE_FALSE(oc.accepted);
            REQUIRE(oc.measure == Approx(0.25).margin(1e-12));
            REQUIRE_THAT(oc.note, ContainsSubstring("decoherence"));
        }
        REQUIRE(tree.leaves().size() == base.leaves().size());
        REQUIRE(report.sweeps == 1);
    }

    SECTION("candidates that are not fine-grainings are rejected with the residual") {
        auto h = slit_hamiltonian();
        auto z = basis_set(2, "slits");
        CVector plus(2), minus(2);
        plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
        minus << 1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0);
        std::vector<Projector> xm;
        xm.push_back(Projector::from_matrix(testutil::ket_bra(plus, plus)));
        xm.push_back(Projector::from_matrix(testutil::ket_bra(minus, minus)));
        auto x = std::make_shared<const ProjectorSet>(std::move(xm), "diagonal");

        BranchTree base(TimeGrid(0.0, {1.0, 2.0}), h, testutil::basis_state(2, 0));
        base = extend_tree_uniform(base, StepSet(z));
        base = extend_tree_uniform(base, StepSet(Trivial{}));

        std::vector<RefinementCandidate> cands = {{1, BranchLabel{}, x}};
        auto [tree, report] = maximal_refine(base, cands, RefineMode::Medium);
        REQUIRE(report.accepted_count == 0);
        REQUIRE_THAT(report.outcomes.at(0).note, ContainsSubstring("not a fine-graining"));
        REQUIRE(report.outcomes.at(0).measure > 0.5);
        REQUIRE(validate_candidate(base, cands[0]).passed == false);
        REQUIRE(tree.leaves().size() == 2);
    }

    SECTION("strong mode accepts recorded splits and rejects broken ones") {
        auto healthy = testutil::make_record_model(rng, 3);
        BranchTree base(TimeGrid(0.0, {1.0, 3.0}), healthy.h, healthy.psi0);
        base = extend_tree_uniform(base, StepSet(Trivial{}));
        base = extend_tree_uniform(base, StepSet(Trivial{}));

        std::vector<RefinementCandidate> cands = {{1, BranchLabel{}, healthy.record_set},
                                                  {2, BranchLabel{0}, healthy.record_set}};
        auto [tree, report] =
            maximal_refine(base, cands, RefineMode::Strong, {}, &healthy.fact);
        REQUIRE(report.accepted_count == 2);
        REQUIRE(report.mode == "strong");
        REQUIRE(strong_check(tree, healthy.fact).passed);

        auto broken = testutil::make_record_model(rng, 3, {2});
        BranchTree bbase(TimeGrid(0.0, {1.0, 3.0}), broken.h, broken.psi0);
        bbase = extend_tree_uniform(bbase, StepSet(Trivial{}));
        bbase = extend_tree_uniform(bbase, StepSet(Trivial{}));
        std::vector<RefinementCandidate> bcands = {{1, BranchLabel{}, broken.record_set}};
        auto [btree, breport] =
            maximal_refine(bbase, bcands, RefineMode::Strong, {}, &broken.fact);
        REQUIRE(breport.accepted_count == 0);
        REQUIRE(breport.outcomes.at(0).measure > 0.01);
        REQUIRE(btree.leaves().size() == 1);

        REQUIRE_THROWS_WITH(maximal_refine(base, cands, RefineMode::Strong),
                            ContainsSubstring("factorization"));
    }
}

TEST_CASE("coarse-graining detection over class operators", "[adaptive]") {
    testutil::Rng rng(13);

    SECTION("a tree coarse-grains itself and its regroupings") {
        auto m = testutil::make_record_model(rng, 3);
        BranchTree tree = testutil::record_tree(m);

        auto self = is_coarse_graining_of(tree, tree);
        REQUIRE(self.value);
        REQUIRE(self.max_residual <= 1e-10);
        REQUIRE(self.max_binary_deviation <= 1e-6);

        std::vector<std::vector<BranchLabel>> grouping;
        for (int s = 0; s < 3; ++s) {
            std::vector<BranchLabel> group;
            for (int b = 0; b < 3; ++b) group.push_back(BranchLabel{s, b});
            grouping.push_back(group);
        }
        BranchTree grouped = coarse_grain(tree, grouping);
        auto check = is_coarse_graining_of(grouped, tree);
        REQUIRE(check.value);
        REQUIRE(check.max_residual <= 1e-10);
    }

    SECTION("a Trivial continuation coarse-grains the refined continuation") {
        auto m = testutil::make_record_model(rng, 3);
        BranchTree coarse(TimeGrid(0.0, {1.0, 3.0}), m.h, m.psi0);
        coarse = extend_tree_uniform(coarse, StepSet(m.record_set));
        coarse = extend_tree_uniform(coarse, StepSet(Trivial{}));
        BranchTree fine(TimeGrid(0.0, {1.0, 3.0}), m.h, m.psi0);
        fine = extend_tree_uniform(fine, StepSet(m.record_set));
        fine = extend_tree_uniform(fine, StepSet(m.record_set));

        auto check = is_coarse_graining_of(coarse, fine);
        REQUIRE(check.value);
        REQUIRE(check.max_residual <= 1e-10);
    }

    SECTION("histories over non-commuting sets are unrelated, with a witness") {
        auto h0 = std::make_shared<Hamiltonian>(COperator::Zero(2, 2));
        auto z = basis_set(2, "z");
        CVector plus(2), minus(2);
        plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
        minus << 1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0);
        std::vector<Projector> xm;
        xm.push_back(Projector::from_matrix(testutil::ket_bra(plus, plus)));
        xm.push_back(Projector::from_matrix(testutil::ket_bra(minus, minus)));
        auto x = std::make_shared<const ProjectorSet>(std::move(xm), "x");

        CVector psi = testutil::random_state(rng, 2);
        BranchTree zt(TimeGrid(0.0, {1.0}), h0, psi);
        zt = extend_tree_uniform(zt, StepSet(z));
        BranchTree xt(TimeGrid(0.0, {1.0}), h0, psi);
        xt = extend_tree_uniform(xt, StepSet(x));

        auto check = is_coarse_graining_of(zt, xt);
        REQUIRE_FALSE(check.value);
        REQUIRE(check.max_residual > 0.1);
        REQUIRE(check.witness.depth() == 1);
        REQUIRE_THAT(check.detail, ContainsSubstring("not every"));
    }

    SECTION("mismatched grids, models, or depths are rejected") {
        auto h0 = std::make_shared<Hamiltonian>(COperator::Zero(2, 2));
        auto h1 = std::make_shared<Hamiltonian>(COperator(testutil::pauli_z()));
        auto z = basis_set(2, "z");
        CVector psi = testutil::basis_state(2, 0);

        BranchTree a(TimeGrid(0.0, {1.0}), h0, psi);
        a = extend_tree_uniform(a, StepSet(z));
        BranchTree b(TimeGrid(0.0, {2.0}), h0, psi);
        b = extend_tree_uniform(b, StepSet(z));
        REQUIRE_THROWS_WITH(is_coarse_graining_of(a, b), ContainsSubstring("grid"));

        BranchTree c(TimeGrid(0.0, {1.0}), h1, psi);
        c = extend_tree_uniform(c, StepSet(z));
        REQUIRE_THROWS_WITH(is_coarse_graining_of(a, c), ContainsSubstring("hamiltonian"));

        BranchTree shallow(TimeGrid(0.0, {1.0, 2.0}), h0, psi);
        shallow = extend_tree_uniform(shallow, StepSet(z));
        BranchTree deep(TimeGrid(0.0, {1.0, 2.0}), h0, psi);
        deep = extend_tree_uniform(deep, StepSet(z));
        deep = extend_tree_uniform(deep, StepSet(z));
        REQUIRE_THROWS_WITH(is_coarse_graining_of(shallow, deep),
                            ContainsSubstring("same step"));
    }
}

TEST_CASE("pruned trees stay within the total-variation bound", "[adaptive]") {
    testutil::Rng rng(14);

    SECTION("pruning a tiny recorded branch loses at most its probability") {
        auto m = testutil::make_record_model(rng, 4);
        CVector amps(4);
        amps << 0.7, 0.55, 0.45, 0.012;
        amps.normalize();
        m.psi0 = tensor_state(amps, testutil::basis_state(4, 0));

        BranchTree full(TimeGrid(0.0, {1.0, 3.0}), m.h, m.psi0);
        full = extend_tree_uniform(full, StepSet(m.record_set));
        BranchTree pruned = full;
        full = extend_tree_uniform(full, StepSet(m.record_set));
        pruned = pruned.extend(apply_rule(pruned, BranchRule::prune_threshold(m.record_set, 1e-3)));

        REQUIRE(full.leaves().size() == 16);
        REQUIRE(pruned.leaves().size() == 13);

        auto grouping = leaf_grouping(full, pruned);
        REQUIRE(grouping.at(BranchLabel{3, 2}) == BranchLabel{3, 0});
        REQUIRE(grouping.at(BranchLabel{1, 1}) == BranchLabel{1, 1});

        PruneComparison cmp = compare_pruned(full, pruned);
        double tiny = std::norm(amps(3));
        REQUIRE(cmp.pruned_mass == Approx(tiny).margin(1e-10));
        REQUIRE(cmp.total_abs_difference <= 1e-12);
        REQUIRE(cmp.within_bound);
    }

    SECTION("the bound holds even when the pruned branch would interfere") {
        auto h = slit_hamiltonian();
        auto z = basis_set(2, "slits");
        double theta = kPi / 4.0 - 0.02;
        CVector psi(2);
        psi << std::cos(theta), std::sin(theta);

        BranchTree full(TimeGrid(0.0, {1.0, 2.0}), h, psi);
        full = extend_tree_uniform(full, StepSet(z));
        BranchTree pruned = full;
        full = extend_tree_uniform(full, StepSet(z));
        pruned = pruned.extend(apply_rule(pruned, BranchRule::prune_threshold(z, 1e-3)));

        REQUIRE_FALSE(medium_check(full).passed);
        REQUIRE(full.leaves().size() == 4);
        REQUIRE(pruned.leaves().size() == 3);

        PruneComparison cmp = compare_pruned(full, pruned);
        REQUIRE(cmp.pruned_mass == Approx(full.node(BranchLabel{1}).probability).margin(1e-12));
        REQUIRE(cmp.pruned_mass < 1e-3);
        REQUIRE(cmp.within_bound);

        REQUIRE_THROWS_WITH(compare_pruned(pruned, full), ContainsSubstring("refines"));
    }
}
