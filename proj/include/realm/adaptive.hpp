#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "realm/decoherence.hpp"

namespace realm {

/// Branch-dependent refinement rule. Rules are deterministic functions of the
/// tree they are applied to; the same tree always yields the same assignment.
///
/// Kinds:
///  - Fixed: every leaf is refined by the same projector set.
///  - PruneThreshold: leaves with probability below p_min stay unrefined
///    (Trivial); all other leaves get the set.
///  - FollowSupport: each leaf keeps only the members that carry at least
///    `support_threshold` of the leaf's own evolved probability; the remaining
///    members are lumped into a single complement projector appended as the
///    last alternative. A leaf with no member above threshold stays Trivial.
///  - Composite: PruneThreshold first, then FollowSupport for the survivors.
class BranchRule {
  public:
    enum class Kind { Fixed, PruneThreshold, FollowSupport, Composite };

    static BranchRule fixed(std::shared_ptr<const ProjectorSet> set) {
        return BranchRule(Kind::Fixed, std::move(set), 0.0, 0.0);
    }

    static BranchRule prune_threshold(std::shared_ptr<const ProjectorSet> set,
                                      double p_min = 1e-8) {
        return BranchRule(Kind::PruneThreshold, std::move(set), p_min, 0.0);
    }

    static BranchRule follow_support(std::shared_ptr<const ProjectorSet> set,
                                     double support_threshold) {
        return BranchRule(Kind::FollowSupport, std::move(set), 0.0, support_threshold);
    }

    static BranchRule composite(std::shared_ptr<const ProjectorSet> set, double p_min,
                                double support_threshold) {
        return BranchRule(Kind::Composite, std::move(set), p_min, support_threshold);
    }

    Kind kind() const { return kind_; }
    const std::shared_ptr<const ProjectorSet>& set_ptr() const { return set_; }
    double p_min() const { return p_min_; }
    double support_threshold() const { return support_threshold_; }

    std::string describe() const {
        std::ostringstream os;
        switch (kind_) {
            case Kind::Fixed: os << "fixed"; break;
            case Kind::PruneThreshold: os << "prune(p_min=" << p_min_ << ")"; break;
            case Kind::FollowSupport:
                os << "follow(threshold=" << support_threshold_ << ")";
                break;
            case Kind::Composite:
                os << "composite(p_min=" << p_min_ << ", threshold=" << support_threshold_
                   << ")";
                break;
        }
        os << " over '" << set_->name() << "'";
        return os.str();
    }

  private:
    BranchRule(Kind kind, std::shared_ptr<const ProjectorSet> set, double p_min,
               double support_threshold)
        : kind_(kind),
          set_(std::move(set)),
          p_min_(p_min),
          support_threshold_(support_threshold) {
        detail::require(set_ != nullptr, "branch rule needs a projector set");
        detail::require(p_min_ >= 0.0 && p_min_ < 1.0, "p_min must lie in [0, 1)");
        detail::require(support_threshold_ >= 0.0 && support_threshold_ < 1.0,
                        "support threshold must lie in [0, 1)");
    }

    Kind kind_;
    std::shared_ptr<const ProjectorSet> set_;
    double p_min_;
    double support_threshold_;
};

namespace detail {

/// Lumps the non-kept members of `set` into one complement projector. The
/// kept members come first in their original order; the complement is last.
inline std::shared_ptr<const ProjectorSet> lumped_set(const ProjectorSet& set,
                                                      const std::vector<int>& kept) {
    std::vector<Projector> members;
    members.reserve(kept.size() + 1);
    for (int i : kept) members.push_back(set.member(i));
    COperator rest = COperator::Zero(set.dim(), set.dim());
    for (int i = 0; i < set.size(); ++i)
        if (std::find(kept.begin(), kept.end(), i) == kept.end()) rest += set.member(i).matrix();
    members.push_back(Projector::from_matrix(std::move(rest)));
    return std::make_shared<const ProjectorSet>(std::move(members), set.name() + "+rest");
}

}  // namespace detail

/// Computes the assignment a rule produces for the next step of `tree`.
/// `step` may be passed explicitly for clarity but must equal
/// tree.steps_built() + 1: rules read the current leaf amplitudes, so only
/// the immediate next step is well defined.
inline StepAssignment apply_rule(const BranchTree& tree, const BranchRule& rule,
                                 int step = -1) {
    const int next = tree.steps_built() + 1;
    if (step < 0) step = next;
    detail::require(step == next, "rules assign only the next step (requested " +
                                      std::to_string(step) + ", next is " +
                                      std::to_string(next) + ")");
    detail::require(next <= tree.grid().steps(), "time grid exhausted: no step to assign");
    const ProjectorSet& set = *rule.set_ptr();
    detail::require(set.dim() == tree.hamiltonian().dim(),
                    "rule projector set dimension mismatch");

    const bool needs_masses = rule.kind() == BranchRule::Kind::FollowSupport ||
                              rule.kind() == BranchRule::Kind::Composite;
    const bool prunes = rule.kind() == BranchRule::Kind::PruneThreshold ||
                        rule.kind() == BranchRule::Kind::Composite;
    COperator u;
    if (needs_masses) u = tree.hamiltonian().propagator(tree.grid().dt(step));

    // Leaves that keep the same member subset share one lumped set.
    std::map<std::vector<int>, std::shared_ptr<const ProjectorSet>> lump_cache;

    StepAssignment out;
    for (const BranchNode* leaf : tree.leaves()) {
        if (prunes && leaf->probability < rule.p_min()) {
            out.emplace(leaf->label, StepSet(Trivial{}));
            continue;
        }
        if (!needs_masses) {
            out.emplace(leaf->label, StepSet(rule.set_ptr()));
            continue;
        }
        CVector evolved = u * leaf->vector;
        const double total = evolved.squaredNorm();
        if (total <= 0.0) {
            out.emplace(leaf->label, StepSet(Trivial{}));
            continue;
        }
        std::vector<int> kept;
        for (int i = 0; i < set.size(); ++i) {
            double mass = (set.member(i).matrix() * evolved).squaredNorm() / total;
            if (mass >= rule.support_threshold()) kept.push_back(i);
        }
        if (kept.empty()) {
            out.emplace(leaf->label, StepSet(Trivial{}));
        } else if (static_cast<int>(kept.size()) == set.size()) {
            out.emplace(leaf->label, StepSet(rule.set_ptr()));
        } else {
            auto it = lump_cache.find(kept);
            if (it == lump_cache.end())
                it = lump_cache.emplace(kept, detail::lumped_set(set, kept)).first;
            out.emplace(leaf->label, StepSet(it->second));
        }
    }
    return out;
}

/// Proposal to replace the projector set used at one step on one branch with
/// a finer one. `branch` is the label of the node (at depth step-1) whose
/// children the step created; a genuine fine-graining has every existing
/// member equal to a sum of members of `finer`.
struct RefinementCandidate {
    int step = 0;
    BranchLabel branch;
    std::shared_ptr<const ProjectorSet> finer;
};

namespace detail {

inline bool same_step_set(const StepSet& a, const StepSet& b) {
    if (a.is_trivial() || b.is_trivial()) return a.is_trivial() == b.is_trivial();
    if (a.set_ptr() == b.set_ptr()) return true;
    const ProjectorSet& sa = a.set();
    const ProjectorSet& sb = b.set();
    if (sa.dim() != sb.dim() || sa.size() != sb.size()) return false;
    for (int i = 0; i < sa.size(); ++i)
        if ((sa.member(i).matrix() - sb.member(i).matrix()).norm() > 1e-14 * sa.dim())
            return false;
    return true;
}

}  // namespace detail

/// Checks that a candidate is a genuine fine-graining of the set currently
/// stored at its (step, branch): each existing member must equal a sum of
/// members of the finer set within tol_proj. A Trivial existing step is
/// covered by any exhaustive finer set.
inline Diagnostic validate_candidate(const BranchTree& tree, const RefinementCandidate& cand,
                                     const ToleranceConfig& tol = {}) {
    Diagnostic out;
    if (cand.finer == nullptr) {
        out.detail = "candidate has no finer set";
        return out;
    }
    if (cand.step < 1 || cand.step > tree.steps_built()) {
        out.detail = "step " + std::to_string(cand.step) + " is not built";
        return out;
    }
    if (cand.finer->dim() != tree.hamiltonian().dim()) {
        out.detail = "finer set dimension mismatch";
        return out;
    }
    const StepAssignment& stored = tree.assignments().at(static_cast<size_t>(cand.step - 1));
    auto it = stored.find(cand.branch);
    if (it == stored.end()) {
        out.detail = "no branch '" + cand.branch.str() + "' at step " +
                     std::to_string(cand.step);
        return out;
    }
    if (it->second.is_trivial()) {
        auto v = validate_projector_set(*cand.finer, tol.tol_proj);
        out.residual = std::max(v.completeness_residual, v.max_exclusivity);
        out.passed = v.passed;
        if (!out.passed) out.detail = "finer set is not exhaustive/exclusive";
        return out;
    }
    const ProjectorSet& coarse = it->second.set();
    const ProjectorSet& fine = *cand.finer;
    double worst = 0.0;
    for (const auto& p : coarse.members()) {
        COperator sum = COperator::Zero(fine.dim(), fine.dim());
        for (const auto& q : fine.members()) {
            double qn = q.matrix().norm();
            if (qn == 0.0) continue;
            if ((p.matrix() * q.matrix() - q.matrix()).norm() < 0.5 * qn) sum += q.matrix();
        }
        worst = std::max(worst, (p.matrix() - sum).norm());
    }
    out.residual = worst;
    out.passed = worst <= tol.tol_proj * static_cast<double>(coarse.dim());
    if (!out.passed)
        out.detail = "members of '" + fine.name() + "' do not sum to '" + coarse.name() +
                     "' (residual " + std::to_string(worst) + ")";
    return out;
}

/// Decoherence notion used to gate refinements.
enum class RefineMode { Medium, Strong };

/// One evaluated candidate during a maximal-refinement search.
struct RefinementOutcome {
    int candidate = 0;  // index into the input list
    int sweep = 0;      // greedy sweep in which this evaluation happened
    int step = 0;
    BranchLabel branch;
    std::string set_name;
    bool accepted = false;
    double measure = 0.0;  // decoherence measure of the tentative tree
    std::string note;
};

/// Log of a maximal-refinement search. Outcomes appear in evaluation order;
/// greedy maximality is relative to that order, so the order is part of the
/// result. Accepted candidates are never revisited.
struct RefinementReport {
    std::string mode;
    std::vector<RefinementOutcome> outcomes;
    int accepted_count = 0;
    int sweeps = 0;
    int final_leaf_count = 0;
    double final_measure = 0.0;  // decoherence measure of the returned tree
};

namespace detail {

/// Rebuilds `src` step by step with the candidate's set substituted at its
/// (step, branch). Steps after the target are replayed only if their stored
/// assignment is uniform, since refinement changes the labels beneath it.
inline BranchTree rebuild_with(const BranchTree& src, const RefinementCandidate& cand,
                               const ToleranceConfig& tol, std::string& fail_reason) {
    BranchTree out(src.grid(), src.hamiltonian_ptr(), src.root().vector, src.rule_note());
    for (int k = 1; k <= src.steps_built(); ++k) {
        const StepAssignment& stored = src.assignments().at(static_cast<size_t>(k - 1));
        if (k < cand.step) {
            out = out.extend(stored, tol);
        } else if (k == cand.step) {
            StepAssignment a = stored;
            a.at(cand.branch) = StepSet(cand.finer);
            out = out.extend(a, tol);
        } else {
            bool uniform = true;
            const StepSet& first = stored.begin()->second;
            for (const auto& [label, set] : stored)
                if (!same_step_set(set, first)) uniform = false;
            if (!uniform) {
                fail_reason = "step " + std::to_string(k) +
                              " downstream of the candidate is branch-dependent";
                return src;
            }
            out = out.extend(uniform_assignment(out, first), tol);
        }
    }
    return out;
}

inline std::pair<double, bool> refine_measure(const BranchTree& tree, RefineMode mode,
                                              const Factorization* fact,
                                              const ToleranceConfig& tol) {
    if (mode == RefineMode::Medium) {
        DecoherenceReport rep = medium_check(tree, tol);
        return {rep.max_offdiag, rep.passed};
    }
    StrongReport rep = strong_check(tree, *fact, tol);
    return {rep.max_cross_past, rep.passed};
}

}  // namespace detail

/// Greedy maximal refinement: sweeps the candidate list in order, tentatively
/// applies each candidate and keeps it iff the selected decoherence check
/// still passes. Sweeps repeat until none is accepted, so the result is
/// maximal relative to the candidate list. Strong mode requires the
/// factorization the z-decomposition should use.
inline std::pair<BranchTree, RefinementReport> maximal_refine(
    const BranchTree& tree, const std::vector<RefinementCandidate>& candidates,
    RefineMode mode, const ToleranceConfig& tol = {}, const Factorization* fact = nullptr) {
    detail::require(!tree.is_coarse(),
                    "coarse-grained trees do not retain per-step assignments to refine");
    detail::require(mode == RefineMode::Medium || fact != nullptr,
                    "strong mode needs the factorization to decompose against");

    BranchTree working = tree;
    RefinementReport report;
    report.mode = mode == RefineMode::Medium ? "medium" : "strong";
    std::vector<bool> done(candidates.size(), false);

    bool progressed = true;
    while (progressed) {
        progressed = false;
        for (size_t i = 0; i < candidates.size(); ++i) {
            if (done[i]) continue;
            const RefinementCandidate& cand = candidates[i];
            RefinementOutcome oc;
            oc.candidate = static_cast<int>(i);
            oc.sweep = report.sweeps;
            oc.step = cand.step;
            oc.branch = cand.branch;
            oc.set_name = cand.finer ? cand.finer->name() : "<null>";

            bool structural = cand.finer != nullptr && cand.step >= 1 &&
                              cand.step <= working.steps_built();
            const StepSet* existing = nullptr;
            if (structural) {
                const StepAssignment& stored =
                    working.assignments().at(static_cast<size_t>(cand.step - 1));
                auto it = stored.find(cand.branch);
                if (it == stored.end())
                    structural = false;
                else
                    existing = &it->second;
            }
            if (!structural) {
                oc.note = "no branch '" + cand.branch.str() + "' at step " +
                          std::to_string(cand.step);
                report.outcomes.push_back(std::move(oc));
                continue;
            }
            if (detail::same_step_set(*existing, StepSet(cand.finer))) {
                oc.note = "already applied";
                done[i] = true;
                report.outcomes.push_back(std::move(oc));
                continue;
            }
            Diagnostic valid = validate_candidate(working, cand, tol);
            if (!valid.passed) {
                oc.note = "not a fine-graining: " + valid.detail;
                oc.measure = valid.residual;
                report.outcomes.push_back(std::move(oc));
                continue;
            }
            try {
                std::string reason;
                BranchTree tentative = detail::rebuild_with(working, cand, tol, reason);
                if (!reason.empty()) {
                    oc.note = reason;
                    done[i] = true;
                    report.outcomes.push_back(std::move(oc));
                    continue;
                }
                auto [measure, ok] = detail::refine_measure(tentative, mode, fact, tol);
                oc.measure = measure;
                if (ok) {
                    working = std::move(tentative);
                    oc.accepted = true;
                    done[i] = true;
                    ++report.accepted_count;
                    progressed = true;
                    oc.note = "accepted";
                } else {
                    oc.note = "decoherence check failed";
                }
            } catch (const std::exception& e) {
                oc.note = std::string("evaluation failed: ") + e.what();
            }
            report.outcomes.push_back(std::move(oc));
        }
        ++report.sweeps;
    }

    report.final_leaf_count = static_cast<int>(working.leaves().size());
    report.final_measure = detail::refine_measure(working, mode, fact, tol).first;
    return {std::move(working), std::move(report)};
}

/// Result of asking whether tree `a` coarse-grains tree `b`.
struct CoarseGrainingCheck {
    bool value = false;
    double max_residual = 0.0;          // worst ||C_a - sum of C_b|| over leaves of a
    double max_binary_deviation = 0.0;  // worst coefficient distance from {0, 1}
    BranchLabel witness;                // leaf of `a` with the worst defect
    std::string detail;
};

/// True iff every class operator of `a` is a sum of class operators of `b`
/// within tol_proj. Decided by least squares over the vectorized class
/// operators of b's leaves: a genuine coarse graining solves exactly with
/// coefficients in {0, 1}. Both trees must share the grid, Hamiltonian and
/// number of built steps.
inline CoarseGrainingCheck is_coarse_graining_of(const BranchTree& a, const BranchTree& b,
                                                 const ToleranceConfig& tol = {}) {
    const TimeGrid& ga = a.grid();
    const TimeGrid& gb = b.grid();
    bool grids_match = ga.steps() == gb.steps() && ga.t0() == gb.t0();
    for (int k = 1; grids_match && k <= ga.steps(); ++k)
        if (ga.time(k) != gb.time(k)) grids_match = false;
    detail::require(grids_match, "time grid mismatch: the trees describe different histories");
    const COperator& ha = a.hamiltonian().matrix();
    const COperator& hb = b.hamiltonian().matrix();
    detail::require(ha.rows() == hb.rows() &&
                        (ha - hb).norm() <= 1e-12 * std::max(1.0, ha.norm()),
                    "hamiltonian mismatch: the trees describe different models");
    detail::require(a.steps_built() == b.steps_built(),
                    "trees must be built to the same step to compare class operators");

    const Eigen::Index d = ha.rows();
    auto b_leaves = b.leaves();
    COperator m(d * d, static_cast<Eigen::Index>(b_leaves.size()));
    for (size_t j = 0; j < b_leaves.size(); ++j) {
        COperator c = class_operator(b, b_leaves[j]->label);
        m.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const CVector>(c.data(), d * d);
    }
    auto solver = m.colPivHouseholderQr();

    constexpr double kBinaryTol = 1e-6;
    CoarseGrainingCheck out;
    out.value = true;
    for (const BranchNode* leaf : a.leaves()) {
        COperator c = class_operator(a, leaf->label);
        CVector target = Eigen::Map<const CVector>(c.data(), d * d);
        CVector x = solver.solve(target);
        double residual = (m * x - target).norm();
        double dev = 0.0;
        for (Eigen::Index j = 0; j < x.size(); ++j)
            dev = std::max(dev, std::min(std::abs(x(j)), std::abs(x(j) - 1.0)));
        bool ok = residual <= tol.tol_proj * std::max(1.0, target.norm()) && dev <= kBinaryTol;
        if (residual > out.max_residual || (!ok && out.value)) {
            out.max_residual = std::max(out.max_residual, residual);
            out.witness = leaf->label;
        }
        out.max_binary_deviation = std::max(out.max_binary_deviation, dev);
        if (!ok) out.value = false;
    }
    std::ostringstream os;
    os << (out.value ? "every" : "not every")
       << " class operator decomposes as a binary sum (worst residual " << out.max_residual
       << ", worst coefficient deviation " << out.max_binary_deviation << " at leaf "
       << out.witness.str() << ")";
    out.detail = os.str();
    return out;
}

namespace detail {

/// Index of the member of `set` containing projector `q` (member * q == q).
/// Rank-0 projectors are contained everywhere; member 0 is returned for them.
inline int containing_member(const ProjectorSet& set, const Projector& q) {
    const double qn = q.matrix().norm();
    if (qn == 0.0) return 0;
    for (int j = 0; j < set.size(); ++j)
        if ((set.member(j).matrix() * q.matrix() - q.matrix()).norm() < 0.5 * qn) return j;
    throw std::invalid_argument(
        "trees do not share refinement structure: no member contains the finer projector");
}

}  // namespace detail

/// Maps each leaf of `fine` to the leaf of `coarse` reached by descending
/// through the member that contains each of the fine tree's projectors, with
/// Trivial steps of `coarse` absorbing whole subtrees. Works for prunings and
/// for lumped coarser sets alike; throws if `coarse` refines where `fine`
/// does not, or if the sets are unrelated.
inline std::map<BranchLabel, BranchLabel> leaf_grouping(const BranchTree& fine,
                                                        const BranchTree& coarse) {
    detail::require(fine.steps_built() == coarse.steps_built(),
                    "trees must be built to the same step to group leaves");
    std::map<BranchLabel, BranchLabel> out;
    for (const BranchNode* leaf : fine.leaves()) {
        const BranchNode* fn = &fine.root();
        const BranchNode* cn = &coarse.root();
        for (size_t k = 0; k < leaf->label.indices.size(); ++k) {
            size_t idx = static_cast<size_t>(leaf->label.indices[k]);
            detail::require(!cn->children.empty(), "coarse tree ends before the fine tree");
            if (cn->child_trivial) {
                cn = &cn->children.front();
            } else {
                detail::require(!fn->child_trivial,
                                "coarse tree refines where the fine tree does not (branch " +
                                    fn->label.str() + ")");
                int j = detail::containing_member(*cn->child_set, fn->child_set->member(
                                                                      static_cast<int>(idx)));
                cn = &cn->children[static_cast<size_t>(j)];
            }
            fn = &fn->children.at(idx);
        }
        out.emplace(leaf->label, cn->label);
    }
    return out;
}

/// Comparison of a pruned (or otherwise coarser) tree against the full one:
/// fine leaf probabilities are summed per coarse leaf and compared entrywise,
/// and the probability that flowed through pruning points is accumulated as
/// the bound the difference must respect.
struct PruneComparison {
    std::map<BranchLabel, double> grouped;  // fine probabilities per coarse leaf
    double total_abs_difference = 0.0;
    double pruned_mass = 0.0;  // probability at nodes where coarse stops refining
    bool within_bound = false;
};

namespace detail {

inline void accumulate_pruned_mass(const BranchNode& fine, const BranchNode& coarse,
                                   double& mass) {
    if (fine.children.empty() || coarse.children.empty()) return;
    if (coarse.child_trivial) {
        if (fine.child_trivial) {
            accumulate_pruned_mass(fine.children.front(), coarse.children.front(), mass);
        } else {
            mass += coarse.probability;  // structures diverge; whole subtree accounted for
        }
        return;
    }
    require(!fine.child_trivial,
            "coarse tree refines where the fine tree does not (branch " + fine.label.str() +
                ")");
    for (size_t i = 0; i < fine.children.size(); ++i) {
        const Projector& q = fine.child_set->member(static_cast<int>(i));
        if (q.matrix().norm() == 0.0) continue;  // zero member: empty subtree
        int j = containing_member(*coarse.child_set, q);
        accumulate_pruned_mass(fine.children[i], coarse.children[static_cast<size_t>(j)],
                               mass);
    }
}

}  // namespace detail

inline PruneComparison compare_pruned(const BranchTree& fine, const BranchTree& coarse,
                                      double slack = 1e-12) {
    PruneComparison out;
    for (const auto& [fine_label, coarse_label] : leaf_grouping(fine, coarse))
        out.grouped[coarse_label] += fine.node(fine_label).probability;
    for (const BranchNode* leaf : coarse.leaves()) {
        double grouped = 0.0;
        auto it = out.grouped.find(leaf->label);
        if (it != out.grouped.end()) grouped = it->second;
        out.total_abs_difference += std::abs(grouped - leaf->probability);
    }
    detail::accumulate_pruned_mass(fine.root(), coarse.root(), out.pruned_mass);
    out.within_bound = out.total_abs_difference <= out.pruned_mass + slack;
    return out;
}

}  // namespace realm
