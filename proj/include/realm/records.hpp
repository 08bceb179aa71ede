#pragma once

#include <realm/decoherence.hpp>

namespace realm {

/// Embeds an environment operator into the full space: V (I_s (x) op_e) V^dagger.
inline COperator lift_env(const COperator& op_e, const Factorization& fact) {
    detail::require(op_e.rows() == fact.d_e && op_e.cols() == fact.d_e,
                    "operator dimension does not match the environment factor");
    return fact.relabel * tensor(COperator::Identity(fact.d_s, fact.d_s), op_e) *
           fact.relabel.adjoint();
}

/// One record projector per past branch: R = I_s (x) Proj(span of the
/// branch's z vectors). Zero branches carry rank-0 records.
struct RecordSet {
    Factorization fact;
    int record_step = 0;                       // step the z family was taken at
    std::map<BranchLabel, Projector> members;  // full-space projectors
    std::map<BranchLabel, Projector> env_members;
};

/// Builds the record set from a z family. Strong decoherence is the
/// precondition: without it the spans overlap and no record set exists.
inline RecordSet construct_records(const ZFamily& zf, const ToleranceConfig& tol = {}) {
    auto strong = strong_check_z(zf, tol);
    if (!strong.passed)
        throw std::invalid_argument(
            "strong decoherence check failed (cross-past overlap " +
            std::to_string(strong.max_cross_past) + "); records are not guaranteed");

    RecordSet rs;
    rs.fact = zf.fact;
    rs.record_step = zf.final_step;

    std::map<BranchLabel, std::vector<CVector>> grouped;
    for (const auto& [key, z] : zf.entries) grouped[key.past].push_back(z);

    for (const auto& [past, zs] : grouped) {
        double norm_sq = 0.0;
        for (const auto& z : zs) norm_sq += z.squaredNorm();
        Projector env = norm_sq <= tol.tol_proj * tol.tol_proj
                            ? Projector::zero(zf.fact.d_e)
                            : span_projector(zs, tol.tol_rank);
        rs.members.emplace(past, Projector::from_matrix(lift_env(env.matrix(), zf.fact)));
        rs.env_members.emplace(past, std::move(env));
    }
    return rs;
}

/// Outcome of checking the two record conditions: (a) mutual orthogonality
/// of the record projectors, (b) each record retrodicts its branch,
/// R_b Psi(t) = Psi_b(t), at the requested step.
struct RecordCheck {
    bool passed = false;
    double ortho_residual = 0.0;       // max ||R_b R_b'|| over distinct pasts
    double projection_residual = 0.0;  // max ||R_b Psi - Psi_b||
    int step = 0;
    std::string detail;
};

/// Verifies a record set against its tree. By default the check runs at the
/// step the records were constructed for; passing an earlier step shows
/// whether the records had already formed there.
inline RecordCheck verify_records(const RecordSet& rs, const BranchTree& tree,
                                  const ToleranceConfig& tol = {}, int step = -1) {
    if (step < 0) step = rs.record_step;
    detail::require(step >= 1 && step <= tree.steps_built(), "step out of range");
    const size_t past_depth = rs.members.empty()
                                  ? 0
                                  : rs.members.begin()->first.depth();
    detail::require(static_cast<size_t>(step) >= past_depth,
                    "record pasts are not defined at this step");

    RecordCheck check;
    check.step = step;

    for (auto i = rs.members.begin(); i != rs.members.end(); ++i)
        for (auto j = std::next(i); j != rs.members.end(); ++j)
            check.ortho_residual = std::max(
                check.ortho_residual, (i->second.matrix() * j->second.matrix()).norm());

    // Total state at the step's time, and each past branch evolved there.
    const double t_step = tree.grid().time(step);
    CVector psi_total =
        tree.hamiltonian().apply_propagator(t_step - tree.grid().t0(), tree.root().vector);
    for (const auto& [past, r] : rs.members) {
        const BranchNode& node = tree.node(past);
        CVector branch = tree.hamiltonian().apply_propagator(
            t_step - tree.grid().time(node.step), node.vector);
        check.projection_residual = std::max(
            check.projection_residual, (r.matrix() * psi_total - branch).norm());
    }
    check.passed = check.ortho_residual <= tol.tol_proj &&
                   check.projection_residual <= tol.tol_decoh;
    check.detail = "ortho residual " + std::to_string(check.ortho_residual) +
                   ", projection residual " + std::to_string(check.projection_residual) +
                   " at step " + std::to_string(step);
    return check;
}

/// Outcome of a permanence test: whether fine-graining the tree into the
/// future preserved the mutual orthogonality of past branches.
struct PermanenceReport {
    bool precondition_ok = false;  // extension commutes with every record
    double max_commutator = 0.0;
    double past_interference = 0.0;  // max cross-past overlap after extending
    bool passed = false;
    std::string detail;
};

/// Extends the tree one step and measures interference between branches
/// whose labels differ within the recorded past. The theorem's precondition
/// — every extension projector, conjugated to the record step's time,
/// commutes with every record projector — is verified and reported; if it
/// fails the result is "not guaranteed" and the interference is still
/// measured.
inline PermanenceReport permanence_check(const BranchTree& tree, const RecordSet& rs,
                                         const StepAssignment& extension,
                                         const ToleranceConfig& tol = {}) {
    PermanenceReport rep;

    const int next_step = tree.steps_built() + 1;
    const double dt = tree.grid().time(next_step) - tree.grid().time(rs.record_step);
    COperator u = tree.hamiltonian().propagator(dt);
    std::set<const ProjectorSet*> seen;
    for (const auto& [label, step_set] : extension) {
        if (step_set.is_trivial()) continue;
        if (!seen.insert(step_set.set_ptr().get()).second) continue;
        for (const auto& p : step_set.set().members()) {
            COperator conjugated = u.adjoint() * p.matrix() * u;
            for (const auto& [past, r] : rs.members)
                rep.max_commutator = std::max(
                    rep.max_commutator, commutator_norm(conjugated, r.matrix()));
        }
    }
    rep.precondition_ok = rep.max_commutator <= tol.tol_proj * 100.0;

    BranchTree extended = tree.extend(extension, tol);
    const size_t past_depth = static_cast<size_t>(rs.record_step) - 1;
    auto leaves = extended.leaves();
    double max_diag = 0.0;
    for (const auto* l : leaves) max_diag = std::max(max_diag, l->probability);
    for (size_t i = 0; i < leaves.size(); ++i)
        for (size_t j = i + 1; j < leaves.size(); ++j) {
            if (leaves[i]->label.truncated(past_depth) ==
                leaves[j]->label.truncated(past_depth))
                continue;
            rep.past_interference = std::max(
                rep.past_interference,
                std::abs(leaves[i]->vector.dot(leaves[j]->vector)));
        }
    bool orthogonal = rep.past_interference <= tol.tol_decoh * std::max(max_diag, 1.0);
    rep.passed = rep.precondition_ok && orthogonal;
    rep.detail = rep.precondition_ok
                     ? (orthogonal ? "past preserved" : "past interference detected")
                     : "not guaranteed: extension does not commute with the records "
                       "(max commutator " +
                           std::to_string(rep.max_commutator) + ")";
    return rep;
}

/// Unnormalized reduced state of one branch: trace = branch probability.
struct BranchDensityMatrix {
    BranchLabel label;
    COperator rho_s;

    double probability() const { return rho_s.trace().real(); }
};

inline BranchDensityMatrix branch_density_matrix(const BranchTree& tree,
                                                 const Factorization& fact,
                                                 const BranchLabel& label) {
    const BranchNode& node = tree.node(label);
    detail::require(node.vector.size() == fact.dim(),
                    "factorization dimension does not match the tree");
    COperator rho_full = node.vector * node.vector.adjoint();
    return {label, partial_trace(rho_full, fact, TraceOver::Environment)};
}

/// Outcome of the branch-by-branch expectation identity.
struct ExpectationCheck {
    bool strong_passed = false;
    double full_value = 0.0;        // Tr(lifted O * Psi Psi^dagger)
    double reduced_value = 0.0;     // tr(O_s rho^s), rho^s from the total state
    double branch_sum_value = 0.0;  // sum over pasts of tr(O_s rho_branch)
    double reduced_residual = 0.0;
    double branch_residual = 0.0;
    bool passed = false;
    std::string detail;
};

/// Checks <O> = tr(O_s rho^s) = sum_b tr(O_s rho_b) at the tree's current
/// step. The first equality is an identity of the partial trace; the second
/// holds under strong decoherence, and its violation is reported when the
/// strong check fails.
inline ExpectationCheck expectation_identity_check(const BranchTree& tree,
                                                   const Factorization& fact,
                                                   const SystemObservable& obs,
                                                   const ToleranceConfig& tol = {}) {
    detail::require(obs.matrix.rows() == fact.d_s,
                    "observable dimension does not match the system factor");
    ExpectationCheck check;
    check.strong_passed = strong_check(tree, fact, tol).passed;

    const int k = tree.steps_built();
    const double t_k = tree.grid().time(k);
    CVector psi_total =
        tree.hamiltonian().apply_propagator(t_k - tree.grid().t0(), tree.root().vector);
    COperator lifted = lift(obs, fact);
    check.full_value = psi_total.dot(lifted * psi_total).real();

    COperator rho_s =
        partial_trace(COperator(psi_total * psi_total.adjoint()), fact,
                      TraceOver::Environment);
    check.reduced_value = (obs.matrix * rho_s).trace().real();

    for (const auto* past : tree.nodes_at_step(k - 1)) {
        CVector branch = CVector::Zero(psi_total.size());
        for (const auto& child : past->children) branch += child.vector;
        COperator rho_b =
            partial_trace(COperator(branch * branch.adjoint()), fact,
                          TraceOver::Environment);
        check.branch_sum_value += (obs.matrix * rho_b).trace().real();
    }

    const double scale = std::max(1.0, operator_norm(obs.matrix));
    check.reduced_residual = std::abs(check.full_value - check.reduced_value) / scale;
    check.branch_residual = std::abs(check.full_value - check.branch_sum_value) / scale;
    check.passed = check.strong_passed && check.reduced_residual <= tol.tol_decoh &&
                   check.branch_residual <= tol.tol_decoh;
    check.detail = "full " + std::to_string(check.full_value) + ", reduced " +
                   std::to_string(check.reduced_value) + ", branch sum " +
                   std::to_string(check.branch_sum_value) +
                   (check.strong_passed ? "" : " (strong decoherence absent)");
    return check;
}

}  // namespace realm
