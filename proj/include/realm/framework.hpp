#pragma once

#include <realm/history.hpp>

#include <numeric>

namespace realm {

struct CommutationReport {
    double max_commutator = 0.0;
    bool passed = false;
    // Indices into the pooled projector list for the worst pair.
    int witness_a = -1;
    int witness_b = -1;
    int pooled_count = 0;
};

/// All projectors applied at grid step k across branches (deduplicated by
/// set identity; Trivial contributes nothing).
inline std::vector<Projector> step_projectors(const BranchTree& tree, int step) {
    detail::require(step >= 1 && step <= tree.steps_built(), "step out of range");
    std::vector<Projector> out;
    std::set<const ProjectorSet*> seen;
    for (const auto* n : tree.nodes_at_step(step - 1)) {
        if (n->child_trivial || n->child_set == nullptr) continue;
        if (!seen.insert(n->child_set.get()).second) continue;
        for (const auto& p : n->child_set->members()) out.push_back(p);
    }
    return out;
}

inline std::vector<Projector> pooled_projectors(const BranchTree& tree) {
    std::vector<Projector> out;
    for (int k = 1; k <= tree.steps_built(); ++k) {
        auto ps = step_projectors(tree, k);
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

inline CommutationReport check_pairwise_commutation(const std::vector<Projector>& projs,
                                                    double tol) {
    CommutationReport r;
    r.pooled_count = static_cast<int>(projs.size());
    for (size_t a = 0; a < projs.size(); ++a)
        for (size_t b = a + 1; b < projs.size(); ++b) {
            double c = commutator_norm(projs[a].matrix(), projs[b].matrix());
            if (c > r.max_commutator) {
                r.max_commutator = c;
                r.witness_a = static_cast<int>(a);
                r.witness_b = static_cast<int>(b);
            }
        }
    r.passed = r.max_commutator <= tol;
    return r;
}

/// Do all projectors assigned at one time step commute with each other,
/// across branches? (Branch-dependent sets may act on disjoint sectors and
/// commute even when their restrictions would not.)
inline CommutationReport check_equal_time_commutation(const BranchTree& tree, int step,
                                                      double tol = 1e-10) {
    return check_pairwise_commutation(step_projectors(tree, step), tol);
}

/// The narrative condition: every projector of every step commutes with
/// every other, across both steps and branches.
inline CommutationReport check_narrative(const BranchTree& tree, double tol = 1e-10) {
    return check_pairwise_commutation(pooled_projectors(tree), tol);
}

/// Finest common refinement {P_gamma} of a commuting projector family,
/// together with how each input projector decomposes over the blocks.
struct CommonFramework {
    ProjectorSet blocks;
    std::vector<std::vector<int>> covering;  // input index -> block indices
    std::vector<double> recovery_residuals;  // || sum of covering blocks - input ||_F
    double max_recovery_residual = 0.0;
};

namespace detail {

/// Order-independent canonical comparison of projector matrices: entries are
/// compared lexicographically in row-major order with a coarse tolerance, so
/// blocks produced from permuted inputs (identical up to roundoff) sort the
/// same way.
inline bool canonical_block_less(const COperator& a, const COperator& b) {
    constexpr double kGrain = 1e-8;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            double dre = a(i, j).real() - b(i, j).real();
            if (std::abs(dre) > kGrain) return dre > 0;  // larger mass first
            double dim_ = a(i, j).imag() - b(i, j).imag();
            if (std::abs(dim_) > kGrain) return dim_ > 0;
        }
    return false;
}

}  // namespace detail

/// Splits the identity by every input projector in turn: each block B is
/// replaced by BP and B - BP, dropping empty pieces. Inputs must commute
/// pairwise (checked), which keeps every piece a projector.
inline CommonFramework build_common_framework(const std::vector<Projector>& projs,
                                              double tol = 1e-10) {
    detail::require(!projs.empty(), "common framework needs at least one projector");
    const Eigen::Index d = projs.front().dim();
    for (const auto& p : projs)
        detail::require(p.dim() == d, "projectors must share a dimension");
    auto comm = check_pairwise_commutation(projs, tol);
    if (!comm.passed)
        throw std::invalid_argument(
            "projectors do not commute (max commutator " +
            std::to_string(comm.max_commutator) + "); no common framework exists");

    std::vector<COperator> blocks{COperator::Identity(d, d)};
    for (const auto& p : projs) {
        std::vector<COperator> next;
        for (const auto& b : blocks) {
            COperator bp = b * p.matrix();
            bp = 0.5 * (bp + bp.adjoint()).eval();  // kill commutator roundoff
            COperator rest = b - bp;
            if (bp.trace().real() > 0.5) next.push_back(bp);
            if (rest.trace().real() > 0.5) next.push_back(rest);
        }
        blocks = std::move(next);
    }
    std::sort(blocks.begin(), blocks.end(), detail::canonical_block_less);

    std::vector<Projector> members;
    members.reserve(blocks.size());
    for (auto& b : blocks) members.push_back(Projector::from_matrix(std::move(b)));

    CommonFramework fw{ProjectorSet(std::move(members), "framework"), {}, {}, 0.0};
    for (const auto& p : projs) {
        std::vector<int> cover;
        COperator sum = COperator::Zero(d, d);
        for (int g = 0; g < fw.blocks.size(); ++g) {
            const COperator& bg = fw.blocks.member(g).matrix();
            // Commuting projectors either nest or split cleanly: the residual
            // is ~0 for contained blocks and at least 1 otherwise.
            if ((bg * p.matrix() - bg).norm() < 0.5) {
                cover.push_back(g);
                sum += bg;
            }
        }
        fw.recovery_residuals.push_back((sum - p.matrix()).norm());
        fw.max_recovery_residual =
            std::max(fw.max_recovery_residual, fw.recovery_residuals.back());
        fw.covering.push_back(std::move(cover));
    }
    return fw;
}

/// A system/environment split of the full Hilbert space: dim = d_s * d_e,
/// with a unitary relabeling V whose columns are the new product basis
/// expressed in the original basis (original = V * relabeled).
struct Factorization {
    Eigen::Index d_s = 0;
    Eigen::Index d_e = 0;
    COperator relabel;                           // dim x dim unitary
    std::vector<std::vector<int>> system_blocks; // framework block -> system indices
    std::vector<double> block_residuals;         // ||P_gamma - lift of its system block||
    double max_block_residual = 0.0;
    std::vector<std::string> warnings;

    Eigen::Index dim() const { return d_s * d_e; }
    CVector to_relabeled(const CVector& v) const { return relabel.adjoint() * v; }
    CVector from_relabeled(const CVector& v) const { return relabel * v; }
};

/// Factors the Hilbert space from a common framework: the environment
/// dimension is the gcd of the block ranks, each block contributing
/// rank/d_e system basis states. Intra-block bases are obtained by
/// orthogonalizing the block projector's columns in index order, which makes
/// the relabeling deterministic.
inline Factorization factor_hilbert(const CommonFramework& fw, double tol = 1e-10) {
    const Eigen::Index d = fw.blocks.dim();
    Factorization fact;
    Eigen::Index gcd = 0;
    for (const auto& b : fw.blocks.members())
        gcd = std::gcd(gcd, static_cast<Eigen::Index>(b.rank()));
    detail::require(gcd >= 1, "framework blocks must have positive rank");
    fact.d_e = gcd;
    fact.d_s = d / gcd;
    if (fact.d_e == 1)
        fact.warnings.push_back(
            "trivial environment: gcd of framework block ranks is 1 (d_e = 1)");

    fact.relabel = COperator::Zero(d, d);
    Eigen::Index sys_offset = 0;
    for (int g = 0; g < fw.blocks.size(); ++g) {
        const Projector& block = fw.blocks.member(g);
        const Eigen::Index rank = block.rank();
        const Eigen::Index mult = rank / gcd;

        // Modified Gram-Schmidt over the block's columns in index order.
        std::vector<CVector> basis;
        for (Eigen::Index c = 0; c < d && static_cast<Eigen::Index>(basis.size()) < rank;
             ++c) {
            CVector v = block.matrix().col(c);
            for (const auto& u : basis) v -= u.dot(v) * u;
            double n = v.norm();
            if (n > 1e-7) basis.push_back(v / n);
        }
        if (static_cast<Eigen::Index>(basis.size()) != rank)
            throw std::runtime_error("block basis extraction failed (got " +
                                     std::to_string(basis.size()) + " of rank " +
                                     std::to_string(rank) + ")");

        std::vector<int> sys_indices;
        for (Eigen::Index r = 0; r < mult; ++r) {
            sys_indices.push_back(static_cast<int>(sys_offset + r));
            for (Eigen::Index a = 0; a < gcd; ++a)
                fact.relabel.col((sys_offset + r) * gcd + a) =
                    basis[static_cast<size_t>(r * gcd + a)];
        }
        fact.system_blocks.push_back(std::move(sys_indices));
        sys_offset += mult;
    }

    // Validate: unitarity of the relabeling, and each framework projector
    // acting as (its system block) tensor identity on the environment.
    double unit = (fact.relabel.adjoint() * fact.relabel - COperator::Identity(d, d)).norm();
    if (unit > 1e-8)
        throw std::runtime_error("relabeling is not unitary (residual " +
                                 std::to_string(unit) + ")");
    for (int g = 0; g < fw.blocks.size(); ++g) {
        COperator sys_block = COperator::Zero(fact.d_s, fact.d_s);
        for (int s : fact.system_blocks[static_cast<size_t>(g)]) sys_block(s, s) = 1.0;
        COperator lifted =
            fact.relabel * tensor(sys_block, COperator::Identity(gcd, gcd)) *
            fact.relabel.adjoint();
        double res = (lifted - fw.blocks.member(g).matrix()).norm();
        fact.block_residuals.push_back(res);
        fact.max_block_residual = std::max(fact.max_block_residual, res);
    }
    (void)tol;
    return fact;
}

/// Split a plain tensor-product space: `dims` are the factor dimensions in
/// index order (first factor slowest), `system_factors` selects which factors
/// form the system; the rest, in order, form the environment. The relabeling
/// is a basis permutation.
inline Factorization factor_from_tensor_layout(const std::vector<Eigen::Index>& dims,
                                               const std::vector<int>& system_factors) {
    Eigen::Index d = 1;
    for (auto dk : dims) d *= dk;
    detail::check_dim(d);
    std::vector<bool> in_system(dims.size(), false);
    for (int f : system_factors) {
        detail::require(f >= 0 && static_cast<size_t>(f) < dims.size(),
                        "system factor index out of range");
        detail::require(!in_system[static_cast<size_t>(f)], "duplicate system factor");
        in_system[static_cast<size_t>(f)] = true;
    }
    Factorization fact;
    fact.d_s = 1;
    fact.d_e = 1;
    for (size_t k = 0; k < dims.size(); ++k)
        (in_system[k] ? fact.d_s : fact.d_e) *= dims[k];
    fact.relabel = COperator::Zero(d, d);
    for (Eigen::Index old = 0; old < d; ++old) {
        // Decompose the original index into per-factor digits.
        std::vector<Eigen::Index> digit(dims.size());
        Eigen::Index rest = old;
        for (size_t k = dims.size(); k-- > 0;) {
            digit[k] = rest % dims[k];
            rest /= dims[k];
        }
        Eigen::Index s = 0, e = 0;
        for (int f : system_factors) s = s * dims[static_cast<size_t>(f)] + digit[static_cast<size_t>(f)];
        for (size_t k = 0; k < dims.size(); ++k)
            if (!in_system[k]) e = e * dims[k] + digit[k];
        fact.relabel(old, s * fact.d_e + e) = 1.0;
    }
    return fact;
}

/// System observable acting on the factored system space.
struct SystemObservable {
    std::string name;
    COperator matrix;

    SystemObservable(std::string n, COperator m) : name(std::move(n)), matrix(std::move(m)) {
        detail::require(matrix.rows() == matrix.cols(), "observable must be square");
        double herm = (matrix - matrix.adjoint()).norm();
        if (herm > 1e-10 * std::max(1.0, matrix.norm()))
            throw std::invalid_argument("observable is not Hermitian");
    }
};

/// Embeds a system operator into the full space: V (op tensor I_e) V^dagger.
inline COperator lift(const COperator& op_s, const Factorization& fact) {
    detail::require(op_s.rows() == fact.d_s && op_s.cols() == fact.d_s,
                    "operator dimension does not match the system factor");
    return fact.relabel * tensor(op_s, COperator::Identity(fact.d_e, fact.d_e)) *
           fact.relabel.adjoint();
}

inline COperator lift(const SystemObservable& obs, const Factorization& fact) {
    return lift(obs.matrix, fact);
}

/// Partial trace in the coordinates defined by a factorization.
inline COperator partial_trace(const COperator& rho, const Factorization& fact,
                               TraceOver over) {
    detail::require(rho.rows() == fact.dim(), "density operator dimension mismatch");
    COperator relabeled = fact.relabel.adjoint() * rho * fact.relabel;
    return partial_trace(relabeled, fact.d_s, fact.d_e, over);
}

}  // namespace realm
