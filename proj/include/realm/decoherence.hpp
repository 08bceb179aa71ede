#pragma once

#include <realm/framework.hpp>

namespace realm {

struct PairOverlap {
    BranchLabel a;
    BranchLabel b;
    double magnitude = 0.0;
};

/// Gram matrix of the branch vectors at the tree's current step, with
/// interference statistics. Diagonal entries are the branch probabilities.
struct DecoherenceReport {
    std::vector<BranchLabel> labels;
    COperator gram;
    double max_diag = 0.0;
    double max_offdiag = 0.0;
    double threshold = 0.0;
    bool passed = false;
    std::vector<PairOverlap> offenders;  // off-diagonals above threshold, largest first
};

/// Medium decoherence: mutual orthogonality of all branch vectors.
/// Passes iff max |offdiag| <= tol_decoh * max(max diag, 1).
inline DecoherenceReport medium_check(const BranchTree& tree, const ToleranceConfig& tol = {},
                                      int threads = 1) {
    DecoherenceReport rep;
    std::vector<CVector> vectors;
    for (const auto* leaf : tree.leaves()) {
        rep.labels.push_back(leaf->label);
        vectors.push_back(leaf->vector);
    }
    rep.gram = gram(vectors, threads);
    const auto n = static_cast<Eigen::Index>(vectors.size());
    for (Eigen::Index i = 0; i < n; ++i)
        rep.max_diag = std::max(rep.max_diag, rep.gram(i, i).real());
    rep.threshold = tol.tol_decoh * std::max(rep.max_diag, 1.0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double mag = std::abs(rep.gram(i, j));
            rep.max_offdiag = std::max(rep.max_offdiag, mag);
            if (mag > rep.threshold)
                rep.offenders.push_back({rep.labels[static_cast<size_t>(i)],
                                         rep.labels[static_cast<size_t>(j)], mag});
        }
    std::sort(rep.offenders.begin(), rep.offenders.end(),
              [](const PairOverlap& x, const PairOverlap& y) {
                  return x.magnitude > y.magnitude;
              });
    rep.passed = rep.max_offdiag <= rep.threshold;
    return rep;
}

/// Operator-class decoherence: branches stay orthogonal under every probe
/// operator, |<Psi_a, O Psi_b>| <= tol_decoh * ||O|| for a != b. The identity
/// probe (plain medium decoherence) is always included implicitly.
inline Diagnostic operator_decoherence_check(const BranchTree& tree,
                                             const std::vector<COperator>& ops,
                                             const ToleranceConfig& tol = {}) {
    auto leaves = tree.leaves();
    const Eigen::Index d = tree.root().vector.size();
    std::vector<COperator> probes{COperator::Identity(d, d)};
    for (const auto& o : ops) {
        detail::require(o.rows() == d && o.cols() == d,
                        "probe operator dimension mismatch");
        probes.push_back(o);
    }
    Diagnostic diag;
    diag.passed = true;
    diag.residual = 0.0;
    for (size_t k = 0; k < probes.size(); ++k) {
        const double scale = std::max(operator_norm(probes[k]), 1e-300);
        std::vector<CVector> mapped;
        mapped.reserve(leaves.size());
        for (const auto* l : leaves) mapped.push_back(probes[k] * l->vector);
        for (size_t i = 0; i < leaves.size(); ++i)
            for (size_t j = 0; j < leaves.size(); ++j) {
                if (i == j) continue;
                double overlap = std::abs(leaves[i]->vector.dot(mapped[j]));
                double normalized = overlap / scale;
                if (normalized > diag.residual) {
                    diag.residual = normalized;
                    diag.detail = "worst pair " + leaves[i]->label.str() + " / " +
                                  leaves[j]->label.str() + " under probe " +
                                  std::to_string(k) + (k == 0 ? " (identity)" : "");
                }
            }
    }
    diag.passed = diag.residual <= tol.tol_decoh;
    return diag;
}

/// Index of one environment vector: the branch's past label (everything
/// before the final step), the final-step alternative, and the multiplicity
/// index within that projector's range.
struct ZKey {
    BranchLabel past;
    int final_index = 0;
    int r = 0;

    friend bool operator<(const ZKey& a, const ZKey& b) {
        if (!(a.past == b.past)) return a.past < b.past;
        if (a.final_index != b.final_index) return a.final_index < b.final_index;
        return a.r < b.r;
    }
    std::string str() const {
        return past.str() + "|" + std::to_string(final_index) + "|" + std::to_string(r);
    }
};

/// The environment components of every leaf: Psi_leaf = sum_r v_{alpha,r}
/// (x) z_{past,alpha,r} in the factorization's relabeled coordinates, where
/// the v's are a deterministic orthonormal basis of the final projector's
/// system range.
struct ZFamily {
    Factorization fact;
    std::map<ZKey, CVector> entries;
    double max_reconstruction_residual = 0.0;
    int final_step = 0;

    /// Sum of ||z||^2 over the multiplicity index of one leaf.
    double leaf_norm_sq(const BranchLabel& past, int final_index) const {
        double s = 0.0;
        for (const auto& [key, z] : entries)
            if (key.past == past && key.final_index == final_index) s += z.squaredNorm();
        return s;
    }
};

/// Decomposes every leaf vector as sum_r v (x) z under the factorization.
/// Every final-step projector must act as (system operator) (x) identity in
/// the factored coordinates; Trivial final steps count as the identity.
inline ZFamily extract_z(const BranchTree& tree, const Factorization& fact,
                         const ToleranceConfig& tol = {}) {
    detail::require(tree.steps_built() >= 1, "tree has no steps to decompose");
    const Eigen::Index d = fact.dim();
    detail::require(tree.root().vector.size() == d,
                    "factorization dimension does not match the tree");
    const Eigen::Index ds = fact.d_s;
    const Eigen::Index de = fact.d_e;
    const double local_tol = tol.tol_proj * std::max(1.0, static_cast<double>(d));

    ZFamily zf;
    zf.fact = fact;
    zf.final_step = tree.steps_built();

    // One deterministic v-basis per distinct final-step projector.
    std::map<const void*, std::vector<COperator>> basis_cache;
    auto system_basis = [&](const ProjectorSet* set) -> const std::vector<COperator>& {
        auto it = basis_cache.find(set);
        if (it != basis_cache.end()) return it->second;
        std::vector<COperator> bases;
        if (set == nullptr) {
            bases.push_back(COperator::Identity(ds, ds));  // Trivial: full system basis
        } else {
            for (const auto& member : set->members()) {
                COperator p_rel =
                    fact.relabel.adjoint() * member.matrix() * fact.relabel;
                COperator p_s =
                    partial_trace(p_rel, ds, de, TraceOver::Environment) /
                    static_cast<double>(de);
                double local = (p_rel - tensor(p_s, COperator::Identity(de, de))).norm();
                if (local > local_tol)
                    throw std::invalid_argument(
                        "final-step projector is not system-local under the "
                        "factorization (residual " +
                        std::to_string(local) + ")");
                int rank = rank_from_trace(p_s.trace().real());
                if (rank == 0) {
                    bases.emplace_back(ds, 0);  // empty basis, no z entries
                    continue;
                }
                Eigen::ColPivHouseholderQR<COperator> qr(p_s);
                COperator q = qr.householderQ() * COperator::Identity(ds, rank);
                bases.push_back(std::move(q));
            }
        }
        return basis_cache.emplace(set, std::move(bases)).first->second;
    };

    for (const auto* leaf : tree.leaves()) {
        BranchLabel past = leaf->label.truncated(leaf->label.depth() - 1);
        const int final_index = leaf->label.indices.back();
        const BranchNode& parent = tree.node(past);
        const auto& bases =
            system_basis(parent.child_trivial ? nullptr : parent.child_set.get());
        const COperator& v =
            bases.at(parent.child_trivial ? 0 : static_cast<size_t>(final_index));

        CVector psi_rel = fact.to_relabeled(leaf->vector);
        Eigen::Map<const Eigen::Matrix<std::complex<double>, Eigen::Dynamic,
                                       Eigen::Dynamic, Eigen::RowMajor>>
            m(psi_rel.data(), ds, de);
        COperator recon = COperator::Zero(ds, de);
        for (Eigen::Index r = 0; r < v.cols(); ++r) {
            CVector z = m.transpose() * v.col(r).conjugate();
            recon += v.col(r) * z.transpose();
            zf.entries.emplace(ZKey{past, final_index, static_cast<int>(r)},
                               std::move(z));
        }
        double residual = 0.0;
        for (Eigen::Index s = 0; s < ds; ++s)
            for (Eigen::Index e = 0; e < de; ++e)
                residual += std::norm(recon(s, e) - m(s, e));
        zf.max_reconstruction_residual =
            std::max(zf.max_reconstruction_residual, std::sqrt(residual));
    }
    return zf;
}

/// Strong-decoherence verdict: environment vectors of branches with
/// different pasts must be orthogonal. Overlaps between different final
/// indices of the same past are reported but never gate the pass.
struct StrongReport {
    double max_cross_past = 0.0;
    double max_final_index_overlap = 0.0;  // same past, different final index
    bool passed = false;
    bool vacuous = false;  // fewer than two distinct pasts
    std::string witness_a;
    std::string witness_b;
    int entry_count = 0;
};

inline StrongReport strong_check_z(const ZFamily& zf, const ToleranceConfig& tol = {}) {
    StrongReport rep;
    std::vector<const ZKey*> keys;
    std::vector<const CVector*> zs;
    std::set<BranchLabel> pasts;
    for (const auto& [key, z] : zf.entries) {
        keys.push_back(&key);
        zs.push_back(&z);
        pasts.insert(key.past);
    }
    rep.entry_count = static_cast<int>(keys.size());
    rep.vacuous = pasts.size() < 2;
    for (size_t i = 0; i < keys.size(); ++i)
        for (size_t j = i + 1; j < keys.size(); ++j) {
            double overlap = std::abs(zs[i]->dot(*zs[j]));
            if (keys[i]->past == keys[j]->past) {
                if (keys[i]->final_index != keys[j]->final_index)
                    rep.max_final_index_overlap =
                        std::max(rep.max_final_index_overlap, overlap);
                continue;
            }
            if (overlap > rep.max_cross_past) {
                rep.max_cross_past = overlap;
                rep.witness_a = keys[i]->str();
                rep.witness_b = keys[j]->str();
            }
        }
    rep.passed = rep.max_cross_past <= tol.tol_decoh;
    return rep;
}

inline StrongReport strong_check(const BranchTree& tree, const Factorization& fact,
                                 const ToleranceConfig& tol = {}) {
    return strong_check_z(extract_z(tree, fact, tol), tol);
}

/// The stricter variant: environment vectors orthogonal in the final index
/// as well, i.e. whenever (past, final index) pairs differ. Informational
/// only; records never require it.
inline Diagnostic too_strong_check(const ZFamily& zf, const ToleranceConfig& tol = {}) {
    Diagnostic diag;
    diag.residual = 0.0;
    std::string worst_kind;
    std::string worst_pair;
    bool any_pair = false;
    std::vector<const ZKey*> keys;
    std::vector<const CVector*> zs;
    for (const auto& [key, z] : zf.entries) {
        keys.push_back(&key);
        zs.push_back(&z);
    }
    for (size_t i = 0; i < keys.size(); ++i)
        for (size_t j = i + 1; j < keys.size(); ++j) {
            bool same_past = keys[i]->past == keys[j]->past;
            if (same_past && keys[i]->final_index == keys[j]->final_index) continue;
            any_pair = true;
            double overlap = std::abs(zs[i]->dot(*zs[j]));
            if (overlap > diag.residual) {
                diag.residual = overlap;
                worst_kind = same_past ? "final-index pair" : "cross-past pair";
                worst_pair = keys[i]->str() + " / " + keys[j]->str();
            }
        }
    diag.passed = diag.residual <= tol.tol_decoh;
    diag.detail = !any_pair ? "no distinct (past, final index) pairs (vacuous)"
                            : "worst " + worst_kind + " " + worst_pair;
    return diag;
}

}  // namespace realm
