#pragma once

// Randomized model builders shared by the decoherence, records, and
// acceptance suites: small system-environment models whose recording
// interaction can be selectively disabled, so both strongly decoherent and
// interfering trees are available with known structure.

#include <realm/decoherence.hpp>

#include "testutil.hpp"

#include <numbers>

namespace testutil {

/// Controlled recorder S = sum_s P_s (x) E_s on C^ds (x) C^ds, where E_s is
/// the transposition of environment basis states 0 and s. S is a Hermitian
/// involution, so H = (pi/2)(I - S) gives exp(-iH) = S and exp(-2iH) = I.
/// Outcomes listed in `broken` use E_s = I and are not recorded.
inline COperator controlled_recorder(Eigen::Index ds, const std::vector<int>& broken) {
    const Eigen::Index d = ds * ds;
    COperator s_op = COperator::Zero(d, d);
    for (Eigen::Index s = 0; s < ds; ++s) {
        COperator e_s = COperator::Identity(ds, ds);
        bool is_broken =
            std::find(broken.begin(), broken.end(), static_cast<int>(s)) != broken.end();
        if (s != 0 && !is_broken) {
            e_s(0, 0) = 0.0;
            e_s(s, s) = 0.0;
            e_s(0, s) = 1.0;
            e_s(s, 0) = 1.0;
        }
        COperator p_s = COperator::Zero(ds, ds);
        p_s(s, s) = 1.0;
        s_op += oracle::kron(p_s, e_s);
    }
    return s_op;
}

struct RecordModel {
    Eigen::Index ds = 0;
    Eigen::Index de = 0;
    std::shared_ptr<const realm::Hamiltonian> h;
    CVector psi0;
    realm::Factorization fact;  // system = first factor; relabel = identity
    std::shared_ptr<const realm::ProjectorSet> record_set;  // {|s><s| (x) I}
    std::shared_ptr<const realm::ProjectorSet> probe_set;   // random rank-1 system set
};

/// A record-style model: the system starts in a random superposition with
/// no amplitude below a floor (so broken recording is always visible), the
/// environment starts in |0>, and one unit of time copies the system basis
/// index into the environment (except for broken outcomes).
inline RecordModel make_record_model(Rng& rng, Eigen::Index ds,
                                     const std::vector<int>& broken = {}) {
    RecordModel m;
    m.ds = ds;
    m.de = ds;
    const Eigen::Index d = ds * ds;

    COperator s_op = controlled_recorder(ds, broken);
    m.h = std::make_shared<realm::Hamiltonian>(
        (std::numbers::pi / 2.0) * (COperator::Identity(d, d) - s_op));

    CVector amps(ds);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index s = 0; s < ds; ++s) {
        double mag = 0.5 + unif(rng);
        double phase = 2.0 * std::numbers::pi * unif(rng);
        amps(s) = mag * Complex(std::cos(phase), std::sin(phase));
    }
    amps.normalize();
    m.psi0 = realm::tensor_state(amps, basis_state(ds, 0));

    m.fact = realm::factor_from_tensor_layout({ds, ds}, {0});

    std::vector<realm::Projector> record_members;
    for (Eigen::Index s = 0; s < ds; ++s) {
        COperator p_s = COperator::Zero(ds, ds);
        p_s(s, s) = 1.0;
        record_members.push_back(
            realm::Projector::from_matrix(realm::tensor(p_s, COperator::Identity(ds, ds))));
    }
    m.record_set = std::make_shared<const realm::ProjectorSet>(std::move(record_members),
                                                               "record-basis");

    COperator u = random_unitary(rng, ds);
    std::vector<realm::Projector> probe_members;
    for (Eigen::Index b = 0; b < ds; ++b) {
        CVector col = u.col(b);
        probe_members.push_back(realm::Projector::from_matrix(
            realm::tensor(ket_bra(col, col), COperator::Identity(ds, ds))));
    }
    m.probe_set =
        std::make_shared<const realm::ProjectorSet>(std::move(probe_members), "probe");
    return m;
}

/// Two-step tree for a record model: the recording interaction acts during
/// (t0, t1) followed by the record-basis set; the interval (t1, t3) has
/// length two, over which the involution squares to the identity, followed
/// by the probe set.
inline realm::BranchTree record_tree(const RecordModel& m) {
    realm::TimeGrid grid(0.0, {1.0, 3.0});
    realm::BranchTree tree(grid, m.h, m.psi0);
    tree = realm::extend_tree_uniform(tree, realm::StepSet(m.record_set));
    tree = realm::extend_tree_uniform(tree, realm::StepSet(m.probe_set));
    return tree;
}

}  // namespace testutil
