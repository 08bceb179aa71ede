#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "realm/adaptive.hpp"

namespace realm {

/// Qubit chain with nearest-neighbor XX hopping, either on the full 2^n
/// space or restricted to the single-excitation sector (dimension n). Site 0
/// is the least significant bit of the full-space basis index; in the sector
/// representation, basis state i is the excitation sitting at site i.
struct LatticeModel {
    int n_sites = 0;
    int local_dim = 2;
    bool single_excitation = false;
    double hop = 0.0;
    Eigen::Index dim = 0;
    std::shared_ptr<const Hamiltonian> hamiltonian;
    COperator number_total;              // total excitation number
    std::vector<COperator> site_number;  // per-site number density
};

namespace detail {

/// Lifts a 2x2 operator to act on `site` of an n-qubit register (site 0 is
/// the least significant factor).
inline COperator site_operator(int n_sites, int site, const COperator& local) {
    COperator out = COperator::Identity(1, 1);
    for (int i = n_sites - 1; i >= 0; --i)
        out = tensor(out, i == site ? local : COperator::Identity(2, 2));
    return out;
}

}  // namespace detail

/// Builds the XX hopping chain H = (hop/2) sum_i (X_i X_{i+1} + Y_i Y_{i+1})
/// with open boundaries, which conserves the total excitation number exactly.
/// With `single_excitation_sector` the model is represented directly on the
/// one-excitation subspace as an n x n hopping matrix.
inline LatticeModel make_xx_chain(int n_sites, double hop, bool single_excitation_sector) {
    LatticeModel m;
    m.n_sites = n_sites;
    m.single_excitation = single_excitation_sector;
    m.hop = hop;
    if (single_excitation_sector) {
        detail::require(n_sites >= 2, "chain needs at least 2 sites");
        const Eigen::Index d = n_sites;
        m.dim = d;
        COperator h = COperator::Zero(d, d);
        for (Eigen::Index i = 0; i + 1 < d; ++i) {
            h(i, i + 1) = hop;
            h(i + 1, i) = hop;
        }
        m.hamiltonian = std::make_shared<Hamiltonian>(std::move(h));
        m.number_total = COperator::Identity(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            COperator n_i = COperator::Zero(d, d);
            n_i(i, i) = 1.0;
            m.site_number.push_back(std::move(n_i));
        }
        return m;
    }
    detail::require(n_sites >= 2 && n_sites <= 8,
                    "full-space chain supports 2 to 8 sites (dense 2^n storage)");
    const Eigen::Index d = Eigen::Index(1) << n_sites;
    m.dim = d;
    COperator x(2, 2), y(2, 2), z(2, 2);
    x << 0, 1, 1, 0;
    y << 0, Complex(0, -1), Complex(0, 1), 0;
    z << 1, 0, 0, -1;
    COperator h = COperator::Zero(d, d);
    for (int i = 0; i + 1 < n_sites; ++i) {
        h += (hop / 2.0) * (detail::site_operator(n_sites, i, x) *
                                detail::site_operator(n_sites, i + 1, x) +
                            detail::site_operator(n_sites, i, y) *
                                detail::site_operator(n_sites, i + 1, y));
    }
    COperator n_total = COperator::Zero(d, d);
    COperator n_local = (COperator::Identity(2, 2) - z) / 2.0;
    for (int i = 0; i < n_sites; ++i) {
        m.site_number.push_back(detail::site_operator(n_sites, i, n_local));
        n_total += m.site_number.back();
    }
    double comm = (h * n_total - n_total * h).norm();
    detail::require(comm <= 1e-12 * std::max(1.0, h.norm()),
                    "hopping Hamiltonian fails to conserve the total number");
    m.hamiltonian = std::make_shared<Hamiltonian>(std::move(h));
    m.number_total = std::move(n_total);
    return m;
}

/// Exhaustive, exclusive partition of the chain's sites into volumes.
struct VolumePartition {
    std::vector<std::vector<int>> volumes;

    /// Contiguous volumes of `volume_size` sites; a shorter remainder is
    /// merged into the last volume.
    static VolumePartition contiguous(int n_sites, int volume_size) {
        detail::require(volume_size >= 1 && volume_size <= n_sites,
                        "volume size must lie in [1, n_sites]");
        VolumePartition p;
        for (int start = 0; start < n_sites; start += volume_size) {
            if (n_sites - start < 2 * volume_size && !p.volumes.empty() &&
                n_sites - start < volume_size) {
                for (int i = start; i < n_sites; ++i) p.volumes.back().push_back(i);
                return p;
            }
            std::vector<int> v;
            for (int i = start; i < std::min(start + volume_size, n_sites); ++i)
                v.push_back(i);
            p.volumes.push_back(std::move(v));
        }
        return p;
    }

    void validate(int n_sites) const {
        std::vector<bool> seen(static_cast<size_t>(n_sites), false);
        detail::require(!volumes.empty(), "volume partition must be nonempty");
        for (const auto& v : volumes) {
            detail::require(!v.empty(), "volumes must be nonempty");
            for (int site : v) {
                detail::require(site >= 0 && site < n_sites,
                                "volume site " + std::to_string(site) + " out of range");
                detail::require(!seen[static_cast<size_t>(site)],
                                "volumes overlap at site " + std::to_string(site));
                seen[static_cast<size_t>(site)] = true;
            }
        }
        for (int i = 0; i < n_sites; ++i)
            detail::require(seen[static_cast<size_t>(i)],
                            "volumes do not cover site " + std::to_string(i));
    }
};

/// Strictly increasing boundaries defining exhaustive, exclusive ranges
/// [b_0, b_1), [b_1, b_2), ..., [b_{k-1}, b_k] (the last range is closed).
struct RangeSpec {
    std::vector<double> boundaries;

    explicit RangeSpec(std::vector<double> b) : boundaries(std::move(b)) {
        detail::require(boundaries.size() >= 2, "a range spec needs at least 2 boundaries");
        for (size_t i = 0; i + 1 < boundaries.size(); ++i)
            detail::require(boundaries[i] < boundaries[i + 1],
                            "range boundaries must be strictly increasing");
    }

    int ranges() const { return static_cast<int>(boundaries.size()) - 1; }

    std::string range_str(int i) const {
        std::ostringstream os;
        os << "[" << boundaries.at(static_cast<size_t>(i)) << ", "
           << boundaries.at(static_cast<size_t>(i) + 1)
           << (i + 1 == ranges() ? "]" : ")");
        return os.str();
    }
};

/// Average number density over a volume: (1/|vol|) sum_{sites in vol} n_i.
inline COperator average_density_operator(const LatticeModel& model,
                                          const std::vector<int>& vol) {
    detail::require(!vol.empty(), "volume must be nonempty");
    COperator out = COperator::Zero(model.dim, model.dim);
    for (int site : vol) {
        detail::require(site >= 0 && site < model.n_sites,
                        "site " + std::to_string(site) + " out of range");
        out += model.site_number.at(static_cast<size_t>(site));
    }
    return out / static_cast<double>(vol.size());
}

/// Spectral range projectors plus the notes produced while building them.
struct RangeProjectors {
    ProjectorSet set;
    std::vector<std::string> notes;
    std::vector<double> eigenvalues;
};

/// Groups the spectral projectors of a Hermitian operator by which range
/// contains each eigenvalue. Empty ranges are dropped with a note. An
/// eigenvalue within tol_rank of a boundary is a hard error: silently
/// tie-breaking would make the set irreproducible, so the error suggests the
/// midpoint to the nearest distinct eigenvalue as a shifted boundary.
inline RangeProjectors range_projectors(const COperator& op, const RangeSpec& ranges,
                                        const ToleranceConfig& tol = {},
                                        const std::string& name = "ranges") {
    detail::require(op.rows() == op.cols(), "operator must be square");
    double scale = std::max(1.0, op.norm());
    detail::require((op - op.adjoint()).norm() <= 1e-12 * scale,
                    "range projectors need a Hermitian operator");

    Eigen::SelfAdjointEigenSolver<COperator> es(op);
    detail::require(es.info() == Eigen::Success, "eigendecomposition failed");
    const Eigen::VectorXd& evs = es.eigenvalues();
    const double spread = std::max(1.0, std::abs(evs(evs.size() - 1) - evs(0)));
    const double boundary_tol = tol.tol_rank * spread;

    for (Eigen::Index k = 0; k < evs.size(); ++k) {
        for (double b : ranges.boundaries) {
            if (std::abs(evs(k) - b) <= boundary_tol) {
                double suggestion = b + 0.5;
                double best = std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < evs.size(); ++j) {
                    double gap = std::abs(evs(j) - evs(k));
                    if (gap > boundary_tol && gap < best) {
                        best = gap;
                        suggestion = (evs(k) + evs(j)) / 2.0;
                    }
                }
                std::ostringstream os;
                os << "eigenvalue " << evs(k) << " lies on the range boundary " << b
                   << "; shift the boundary (suggested midpoint " << suggestion << ")";
                throw std::invalid_argument(os.str());
            }
        }
        detail::require(evs(k) > ranges.boundaries.front() &&
                            evs(k) < ranges.boundaries.back(),
                        "ranges do not cover eigenvalue " + std::to_string(evs(k)));
    }

    std::vector<COperator> sums(static_cast<size_t>(ranges.ranges()),
                                COperator::Zero(op.rows(), op.cols()));
    std::vector<int> counts(static_cast<size_t>(ranges.ranges()), 0);
    for (Eigen::Index k = 0; k < evs.size(); ++k) {
        auto it = std::upper_bound(ranges.boundaries.begin(), ranges.boundaries.end(),
                                   evs(k));
        size_t r = static_cast<size_t>(it - ranges.boundaries.begin()) - 1;
        CVector v = es.eigenvectors().col(k);
        sums[r] += v * v.adjoint();
        ++counts[r];
    }

    RangeProjectors out{ProjectorSet({Projector::identity(op.rows())}, name), {}, {}};
    out.eigenvalues.assign(evs.data(), evs.data() + evs.size());
    std::vector<Projector> members;
    for (size_t r = 0; r < sums.size(); ++r) {
        if (counts[r] == 0) {
            out.notes.push_back("range " + ranges.range_str(static_cast<int>(r)) +
                                " contains no spectrum; dropped");
            continue;
        }
        COperator p = (sums[r] + sums[r].adjoint()) / 2.0;
        members.push_back(Projector::from_matrix(std::move(p)));
    }
    out.set = ProjectorSet(std::move(members), name);
    auto v = validate_projector_set(out.set, 1e-12);
    detail::require(v.passed, "spectral range projectors failed validation");
    return out;
}

/// Range projectors of the averaged number density over every volume, plus
/// their joint refinement (products over volumes, rank-0 members dropped).
struct VolumeRangeSets {
    std::vector<ProjectorSet> per_volume;
    std::shared_ptr<const ProjectorSet> joint;
    std::vector<std::string> notes;
};

inline VolumeRangeSets volume_range_projectors(const LatticeModel& model,
                                               const VolumePartition& vols,
                                               const RangeSpec& ranges,
                                               const ToleranceConfig& tol = {}) {
    vols.validate(model.n_sites);
    VolumeRangeSets out;
    for (size_t v = 0; v < vols.volumes.size(); ++v) {
        COperator avg = average_density_operator(model, vols.volumes[v]);
        RangeProjectors rp =
            range_projectors(avg, ranges, tol, "n-avg[" + std::to_string(v) + "]");
        for (auto& note : rp.notes)
            out.notes.push_back("volume " + std::to_string(v) + ": " + note);
        out.per_volume.push_back(std::move(rp.set));
    }

    std::vector<COperator> blocks;
    for (const auto& p : out.per_volume.front().members()) blocks.push_back(p.matrix());
    for (size_t v = 1; v < out.per_volume.size(); ++v) {
        std::vector<COperator> next;
        for (const auto& b : blocks) {
            for (const auto& p : out.per_volume[v].members()) {
                COperator prod = b * p.matrix();
                prod = (prod + prod.adjoint()) / 2.0;
                if (prod.trace().real() < 0.5) continue;  // empty intersection
                next.push_back(std::move(prod));
            }
        }
        blocks = std::move(next);
    }
    std::vector<Projector> members;
    for (auto& b : blocks) members.push_back(Projector::from_matrix(std::move(b)));
    auto joint = std::make_shared<const ProjectorSet>(std::move(members), "number-ranges");
    auto check = validate_projector_set(*joint, 1e-12);
    detail::require(check.passed, "joint number-range projectors failed validation");
    out.joint = std::move(joint);
    return out;
}

/// Refines a projector set by the total-number sectors (which commute with
/// every number-range projector); rank-0 products are dropped.
inline std::shared_ptr<const ProjectorSet> total_number_refinement(const LatticeModel& model,
                                                                   const ProjectorSet& base) {
    if (model.single_excitation)  // the sector is a single eigenspace already
        return std::make_shared<const ProjectorSet>(base.members(), base.name() + " x N");
    std::vector<COperator> sectors(static_cast<size_t>(model.n_sites) + 1,
                                   COperator::Zero(model.dim, model.dim));
    for (Eigen::Index b = 0; b < model.dim; ++b) {
        int count = 0;
        for (int i = 0; i < model.n_sites; ++i)
            if ((b >> i) & 1) ++count;
        sectors[static_cast<size_t>(count)](b, b) = 1.0;
    }
    std::vector<Projector> members;
    for (const auto& p : base.members()) {
        for (const auto& s : sectors) {
            COperator prod = p.matrix() * s;
            prod = (prod + prod.adjoint()) / 2.0;
            if (prod.trace().real() < 0.5) continue;
            members.push_back(Projector::from_matrix(std::move(prod)));
        }
    }
    return std::make_shared<const ProjectorSet>(std::move(members), base.name() + " x N");
}

/// Refines a projector set by the joint occupation pattern of the given
/// sites (full-space model only). Every site-number operator is diagonal in
/// the occupation basis, so the products are exact; rank-0 members are
/// dropped.
inline std::shared_ptr<const ProjectorSet> site_pattern_refinement(
    const LatticeModel& model, const ProjectorSet& base, const std::vector<int>& sites) {
    detail::require(!model.single_excitation,
                    "site patterns refine the full-space model");
    detail::require(!sites.empty(), "site list must be nonempty");
    for (int s : sites)
        detail::require(s >= 0 && s < model.n_sites,
                        "site " + std::to_string(s) + " out of range");
    std::map<Eigen::Index, COperator> patterns;
    for (Eigen::Index b = 0; b < model.dim; ++b) {
        Eigen::Index key = 0;
        for (size_t k = 0; k < sites.size(); ++k)
            key |= ((b >> sites[k]) & 1) << k;
        auto [it, fresh] = patterns.try_emplace(key, COperator::Zero(model.dim, model.dim));
        it->second(b, b) = 1.0;
    }
    std::vector<Projector> members;
    for (const auto& p : base.members()) {
        for (const auto& [key, s] : patterns) {
            COperator prod = p.matrix() * s;
            prod = (prod + prod.adjoint()) / 2.0;
            if (prod.trace().real() < 0.5) continue;
            members.push_back(Projector::from_matrix(std::move(prod)));
        }
    }
    return std::make_shared<const ProjectorSet>(std::move(members),
                                                base.name() + " x sites");
}

/// Position cells of a single-excitation chain: one projector per volume,
/// summing the site occupations it contains.
inline std::shared_ptr<const ProjectorSet> cell_projectors(const LatticeModel& model,
                                                           const VolumePartition& cells) {
    detail::require(model.single_excitation,
                    "cell projectors act on the single-excitation sector");
    cells.validate(model.n_sites);
    std::vector<Projector> members;
    for (const auto& cell : cells.volumes) {
        COperator p = COperator::Zero(model.dim, model.dim);
        for (int site : cell) p(site, site) = 1.0;
        members.push_back(Projector::from_matrix(std::move(p)));
    }
    return std::make_shared<const ProjectorSet>(std::move(members), "cells");
}

/// One step of a scenario's history: Trivial, one shared set, an explicit
/// branch-dependent assignment (missing branches default to Trivial), or an
/// adaptive rule evaluated at build time.
struct ScenarioStep {
    enum class Kind { Trivial, Uniform, ByBranch, Rule };
    Kind kind = Kind::Trivial;
    std::shared_ptr<const ProjectorSet> set;
    std::map<BranchLabel, StepSet> by_branch;
    std::optional<BranchRule> rule;

    static ScenarioStep trivial() { return {}; }
    static ScenarioStep uniform(std::shared_ptr<const ProjectorSet> s) {
        ScenarioStep st;
        st.kind = Kind::Uniform;
        st.set = std::move(s);
        detail::require(st.set != nullptr, "uniform step needs a projector set");
        return st;
    }
    static ScenarioStep branch_dependent(std::map<BranchLabel, StepSet> m) {
        ScenarioStep st;
        st.kind = Kind::ByBranch;
        st.by_branch = std::move(m);
        return st;
    }
    static ScenarioStep adaptive(BranchRule r) {
        ScenarioStep st;
        st.kind = Kind::Rule;
        st.rule = std::move(r);
        return st;
    }
};

/// A runnable description of a model, initial state, time grid, and the
/// coarse graining applied at each step, together with the optional
/// factorization, observables, refinement candidates, and regrouping that
/// the analysis commands operate on.
struct Scenario {
    std::string name;
    std::string description;
    std::shared_ptr<const Hamiltonian> hamiltonian;
    CVector initial_state;
    TimeGrid grid;
    std::vector<ScenarioStep> steps;  // at most grid.steps(); the rest is headroom
    std::optional<Factorization> records_factorization;
    std::vector<SystemObservable> observables;
    std::vector<RefinementCandidate> refinement_candidates;
    RefineMode refine_mode = RefineMode::Medium;
    std::vector<std::vector<BranchLabel>> coarse_grouping;
    ToleranceConfig tol;
    std::vector<std::string> notes;

    Scenario(std::string name_, std::shared_ptr<const Hamiltonian> h, CVector psi0,
             TimeGrid grid_)
        : name(std::move(name_)),
          hamiltonian(std::move(h)),
          initial_state(std::move(psi0)),
          grid(std::move(grid_)) {
        detail::require(hamiltonian != nullptr, "scenario needs a Hamiltonian");
        detail::require(initial_state.size() == hamiltonian->dim(),
                        "initial state dimension mismatch");
        double n = initial_state.norm();
        detail::require(std::abs(n - 1.0) <= 1e-10,
                        "initial state must be normalized (norm " + std::to_string(n) + ")");
    }
};

/// Builds the scenario's branch tree by applying its steps in order. Steps
/// beyond the scenario's list leave headroom in the grid (for record checks
/// that extend the tree further).
inline BranchTree build_tree(const Scenario& s) {
    detail::require(static_cast<int>(s.steps.size()) <= s.grid.steps(),
                    "scenario has more steps than its time grid");
    BranchTree tree(s.grid, s.hamiltonian, s.initial_state, s.name);
    for (const ScenarioStep& st : s.steps) {
        switch (st.kind) {
            case ScenarioStep::Kind::Trivial:
                tree = extend_tree_uniform(tree, StepSet(Trivial{}), s.tol);
                break;
            case ScenarioStep::Kind::Uniform:
                tree = extend_tree_uniform(tree, StepSet(st.set), s.tol);
                break;
            case ScenarioStep::Kind::ByBranch: {
                StepAssignment a;
                for (const BranchNode* leaf : tree.leaves()) {
                    auto it = st.by_branch.find(leaf->label);
                    a.emplace(leaf->label,
                              it == st.by_branch.end() ? StepSet(Trivial{}) : it->second);
                }
                tree = tree.extend(a, s.tol);
                break;
            }
            case ScenarioStep::Kind::Rule:
                tree = tree.extend(apply_rule(tree, *st.rule), s.tol);
                break;
        }
    }
    return tree;
}

/// Spin-measurement model on coin (x) spin (x) apparatus (basis index
/// c*4 + s*2 + a). The coin chooses the measured axis: heads means the
/// z-basis, tails the x-basis. The copy unitary records the chosen-basis
/// outcome into the apparatus conditioned on the coin, acting during the
/// interval after the spin alternatives (records take one step to form).
/// With `first_person` the tails branch is left unrefined: only the
/// projected experiment's outcomes are resolved, a strictly coarser but
/// still branch-dependent description.
inline Scenario build_spin_measurement_scenario(bool first_person = false) {
    const COperator i2 = COperator::Identity(2, 2);
    const COperator i4 = COperator::Identity(4, 4);
    COperator x(2, 2);
    x << 0, 1, 1, 0;
    CVector z0(2), z1(2), xp(2), xm(2);
    z0 << 1, 0;
    z1 << 0, 1;
    xp << 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
    xm << 1 / std::sqrt(2.0), -1 / std::sqrt(2.0);

    auto proj = [](const CVector& v) { return COperator(v * v.adjoint()); };
    const COperator p_heads = proj(z0), p_tails = proj(z1);
    const COperator p_zp = proj(z0), p_zm = proj(z1);
    const COperator p_xp = proj(xp), p_xm = proj(xm);

    // Controlled copy: heads records the spin-z outcome, tails the spin-x
    // outcome, into the apparatus. An involution, so H generates it in unit
    // time and cancels over intervals of length two.
    COperator cnot_z = tensor(p_zp, i2) + tensor(p_zm, x);
    COperator cnot_x = tensor(p_xp, i2) + tensor(p_xm, x);
    COperator u_copy = tensor(p_heads, cnot_z) + tensor(p_tails, cnot_x);
    auto h = std::make_shared<Hamiltonian>(
        (std::numbers::pi / 2.0) * (COperator::Identity(8, 8) - u_copy));

    CVector coin = (z0 + z1) / std::sqrt(2.0);
    CVector psi0 = tensor_state(coin, tensor_state(xp, z0));

    auto coin_set = std::make_shared<const ProjectorSet>(
        std::vector<Projector>{Projector::from_matrix(tensor(p_heads, i4)),
                               Projector::from_matrix(tensor(p_tails, i4))},
        "coin");
    auto heads_set = std::make_shared<const ProjectorSet>(
        std::vector<Projector>{
            Projector::from_matrix(tensor(p_heads, tensor(p_zp, i2))),
            Projector::from_matrix(tensor(p_heads, tensor(p_zm, i2))),
            Projector::from_matrix(tensor(p_tails, i4))},
        "spin-z given heads");
    auto tails_set = std::make_shared<const ProjectorSet>(
        std::vector<Projector>{
            Projector::from_matrix(tensor(p_tails, tensor(p_xp, i2))),
            Projector::from_matrix(tensor(p_tails, tensor(p_xm, i2))),
            Projector::from_matrix(tensor(p_heads, i4))},
        "spin-x given tails");

    // Intervals of length two are free evolution; the copy acts during the
    // unit interval after the spin alternatives. The final grid time leaves
    // headroom for record-permanence probes.
    Scenario s(first_person ? "spin-measurement-first-person" : "spin-measurement", h,
               psi0, TimeGrid(0.0, {2.0, 4.0, 5.0, 7.0}));
    std::map<BranchLabel, StepSet> second;
    second.emplace(BranchLabel{0}, StepSet(heads_set));
    if (!first_person) second.emplace(BranchLabel{1}, StepSet(tails_set));
    s.steps = {ScenarioStep::uniform(coin_set), ScenarioStep::branch_dependent(second),
               ScenarioStep::trivial()};
    s.records_factorization = factor_from_tensor_layout({2, 2, 2}, {1});
    COperator sz(2, 2);
    sz << 1, 0, 0, -1;
    s.observables.emplace_back("spin-z", sz);
    s.observables.emplace_back("spin-x", x);
    if (!first_person)
        s.coarse_grouping = {{BranchLabel{0, 0, 0}},
                             {BranchLabel{0, 1, 0}},
                             {BranchLabel{1, 0, 0}, BranchLabel{1, 1, 0},
                              BranchLabel{0, 2, 0}, BranchLabel{1, 2, 0}}};
    s.description =
        "A coin flip selects the measured spin axis (heads: z, tails: x); the "
        "apparatus records the outcome one step later. Histories are branch "
        "dependent: the spin alternatives depend on the coin outcome.";
    s.notes.push_back("system = spin; environment = coin and apparatus");
    return s;
}

/// Two-slit analogue: a single qubit, slit alternatives at the first step
/// and screen alternatives at the second, with free (Hadamard-like)
/// evolution and no record of which slit. Interference makes the history
/// probabilities fail to add over the slits.
inline Scenario build_two_slit_scenario() {
    COperator x(2, 2), z(2, 2);
    x << 0, 1, 1, 0;
    z << 1, 0, 0, -1;
    COperator w = (x + z) / std::sqrt(2.0);
    auto h = std::make_shared<Hamiltonian>(
        (std::numbers::pi / 2.0) * (COperator::Identity(2, 2) - w));
    CVector psi0(2);
    psi0 << 1, 0;

    CVector e0(2), e1(2);
    e0 << 1, 0;
    e1 << 0, 1;
    auto basis_set = [&](const std::string& name) {
        std::vector<Projector> ms;
        ms.push_back(Projector::from_matrix(e0 * e0.adjoint()));
        ms.push_back(Projector::from_matrix(e1 * e1.adjoint()));
        return std::make_shared<const ProjectorSet>(std::move(ms), name);
    };

    Scenario s("two-slit", h, psi0, TimeGrid(0.0, {1.0, 2.0}));
    s.steps = {ScenarioStep::uniform(basis_set("slits")),
               ScenarioStep::uniform(basis_set("screen"))};
    s.records_factorization = factor_from_tensor_layout({2}, {0});
    s.observables.emplace_back("upper-slit", COperator(e0 * e0.adjoint()));
    s.description =
        "Slit alternatives followed by screen alternatives without any "
        "record: branches interfere, medium decoherence fails, and history "
        "probabilities do not add over the slits.";
    s.notes.push_back("expected to fail every decoherence check");
    return s;
}

/// Quasiclassical chain scenario: averaged number densities over volumes,
/// coarse grained by ranges, applied uniformly at every step. Decoherence is
/// approximate: the scenario reports the measured interference rather than
/// asserting a pass.
inline Scenario build_chain_scenario(int n_sites, const VolumePartition& volumes,
                                     const RangeSpec& ranges, int steps) {
    detail::require(n_sites >= 4 && n_sites <= 8, "chain scenario supports 4 to 8 qubits");
    detail::require(steps >= 1, "chain scenario needs at least one step");
    LatticeModel model = make_xx_chain(n_sites, 1.0, false);
    VolumeRangeSets sets = volume_range_projectors(model, volumes, ranges);

    CVector psi0 = CVector::Zero(model.dim);
    psi0(Eigen::Index(1) << 0) = 1.0 / std::sqrt(2.0);           // excitation at site 0
    psi0(Eigen::Index(1) << (n_sites - 1)) = 1.0 / std::sqrt(2.0);  // and at the far end

    std::vector<double> times;
    for (int k = 1; k <= steps; ++k) times.push_back(0.4 * k);
    Scenario s("chain", model.hamiltonian, psi0, TimeGrid(0.0, std::move(times)));
    for (int k = 0; k < steps; ++k) s.steps.push_back(ScenarioStep::uniform(sets.joint));
    s.refinement_candidates.push_back(
        {1, BranchLabel{}, total_number_refinement(model, *sets.joint)});
    s.refinement_candidates.push_back(
        {1, BranchLabel{}, site_pattern_refinement(model, *sets.joint, volumes.volumes.front())});
    s.notes = std::move(sets.notes);
    s.notes.push_back("decoherence is approximate; interference is reported, not asserted");
    s.description =
        "Nearest-neighbor hopping chain with history alternatives given by "
        "ranges of the number density averaged over volumes.";
    return s;
}

/// Wave packet on a single-excitation chain with position-cell alternatives
/// and an adaptive rule that keeps fine cells only where the packet has
/// support, pruning negligible branches.
inline Scenario build_wave_packet_scenario(int n_sites, double hop_strength,
                                           double packet_width) {
    detail::require(n_sites >= 8, "wave packet scenario needs at least 8 sites");
    detail::require(packet_width > 0.0, "packet width must be positive");
    LatticeModel model = make_xx_chain(n_sites, hop_strength, true);
    auto cells = cell_projectors(model, VolumePartition::contiguous(n_sites, 3));

    const double center = n_sites / 4.0;
    const double momentum = std::numbers::pi / 2.0;
    CVector psi0(model.dim);
    for (Eigen::Index j = 0; j < model.dim; ++j) {
        double envelope = std::exp(-std::pow(j - center, 2) /
                                   (4.0 * packet_width * packet_width));
        psi0(j) = envelope * std::exp(Complex(0.0, momentum * static_cast<double>(j)));
    }
    psi0.normalize();

    Scenario s("wave-packet", model.hamiltonian, psi0,
               TimeGrid(0.0, {1.5, 3.0, 4.5}));
    BranchRule rule = BranchRule::composite(cells, 1e-6, 1e-7);
    s.steps = {ScenarioStep::adaptive(rule), ScenarioStep::adaptive(rule),
               ScenarioStep::adaptive(rule)};
    s.description =
        "A moving wave packet coarse grained by position cells; the branch "
        "rule fine grains only near the packet's support and prunes "
        "negligible-probability branches.";
    s.notes.push_back("compare against uniform cell refinement for the pruning error");
    return s;
}

}  // namespace realm
