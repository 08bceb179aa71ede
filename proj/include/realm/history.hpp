#pragma once

#include <realm/operator_core.hpp>

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

namespace realm {

/// Strictly increasing sequence of step times following the initial time t0.
class TimeGrid {
  public:
    TimeGrid(double t0, std::vector<double> times) : t0_(t0), times_(std::move(times)) {
        detail::require(!times_.empty(), "time grid needs at least one step");
        double prev = t0_;
        for (double t : times_) {
            detail::require(t > prev, "time grid must be strictly increasing");
            prev = t;
        }
    }

    double t0() const { return t0_; }
    int steps() const { return static_cast<int>(times_.size()); }
    /// time(0) = t0, time(k) = k-th step time.
    double time(int k) const {
        return k == 0 ? t0_ : times_.at(static_cast<size_t>(k - 1));
    }
    double dt(int k) const { return time(k) - time(k - 1); }

  private:
    double t0_;
    std::vector<double> times_;
};

/// Marks a step that applies no alternative: the branch evolves unitarily
/// and keeps a single child.
struct Trivial {};

/// Path of member indices from the root; the empty label is the root.
struct BranchLabel {
    std::vector<int> indices;

    BranchLabel() = default;
    BranchLabel(std::initializer_list<int> init) : indices(init) {}
    explicit BranchLabel(std::vector<int> idx) : indices(std::move(idx)) {}

    BranchLabel child(int i) const {
        BranchLabel out = *this;
        out.indices.push_back(i);
        return out;
    }
    BranchLabel truncated(size_t len) const {
        BranchLabel out;
        out.indices.assign(indices.begin(),
                           indices.begin() + static_cast<long>(std::min(len, indices.size())));
        return out;
    }
    size_t depth() const { return indices.size(); }

    friend bool operator==(const BranchLabel& a, const BranchLabel& b) {
        return a.indices == b.indices;
    }
    friend bool operator<(const BranchLabel& a, const BranchLabel& b) {
        return a.indices < b.indices;
    }

    std::string str() const {
        if (indices.empty()) return "root";
        std::ostringstream os;
        for (size_t k = 0; k < indices.size(); ++k) {
            if (k) os << '.';
            os << indices[k];
        }
        return os.str();
    }
};

/// Either a ProjectorSet or Trivial, as assigned to one branch for one step.
class StepSet {
  public:
    StepSet(Trivial) {}  // NOLINT: implicit by design
    StepSet(std::shared_ptr<const ProjectorSet> set) : set_(std::move(set)) {
        detail::require(set_ != nullptr, "null projector set");
    }

    bool is_trivial() const { return set_ == nullptr; }
    const ProjectorSet& set() const {
        detail::require(set_ != nullptr, "step set is Trivial");
        return *set_;
    }
    std::shared_ptr<const ProjectorSet> set_ptr() const { return set_; }

  private:
    std::shared_ptr<const ProjectorSet> set_;
};

/// Assignment of a step set to every current leaf, keyed by branch label.
/// Keying by label is what enforces causality: a branch's alternatives can
/// depend only on its own past, never on sibling branches.
using StepAssignment = std::map<BranchLabel, StepSet>;

struct BranchNode {
    BranchLabel label;
    int step = 0;  // grid step index at which this node's vector lives
    CVector vector;
    double probability = 0.0;
    bool negligible = false;
    std::shared_ptr<const ProjectorSet> child_set;  // null while leaf or Trivial-extended
    bool child_trivial = false;
    std::vector<BranchNode> children;
};

struct BranchSumReport {
    std::vector<double> step_residuals;
    double max_residual = 0.0;
    bool passed = false;
};

/// Branch-dependent history tree over a fixed time grid. Value type: all
/// operations that grow or regroup a tree return a new one.
class BranchTree {
  public:
    BranchTree(TimeGrid grid, std::shared_ptr<const Hamiltonian> h, CVector initial,
               std::string rule_note = "")
        : grid_(std::move(grid)), h_(std::move(h)), rule_note_(std::move(rule_note)) {
        detail::require(h_ != nullptr, "null Hamiltonian");
        detail::require(initial.size() == h_->dim(), "initial state dimension mismatch");
        if (std::abs(initial.norm() - 1.0) > 1e-8)
            throw std::invalid_argument("initial state must be normalized");
        root_.label = BranchLabel{};
        root_.step = 0;
        root_.vector = std::move(initial);
        root_.probability = 1.0;
    }

    const TimeGrid& grid() const { return grid_; }
    const Hamiltonian& hamiltonian() const { return *h_; }
    std::shared_ptr<const Hamiltonian> hamiltonian_ptr() const { return h_; }
    const BranchNode& root() const { return root_; }
    const std::string& rule_note() const { return rule_note_; }
    void set_rule_note(std::string note) { rule_note_ = std::move(note); }
    /// Grid step index of the current leaves.
    int steps_built() const { return steps_built_; }
    bool is_coarse() const { return fine_ != nullptr; }
    const BranchTree& fine_tree() const {
        detail::require(fine_ != nullptr, "tree is not a coarse graining");
        return *fine_;
    }
    const std::vector<std::vector<BranchLabel>>& groups() const { return groups_; }
    const std::vector<StepAssignment>& assignments() const { return assignments_; }

    const BranchNode* find(const BranchLabel& label) const {
        const BranchNode* n = &root_;
        for (int idx : label.indices) {
            if (idx < 0 || static_cast<size_t>(idx) >= n->children.size()) return nullptr;
            n = &n->children[static_cast<size_t>(idx)];
        }
        return n;
    }

    const BranchNode& node(const BranchLabel& label) const {
        const BranchNode* n = find(label);
        detail::require(n != nullptr, "no branch with label " + label.str());
        return *n;
    }

    std::vector<const BranchNode*> leaves() const {
        std::vector<const BranchNode*> out;
        collect_leaves(root_, out);
        return out;
    }

    std::vector<const BranchNode*> nodes_at_step(int step) const {
        std::vector<const BranchNode*> out;
        collect_at_step(root_, step, out);
        return out;
    }

    /// Applies one more grid step. Every leaf must appear in the assignment;
    /// each assigned set is validated before use. Children with probability
    /// below tol_proj^2 are retained but flagged negligible. Trivial steps
    /// propagate the parent probability unchanged (exact, by unitarity).
    BranchTree extend(const StepAssignment& assignment, const ToleranceConfig& tol = {}) const {
        int next = steps_built_ + 1;
        detail::require(next <= grid_.steps(),
                        "time grid exhausted: cannot extend past step " +
                            std::to_string(steps_built_));
        BranchTree out = *this;
        COperator u = h_->propagator(grid_.dt(next));
        std::set<const ProjectorSet*> validated;
        const double negligible_threshold = tol.tol_proj * tol.tol_proj;
        out.for_each_leaf(out.root_, [&](BranchNode& leaf) {
            auto it = assignment.find(leaf.label);
            detail::require(it != assignment.end(),
                            "assignment missing for leaf " + leaf.label.str());
            const StepSet& step_set = it->second;
            CVector evolved = u * leaf.vector;
            if (step_set.is_trivial()) {
                leaf.child_trivial = true;
                BranchNode child;
                child.label = leaf.label.child(0);
                child.step = next;
                child.vector = std::move(evolved);
                child.probability = leaf.probability;
                child.negligible = leaf.negligible;
                leaf.children.push_back(std::move(child));
                return;
            }
            const ProjectorSet& set = step_set.set();
            detail::require(set.dim() == h_->dim(),
                            "projector set dimension mismatch at leaf " + leaf.label.str());
            if (validated.insert(&set).second) {
                auto v = validate_projector_set(set, tol.tol_proj);
                if (!v.passed)
                    throw std::invalid_argument(
                        "projector set '" + set.name() + "' is not exhaustive/exclusive "
                        "(completeness " + std::to_string(v.completeness_residual) +
                        ", exclusivity " + std::to_string(v.max_exclusivity) + ")");
            }
            leaf.child_set = step_set.set_ptr();
            for (int i = 0; i < set.size(); ++i) {
                BranchNode child;
                child.label = leaf.label.child(i);
                child.step = next;
                child.vector = set.member(i).matrix() * evolved;
                child.probability = child.vector.squaredNorm();
                child.negligible = child.probability <= negligible_threshold;
                leaf.children.push_back(std::move(child));
            }
        });
        out.steps_built_ = next;
        out.assignments_.push_back(assignment);
        return out;
    }

  private:
    friend BranchTree coarse_grain(const BranchTree&, const std::vector<std::vector<BranchLabel>>&);
    friend COperator class_operator(const BranchTree&, const BranchLabel&);

    static void collect_leaves(const BranchNode& n, std::vector<const BranchNode*>& out) {
        if (n.children.empty()) {
            out.push_back(&n);
            return;
        }
        for (const auto& c : n.children) collect_leaves(c, out);
    }

    static void collect_at_step(const BranchNode& n, int step,
                                std::vector<const BranchNode*>& out) {
        if (n.step == step) out.push_back(&n);
        for (const auto& c : n.children) collect_at_step(c, step, out);
    }

    template <typename F>
    void for_each_leaf(BranchNode& n, F&& f) {
        if (n.children.empty()) {
            f(n);
            return;
        }
        for (auto& c : n.children) for_each_leaf(c, f);
    }

    TimeGrid grid_;
    std::shared_ptr<const Hamiltonian> h_;
    BranchNode root_;
    std::string rule_note_;
    int steps_built_ = 0;
    std::vector<StepAssignment> assignments_;
    // Set when this tree was produced by coarse_grain: branch i sums the
    // fine tree's branches in groups_[i].
    std::shared_ptr<const BranchTree> fine_;
    std::vector<std::vector<BranchLabel>> groups_;
};

inline StepAssignment uniform_assignment(const BranchTree& tree, const StepSet& set) {
    StepAssignment a;
    for (const auto* leaf : tree.leaves()) a.emplace(leaf->label, set);
    return a;
}

inline BranchTree extend_tree(const BranchTree& tree, const StepAssignment& assignment,
                              const ToleranceConfig& tol = {}) {
    return tree.extend(assignment, tol);
}

inline BranchTree extend_tree_uniform(const BranchTree& tree, const StepSet& set,
                                      const ToleranceConfig& tol = {}) {
    return tree.extend(uniform_assignment(tree, set), tol);
}

/// Builds a tree applying the same projector set at every grid step.
inline BranchTree build_uniform_history(const TimeGrid& grid,
                                        std::shared_ptr<const Hamiltonian> h,
                                        const CVector& initial,
                                        std::shared_ptr<const ProjectorSet> set,
                                        const ToleranceConfig& tol = {}) {
    BranchTree tree(grid, std::move(h), initial);
    for (int k = 0; k < tree.grid().steps(); ++k)
        tree = extend_tree_uniform(tree, StepSet(set), tol);
    return tree;
}

inline double branch_probability(const BranchTree& tree, const BranchLabel& label) {
    return tree.node(label).probability;
}

/// Chain product defining the branch: alternating propagators and projectors,
/// P_n U_n ... P_1 U_1 for the label's path (Trivial steps contribute only
/// the propagator). For a coarse-grained tree this is the sum of the class
/// operators of the merged fine branches.
inline COperator class_operator(const BranchTree& tree, const BranchLabel& label) {
    if (tree.is_coarse()) {
        detail::require(label.depth() == 1, "coarse tree labels have a single index");
        int g = label.indices[0];
        detail::require(g >= 0 && static_cast<size_t>(g) < tree.groups().size(),
                        "no branch with label " + label.str());
        const Eigen::Index d = tree.hamiltonian().dim();
        COperator sum = COperator::Zero(d, d);
        for (const auto& fine_label : tree.groups()[static_cast<size_t>(g)])
            sum += class_operator(tree.fine_tree(), fine_label);
        return sum;
    }
    tree.node(label);  // existence check
    const Eigen::Index d = tree.hamiltonian().dim();
    COperator m = COperator::Identity(d, d);
    const BranchNode* n = &tree.root();
    for (size_t k = 0; k < label.depth(); ++k) {
        m = tree.hamiltonian().propagator(tree.grid().dt(static_cast<int>(k) + 1)) * m;
        int idx = label.indices[k];
        if (!n->child_trivial) m = n->child_set->member(idx).matrix() * m;
        n = &n->children[static_cast<size_t>(idx)];
    }
    return m;
}

/// Verifies that branch vectors at each built step sum to the unitarily
/// evolved initial state.
inline BranchSumReport check_branch_sum(const BranchTree& tree, double tol = 1e-12) {
    BranchSumReport report;
    CVector reference = tree.root().vector;
    int prev_step = 0;
    for (int k = 1; k <= tree.steps_built(); ++k) {
        auto nodes = tree.nodes_at_step(k);
        if (nodes.empty()) continue;  // coarse trees only populate the final step
        reference = evolve(reference, tree.hamiltonian(),
                           tree.grid().time(k) - tree.grid().time(prev_step));
        prev_step = k;
        CVector sum = CVector::Zero(reference.size());
        for (const auto* n : nodes) sum += n->vector;
        report.step_residuals.push_back((sum - reference).norm());
    }
    for (double r : report.step_residuals) report.max_residual = std::max(report.max_residual, r);
    report.passed = report.max_residual <= tol;
    return report;
}

/// Merges leaf branches by groups. The result is a tree with one branch per
/// group whose vector is the sum of the group's branch vectors; it retains a
/// shared copy of the fine tree so class operators remain available as sums.
/// The grouping must be a partition of the leaf labels. A grouping made
/// entirely of singletons returns the input tree unchanged.
inline BranchTree coarse_grain(const BranchTree& tree,
                               const std::vector<std::vector<BranchLabel>>& grouping) {
    auto leaves = tree.leaves();
    std::set<BranchLabel> remaining;
    for (const auto* l : leaves) remaining.insert(l->label);
    size_t named = 0;
    bool all_singletons = true;
    for (const auto& group : grouping) {
        detail::require(!group.empty(), "coarse graining groups must be nonempty");
        if (group.size() != 1) all_singletons = false;
        for (const auto& label : group) {
            detail::require(remaining.erase(label) == 1,
                            "grouping is not a partition of the leaves (label " +
                                label.str() + " duplicated or unknown)");
            ++named;
        }
    }
    detail::require(remaining.empty() && named == leaves.size(),
                    "grouping is not a partition of the leaves (" +
                        std::to_string(leaves.size() - named) + " labels uncovered)");
    if (all_singletons) return tree;

    const int final_step = tree.steps_built();
    BranchTree out(tree.grid(), tree.hamiltonian_ptr(), tree.root().vector, tree.rule_note());
    out.fine_ = std::make_shared<const BranchTree>(tree);
    out.groups_ = grouping;
    out.steps_built_ = final_step;
    const double negligible_threshold = 1e-20;
    for (size_t g = 0; g < grouping.size(); ++g) {
        BranchNode child;
        child.label = BranchLabel{static_cast<int>(g)};
        child.step = final_step;
        CVector sum = CVector::Zero(tree.hamiltonian().dim());
        for (const auto& label : grouping[g]) sum += tree.node(label).vector;
        child.vector = std::move(sum);
        child.probability = child.vector.squaredNorm();
        child.negligible = child.probability <= negligible_threshold;
        out.root_.children.push_back(std::move(child));
    }
    return out;
}

}  // namespace realm
