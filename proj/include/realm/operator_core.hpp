#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace realm {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using COperator = Eigen::MatrixXcd;

/// Hard cap on Hilbert-space dimension for dense storage.
inline constexpr Eigen::Index kMaxDim = 4096;

/// Numerical tolerances shared across checks. Defaults are deliberate:
/// projector algebra is exact up to roundoff (1e-10), decoherence residuals
/// accumulate through chain products (1e-8), rank decisions compare singular
/// values against the largest one (1e-10).
struct ToleranceConfig {
    double tol_proj = 1e-10;
    double tol_decoh = 1e-8;
    double tol_rank = 1e-10;
};

/// Outcome of a simple pass/fail numerical check.
struct Diagnostic {
    bool passed = false;
    double residual = 0.0;
    std::string detail;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_dim(Eigen::Index dim) {
    require(dim >= 1, "dimension must be positive");
    require(dim <= kMaxDim, "dimension " + std::to_string(dim) +
                                " exceeds supported maximum " + std::to_string(kMaxDim));
}

/// Deterministic static-partition parallel loop. Each index is processed by
/// exactly one thread and writes only its own slot, so results are bitwise
/// independent of the thread count.
template <typename F>
void parallel_for(Eigen::Index n, int threads, F&& body) {
    if (threads <= 1 || n < 2) {
        for (Eigen::Index i = 0; i < n; ++i) body(i);
        return;
    }
    int nt = static_cast<int>(std::min<Eigen::Index>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([=, &body] {
            for (Eigen::Index i = t; i < n; i += nt) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// Rounds a projector trace to its rank. The trace of an idempotent Hermitian
/// matrix is its rank up to roundoff; anything further than 0.01 from an
/// integer signals a matrix that is not close to a projector.
inline int rank_from_trace(double trace) {
    double rounded = std::round(trace);
    if (std::abs(trace - rounded) > 0.01)
        throw std::invalid_argument("trace " + std::to_string(trace) +
                                    " is not within 0.01 of an integer rank");
    return static_cast<int>(rounded);
}

/// Hermitian idempotent matrix with a cached integer rank.
class Projector {
  public:
    /// Validates idempotence and Hermiticity within `tol` (Frobenius norm,
    /// relative to the matrix scale) and derives the rank from the trace.
    static Projector from_matrix(COperator m, double tol = 1e-10) {
        detail::require(m.rows() == m.cols(), "projector matrix must be square");
        detail::check_dim(m.rows());
        double scale = std::max(1.0, m.norm());
        double herm = (m - m.adjoint()).norm();
        if (herm > tol * scale)
            throw std::invalid_argument("projector is not Hermitian (residual " +
                                        std::to_string(herm) + ")");
        double idem = (m * m - m).norm();
        if (idem > tol * scale)
            throw std::invalid_argument("projector is not idempotent (residual " +
                                        std::to_string(idem) + ")");
        int rank = rank_from_trace(m.trace().real());
        return Projector(std::move(m), rank);
    }

    static Projector zero(Eigen::Index dim) {
        detail::check_dim(dim);
        return Projector(COperator::Zero(dim, dim), 0);
    }

    static Projector identity(Eigen::Index dim) {
        detail::check_dim(dim);
        return Projector(COperator::Identity(dim, dim), static_cast<int>(dim));
    }

    const COperator& matrix() const { return matrix_; }
    int rank() const { return rank_; }
    Eigen::Index dim() const { return matrix_.rows(); }

  private:
    Projector(COperator m, int rank) : matrix_(std::move(m)), rank_(rank) {}

    COperator matrix_;
    int rank_;
};

/// An exhaustive set of exclusive alternatives: projectors meant to satisfy
/// sum-to-identity and pairwise exclusivity. Construction checks structure
/// only; the numerical invariants are checked by validate_projector_set so
/// that deliberately broken sets can still be probed.
class ProjectorSet {
  public:
    explicit ProjectorSet(std::vector<Projector> members, std::string name = "")
        : members_(std::move(members)), name_(std::move(name)) {
        detail::require(!members_.empty(), "projector set must have at least one member");
        for (const auto& p : members_)
            detail::require(p.dim() == members_.front().dim(),
                            "projector set members must share a dimension");
    }

    const std::vector<Projector>& members() const { return members_; }
    const Projector& member(int i) const { return members_.at(static_cast<size_t>(i)); }
    int size() const { return static_cast<int>(members_.size()); }
    Eigen::Index dim() const { return members_.front().dim(); }
    const std::string& name() const { return name_; }

  private:
    std::vector<Projector> members_;
    std::string name_;
};

/// Residuals of the exhaustive/exclusive conditions for a projector set.
struct SetValidation {
    double completeness_residual = 0.0;  // ||sum P - I||_F
    double max_exclusivity = 0.0;        // max_{a != b} ||P_a P_b||_F
    bool passed = false;
};

inline SetValidation validate_projector_set(const ProjectorSet& set, double tol = 1e-10) {
    const Eigen::Index d = set.dim();
    COperator sum = COperator::Zero(d, d);
    for (const auto& p : set.members()) sum += p.matrix();
    SetValidation v;
    v.completeness_residual = (sum - COperator::Identity(d, d)).norm();
    for (int a = 0; a < set.size(); ++a)
        for (int b = a + 1; b < set.size(); ++b) {
            double r = (set.member(a).matrix() * set.member(b).matrix()).norm();
            v.max_exclusivity = std::max(v.max_exclusivity, r);
        }
    v.passed = v.completeness_residual <= tol && v.max_exclusivity <= tol;
    return v;
}

/// Hermitian generator of the dynamics, with an eagerly computed
/// eigendecomposition so propagators for arbitrary time steps are cheap and
/// exactly unitary up to roundoff.
class Hamiltonian {
  public:
    explicit Hamiltonian(COperator h, double tol = 1e-10) : matrix_(std::move(h)) {
        detail::require(matrix_.rows() == matrix_.cols(), "Hamiltonian must be square");
        detail::check_dim(matrix_.rows());
        double scale = std::max(1.0, matrix_.norm());
        double herm = (matrix_ - matrix_.adjoint()).norm();
        if (herm > tol * scale)
            throw std::invalid_argument("Hamiltonian is not Hermitian (residual " +
                                        std::to_string(herm) + ")");
        Eigen::SelfAdjointEigenSolver<COperator> es(matrix_);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("Hamiltonian eigendecomposition failed");
        evals_ = es.eigenvalues();
        evecs_ = es.eigenvectors();
    }

    const COperator& matrix() const { return matrix_; }
    Eigen::Index dim() const { return matrix_.rows(); }
    const Eigen::VectorXd& eigenvalues() const { return evals_; }

    /// U(dt) = V exp(-i dt Lambda) V^dagger  (hbar = 1 throughout).
    COperator propagator(double dt) const {
        CVector phases(evals_.size());
        for (Eigen::Index k = 0; k < evals_.size(); ++k)
            phases(k) = std::exp(Complex(0.0, -evals_(k) * dt));
        return evecs_ * phases.asDiagonal() * evecs_.adjoint();
    }

    CVector apply_propagator(double dt, const CVector& psi) const {
        detail::require(psi.size() == dim(), "state dimension mismatch");
        CVector coeffs = evecs_.adjoint() * psi;
        for (Eigen::Index k = 0; k < evals_.size(); ++k)
            coeffs(k) *= std::exp(Complex(0.0, -evals_(k) * dt));
        return evecs_ * coeffs;
    }

  private:
    COperator matrix_;
    Eigen::VectorXd evals_;
    COperator evecs_;
};

/// psi(t + dt) = exp(-i H dt) psi(t).
inline CVector evolve(const CVector& state, const Hamiltonian& h, double dt) {
    return h.apply_propagator(dt, state);
}

/// Kronecker product. Composite index convention: i = i_a * dim_b + i_b,
/// i.e. the first factor is the slow (most significant) index.
inline COperator tensor(const COperator& a, const COperator& b) {
    detail::check_dim(a.rows() * b.rows());
    COperator out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline CVector tensor_state(const CVector& a, const CVector& b) {
    detail::check_dim(a.size() * b.size());
    CVector out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

enum class TraceOver { System, Environment };

/// Partial trace of a dim = d_s * d_e density operator in the composite index
/// convention of tensor(). Tracing over the environment leaves a d_s x d_s
/// operator, tracing over the system a d_e x d_e one.
inline COperator partial_trace(const COperator& rho, Eigen::Index d_s, Eigen::Index d_e,
                               TraceOver over) {
    detail::require(rho.rows() == rho.cols(), "density operator must be square");
    detail::require(rho.rows() == d_s * d_e, "dimensions do not factor the operator");
    if (over == TraceOver::Environment) {
        COperator out = COperator::Zero(d_s, d_s);
        for (Eigen::Index i = 0; i < d_s; ++i)
            for (Eigen::Index j = 0; j < d_s; ++j)
                for (Eigen::Index e = 0; e < d_e; ++e)
                    out(i, j) += rho(i * d_e + e, j * d_e + e);
        return out;
    }
    COperator out = COperator::Zero(d_e, d_e);
    for (Eigen::Index a = 0; a < d_e; ++a)
        for (Eigen::Index b = 0; b < d_e; ++b)
            for (Eigen::Index s = 0; s < d_s; ++s)
                out(a, b) += rho(s * d_e + a, s * d_e + b);
    return out;
}

/// Frobenius norm of [A, B].
inline double commutator_norm(const COperator& a, const COperator& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() == a.cols(),
                    "commutator requires square operators of equal dimension");
    return (a * b - b * a).norm();
}

/// Spectral (operator 2-) norm via SVD.
inline double operator_norm(const COperator& a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<COperator> svd(a);
    return svd.singularValues()(0);
}

/// Orthogonal projector onto the span of the given vectors. Rank is the
/// number of singular values above tol_rank times the largest one.
inline Projector span_projector(const std::vector<CVector>& vectors, double tol_rank = 1e-10) {
    detail::require(!vectors.empty(), "span_projector requires at least one vector");
    const Eigen::Index d = vectors.front().size();
    for (const auto& v : vectors)
        detail::require(v.size() == d, "span_projector vectors must share a dimension");
    COperator m(d, static_cast<Eigen::Index>(vectors.size()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) m.col(c) = vectors[static_cast<size_t>(c)];
    if (m.norm() == 0.0)
        throw std::invalid_argument("span_projector: all input vectors are zero");
    Eigen::JacobiSVD<COperator> svd(m, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k)
        if (sv(k) > tol_rank * sv(0)) ++rank;
    COperator basis = svd.matrixU().leftCols(rank);
    return Projector::from_matrix(basis * basis.adjoint());
}

/// Gram matrix G_ij = <v_i, v_j> (conjugate-linear in the first argument).
/// Entries are computed once for i <= j and mirrored, so the result is
/// Hermitian by construction; the entry-level work may be spread over
/// threads without changing any bit of the output.
inline COperator gram(const std::vector<CVector>& vectors, int threads = 1) {
    const Eigen::Index n = static_cast<Eigen::Index>(vectors.size());
    for (const auto& v : vectors)
        detail::require(v.size() == vectors.front().size(),
                        "gram vectors must share a dimension");
    COperator g(n, n);
    detail::parallel_for(n, threads, [&](Eigen::Index i) {
        for (Eigen::Index j = i; j < n; ++j)
            g(i, j) = vectors[static_cast<size_t>(i)].dot(vectors[static_cast<size_t>(j)]);
    });
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < i; ++j) g(i, j) = std::conj(g(j, i));
    return g;
}

}  // namespace realm
