#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nuhyp/phase.hpp"

namespace nuhyp {

/// Linear subspace held as an orthonormal column frame (dim x k).
class Subspace {
public:
    Subspace() = default;

    /// Orthonormalizes the columns of `spanning` (QR). Throws
    /// DegenerateSplitting when the columns are numerically dependent.
    explicit Subspace(const Eigen::MatrixXd& spanning);

    /// Wraps a frame the caller guarantees is already orthonormal.
    static Subspace from_orthonormal(Eigen::MatrixXd frame);

    /// span(e_first, ..., e_{first+count-1}) in R^dim.
    static Subspace coordinate(int dim, int first, int count);

    const Eigen::MatrixXd& frame() const { return frame_; }
    int ambient_dim() const { return static_cast<int>(frame_.rows()); }
    int dim() const { return static_cast<int>(frame_.cols()); }
    Eigen::MatrixXd projector() const { return frame_ * frame_.transpose(); }

private:
    Eigen::MatrixXd frame_;
};

/// Smallest singular value of A restricted to U.
double mini_norm(const Eigen::MatrixXd& a, const Subspace& u);
/// Largest singular value of A restricted to U.
double restricted_norm(const Eigen::MatrixXd& a, const Subspace& u);

/// max(||(I-P_U) V||, ||(I-P_V) U||) = ||P_U - P_V|| for equal dimensions.
double grassmann_distance(const Subspace& u, const Subspace& v);

/// span(A * frame(U)).
Subspace push(const Eigen::MatrixXd& a, const Subspace& u);
/// Concatenated frames, re-orthonormalized.
Subspace direct_sum(const Subspace& u, const Subspace& v);

struct ObliqueParts {
    Eigen::VectorXd along_e;
    Eigen::VectorXd along_f;
};

/// v = v_E + v_F with v_E in E, v_F in F (E and F complementary).
ObliqueParts oblique_decompose(const Subspace& e, const Subspace& f, const Eigen::VectorXd& v);

/// ||v_F|| <= a ||v_E||, boundary inclusive.
bool cone_contains(const Subspace& e, const Subspace& f, double a, const Eigen::VectorXd& v);

/// sup over nonzero w in W of ||w_F|| / ||w_E||; a subspace W lies in the
/// width-a cone iff this is <= a. Infinite when W meets F.
double cone_slope(const Subspace& e, const Subspace& f, const Subspace& w);

enum class BundleKind { E, F, G, EF, FG };

std::string_view to_string(BundleKind kind);

struct SplittingDims {
    int e = 0;
    int f = 0;
    int g = 0; // 0 for a two-bundle splitting

    int total() const { return e + f + g; }
};

inline constexpr double kTolSplit = 1e-6;

/// Per-orbit-point frames for E, F (and G) on indices [lo, hi].
class SplittingField {
public:
    SplittingField(SplittingDims dims, int lo, int hi, std::vector<Subspace> e, std::vector<Subspace> f,
                   std::vector<Subspace> g, int settle_used, double invariance_residual, double convergence_gap);

    const SplittingDims& dims() const { return dims_; }
    bool has_g() const { return dims_.g > 0; }
    int lo() const { return lo_; }
    int hi() const { return hi_; }
    int settle_used() const { return settle_; }

    /// max_j grassmann_distance(Df(x_j) B(x_j), B(x_{j+1})) over all bundles.
    double invariance_residual() const { return residual_; }
    /// Distance between estimates settled for `settle` and `settle/2` steps.
    double convergence_gap() const { return gap_; }

    /// Throws OutOfWindow outside [lo, hi].
    const Subspace& e(int j) const;
    const Subspace& f(int j) const;
    const Subspace& g(int j) const;
    /// E, F, G or the sums E+F, F+G.
    Subspace bundle(BundleKind kind, int j) const;
    /// The complementary bundle used for cone tests around `kind`.
    Subspace complement(BundleKind kind, int j) const;

private:
    std::size_t slot(int j) const;

    SplittingDims dims_;
    int lo_;
    int hi_;
    std::vector<Subspace> e_;
    std::vector<Subspace> f_;
    std::vector<Subspace> g_;
    int settle_;
    double residual_;
    double gap_;
};

/// Forward/backward settled frames. The reported window is
/// [-B + settle, N - settle]; E is the dominant forward flag, F (or G) the
/// dominant backward flag, and a middle F is the intersection of the two flags.
SplittingField estimate_splitting(const SmoothSystem& system, const OrbitSegment& orbit, SplittingDims dims,
                                  int settle = 60, double tol_split = kTolSplit);

struct LyapunovEstimate {
    double chi_e_minus = 0.0;
    double chi_e_plus = 0.0;
    double chi_f_minus = 0.0;
    double chi_f_plus = 0.0;
    std::optional<double> chi_g_minus;
    std::optional<double> chi_g_plus;
    int window = 0;
};

/// Per-bundle exponents of the cocycle on x_0..x_N, by re-anchored QR each
/// step. Returns min and max of the accumulated log R_ii divided by N.
LyapunovEstimate lyapunov_estimates(const OrbitSegment& orbit, const SplittingField& split, int n);

/// (min, max) exponent of one bundle over [start, start + n).
std::pair<double, double> bundle_exponents(const OrbitSegment& orbit, const SplittingField& split, BundleKind kind,
                                           int start, int n);

/// log of smallest / largest singular values of Df^ell restricted to
/// bundle `kind` at x_start.
std::pair<double, double> block_log_norms(const OrbitSegment& orbit, const SplittingField& split, BundleKind kind,
                                          int start, int ell);

} // namespace nuhyp
