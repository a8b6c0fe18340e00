#include "nuhyp/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nuhyp {

namespace {

Eigen::MatrixXd thin_q(const Eigen::MatrixXd& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
    if (m.cols() == 1) return Eigen::VectorXd::Constant(1, m.norm());
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
}

void check_restriction(const Eigen::MatrixXd& a, const Subspace& u) {
    if (a.rows() != a.cols()) throw Error(Errc::DimensionMismatch, "matrix must be square");
    if (a.cols() != u.ambient_dim())
        throw Error(Errc::DimensionMismatch, "matrix is " + std::to_string(a.cols()) + "-dimensional, subspace lives in R^" +
                                                 std::to_string(u.ambient_dim()));
    if (u.dim() == 0) throw Error(Errc::DimensionMismatch, "empty subspace");
}

} // namespace

Subspace::Subspace(const Eigen::MatrixXd& spanning) {
    if (spanning.cols() == 0 || spanning.cols() > spanning.rows())
        throw Error(Errc::DimensionMismatch, "a frame needs 1..dim columns");
    if (!spanning.allFinite()) throw Error(Errc::DegenerateSplitting, "non-finite spanning vectors");
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(spanning);
    const Eigen::MatrixXd& r = qr.matrixQR();
    double scale = spanning.colwise().norm().maxCoeff();
    for (Eigen::Index i = 0; i < spanning.cols(); ++i)
        if (!(std::abs(r(i, i)) > 1e-14 * scale))
            throw Error(Errc::DegenerateSplitting, "spanning vectors are linearly dependent");
    frame_ = qr.householderQ() * Eigen::MatrixXd::Identity(spanning.rows(), spanning.cols());
}

Subspace Subspace::from_orthonormal(Eigen::MatrixXd frame) {
    Subspace s;
    s.frame_ = std::move(frame);
    return s;
}

Subspace Subspace::coordinate(int dim, int first, int count) {
    if (first < 0 || count < 1 || first + count > dim) throw Error(Errc::DimensionMismatch, "coordinate range");
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(dim, count);
    for (int i = 0; i < count; ++i) f(first + i, i) = 1.0;
    return from_orthonormal(std::move(f));
}

double mini_norm(const Eigen::MatrixXd& a, const Subspace& u) {
    check_restriction(a, u);
    Eigen::VectorXd sv = singular_values(a * u.frame());
    double m = sv[sv.size() - 1];
    if (!(m > 0.0) || !std::isfinite(m)) throw Error(Errc::SingularRestriction, "restriction has mini-norm " + std::to_string(m));
    return m;
}

double restricted_norm(const Eigen::MatrixXd& a, const Subspace& u) {
    check_restriction(a, u);
    double m = singular_values(a * u.frame())[0];
    if (!std::isfinite(m)) throw Error(Errc::SingularRestriction, "non-finite restricted norm");
    return m;
}

double grassmann_distance(const Subspace& u, const Subspace& v) {
    if (u.ambient_dim() != v.ambient_dim() || u.dim() != v.dim())
        throw Error(Errc::DimensionMismatch, "subspaces of dimension " + std::to_string(u.dim()) + " and " +
                                                 std::to_string(v.dim()));
    const auto& a = u.frame();
    const auto& b = v.frame();
    Eigen::MatrixXd ra = b - a * (a.transpose() * b);
    Eigen::MatrixXd rb = a - b * (b.transpose() * a);
    double d = std::max(singular_values(ra)[0], singular_values(rb)[0]);
    return std::clamp(d, 0.0, 1.0);
}

Subspace push(const Eigen::MatrixXd& a, const Subspace& u) {
    check_restriction(a, u);
    return Subspace(a * u.frame());
}

Subspace direct_sum(const Subspace& u, const Subspace& v) {
    if (u.ambient_dim() != v.ambient_dim()) throw Error(Errc::DimensionMismatch, "ambient dimensions differ");
    Eigen::MatrixXd m(u.ambient_dim(), u.dim() + v.dim());
    m << u.frame(), v.frame();
    return Subspace(m);
}

ObliqueParts oblique_decompose(const Subspace& e, const Subspace& f, const Eigen::VectorXd& v) {
    if (e.ambient_dim() != f.ambient_dim() || e.dim() + f.dim() != e.ambient_dim())
        throw Error(Errc::DegenerateSplitting, "E and F are not complementary by dimension");
    if (v.size() != e.ambient_dim()) throw Error(Errc::DimensionMismatch, "vector dimension");
    if (v.isZero(0.0)) throw Error(Errc::ZeroVector, "cone test on the zero vector");
    Eigen::MatrixXd basis(e.ambient_dim(), e.ambient_dim());
    basis << e.frame(), f.frame();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(basis);
    if (!lu.isInvertible()) throw Error(Errc::DegenerateSplitting, "E and F intersect");
    Eigen::VectorXd c = lu.solve(v);
    return {e.frame() * c.head(e.dim()), f.frame() * c.tail(f.dim())};
}

bool cone_contains(const Subspace& e, const Subspace& f, double a, const Eigen::VectorXd& v) {
    auto parts = oblique_decompose(e, f, v);
    return parts.along_f.norm() <= a * parts.along_e.norm();
}

double cone_slope(const Subspace& e, const Subspace& f, const Subspace& w) {
    if (e.ambient_dim() != f.ambient_dim() || e.dim() + f.dim() != e.ambient_dim() || w.ambient_dim() != e.ambient_dim())
        throw Error(Errc::DegenerateSplitting, "E and F are not complementary by dimension");
    if (w.dim() > e.dim()) return std::numeric_limits<double>::infinity();
    Eigen::MatrixXd basis(e.ambient_dim(), e.ambient_dim());
    basis << e.frame(), f.frame();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(basis);
    if (!lu.isInvertible()) throw Error(Errc::DegenerateSplitting, "E and F intersect");
    Eigen::MatrixXd c = lu.solve(w.frame());
    Eigen::MatrixXd ce = c.topRows(e.dim());
    Eigen::MatrixXd cf = c.bottomRows(f.dim());
    // ||w_E|| = ||R x|| for ce = Q R, so the slope is the norm of cf R^{-1}.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(ce);
    Eigen::MatrixXd r = qr.matrixQR().topRows(w.dim()).triangularView<Eigen::Upper>();
    for (int i = 0; i < w.dim(); ++i)
        if (!(std::abs(r(i, i)) > 1e-300)) return std::numeric_limits<double>::infinity();
    Eigen::MatrixXd m = r.transpose().triangularView<Eigen::Lower>().solve(cf.transpose()).transpose();
    return singular_values(m)[0];
}

std::string_view to_string(BundleKind kind) {
    switch (kind) {
    case BundleKind::E: return "E";
    case BundleKind::F: return "F";
    case BundleKind::G: return "G";
    case BundleKind::EF: return "E+F";
    case BundleKind::FG: return "F+G";
    }
    return "?";
}

SplittingField::SplittingField(SplittingDims dims, int lo, int hi, std::vector<Subspace> e, std::vector<Subspace> f,
                               std::vector<Subspace> g, int settle_used, double invariance_residual,
                               double convergence_gap)
    : dims_(dims), lo_(lo), hi_(hi), e_(std::move(e)), f_(std::move(f)), g_(std::move(g)), settle_(settle_used),
      residual_(invariance_residual), gap_(convergence_gap) {
    auto n = static_cast<std::size_t>(hi - lo + 1);
    if (e_.size() != n || f_.size() != n || (dims_.g > 0 && g_.size() != n))
        throw Error(Errc::LengthMismatch, "splitting frames do not cover the window");
}

std::size_t SplittingField::slot(int j) const {
    if (j < lo_ || j > hi_)
        throw Error(Errc::OutOfWindow, "splitting index " + std::to_string(j) + " outside [" + std::to_string(lo_) +
                                           ", " + std::to_string(hi_) + "]");
    return static_cast<std::size_t>(j - lo_);
}

const Subspace& SplittingField::e(int j) const { return e_[slot(j)]; }
const Subspace& SplittingField::f(int j) const { return f_[slot(j)]; }

const Subspace& SplittingField::g(int j) const {
    if (!has_g()) throw Error(Errc::InvalidArgument, "two-bundle splitting has no G");
    return g_[slot(j)];
}

Subspace SplittingField::bundle(BundleKind kind, int j) const {
    switch (kind) {
    case BundleKind::E: return e(j);
    case BundleKind::F: return f(j);
    case BundleKind::G: return g(j);
    case BundleKind::EF: return has_g() ? direct_sum(e(j), f(j)) : throw Error(Errc::InvalidArgument, "E+F needs G");
    case BundleKind::FG: return direct_sum(f(j), g(j));
    }
    throw Error(Errc::InvalidArgument, "bundle kind");
}

Subspace SplittingField::complement(BundleKind kind, int j) const {
    switch (kind) {
    case BundleKind::E: return has_g() ? direct_sum(f(j), g(j)) : f(j);
    case BundleKind::F: return has_g() ? direct_sum(e(j), g(j)) : e(j);
    case BundleKind::G: return direct_sum(e(j), f(j));
    case BundleKind::EF: return g(j);
    case BundleKind::FG: return e(j);
    }
    throw Error(Errc::InvalidArgument, "bundle kind");
}

namespace {

// Top-k left singular directions of a product of matrices, rescaled each
// step so long settle windows cannot overflow.
template <class Next>
Eigen::MatrixXd dominant_directions(int n, int k, int steps, Next next) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n, n);
    for (int s = 0; s < steps; ++s) {
        p = next(s) * p;
        double m = p.cwiseAbs().maxCoeff();
        if (!(m > 0.0) || !std::isfinite(m)) throw Error(Errc::SingularRestriction, "settle product degenerated");
        p /= m;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p, Eigen::ComputeFullU);
    return svd.matrixU().leftCols(k);
}

// Dominant k-flag of the forward cocycle at x_to, settled from x_from.
Eigen::MatrixXd settle_forward(const OrbitSegment& orbit, int k, int from, int to) {
    return dominant_directions(orbit.base().dim(), k, to - from,
                               [&](int s) -> const Eigen::MatrixXd& { return orbit.jacobian(from + s); });
}

// Dominant k-flag of the backward cocycle at x_to, settled from x_from > to.
Eigen::MatrixXd settle_backward(const std::vector<Eigen::MatrixXd>& inv, int inv_lo, int k, int from, int to) {
    return dominant_directions(static_cast<int>(inv.front().rows()), k, from - to,
                               [&](int s) -> const Eigen::MatrixXd& {
                                   return inv[static_cast<std::size_t>(from - 1 - s - inv_lo)];
                               });
}

double frame_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return grassmann_distance(Subspace::from_orthonormal(a), Subspace::from_orthonormal(b));
}

double max_residual(const OrbitSegment& orbit, const std::vector<Subspace>& frames, int lo) {
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        Subspace pushed = push(orbit.jacobian(lo + static_cast<int>(i)), frames[i]);
        worst = std::max(worst, grassmann_distance(pushed, frames[i + 1]));
    }
    return worst;
}

} // namespace

SplittingField estimate_splitting(const SmoothSystem& system, const OrbitSegment& orbit, SplittingDims dims, int settle,
                                  double tol_split) {
    const int n = system.dim();
    if (orbit.base().dim() != n) throw Error(Errc::DimensionMismatch, "orbit does not belong to the system");
    if (dims.e < 1 || dims.f < 1 || dims.g < 0 || dims.total() != n)
        throw Error(Errc::DimensionMismatch, "bundle dimensions must be positive and sum to " + std::to_string(n));
    if (settle < 0) throw Error(Errc::InvalidArgument, "settle must be non-negative");
    const int lo = -orbit.n_backward() + settle;
    const int hi = orbit.n_forward() - settle;
    if (lo > hi)
        throw Error(Errc::SettleExceedsOrbit, "settle " + std::to_string(settle) + " leaves no window in [-" +
                                                  std::to_string(orbit.n_backward()) + ", " +
                                                  std::to_string(orbit.n_forward()) + "]");

    std::vector<Eigen::MatrixXd> inv;
    inv.reserve(static_cast<std::size_t>(orbit.n_forward() - lo));
    for (int j = lo; j < orbit.n_forward(); ++j) {
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(orbit.jacobian(j));
        inv.push_back(lu.inverse());
        if (!inv.back().allFinite()) throw Error(Errc::SingularRestriction, "singular Jacobian at j=" + std::to_string(j));
    }

    const int k_fwd = dims.g > 0 ? dims.e + dims.f : dims.e;
    const int k_bwd = dims.g > 0 ? dims.f + dims.g : dims.f;
    const int half = settle / 2;

    Eigen::MatrixXd fwd0 = settle_forward(orbit, k_fwd, lo - settle, lo);
    Eigen::MatrixXd bwd0 = settle_backward(inv, lo, k_bwd, hi + settle, hi);
    double gap = std::max(frame_distance(fwd0, settle_forward(orbit, k_fwd, lo - half, lo)),
                          frame_distance(bwd0, settle_backward(inv, lo, k_bwd, hi + half, hi)));
    if (dims.g > 0) {
        gap = std::max(gap, frame_distance(settle_forward(orbit, dims.e, lo - settle, lo),
                                           settle_forward(orbit, dims.e, lo - half, lo)));
        gap = std::max(gap, frame_distance(settle_backward(inv, lo, dims.g, hi + settle, hi),
                                           settle_backward(inv, lo, dims.g, hi + half, hi)));
    }

    const auto count = static_cast<std::size_t>(hi - lo + 1);
    std::vector<Eigen::MatrixXd> fwd(count), bwd(count);
    fwd[0] = fwd0;
    for (std::size_t i = 1; i < count; ++i) fwd[i] = thin_q(orbit.jacobian(lo + static_cast<int>(i) - 1) * fwd[i - 1]);
    bwd[count - 1] = bwd0;
    for (std::size_t i = count - 1; i-- > 0;) bwd[i] = thin_q(inv[i] * bwd[i + 1]);

    std::vector<Subspace> e(count), f(count), g;
    if (dims.g == 0) {
        for (std::size_t i = 0; i < count; ++i) {
            e[i] = Subspace::from_orthonormal(fwd[i]);
            f[i] = Subspace::from_orthonormal(bwd[i]);
        }
    } else {
        g.resize(count);
        // E is the dominant dims.e flag inside the forward (E+F) flag; G likewise inside F+G.
        Eigen::MatrixXd e_q = settle_forward(orbit, dims.e, lo - settle, lo);
        Eigen::MatrixXd g_q = settle_backward(inv, lo, dims.g, hi + settle, hi);
        std::vector<Eigen::MatrixXd> gs(count);
        gs[count - 1] = g_q;
        for (std::size_t i = count - 1; i-- > 0;) gs[i] = thin_q(inv[i] * gs[i + 1]);
        for (std::size_t i = 0; i < count; ++i) {
            if (i > 0) e_q = thin_q(orbit.jacobian(lo + static_cast<int>(i) - 1) * e_q);
            e[i] = Subspace::from_orthonormal(e_q);
            g[i] = Subspace::from_orthonormal(gs[i]);
            // F = (E+F flag) ∩ (F+G flag): directions of the forward flag with
            // the smallest component outside the backward flag.
            const Eigen::MatrixXd& a = fwd[i];
            const Eigen::MatrixXd& b = bwd[i];
            Eigen::MatrixXd outside = a - b * (b.transpose() * a);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(outside, Eigen::ComputeThinV);
            const auto& sv = svd.singularValues();
            if (!(sv[dims.e - 1] > 1e3 * sv[dims.e]))
                throw Error(Errc::DegenerateSplitting, "forward and backward flags are not transverse at j=" +
                                                           std::to_string(lo + static_cast<int>(i)));
            gap = std::max(gap, sv[dims.e]);
            f[i] = Subspace(a * svd.matrixV().rightCols(dims.f));
        }
    }

    double residual = std::max(max_residual(orbit, e, lo), max_residual(orbit, f, lo));
    if (dims.g > 0) residual = std::max(residual, max_residual(orbit, g, lo));

    if (!(gap <= tol_split) || !(residual <= tol_split))
        throw Error(Errc::SplittingNotConverged, "settle gap " + std::to_string(gap) + ", invariance residual " +
                                                     std::to_string(residual) + " vs tol_split " +
                                                     std::to_string(tol_split) +
                                                     "; increase settle or check the exponent gap");
    return SplittingField(dims, lo, hi, std::move(e), std::move(f), std::move(g), settle, residual, gap);
}

namespace {

// Re-anchored QR along the bundle: calls visit(R) for each step's k x k factor.
template <class Visit>
void anchored_steps(const OrbitSegment& orbit, const SplittingField& split, BundleKind kind, int start, int steps,
                    Visit visit) {
    Eigen::MatrixXd q = split.bundle(kind, start).frame();
    for (int j = start; j < start + steps; ++j) {
        Eigen::MatrixXd b = split.bundle(kind, j + 1).frame();
        Eigen::MatrixXd c = b.transpose() * (orbit.jacobian(j) * q);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
        Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
        q = b * (qr.householderQ() * Eigen::MatrixXd::Identity(c.rows(), c.cols()));
        visit(r);
    }
}

} // namespace

std::pair<double, double> bundle_exponents(const OrbitSegment& orbit, const SplittingField& split, BundleKind kind,
                                           int start, int n) {
    if (n < 1) throw Error(Errc::InvalidArgument, "exponent window must be positive");
    int k = split.bundle(kind, start).dim();
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(k);
    anchored_steps(orbit, split, kind, start, n, [&](const Eigen::MatrixXd& r) {
        for (int i = 0; i < k; ++i) sums[i] += std::log(std::abs(r(i, i)));
    });
    if (!sums.allFinite()) throw Error(Errc::SingularRestriction, "cocycle degenerates along " + std::string(to_string(kind)));
    return {sums.minCoeff() / n, sums.maxCoeff() / n};
}

LyapunovEstimate lyapunov_estimates(const OrbitSegment& orbit, const SplittingField& split, int n) {
    if (n > orbit.n_forward()) throw Error(Errc::OutOfWindow, "N exceeds the forward orbit length");
    LyapunovEstimate est;
    est.window = n;
    std::tie(est.chi_e_minus, est.chi_e_plus) = bundle_exponents(orbit, split, BundleKind::E, 0, n);
    std::tie(est.chi_f_minus, est.chi_f_plus) = bundle_exponents(orbit, split, BundleKind::F, 0, n);
    if (split.has_g()) {
        auto [gm, gp] = bundle_exponents(orbit, split, BundleKind::G, 0, n);
        est.chi_g_minus = gm;
        est.chi_g_plus = gp;
    }
    return est;
}

std::pair<double, double> block_log_norms(const OrbitSegment& orbit, const SplittingField& split, BundleKind kind,
                                          int start, int ell) {
    if (ell < 1) throw Error(Errc::InvalidArgument, "block length must be >= 1");
    int k = split.bundle(kind, start).dim();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(k, k);
    double log_scale = 0.0;
    anchored_steps(orbit, split, kind, start, ell, [&](const Eigen::MatrixXd& r) {
        acc = r * acc;
        double m = acc.cwiseAbs().maxCoeff();
        if (m > 0.0 && std::isfinite(m)) {
            acc /= m;
            log_scale += std::log(m);
        }
    });
    Eigen::VectorXd sv = singular_values(acc);
    double smin = sv[sv.size() - 1];
    if (!(smin > 0.0)) throw Error(Errc::SingularRestriction, "Df^ell restricted to " + std::string(to_string(kind)) +
                                                               " is singular at j=" + std::to_string(start));
    return {std::log(smin) + log_scale, std::log(sv[0]) + log_scale};
}

} // namespace nuhyp
