#include "nuhyp/grower.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nuhyp/rng.hpp"

namespace nuhyp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd complement_frame(const Subspace& p) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(p.frame());
    Eigen::MatrixXd full = qr.householderQ();
    return full.rightCols(p.ambient_dim() - p.dim());
}

std::string grid_str(const std::vector<int>& g) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
    os << ')';
    return os.str();
}

std::size_t node_id(int m, const std::vector<int>& g) {
    if (g.size() == 1) return static_cast<std::size_t>(g[0] + m);
    return static_cast<std::size_t>((g[0] + m) * (2 * m + 1) + (g[1] + m));
}

std::vector<std::vector<int>> grid_coords(int k, int m) {
    std::vector<std::vector<int>> out;
    if (k == 1) {
        for (int i = -m; i <= m; ++i) out.push_back({i});
    } else {
        for (int i = -m; i <= m; ++i)
            for (int j = -m; j <= m; ++j) out.push_back({i, j});
    }
    return out;
}

// Node payload flattened for interpolation: eta, slope, trail entries.
Eigen::VectorXd pack(const Eigen::VectorXd& eta, const Eigen::MatrixXd& slope,
                     const std::vector<Eigen::VectorXd>& trail) {
    Eigen::Index d = trail.empty() ? 0 : trail.front().size();
    Eigen::VectorXd v(eta.size() + slope.size() + d * static_cast<Eigen::Index>(trail.size()));
    v.head(eta.size()) = eta;
    v.segment(eta.size(), slope.size()) = Eigen::Map<const Eigen::VectorXd>(slope.data(), slope.size());
    Eigen::Index off = eta.size() + slope.size();
    for (const auto& t : trail) {
        v.segment(off, d) = t;
        off += d;
    }
    return v;
}

void unpack(const Eigen::VectorXd& v, int codim, int k, int d, std::size_t depth, DiskMesh::Node& node) {
    node.eta = v.head(codim);
    node.slope = Eigen::Map<const Eigen::MatrixXd>(v.data() + codim, codim, k);
    node.trail.resize(depth);
    Eigen::Index off = codim + codim * k;
    for (auto& t : node.trail) {
        t = v.segment(off, d);
        off += d;
    }
}

using Weights = std::vector<std::pair<std::size_t, double>>;

// Piecewise-linear weights on a regular grid (triangles split along the
// anti-diagonal of each cell). Empty when u lies outside the grid.
Weights regular_weights(int k, int m, double spacing, const Eigen::VectorXd& u) {
    const double tol = 1e-12;
    double reach = m * spacing * (1.0 + tol) + tol * spacing;
    for (int i = 0; i < k; ++i)
        if (std::abs(u[i]) > reach) return {};
    if (m == 0) return {{0, 1.0}};
    auto locate = [&](double x, int& cell, double& frac) {
        double t = x / spacing + m;
        cell = std::clamp(static_cast<int>(std::floor(t)), 0, 2 * m - 1);
        frac = std::clamp(t - cell, 0.0, 1.0);
    };
    int ci = 0;
    double s = 0.0;
    locate(u[0], ci, s);
    if (k == 1) return {{static_cast<std::size_t>(ci), 1.0 - s}, {static_cast<std::size_t>(ci + 1), s}};
    int cj = 0;
    double t = 0.0;
    locate(u[1], cj, t);
    auto id = [&](int i, int j) { return static_cast<std::size_t>(i * (2 * m + 1) + j); };
    if (s + t <= 1.0) return {{id(ci, cj), 1.0 - s - t}, {id(ci + 1, cj), s}, {id(ci, cj + 1), t}};
    return {{id(ci + 1, cj + 1), s + t - 1.0}, {id(ci + 1, cj), 1.0 - t}, {id(ci, cj + 1), 1.0 - s}};
}

// L-infinity distance from the origin to the segment [p, q].
double sup_distance_to_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
    Eigen::Vector2d d = q - p;
    std::vector<double> ts = {0.0, 1.0};
    auto add_root = [&](double num, double den) {
        if (den != 0.0) {
            double t = num / den;
            if (t > 0.0 && t < 1.0) ts.push_back(t);
        }
    };
    add_root(-p[0], d[0]);
    add_root(-p[1], d[1]);
    add_root(p[1] - p[0], d[0] - d[1]);
    add_root(-(p[0] + p[1]), d[0] + d[1]);
    double best = kInf;
    for (double t : ts) best = std::min(best, (p + t * d).cwiseAbs().maxCoeff());
    return best;
}

struct Mapped {
    std::vector<Eigen::VectorXd> u;      // new graph-domain coordinates
    std::vector<Eigen::VectorXd> payload;
    std::vector<Eigen::VectorXd> eta;
};

// Locates q in the mapped (irregular) mesh; weights over source nodes.
class MappedLocator {
public:
    MappedLocator(const Mapped& mp, int k, int m) : mp_(mp), k_(k), m_(m) {
        if (k_ == 1) {
            increasing_ = mp_.u.back()[0] > mp_.u.front()[0];
        } else if (m_ > 0) {
            std::size_t c = node_id(m_, {0, 0});
            Eigen::Matrix2d l;
            l.col(0) = mp_.u[node_id(m_, {1, 0})] - mp_.u[c];
            l.col(1) = mp_.u[node_id(m_, {0, 1})] - mp_.u[c];
            lin_inv_ = l.inverse();
        }
    }

    Weights locate(const Eigen::VectorXd& q) const {
        if (m_ == 0) return {{0, 1.0}};
        if (k_ == 1) return locate1(q[0]);
        Eigen::Vector2d g = lin_inv_ * Eigen::Vector2d(q[0], q[1]);
        int gi = static_cast<int>(std::floor(g[0])) + m_;
        int gj = static_cast<int>(std::floor(g[1])) + m_;
        for (int w = 1; w <= 3; ++w)
            for (int i = std::max(0, gi - w); i <= std::min(2 * m_ - 1, gi + w); ++i)
                for (int j = std::max(0, gj - w); j <= std::min(2 * m_ - 1, gj + w); ++j)
                    if (auto r = in_cell(i, j, q); !r.empty()) return r;
        for (int i = 0; i < 2 * m_; ++i)
            for (int j = 0; j < 2 * m_; ++j)
                if (auto r = in_cell(i, j, q); !r.empty()) return r;
        return {};
    }

private:
    Weights locate1(double x) const {
        const std::size_t n = mp_.u.size();
        std::size_t lo = 0, hi = n - 1;
        auto at = [&](std::size_t i) { return increasing_ ? mp_.u[i][0] : -mp_.u[i][0]; };
        double xs = increasing_ ? x : -x;
        double span = at(n - 1) - at(0);
        if (xs < at(0) - 1e-12 * span || xs > at(n - 1) + 1e-12 * span) return {};
        while (hi - lo > 1) {
            std::size_t mid = (lo + hi) / 2;
            (at(mid) <= xs ? lo : hi) = mid;
        }
        double t = std::clamp((xs - at(lo)) / (at(hi) - at(lo)), 0.0, 1.0);
        return {{lo, 1.0 - t}, {hi, t}};
    }

    Weights in_cell(int i, int j, const Eigen::VectorXd& q) const {
        auto id = [&](int a, int b) { return static_cast<std::size_t>(a * (2 * m_ + 1) + b); };
        std::size_t tri[2][3] = {{id(i, j), id(i + 1, j), id(i, j + 1)}, {id(i + 1, j + 1), id(i + 1, j), id(i, j + 1)}};
        for (auto& t : tri) {
            Eigen::Vector2d p0 = mp_.u[t[0]], p1 = mp_.u[t[1]], p2 = mp_.u[t[2]];
            Eigen::Matrix2d a;
            a << p1 - p0, p2 - p0;
            Eigen::Vector2d b = a.partialPivLu().solve(Eigen::Vector2d(q[0], q[1]) - p0);
            double b0 = 1.0 - b[0] - b[1];
            const double tol = -1e-10;
            if (b0 >= tol && b[0] >= tol && b[1] >= tol) return {{t[0], b0}, {t[1], b[0]}, {t[2], b[1]}};
        }
        return {};
    }

    const Mapped& mp_;
    int k_;
    int m_;
    bool increasing_ = true;
    Eigen::Matrix2d lin_inv_ = Eigen::Matrix2d::Identity();
};

Eigen::VectorXd combine(const Weights& w, const std::vector<Eigen::VectorXd>& values) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(values[w.front().first].size());
    for (const auto& [i, c] : w) out += c * values[i];
    return out;
}

void check_cone(const DiskMesh& disk, const SplittingField& split, double a, const char* when) {
    Subspace e = split.bundle(disk.kind, disk.index);
    Subspace f = split.complement(disk.kind, disk.index);
    for (std::size_t i = 0; i < disk.nodes.size(); ++i) {
        double s = cone_slope(e, f, disk.tangent(disk.nodes[i]));
        if (!(s <= a * (1.0 + 1e-12) + 1e-15))
            throw Error(Errc::ConeViolation, std::string(when) + " node " + std::to_string(i) + " at grid " +
                                                 grid_str(disk.nodes[i].grid) + " has slope " + std::to_string(s) +
                                                 " > a = " + std::to_string(a));
    }
}

// Displacements of every node relative to the centre orbit at times
// index - k, k = 0..depth: node trails first, then exact backward steps.
std::vector<std::vector<Eigen::VectorXd>> backward_displacements(const SmoothSystem& system, const DiskMesh& disk,
                                                                 int depth) {
    std::vector<std::vector<Eigen::VectorXd>> out(disk.nodes.size());
    const int stored = static_cast<int>(disk.trail_depth());
    std::vector<Point> centres; // centres[k] = c_{index-k}, only needed beyond the trail
    if (depth > stored) {
        centres.push_back(disk.base);
        for (int k = 1; k <= depth; ++k) centres.push_back(system.backward(centres.back()));
    }
    for (std::size_t i = 0; i < disk.nodes.size(); ++i) {
        const auto& node = disk.nodes[i];
        auto& seq = out[i];
        seq.reserve(static_cast<std::size_t>(depth + 1));
        seq.push_back(disk.displacement(node));
        for (int k = 1; k <= depth; ++k) {
            if (k <= stored) {
                seq.push_back(node.trail[static_cast<std::size_t>(stored - k)]);
            } else {
                seq.push_back(system.backward_local(centres[static_cast<std::size_t>(k - 1)], seq.back()));
            }
        }
    }
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(const DiskMesh& disk, std::size_t random_pairs,
                                                              std::uint64_t seed) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t c = disk.centre_node();
    for (std::size_t i = 0; i < disk.nodes.size(); ++i)
        if (i != c) pairs.emplace_back(c, i);
    if (disk.nodes.size() < 2) return pairs;
    CounterRng rng(seed);
    for (std::size_t t = 0; t < random_pairs; ++t) {
        auto y = static_cast<std::size_t>(rng.below(disk.nodes.size()));
        auto z = static_cast<std::size_t>(rng.below(disk.nodes.size() - 1));
        if (z >= y) ++z;
        pairs.emplace_back(y, z);
    }
    return pairs;
}

} // namespace

void GrowerParams::validate() const {
    auto bad = [](const std::string& what) { throw Error(Errc::InvalidArgument, "grower params: " + what); };
    if (!(sigma1 > 1.0)) bad("sigma1 must exceed 1");
    if (!(sigma2 > 1.0)) bad("sigma2 must exceed 1");
    if (!(a > 0.0)) bad("a must be positive");
    if (!(r > 0.0)) bad("r must be positive");
    if (!(h > 0.0 && h < r)) bad("need 0 < h < r");
    if (!(chi > 1.0)) bad("chi must exceed 1");
    if (!(t_cap >= 1.0)) bad("T_cap must be >= 1");
    if (n_max < 1) bad("N_max must be >= 1");
    if (!(tol_c1 >= 0.0)) bad("tol_c1 must be non-negative");
    if (min_depth < 0) bad("min_depth must be non-negative");
    if (history_depth < 0) bad("history_depth must be non-negative");
}

nlohmann::json to_json(const GrowerParams& p) {
    return {{"sigma1", p.sigma1}, {"sigma2", p.sigma2},   {"a", p.a},           {"r", p.r},
            {"h", p.h},           {"chi", p.chi},         {"T_cap", p.t_cap},   {"N_max", p.n_max},
            {"tol_c1", p.tol_c1}, {"min_depth", p.min_depth}, {"history_depth", p.history_depth}};
}

GrowerParams grower_params_from_json(const nlohmann::json& j) {
    GrowerParams p;
    try {
        p.sigma1 = j.value("sigma1", p.sigma1);
        p.sigma2 = j.value("sigma2", p.sigma2);
        p.a = j.value("a", p.a);
        p.r = j.value("r", p.r);
        p.h = j.value("h", p.h);
        p.chi = j.value("chi", p.chi);
        p.t_cap = j.value("T_cap", p.t_cap);
        p.n_max = j.value("N_max", p.n_max);
        p.tol_c1 = j.value("tol_c1", p.tol_c1);
        p.min_depth = j.value("min_depth", p.min_depth);
        p.history_depth = j.value("history_depth", p.history_depth);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("grower params: ") + e.what());
    }
    return p;
}

std::size_t DiskMesh::centre_node() const {
    return node_id(m, std::vector<int>(static_cast<std::size_t>(k()), 0));
}

Eigen::VectorXd DiskMesh::u_of(const Node& n) const {
    Eigen::VectorXd u(k());
    for (int i = 0; i < k(); ++i) u[i] = spacing * n.grid[static_cast<std::size_t>(i)];
    return u;
}

Eigen::VectorXd DiskMesh::displacement(const Node& n) const { return frame.frame() * u_of(n) + complement * n.eta; }

Point DiskMesh::position(const Node& n) const { return chart_add(base, displacement(n)); }

Subspace DiskMesh::tangent(const Node& n) const { return Subspace(frame.frame() + complement * n.slope); }

std::optional<std::pair<Eigen::VectorXd, Eigen::MatrixXd>> DiskMesh::evaluate(const Eigen::VectorXd& u) const {
    Weights w = regular_weights(k(), m, spacing, u);
    if (w.empty()) return std::nullopt;
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(dim() - k());
    Eigen::MatrixXd slope = Eigen::MatrixXd::Zero(dim() - k(), k());
    for (const auto& [i, c] : w) {
        eta += c * nodes[i].eta;
        slope += c * nodes[i].slope;
    }
    return std::make_pair(eta, slope);
}

DiskMesh seed_disk(const SmoothSystem& system, const SplittingField& split, const Point& x0, double radius, double a,
                   double h, const SeedOptions& opts) {
    system.check_point(x0);
    if (!(a >= 0.0)) throw Error(Errc::InvalidArgument, "cone width must be non-negative");
    if (!(radius > 0.0)) throw Error(Errc::InvalidArgument, "radius must be positive");
    if (system.space().kind == SpaceKind::Torus && radius > 0.25)
        throw Error(Errc::InvalidArgument, "radius " + std::to_string(radius) + " exceeds the torus chart scale 0.25");
    if (!(h > 0.0 && h < radius)) throw Error(Errc::InvalidArgument, "need 0 < h < radius");
    double ratio = radius / h;
    int m = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - m) > 1e-9 * ratio) throw Error(Errc::InvalidArgument, "h must divide the radius");

    DiskMesh disk;
    disk.base = x0;
    disk.index = opts.index;
    disk.kind = opts.kind;
    disk.frame = split.bundle(opts.kind, opts.index);
    if (disk.k() > 2) throw Error(Errc::InvalidArgument, "disks are meshed for bundle dimension 1 or 2");
    disk.complement = complement_frame(disk.frame);
    disk.m = m;
    disk.spacing = h;
    disk.nominal_spacing = h;
    disk.radius = m * h;
    const int codim = disk.dim() - disk.k();
    Eigen::MatrixXd slope = Eigen::MatrixXd::Zero(codim, disk.k());
    if (opts.tilt) {
        if (opts.tilt->rows() != codim || opts.tilt->cols() != disk.k())
            throw Error(Errc::DimensionMismatch, "tilt must be (dim-k) x k");
        slope = *opts.tilt;
    }
    for (auto& g : grid_coords(disk.k(), m)) {
        DiskMesh::Node node;
        node.grid = g;
        node.slope = slope;
        node.eta = Eigen::VectorXd::Zero(codim);
        disk.nodes.push_back(std::move(node));
        disk.nodes.back().eta = slope * disk.u_of(disk.nodes.back());
    }
    return disk;
}

DiskMesh push_disk(const SmoothSystem& system, const SplittingField& split, const DiskMesh& disk, double a,
                   double r_keep, int history_depth) {
    check_cone(disk, split, a, "input");
    const int k = disk.k();
    const int d = disk.dim();
    const int codim = d - k;
    const int next = disk.index + 1;

    Point c_next = system.forward(disk.base);
    Subspace p_next = split.bundle(disk.kind, next);
    Eigen::MatrixXd q_next = complement_frame(p_next);
    const Eigen::MatrixXd& pf = p_next.frame();

    std::size_t depth = std::min(disk.trail_depth() + 1, static_cast<std::size_t>(std::max(history_depth, 0)));
    Mapped mp;
    mp.u.reserve(disk.size());
    for (std::size_t i = 0; i < disk.size(); ++i) {
        const auto& node = disk.nodes[i];
        Eigen::VectorXd w = disk.displacement(node);
        Eigen::VectorXd w_next = system.forward_local(disk.base, w);
        Eigen::MatrixXd t = system.tangent(chart_add(disk.base, w)) * (disk.frame.frame() + disk.complement * node.slope);
        Eigen::MatrixXd tp = pf.transpose() * t;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(tp);
        if (!lu.isInvertible())
            throw Error(Errc::FoldOver, "tangent at node " + std::to_string(i) + " grid " + grid_str(node.grid) +
                                            " is not a graph over the bundle");
        Eigen::MatrixXd slope = (q_next.transpose() * t) * lu.inverse();
        std::vector<Eigen::VectorXd> trail = node.trail;
        trail.push_back(w);
        while (trail.size() > depth) trail.erase(trail.begin());
        Eigen::VectorXd eta = q_next.transpose() * w_next;
        mp.u.push_back(pf.transpose() * w_next);
        mp.eta.push_back(eta);
        mp.payload.push_back(pack(eta, slope, trail));
    }

    // fold-over and inscribed sup-radius of the image domain
    const int m = disk.m;
    double rho = kInf;
    if (m == 0) {
        rho = 0.0;
    } else if (k == 1) {
        double sign = mp.u.back()[0] > mp.u.front()[0] ? 1.0 : -1.0;
        for (std::size_t i = 0; i + 1 < mp.u.size(); ++i)
            if (!(sign * (mp.u[i + 1][0] - mp.u[i][0]) > 0.0))
                throw Error(Errc::FoldOver, "image not monotone between nodes " + std::to_string(i) + " and " +
                                                std::to_string(i + 1));
        rho = std::min(std::abs(mp.u.front()[0]), std::abs(mp.u.back()[0]));
        if (mp.u.front()[0] * mp.u.back()[0] > 0.0) rho = 0.0;
    } else {
        auto id = [&](int i, int j) { return static_cast<std::size_t>(i * (2 * m + 1) + j); };
        auto orient = [&](std::size_t a0, std::size_t a1, std::size_t a2) {
            Eigen::Vector2d e1 = mp.u[a1] - mp.u[a0], e2 = mp.u[a2] - mp.u[a0];
            return e1[0] * e2[1] - e1[1] * e2[0];
        };
        double ref = orient(id(0, 0), id(1, 0), id(0, 1));
        for (int i = 0; i < 2 * m; ++i)
            for (int j = 0; j < 2 * m; ++j) {
                double o1 = orient(id(i, j), id(i + 1, j), id(i, j + 1));
                double o2 = orient(id(i + 1, j + 1), id(i, j + 1), id(i + 1, j));
                if (!(o1 * ref > 0.0) || !(o2 * ref > 0.0))
                    throw Error(Errc::FoldOver, "image cell (" + std::to_string(i - m) + "," + std::to_string(j - m) +
                                                    ") is inverted");
            }
        std::vector<std::size_t> ring;
        for (int j = 0; j < 2 * m; ++j) ring.push_back(id(0, j));
        for (int i = 0; i < 2 * m; ++i) ring.push_back(id(i, 2 * m));
        for (int j = 2 * m; j > 0; --j) ring.push_back(id(2 * m, j));
        for (int i = 2 * m; i > 0; --i) ring.push_back(id(i, 0));
        for (std::size_t e = 0; e < ring.size(); ++e)
            rho = std::min(rho, sup_distance_to_segment(mp.u[ring[e]], mp.u[ring[(e + 1) % ring.size()]]));
    }

    DiskMesh out;
    out.base = c_next;
    out.index = next;
    out.kind = disk.kind;
    out.frame = p_next;
    out.complement = q_next;
    out.nominal_spacing = disk.nominal_spacing;
    double keep = std::min(rho, r_keep);
    const double h = disk.nominal_spacing;
    if (keep >= m * h * (1.0 - 1e-12)) {
        out.spacing = h;
        out.m = static_cast<int>(std::floor(keep / h * (1.0 + 1e-12)));
    } else {
        out.m = m;
        out.spacing = keep / std::max(m, 1);
    }
    out.radius = out.m * out.spacing;
    if (!(out.spacing > 0.0)) throw Error(Errc::FoldOver, "image disk has collapsed");

    MappedLocator locator(mp, k, m);
    for (auto& g : grid_coords(k, out.m)) {
        DiskMesh::Node node;
        node.grid = g;
        Eigen::VectorXd u = out.u_of(node);
        Weights w = locator.locate(u);
        if (w.empty()) throw Error(Errc::FoldOver, "grid point " + grid_str(g) + " not covered by the image");
        unpack(combine(w, mp.payload), codim, k, d, depth, node);
        out.nodes.push_back(std::move(node));
    }

    double resid = 0.0;
    for (std::size_t i = 0; i < mp.u.size(); ++i) {
        if (auto ev = out.evaluate(mp.u[i])) resid = std::max(resid, (ev->first - mp.eta[i]).norm());
    }
    out.interp_residual = resid;
    check_cone(out, split, a, "output");
    return out;
}

DiskMesh cut_ball(const DiskMesh& disk, const Point& center, double r) {
    if (!(center.space == disk.base.space) || center.base != disk.base.base || center.coords != disk.base.coords)
        throw Error(Errc::InvalidArgument, "cut centre must be the disk's base point");
    if (!(r > 0.0)) throw Error(Errc::InvalidArgument, "cut radius must be positive");
    if (r > disk.radius * (1.0 + 1e-12))
        throw Error(Errc::CutFailure, "disk radius " + std::to_string(disk.radius) + " is smaller than r = " +
                                          std::to_string(r) + " at orbit index " + std::to_string(disk.index));
    double ratio = r / disk.spacing;
    int mr = static_cast<int>(std::lround(ratio));
    DiskMesh out = disk;
    out.nodes.clear();
    if (std::abs(ratio - mr) <= 1e-9 * std::max(1.0, ratio)) {
        out.m = mr;
        for (const auto& node : disk.nodes) {
            bool inside = std::all_of(node.grid.begin(), node.grid.end(), [&](int g) { return std::abs(g) <= mr; });
            if (inside) out.nodes.push_back(node);
        }
    } else {
        out.m = static_cast<int>(std::ceil(ratio));
        out.spacing = r / out.m;
        std::vector<Eigen::VectorXd> payload;
        for (const auto& node : disk.nodes) payload.push_back(pack(node.eta, node.slope, node.trail));
        for (auto& g : grid_coords(disk.k(), out.m)) {
            DiskMesh::Node node;
            node.grid = g;
            Weights w = regular_weights(disk.k(), disk.m, disk.spacing, out.u_of(node));
            unpack(combine(w, payload), disk.dim() - disk.k(), disk.k(), disk.dim(), disk.trail_depth(), node);
            out.nodes.push_back(std::move(node));
        }
    }
    out.radius = r;
    return out;
}

ContractionReport check_backward_contraction(const SmoothSystem& system, const DiskMesh& disk, int n, double sigma1,
                                             double r) {
    if (n < 0) throw Error(Errc::InvalidArgument, "depth must be non-negative");
    ContractionReport rep;
    rep.depth = n;
    rep.max_ratio = 1.0;
    if (n == 0) return rep;
    auto back = backward_displacements(system, disk, n);
    const std::size_t count = disk.size();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (count * (count - 1) / 2 <= 20000) {
        for (std::size_t y = 0; y < count; ++y)
            for (std::size_t z = y + 1; z < count; ++z) pairs.emplace_back(y, z);
    } else {
        pairs = sample_pairs(disk, 20000, 0x5eedULL);
    }
    for (auto [y, z] : pairs) {
        double d0 = (back[y][0] - back[z][0]).norm();
        if (d0 == 0.0 || d0 > r) continue;
        ++rep.pairs;
        double scale = 1.0;
        for (int k = 1; k <= n; ++k) {
            scale *= sigma1;
            auto ks = static_cast<std::size_t>(k);
            double ratio = (back[y][ks] - back[z][ks]).norm() * scale / d0;
            if (ratio > rep.max_ratio) {
                rep.max_ratio = ratio;
                rep.worst_y = y;
                rep.worst_z = z;
                rep.worst_k = k;
            }
        }
    }
    rep.passed = rep.max_ratio <= 1.0 + kContractionSlack;
    return rep;
}

AlignmentReport check_tangent_alignment(const DiskMesh& disk, const SplittingField& split, double sigma2, double a,
                                        int k) {
    AlignmentReport rep;
    rep.bound = std::max(std::pow(sigma2, -static_cast<double>(k)) * a, 1e-12);
    Subspace target = split.bundle(disk.kind, disk.index);
    for (std::size_t i = 0; i < disk.size(); ++i) {
        double dist = grassmann_distance(disk.tangent(disk.nodes[i]), target);
        if (dist > rep.max_distance) {
            rep.max_distance = dist;
            rep.worst_node = i;
        }
    }
    rep.passed = rep.max_distance <= rep.bound;
    return rep;
}

std::string_view to_string(GrowStatus s) {
    switch (s) {
    case GrowStatus::Converged: return "converged";
    case GrowStatus::NotConverged: return "not-converged";
    case GrowStatus::CertificateFailure: return "certificate-failure";
    }
    return "?";
}

namespace {

// C0 / C1 gaps of `prev` against `cur`, both as graphs over cur's frame.
std::pair<double, double> cauchy_gaps(const DiskMesh& prev, const DiskMesh& cur) {
    double c0 = 0.0, c1 = 0.0;
    const Eigen::MatrixXd& p = cur.frame.frame();
    for (const auto& node : prev.nodes) {
        Eigen::VectorXd w = prev.displacement(node);
        Eigen::VectorXd u = p.transpose() * w;
        auto ev = cur.evaluate(u);
        if (!ev) continue;
        c0 = std::max(c0, (cur.complement.transpose() * w - ev->first).norm());
        Subspace here(p + cur.complement * ev->second);
        c1 = std::max(c1, grassmann_distance(prev.tangent(node), here));
    }
    return {c0, c1};
}

double measure_t(const SmoothSystem& system, const DiskMesh& disk, double chi) {
    int depth = static_cast<int>(disk.trail_depth());
    auto back = backward_displacements(system, disk, depth);
    double t = 1.0;
    for (auto [y, z] : sample_pairs(disk, 1000, 0x7ce27ULL)) {
        double d0 = (back[y][0] - back[z][0]).norm();
        if (d0 == 0.0) continue;
        double scale = 1.0;
        for (int k = 1; k <= depth; ++k) {
            scale *= chi;
            auto ks = static_cast<std::size_t>(k);
            t = std::max(t, (back[y][ks] - back[z][ks]).norm() * scale / d0);
        }
    }
    return t;
}

} // namespace

LocalManifold grow_unstable(const SmoothSystem& system, const SplittingField& split, const Point& x0,
                            const GrowerParams& params, const TimeSet& hd, const SeedOptions& opts) {
    params.validate();
    if (hd.empty()) throw Error(Errc::NoHyperbolicTimes, "no hyperbolic times at this rate");
    LocalManifold res;
    res.chi = params.chi;
    res.r = params.r;
    res.c_min = kInf;
    res.hyperbolic_times_used.horizon = hd.horizon;
    res.hyperbolic_times_used.params = hd.params;

    DiskMesh disk = seed_disk(system, split, x0, params.r, params.a, params.h, opts);
    std::optional<DiskMesh> prev;
    int streak = 0;
    const int last = static_cast<int>(std::min<std::int64_t>(params.n_max, hd.times.back()));
    for (int n = 1; n <= last; ++n) {
        res.c_min = std::min(res.c_min, mini_norm(system.tangent(disk.base), split.bundle(disk.kind, disk.index)));
        try {
            disk = push_disk(system, split, disk, params.a, params.r, params.history_depth);
        } catch (const Error& e) {
            if (e.code() != Errc::ConeViolation && e.code() != Errc::FoldOver) throw;
            res.status = GrowStatus::CertificateFailure;
            res.message = "push " + std::to_string(n) + ": " + e.what();
            res.steps = n;
            res.mesh = disk;
            return res;
        }
        res.steps = n;
        if (!hd.contains(n)) continue;

        FCheckRecord rec;
        rec.n = n;
        DiskMesh cut;
        try {
            cut = cut_ball(disk, disk.base, params.r);
            rec.cut_ok = true;
        } catch (const Error& e) {
            if (e.code() != Errc::CutFailure) throw;
            rec.cut_radius = disk.radius;
            res.f_checks.push_back(rec);
            res.status = GrowStatus::CertificateFailure;
            res.message = std::string("F1 at n=") + std::to_string(n) + ": " + e.what();
            res.mesh = disk;
            return res;
        }
        rec.cut_radius = cut.radius;
        int depth = std::min(n, static_cast<int>(cut.trail_depth()));
        rec.contraction = check_backward_contraction(system, cut, depth, params.sigma1, params.r);
        rec.alignment = check_tangent_alignment(cut, split, params.sigma2, params.a, n);
        res.f_checks.push_back(rec);
        res.hyperbolic_times_used.times.push_back(n);
        if (!rec.contraction.passed || !rec.alignment.passed) {
            res.status = GrowStatus::CertificateFailure;
            res.message = "F" + std::string(rec.contraction.passed ? "3" : "2") + " violated at n=" + std::to_string(n);
            res.mesh = cut;
            return res;
        }
        if (prev) {
            auto [c0, c1] = cauchy_gaps(*prev, cut);
            res.convergence_log.push_back({n, c0, c1});
            streak = (c0 < params.tol_c1 && c1 < params.tol_c1) ? streak + 1 : 0;
        }
        prev = cut;
        res.mesh = cut;
        if (streak >= 3 && n >= params.min_depth) {
            res.status = GrowStatus::Converged;
            break;
        }
    }
    if (!prev) {
        res.mesh = disk;
        res.status = GrowStatus::NotConverged;
        res.message = "no hyperbolic time within the push budget";
        return res;
    }
    res.t = measure_t(system, res.mesh, params.chi);
    if (res.status != GrowStatus::Converged) {
        res.message = "Cauchy criterion not met within N_max = " + std::to_string(params.n_max);
    } else if (res.t > params.t_cap) {
        res.status = GrowStatus::CertificateFailure;
        res.message = "certificate constant T = " + std::to_string(res.t) + " exceeds T_cap";
    }
    return res;
}

VerifyReport verify_local_manifold(const SmoothSystem& system, const LocalManifold& m, int n_depth) {
    VerifyReport rep;
    rep.depth = n_depth;
    if (n_depth <= 0) return rep;
    auto back = backward_displacements(system, m.mesh, n_depth);
    for (auto [y, z] : sample_pairs(m.mesh, 1000, 0x7e51f7ULL)) {
        double d0 = (back[y][0] - back[z][0]).norm();
        if (d0 == 0.0) continue;
        ++rep.pairs;
        double scale = 1.0;
        for (int k = 1; k <= n_depth; ++k) {
            scale *= m.chi;
            auto ks = static_cast<std::size_t>(k);
            rep.max_ratio = std::max(rep.max_ratio, (back[y][ks] - back[z][ks]).norm() * scale / (m.t * d0));
        }
    }
    rep.passed = rep.max_ratio <= 1.0;
    return rep;
}

double inclusion_deviation(const DiskMesh& inner, const DiskMesh& outer) {
    if (inner.index != outer.index || inner.base.coords != outer.base.coords)
        throw Error(Errc::InvalidArgument, "disks are not based at the same point");
    double dev = 0.0;
    const Eigen::MatrixXd& p = outer.frame.frame();
    for (const auto& node : inner.nodes) {
        Eigen::VectorXd w = inner.displacement(node);
        auto ev = outer.evaluate(p.transpose() * w);
        if (!ev) return kInf;
        dev = std::max(dev, (outer.complement.transpose() * w - ev->first).norm());
    }
    return dev;
}

NestedResult grow_nested(const SmoothSystem& system, const OrbitSegment& orbit, const SplittingField& split3,
                         const Point& x0, const GrowerParams& params, const NestedThresholds& th) {
    if (!split3.has_g()) throw Error(Errc::InvalidArgument, "nested growth needs an E, F, G splitting");
    params.validate();
    const int n = params.n_max;
    auto [e_lo, e_hi] = bundle_exponents(orbit, split3, BundleKind::E, 0, n);
    auto [f_lo, f_hi] = bundle_exponents(orbit, split3, BundleKind::F, 0, n);
    auto [g_lo, g_hi] = bundle_exponents(orbit, split3, BundleKind::G, 0, n);
    (void)e_hi;
    (void)g_lo;
    if (!(e_lo > f_hi && f_lo > g_hi && f_lo > 0.0))
        throw Error(Errc::OrderingViolated, "need chi_E^- > chi_F^+ >= chi_F^- > chi_G^+ and chi_F^- > 0; got " +
                                                std::to_string(e_lo) + ", " + std::to_string(f_hi) + ", " +
                                                std::to_string(f_lo) + ", " + std::to_string(g_hi));

    auto hd_for = [&](BundleKind primary, BundleKind partner, double l1, double l2) {
        auto se = step_logs(orbit, split3, LogKind::LogMiniE, 1, n, primary, partner);
        auto sr = step_logs(orbit, split3, LogKind::LogRatio, 1, n, primary, partner);
        return hd_times(se, sr, l1, l2);
    };
    NestedResult res;
    res.shared_hd = intersect(hd_for(BundleKind::E, BundleKind::F, th.log_lambda1_inner, th.log_lambda2_inner),
                              hd_for(BundleKind::EF, BundleKind::G, th.log_lambda1_outer, th.log_lambda2_outer));
    if (res.shared_hd.empty()) throw Error(Errc::NoHyperbolicTimes, "the two HD sets do not intersect");

    SeedOptions outer_opts{0, BundleKind::EF, std::nullopt};
    SeedOptions inner_opts{0, BundleKind::E, std::nullopt};
    GrowerParams p = params;
    res.outer = grow_unstable(system, split3, x0, p, res.shared_hd, outer_opts);
    res.inner = grow_unstable(system, split3, x0, p, res.shared_hd, inner_opts);
    for (const auto* m : {&res.outer, &res.inner})
        if (m->status != GrowStatus::Converged)
            throw Error(Errc::CertificateFailure, std::string(m == &res.outer ? "E+F" : "E") + " growth: " + m->message);
    if (res.outer.mesh.index != res.inner.mesh.index) {
        // stop both at the later of the two convergence times
        p.min_depth = std::max(res.outer.mesh.index, res.inner.mesh.index);
        res.outer = grow_unstable(system, split3, x0, p, res.shared_hd, outer_opts);
        res.inner = grow_unstable(system, split3, x0, p, res.shared_hd, inner_opts);
    }
    res.inclusion_deviation = inclusion_deviation(res.inner.mesh, res.outer.mesh);
    return res;
}

Calibration calibrate_a_r(const SmoothSystem& system, const SplittingField& split, const Point& x0, double sigma1,
                          double sigma2, double log_lambda1, double log_lambda2, const TimeSet& hd,
                          const SeedOptions& opts) {
    if (hd.empty()) throw Error(Errc::PreconditionViolated, "calibration needs a nonempty HD set");
    Calibration cal;
    TimeSet probe = hd;
    if (probe.times.size() > 5) probe.times.resize(5);
    const double floor_value = 1e-4;
    while (true) {
        GrowerParams p;
        p.sigma1 = sigma1;
        p.sigma2 = sigma2;
        p.a = cal.a;
        p.r = cal.r;
        p.h = cal.r / 10.0;
        p.chi = sigma1;
        p.t_cap = kInf;
        p.n_max = static_cast<int>(probe.times.back());
        p.tol_c1 = 0.0;
        p.min_depth = p.n_max + 1;
        LocalManifold m = grow_unstable(system, split, x0, p, probe, opts);
        ++cal.rounds;
        std::ostringstream os;
        os << "round " << cal.rounds << ": a=" << cal.a << " r=" << cal.r << " (log_lambda1=" << log_lambda1
           << ", log_lambda2=" << log_lambda2 << ") ";
        if (m.status != GrowStatus::CertificateFailure) {
            os << "pass";
            cal.trace.push_back(os.str());
            return cal;
        }
        // Seeds lie along the bundle, so the cone width never witnesses a failure:
        // cone, cut, contraction and alignment defects all scale with r.
        os << "fail (" << m.message << "), halving r";
        cal.trace.push_back(os.str());
        cal.r *= 0.5;
        if (cal.a < floor_value || cal.r < floor_value)
            throw Error(Errc::CalibrationFailure, "floor reached at a=" + std::to_string(cal.a) +
                                                      ", r=" + std::to_string(cal.r) + "; last: " + m.message);
    }
}

nlohmann::json certificate_json(const LocalManifold& m) {
    nlohmann::json gaps = nlohmann::json::array();
    for (const auto& g : m.convergence_log) gaps.push_back({{"n", g.n}, {"c0", g.c0}, {"c1", g.c1}});
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : m.f_checks)
        checks.push_back({{"n", c.n},
                          {"cut_ok", c.cut_ok},
                          {"cut_radius", c.cut_radius},
                          {"contraction_ratio", c.contraction.max_ratio},
                          {"contraction_depth", c.contraction.depth},
                          {"contraction_ok", c.contraction.passed},
                          {"alignment", c.alignment.max_distance},
                          {"alignment_bound", c.alignment.bound},
                          {"alignment_ok", c.alignment.passed}});
    return {{"chi", m.chi},
            {"T", m.t},
            {"r", m.r},
            {"C_min", m.c_min},
            {"status", std::string(to_string(m.status))},
            {"message", m.message},
            {"steps", m.steps},
            {"base_index", m.mesh.index},
            {"bundle", std::string(to_string(m.mesh.kind))},
            {"nodes", m.mesh.size()},
            {"history_depth", m.mesh.trail_depth()},
            {"gaps", gaps},
            {"times_used", m.hyperbolic_times_used.times},
            {"f_checks", checks}};
}

} // namespace nuhyp
