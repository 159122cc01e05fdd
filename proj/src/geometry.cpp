#include "ppad/geometry.hpp"

#include "ppad/kernels.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace ppad::geom {

double wrap_angle(double a)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    if (a <= -std::numbers::pi) a += two_pi;
    if (a > std::numbers::pi) a -= two_pi;
    return a;
}

bool Mask::row_fully_blocked(int i) const
{
    for (int j = 0; j < cols_; ++j)
        if (!blocked(i, j)) return false;
    return true;
}

namespace {

Mat positions_of(std::span<const Pose2> poses, const char* what)
{
    if (poses.empty()) throw std::invalid_argument(std::string(what) + ": empty pose list");
    Mat m(static_cast<int>(poses.size()), 2);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        if (!std::isfinite(poses[i].x) || !std::isfinite(poses[i].y)) {
            throw std::invalid_argument(std::string(what) + ": non-finite coordinate");
        }
        m(static_cast<int>(i), 0) = poses[i].x;
        m(static_cast<int>(i), 1) = poses[i].y;
    }
    return m;
}

} // namespace

Mat pairwise_distance(std::span<const Pose2> q_pos, std::span<const Pose2> k_pos)
{
    const Mat q = positions_of(q_pos, "pairwise_distance");
    const Mat k = positions_of(k_pos, "pairwise_distance");
    Mat d;
    kernels::pairwise_distance(q, k, d);
    return d;
}

Mask key_objects_mask(std::span<const Pose2> q_pos, std::span<const Pose2> k_pos, double max_dist)
{
    if (std::isnan(max_dist) || max_dist <= 0.0) {
        throw std::invalid_argument("key_objects_mask: max_dist must be positive or +inf");
    }
    const Mat d = pairwise_distance(q_pos, k_pos);
    Mask mask(d.rows(), d.cols());
    if (max_dist == kInf) return mask;
    for (int i = 0; i < d.rows(); ++i)
        for (int j = 0; j < d.cols(); ++j) mask.set(i, j, d(i, j) > max_dist);
    return mask;
}

std::array<Vec2, 4> box_corners(const Pose2& pose, const BoxFootprint& box)
{
    const double c = std::cos(pose.heading), s = std::sin(pose.heading);
    const double hl = box.length / 2, hw = box.width / 2;
    const Vec2 f{c * hl, s * hl};
    const Vec2 l{-s * hw, c * hw};
    const Vec2 o = pose.position();
    return {o + f - l, o + f + l, o - f + l, o - f - l};
}

double half_extent_along(const BoxFootprint& box, double heading, double ux, double uy)
{
    const double c = std::cos(heading), s = std::sin(heading);
    const double along = ux * c + uy * s;
    const double across = -ux * s + uy * c;
    return 0.5 * box.length * std::abs(along) + 0.5 * box.width * std::abs(across);
}

namespace {

void check_box(const BoxFootprint& b)
{
    if (!(b.length > 0.0) || !(b.width > 0.0)) {
        throw std::invalid_argument("footprint: box dimensions must be positive");
    }
}

bool inside_box(const Pose2& pose, const BoxFootprint& box, double px, double py)
{
    const double c = std::cos(pose.heading), s = std::sin(pose.heading);
    const double dx = px - pose.x, dy = py - pose.y;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= box.length / 2 && std::abs(ly) <= box.width / 2;
}

} // namespace

std::vector<std::pair<long, long>> rasterize_footprint(const Pose2& pose, const BoxFootprint& box, double resolution)
{
    check_box(box);
    if (!(resolution > 0.0)) throw std::invalid_argument("footprint: resolution must be positive");
    const auto corners = box_corners(pose, box);
    double minx = corners[0].x, maxx = minx, miny = corners[0].y, maxy = miny;
    for (const Vec2& c : corners) {
        minx = std::min(minx, c.x);
        maxx = std::max(maxx, c.x);
        miny = std::min(miny, c.y);
        maxy = std::max(maxy, c.y);
    }
    std::vector<std::pair<long, long>> cells;
    const long ix0 = static_cast<long>(std::floor(minx / resolution));
    const long ix1 = static_cast<long>(std::floor(maxx / resolution));
    const long iy0 = static_cast<long>(std::floor(miny / resolution));
    const long iy1 = static_cast<long>(std::floor(maxy / resolution));
    for (long ix = ix0; ix <= ix1; ++ix) {
        for (long iy = iy0; iy <= iy1; ++iy) {
            const double cx = (static_cast<double>(ix) + 0.5) * resolution;
            const double cy = (static_cast<double>(iy) + 0.5) * resolution;
            if (inside_box(pose, box, cx, cy)) cells.emplace_back(ix, iy);
        }
    }
    if (cells.empty()) {
        cells.emplace_back(static_cast<long>(std::floor(pose.x / resolution)),
                           static_cast<long>(std::floor(pose.y / resolution)));
    }
    return cells; // already sorted lexicographically
}

bool footprint_overlap(const Pose2& pose_a, const BoxFootprint& box_a, const Pose2& pose_b, const BoxFootprint& box_b,
                       double resolution)
{
    check_box(box_a);
    check_box(box_b);
    if (!(resolution > 0.0)) throw std::invalid_argument("footprint_overlap: resolution must be positive");
    const double d = std::hypot(pose_a.x - pose_b.x, pose_a.y - pose_b.y);
    if (d > 0.5 * (box_a.diagonal() + box_b.diagonal()) + resolution * std::numbers::sqrt2) return false;
    const auto a = rasterize_footprint(pose_a, box_a, resolution);
    const auto b = rasterize_footprint(pose_b, box_b, resolution);
    for (const auto& cell : b) {
        if (std::binary_search(a.begin(), a.end(), cell)) return true;
    }
    return false;
}

NearestPoint nearest_on_segment(Vec2 p, Vec2 a, Vec2 b)
{
    NearestPoint r;
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    r.point = a + ab * t;
    r.distance = (p - r.point).norm();
    if (len2 > 0.0) r.tangent = ab * (1.0 / std::sqrt(len2));
    return r;
}

NearestPoint nearest_on_polylines(std::span<const Polyline> lines, Vec2 p)
{
    NearestPoint best;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const auto& pts = lines[li].points;
        for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
            NearestPoint c = nearest_on_segment(p, pts[s], pts[s + 1]);
            if (c.distance < best.distance) {
                best = c;
                best.polyline = static_cast<int>(li);
                best.segment = static_cast<int>(s);
            }
        }
    }
    return best;
}

bool Region::contains(Vec2 p) const
{
    return inside_box(center, extent, p.x, p.y);
}

bool inside_any(std::span<const Region> regions, Vec2 p)
{
    return std::any_of(regions.begin(), regions.end(), [&](const Region& r) { return r.contains(p); });
}

double signed_boundary_distance(std::span<const Polyline> boundaries, std::span<const Region> drivable, Vec2 p,
                                Vec2* grad)
{
    const NearestPoint np = nearest_on_polylines(boundaries, p);
    if (np.polyline < 0) throw std::invalid_argument("signed_boundary_distance: no boundary segments");
    const double sign = inside_any(drivable, p) ? 1.0 : -1.0;
    if (grad) {
        if (np.distance > 0.0) {
            const Vec2 dir = (p - np.point) * (1.0 / np.distance);
            *grad = dir * sign;
        } else {
            *grad = {0.0, 0.0};
        }
    }
    return sign * np.distance;
}

double polyline_length(const std::vector<Vec2>& pts)
{
    double L = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) L += (pts[i] - pts[i - 1]).norm();
    return L;
}

std::vector<Vec2> resample(const std::vector<Vec2>& pts, int n)
{
    if (pts.empty() || n < 1) throw std::invalid_argument("resample: empty polyline or n < 1");
    if (n == 1 || pts.size() == 1) return std::vector<Vec2>(n, pts.front());
    const double L = polyline_length(pts);
    std::vector<Vec2> out;
    out.reserve(n);
    std::size_t seg = 0;
    double seg_start = 0.0;
    for (int k = 0; k < n; ++k) {
        const double target = L * k / (n - 1);
        while (seg + 2 < pts.size() && seg_start + (pts[seg + 1] - pts[seg]).norm() < target) {
            seg_start += (pts[seg + 1] - pts[seg]).norm();
            ++seg;
        }
        const double len = (pts[seg + 1] - pts[seg]).norm();
        const double t = len > 0.0 ? std::clamp((target - seg_start) / len, 0.0, 1.0) : 0.0;
        out.push_back(pts[seg] + (pts[seg + 1] - pts[seg]) * t);
    }
    return out;
}

std::vector<std::vector<Vec2>> split_by_length(const std::vector<Vec2>& pts, double max_len)
{
    if (!(max_len > 0.0)) throw std::invalid_argument("split_by_length: max_len must be positive");
    std::vector<std::vector<Vec2>> pieces;
    if (pts.size() < 2) {
        pieces.push_back(pts);
        return pieces;
    }
    const double L = polyline_length(pts);
    const int count = std::max(1, static_cast<int>(std::ceil(L / max_len - 1e-9)));
    const double piece = L / count;
    std::vector<Vec2> cur{pts[0]};
    double acc = 0.0; // arc length at cur.back()
    double next_cut = piece;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        Vec2 a = cur.back();
        const Vec2 b = pts[i];
        double rem = (b - a).norm();
        while (static_cast<int>(pieces.size()) < count - 1 && acc + rem >= next_cut - 1e-12) {
            const double t = (next_cut - acc) / rem;
            const Vec2 cut = a + (b - a) * t;
            cur.push_back(cut);
            pieces.push_back(std::move(cur));
            cur = {cut};
            a = cut;
            rem = (b - a).norm();
            acc = next_cut;
            next_cut += piece;
        }
        cur.push_back(b);
        acc += rem;
    }
    pieces.push_back(std::move(cur));
    return pieces;
}

} // namespace ppad::geom
