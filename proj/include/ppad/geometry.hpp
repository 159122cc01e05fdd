#pragma once

#include "ppad/autodiff.hpp"
#include "ppad/tensor.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace ppad::geom {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
    bool operator==(const Vec2&) const = default;
};

/// Planar pose in meters / radians. Heading is kept in (-pi, pi].
struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;

    Vec2 position() const { return {x, y}; }
    bool operator==(const Pose2&) const = default;
};

struct BoxFootprint {
    double length = 0.0;
    double width = 0.0;

    double diagonal() const { return std::hypot(length, width); }
    bool operator==(const BoxFootprint&) const = default;
};

/// Attention mask; blocked(i, j) == true forbids query i from attending key j.
class Mask {
public:
    Mask() = default;
    Mask(int rows, int cols) : rows_(rows), cols_(cols), blocked_(static_cast<std::size_t>(rows) * cols, 0) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool blocked(int i, int j) const { return blocked_[static_cast<std::size_t>(i) * cols_ + j] != 0; }
    void set(int i, int j, bool b) { blocked_[static_cast<std::size_t>(i) * cols_ + j] = b ? 1 : 0; }
    /// True when every key of row i is blocked.
    bool row_fully_blocked(int i) const;
    const ad::BlockMask& flags() const { return blocked_; }
    bool operator==(const Mask&) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    ad::BlockMask blocked_;
};

/// Euclidean distance between positions (headings ignored).
Mat pairwise_distance(std::span<const Pose2> q_pos, std::span<const Pose2> k_pos);

/// Key-objects mask: blocked iff distance > max_dist (equality attends).
/// max_dist = +inf blocks nothing.
Mask key_objects_mask(std::span<const Pose2> q_pos, std::span<const Pose2> k_pos, double max_dist);

/// Whether two oriented rectangles share an occupied cell after rasterizing
/// each onto a common grid of the given resolution anchored at the origin.
/// A cell is occupied when its center lies inside the rectangle; a rectangle
/// too small to cover any cell center occupies the cell holding its center.
bool footprint_overlap(const Pose2& pose_a, const BoxFootprint& box_a, const Pose2& pose_b,
                       const BoxFootprint& box_b, double resolution = 0.5);

/// Cells (ix, iy) occupied by a rectangle under the rule above.
std::vector<std::pair<long, long>> rasterize_footprint(const Pose2& pose, const BoxFootprint& box,
                                                       double resolution);

/// Corners in counter-clockwise order.
std::array<Vec2, 4> box_corners(const Pose2& pose, const BoxFootprint& box);

/// Half extent of a rectangle with the given heading along unit direction (ux, uy).
double half_extent_along(const BoxFootprint& box, double heading, double ux, double uy);

// --- Polylines -------------------------------------------------------------

enum class PolylineClass { centerline, boundary };

struct Polyline {
    PolylineClass cls = PolylineClass::centerline;
    std::vector<Vec2> points;
    bool operator==(const Polyline&) const = default;
};

struct NearestPoint {
    double distance = kInf;
    Vec2 point;
    Vec2 tangent{1.0, 0.0}; // unit direction of the nearest segment
    int polyline = -1;
    int segment = -1;
};

NearestPoint nearest_on_segment(Vec2 p, Vec2 a, Vec2 b);
/// Closest point over every segment of every polyline; ties keep the first.
NearestPoint nearest_on_polylines(std::span<const Polyline> lines, Vec2 p);

/// Oriented rectangle region (e.g. a road surface).
struct Region {
    Pose2 center;
    BoxFootprint extent;
    bool contains(Vec2 p) const;
    bool operator==(const Region&) const = default;
};

bool inside_any(std::span<const Region> regions, Vec2 p);

/// Distance to the nearest boundary, positive inside the drivable regions.
/// Gradient w.r.t. p is written to grad when non-null.
double signed_boundary_distance(std::span<const Polyline> boundaries, std::span<const Region> drivable, Vec2 p,
                                Vec2* grad = nullptr);

/// Resamples a polyline to n points evenly spaced by arc length.
std::vector<Vec2> resample(const std::vector<Vec2>& pts, int n);
double polyline_length(const std::vector<Vec2>& pts);
/// Splits a polyline into consecutive pieces of arc length at most max_len.
std::vector<std::vector<Vec2>> split_by_length(const std::vector<Vec2>& pts, double max_len);

} // namespace ppad::geom
