/// @file mesh.hpp
/// @brief Forest-of-quadtrees/octrees mesh: uniform build, rule-based refinement,
///        2:1 balance, point-classification carving and node enumeration with
///        hanging-node constraints and periodic identification.
///
/// Levels in the public API are counted relative to a virtual root that spans
/// the longest side of the root grid (rounded up to a power of two), so an
/// 8x1 strip at level 10 has h = 8 / 2^10. Internally every root cell refines
/// as an independent subtree.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ekdns {

using Point = std::array<double, 3>;
using IPoint = std::array<std::int64_t, 3>;

class MeshError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Deepest internal level of any subtree; coordinates are integers in units of
/// a root cell divided by 2^kMaxDepth.
inline constexpr int kMaxDepth = 20;
inline constexpr std::int64_t kRootLen = std::int64_t{1} << kMaxDepth;

enum class ElementStatus : std::uint8_t { Active, Inactive, Intercepted };

/// Boundary faces of the root-grid box. Carved marks nodes of intercepted leaves.
enum BoundaryTag : std::uint32_t {
    kLeft = 1u << 0,
    kRight = 1u << 1,
    kBottom = 1u << 2,
    kTop = 1u << 3,
    kBack = 1u << 4,
    kFront = 1u << 5,
    kCarved = 1u << 6,
};

/// Parse "left", "right", "bottom", "top", "back", "front", "carved".
std::uint32_t boundary_tag_from_name(const std::string& name);
std::string boundary_tag_name(std::uint32_t tag);

struct RootGrid {
    int dim = 2;
    std::array<int, 3> count{1, 1, 1};
    double root_size = 1.0;
    std::array<bool, 3> periodic{false, false, false};

    int num_roots() const { return count[0] * count[1] * (dim == 3 ? count[2] : 1); }
    double extent(int axis) const { return count[axis] * root_size; }
};

/// A leaf cell. `anchor` is the lower corner in global integer coordinates and
/// `depth` the internal level inside its root (0 = whole root cell).
struct Octant {
    IPoint anchor{0, 0, 0};
    int depth = 0;

    std::int64_t length() const { return kRootLen >> depth; }
    friend bool operator==(const Octant&, const Octant&) = default;
};

struct Box {
    Point lo{0, 0, 0};
    Point hi{0, 0, 0};
};

/// Target level as a function of a leaf's box; the result is clamped to max_level.
struct RefineRule {
    std::function<int(const Box&)> target;
    int max_level = 12;
};

/// In-domain predicate for carving. Must be a pure function of the point.
struct GeometryClassifier {
    std::function<bool(const Point&)> in_domain;
};

/// One hanging node expressed through independent masters; weights sum to one.
struct HangingConstraint {
    int node = -1;
    std::vector<std::pair<int, double>> masters;
};

class TreeMesh {
public:
    TreeMesh() = default;

    int dim() const { return grid_.dim; }
    int corners_per_element() const { return 1 << grid_.dim; }
    const RootGrid& grid() const { return grid_; }
    /// Public level of a leaf at depth 0.
    int level_offset() const { return level_offset_; }
    int max_level() const { return max_level_; }

    std::size_t num_elements() const { return leaves_.size(); }
    const std::vector<Octant>& leaves() const { return leaves_; }
    ElementStatus status(std::size_t e) const { return status_[e]; }
    const std::vector<ElementStatus>& statuses() const { return status_; }
    /// Leaves removed by carving (kept for inspection and counting).
    const std::vector<Octant>& carved() const { return carved_; }
    bool is_classified() const { return static_cast<bool>(geometry_.in_domain); }
    const GeometryClassifier& geometry() const { return geometry_; }

    int level(std::size_t e) const { return leaves_[e].depth + level_offset_; }
    double element_size(std::size_t e) const;
    Box element_box(std::size_t e) const;
    Box octant_box(const Octant& o) const;
    Point to_physical(const IPoint& p) const;
    /// Index of the root cell (row-major) that owns the octant.
    int root_index(const Octant& o) const;

    // Node data, valid after enumerate_nodes().
    bool enumerated() const { return enumerated_; }
    std::size_t num_nodes() const { return node_coords_.size(); }
    const Point& node(std::size_t i) const { return node_coords_[i]; }
    const std::vector<Point>& nodes() const { return node_coords_; }
    /// Corner nodes of element e in lexicographic order (x fastest).
    const int* element_nodes(std::size_t e) const { return &element_nodes_[e * corners_per_element()]; }
    const std::vector<HangingConstraint>& constraints() const { return constraints_; }
    bool is_hanging(std::size_t i) const { return hanging_index_[i] >= 0; }
    /// Masters of node i: itself with weight one unless hanging.
    std::vector<std::pair<int, double>> masters(std::size_t i) const;
    std::uint32_t boundary_tags(std::size_t i) const { return node_tags_[i]; }
    /// (kept node, coordinate of the identified image) for each periodic merge.
    const std::vector<std::pair<int, Point>>& periodic_pairs() const { return periodic_pairs_; }
    /// Node lies outside the carving geometry (only for intercepted leaves).
    bool node_outside(std::size_t i) const { return node_outside_[i] != 0; }

    /// Element containing a physical point (first match in Morton order), or -1.
    int locate(const Point& x) const;

private:
    friend TreeMesh build_uniform(const RootGrid&, int, int);
    friend TreeMesh refine_leaves(const TreeMesh&, const RefineRule&);
    friend TreeMesh balance_2to1(const TreeMesh&);
    friend TreeMesh classify(const TreeMesh&, const GeometryClassifier&);
    friend TreeMesh enumerate_nodes(const TreeMesh&);
    friend class MeshBuilder;

    RootGrid grid_;
    int level_offset_ = 0;
    int max_level_ = 20;
    std::vector<Octant> leaves_;
    std::vector<ElementStatus> status_;
    std::vector<Octant> carved_;
    GeometryClassifier geometry_;

    bool enumerated_ = false;
    std::vector<Point> node_coords_;
    std::vector<int> element_nodes_;
    std::vector<HangingConstraint> constraints_;
    std::vector<int> hanging_index_;
    std::vector<std::uint32_t> node_tags_;
    std::vector<std::uint8_t> node_outside_;
    std::vector<std::pair<int, Point>> periodic_pairs_;
};

/// Uniform forest at public `level`. Throws MeshError when level is coarser than
/// a root cell or exceeds `max_level`.
TreeMesh build_uniform(const RootGrid& roots, int level, int max_level = 16);

/// Split leaves until each reaches rule.target(box) (clamped to rule.max_level),
/// then rebalance and re-enumerate. Leaves are never coarsened.
TreeMesh refine(const TreeMesh& mesh, const RefineRule& rule);

/// The splitting stage of refine() alone: no balancing, not enumerated.
TreeMesh refine_leaves(const TreeMesh& mesh, const RefineRule& rule);

/// Refine until face- and edge-adjacent leaves differ by at most one level.
/// The result is not enumerated.
TreeMesh balance_2to1(const TreeMesh& mesh);

/// Mark leaves Active / Intercepted by their corners and drop Inactive ones.
TreeMesh classify(const TreeMesh& mesh, const GeometryClassifier& geom);

/// Assign global node indices, hanging constraints, periodic merges and
/// boundary tags. Throws MeshError on unbalanced input.
TreeMesh enumerate_nodes(const TreeMesh& mesh);

/// Level difference check across faces (and edges in 3-D) by exhaustive scan.
bool is_balanced(const TreeMesh& mesh);

/// Convenience: box -> level rule for a band `coord[axis] < limit`.
RefineRule band_rule(int axis, double limit, int fine_level, int coarse_level);

}  // namespace ekdns
