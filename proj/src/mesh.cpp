#include "ekdns/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace ekdns {

namespace {

struct OctKey {
    IPoint anchor;
    int depth;
    friend bool operator==(const OctKey&, const OctKey&) = default;
};

struct IPointHash {
    std::size_t operator()(const IPoint& p) const noexcept {
        std::uint64_t h = 1469598103934665603ull;
        for (auto v : p) {
            h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

struct OctKeyHash {
    std::size_t operator()(const OctKey& k) const noexcept {
        return IPointHash{}(k.anchor) * 31u + static_cast<std::size_t>(k.depth);
    }
};

std::uint64_t morton(const IPoint& local, int dim) {
    std::uint64_t code = 0;
    for (int bit = 0; bit < kMaxDepth; ++bit) {
        for (int a = 0; a < dim; ++a) {
            const std::uint64_t b = (static_cast<std::uint64_t>(local[a]) >> bit) & 1u;
            code |= b << (bit * dim + a);
        }
    }
    return code;
}

int ceil_log2(int n) {
    int k = 0;
    while ((1 << k) < n) ++k;
    return k;
}

std::int64_t domain_len(const RootGrid& g, int axis) { return static_cast<std::int64_t>(g.count[axis]) * kRootLen; }

std::int64_t wrap(std::int64_t v, std::int64_t len) {
    v %= len;
    return v < 0 ? v + len : v;
}

/// Periodic wrap of a global coordinate; returns false if outside a non-periodic axis.
bool wrap_point(const RootGrid& g, IPoint& p, bool inclusive_upper) {
    for (int a = 0; a < g.dim; ++a) {
        const auto len = domain_len(g, a);
        if (g.periodic[a]) {
            p[a] = wrap(p[a], len);
        } else if (p[a] < 0 || p[a] > len || (!inclusive_upper && p[a] == len)) {
            return false;
        }
    }
    return true;
}

struct SortKey {
    int root;
    std::uint64_t code;
    auto operator<=>(const SortKey&) const = default;
};

SortKey sort_key(const RootGrid& g, const IPoint& p) {
    IPoint local{};
    std::array<int, 3> r{0, 0, 0};
    for (int a = 0; a < g.dim; ++a) {
        r[a] = static_cast<int>(p[a] / kRootLen);
        r[a] = std::clamp(r[a], 0, g.count[a] - 1);
        local[a] = p[a] - static_cast<std::int64_t>(r[a]) * kRootLen;
    }
    const int root = (g.dim == 3 ? r[2] * g.count[1] * g.count[0] : 0) + r[1] * g.count[0] + r[0];
    return {root, morton(local, g.dim)};
}

void sort_leaves(const RootGrid& g, std::vector<Octant>& leaves, std::vector<ElementStatus>& status) {
    std::vector<std::size_t> order(leaves.size());
    std::vector<SortKey> keys(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        order[i] = i;
        keys[i] = sort_key(g, leaves[i].anchor);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    std::vector<Octant> l2;
    std::vector<ElementStatus> s2;
    l2.reserve(leaves.size());
    s2.reserve(leaves.size());
    for (auto i : order) {
        l2.push_back(leaves[i]);
        s2.push_back(status[i]);
    }
    leaves.swap(l2);
    status.swap(s2);
}

std::vector<Octant> children(const Octant& o, int dim) {
    std::vector<Octant> out;
    const auto half = o.length() / 2;
    for (int c = 0; c < (1 << dim); ++c) {
        Octant ch = o;
        ch.depth = o.depth + 1;
        for (int a = 0; a < dim; ++a) {
            if ((c >> a) & 1) ch.anchor[a] += half;
        }
        out.push_back(ch);
    }
    return out;
}

/// Direction offsets whose neighbors must satisfy the 2:1 rule: faces in 2-D,
/// faces and edges in 3-D.
std::vector<std::array<int, 3>> balance_directions(int dim) {
    std::vector<std::array<int, 3>> dirs;
    const int zmax = dim == 3 ? 1 : 0;
    for (int dz = -zmax; dz <= zmax; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int nz = (dx != 0) + (dy != 0) + (dz != 0);
                if (nz == 0 || nz > dim - 1) continue;
                dirs.push_back({dx, dy, dz});
            }
        }
    }
    return dirs;
}

}  // namespace

class MeshBuilder {
public:
    static ElementStatus classify_octant(const TreeMesh& m, const Octant& o) {
        const auto& in = m.geometry_.in_domain;
        if (!in) return ElementStatus::Active;
        int inside = 0;
        const int nc = m.corners_per_element();
        for (int c = 0; c < nc; ++c) {
            IPoint p = o.anchor;
            for (int a = 0; a < m.dim(); ++a) {
                if ((c >> a) & 1) p[a] += o.length();
            }
            if (in(m.to_physical(p))) ++inside;
        }
        if (inside == nc) return ElementStatus::Active;
        if (inside == 0) return ElementStatus::Inactive;
        return ElementStatus::Intercepted;
    }

    /// Replace leaf i by its children (classified when geometry is attached).
    static void split_into(const TreeMesh& m, const Octant& o, std::vector<Octant>& leaves,
                           std::vector<ElementStatus>& status, std::vector<Octant>& carved) {
        for (const auto& ch : children(o, m.dim())) {
            const auto st = classify_octant(m, ch);
            if (st == ElementStatus::Inactive) {
                carved.push_back(ch);
            } else {
                leaves.push_back(ch);
                status.push_back(st);
            }
        }
    }

    static void finish(TreeMesh& m) {
        sort_leaves(m.grid_, m.leaves_, m.status_);
        m.enumerated_ = false;
        m.node_coords_.clear();
        m.element_nodes_.clear();
        m.constraints_.clear();
        m.hanging_index_.clear();
        m.node_tags_.clear();
        m.node_outside_.clear();
        m.periodic_pairs_.clear();
    }
};

std::uint32_t boundary_tag_from_name(const std::string& name) {
    if (name == "left") return kLeft;
    if (name == "right") return kRight;
    if (name == "bottom") return kBottom;
    if (name == "top") return kTop;
    if (name == "back") return kBack;
    if (name == "front") return kFront;
    if (name == "carved") return kCarved;
    throw MeshError("unknown boundary tag '" + name + "'");
}

std::string boundary_tag_name(std::uint32_t tag) {
    switch (tag) {
        case kLeft: return "left";
        case kRight: return "right";
        case kBottom: return "bottom";
        case kTop: return "top";
        case kBack: return "back";
        case kFront: return "front";
        case kCarved: return "carved";
        default: return "unknown";
    }
}

double TreeMesh::element_size(std::size_t e) const {
    return grid_.root_size * std::ldexp(1.0, -leaves_[e].depth);
}

Point TreeMesh::to_physical(const IPoint& p) const {
    Point x{0, 0, 0};
    for (int a = 0; a < dim(); ++a) {
        x[a] = grid_.root_size * (static_cast<double>(p[a]) / static_cast<double>(kRootLen));
    }
    return x;
}

Box TreeMesh::octant_box(const Octant& o) const {
    Box b;
    IPoint hi = o.anchor;
    for (int a = 0; a < dim(); ++a) hi[a] += o.length();
    b.lo = to_physical(o.anchor);
    b.hi = to_physical(hi);
    return b;
}

Box TreeMesh::element_box(std::size_t e) const { return octant_box(leaves_[e]); }

int TreeMesh::root_index(const Octant& o) const { return sort_key(grid_, o.anchor).root; }

std::vector<std::pair<int, double>> TreeMesh::masters(std::size_t i) const {
    if (hanging_index_[i] >= 0) return constraints_[hanging_index_[i]].masters;
    return {{static_cast<int>(i), 1.0}};
}

int TreeMesh::locate(const Point& x) const {
    IPoint p{0, 0, 0};
    for (int a = 0; a < dim(); ++a) {
        const double s = x[a] / grid_.root_size * static_cast<double>(kRootLen);
        auto v = static_cast<std::int64_t>(std::floor(s));
        const auto len = domain_len(grid_, a);
        if (grid_.periodic[a]) {
            v = wrap(v, len);
        } else {
            if (v < 0 || v > len) return -1;
            v = std::min(v, len - 1);
        }
        p[a] = v;
    }
    const auto key = sort_key(grid_, p);
    // Leaves are sorted by (root, Morton); the owner is the last anchor <= key.
    auto it = std::upper_bound(leaves_.begin(), leaves_.end(), key, [&](const SortKey& k, const Octant& o) {
        return k < sort_key(grid_, o.anchor);
    });
    if (it == leaves_.begin()) return -1;
    --it;
    const auto& o = *it;
    for (int a = 0; a < dim(); ++a) {
        if (p[a] < o.anchor[a] || p[a] >= o.anchor[a] + o.length()) return -1;
    }
    return static_cast<int>(it - leaves_.begin());
}

TreeMesh build_uniform(const RootGrid& roots, int level, int max_level) {
    if (roots.dim != 2 && roots.dim != 3) throw MeshError("dimension must be 2 or 3");
    if (roots.num_roots() <= 0) throw MeshError("root grid is empty");
    if (roots.root_size <= 0.0) throw MeshError("root cell size must be positive");
    int offset = 0;
    for (int a = 0; a < roots.dim; ++a) offset = std::max(offset, ceil_log2(roots.count[a]));
    if (level > max_level) {
        throw MeshError("requested level " + std::to_string(level) + " exceeds the configured maximum " +
                        std::to_string(max_level));
    }
    const int depth = level - offset;
    if (depth < 0) {
        throw MeshError("level " + std::to_string(level) + " is coarser than one root cell (minimum level " +
                        std::to_string(offset) + ")");
    }
    if (depth > kMaxDepth) throw MeshError("level exceeds the supported tree depth");

    TreeMesh m;
    m.grid_ = roots;
    if (roots.dim == 2) m.grid_.count[2] = 1;
    m.level_offset_ = offset;
    m.max_level_ = max_level;
    const std::int64_t len = kRootLen >> depth;
    const std::int64_t per_axis = std::int64_t{1} << depth;
    const int nz = roots.dim == 3 ? roots.count[2] : 1;
    for (int rz = 0; rz < nz; ++rz) {
        for (int ry = 0; ry < roots.count[1]; ++ry) {
            for (int rx = 0; rx < roots.count[0]; ++rx) {
                const std::int64_t cells = roots.dim == 3 ? per_axis * per_axis * per_axis : per_axis * per_axis;
                for (std::int64_t c = 0; c < cells; ++c) {
                    Octant o;
                    o.depth = depth;
                    IPoint idx{0, 0, 0};
                    for (int bit = 0; bit < depth; ++bit) {
                        for (int a = 0; a < roots.dim; ++a) {
                            idx[a] |= ((c >> (bit * roots.dim + a)) & 1) << bit;
                        }
                    }
                    o.anchor = {rx * kRootLen + idx[0] * len, ry * kRootLen + idx[1] * len,
                                roots.dim == 3 ? rz * kRootLen + idx[2] * len : 0};
                    m.leaves_.push_back(o);
                    m.status_.push_back(ElementStatus::Active);
                }
            }
        }
    }
    MeshBuilder::finish(m);
    return enumerate_nodes(m);
}

TreeMesh refine(const TreeMesh& mesh, const RefineRule& rule) {
    return enumerate_nodes(balance_2to1(refine_leaves(mesh, rule)));
}

TreeMesh refine_leaves(const TreeMesh& mesh, const RefineRule& rule) {
    if (!rule.target) throw MeshError("refinement rule has no target function");
    TreeMesh m = mesh;
    const int cap = std::min(rule.max_level, mesh.max_level());
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<Octant> leaves;
        std::vector<ElementStatus> status;
        leaves.reserve(m.leaves_.size());
        status.reserve(m.leaves_.size());
        for (std::size_t e = 0; e < m.leaves_.size(); ++e) {
            const auto& o = m.leaves_[e];
            const int lvl = o.depth + m.level_offset_;
            const int target = std::min(rule.target(m.octant_box(o)), cap);
            if (lvl < target && o.depth < kMaxDepth) {
                MeshBuilder::split_into(m, o, leaves, status, m.carved_);
                changed = true;
            } else {
                leaves.push_back(o);
                status.push_back(m.status_[e]);
            }
        }
        m.leaves_.swap(leaves);
        m.status_.swap(status);
    }
    MeshBuilder::finish(m);
    return m;
}

TreeMesh balance_2to1(const TreeMesh& mesh) {
    TreeMesh m = mesh;
    const auto dirs = balance_directions(m.dim());
    for (;;) {
        std::unordered_map<OctKey, std::size_t, OctKeyHash> lookup;
        lookup.reserve(m.leaves_.size() * 2);
        for (std::size_t e = 0; e < m.leaves_.size(); ++e) lookup.emplace(OctKey{m.leaves_[e].anchor, m.leaves_[e].depth}, e);

        std::vector<char> split(m.leaves_.size(), 0);
        bool any = false;
        for (const auto& o : m.leaves_) {
            if (o.depth < 2) continue;
            for (const auto& d : dirs) {
                IPoint n = o.anchor;
                for (int a = 0; a < m.dim(); ++a) n[a] += d[a] * o.length();
                if (!wrap_point(m.grid_, n, false)) continue;
                for (int depth = o.depth - 2; depth >= 0; --depth) {
                    const auto len = kRootLen >> depth;
                    IPoint anc = n;
                    for (int a = 0; a < m.dim(); ++a) anc[a] = (n[a] / len) * len;
                    auto it = lookup.find(OctKey{anc, depth});
                    if (it != lookup.end()) {
                        split[it->second] = 1;
                        any = true;
                        break;
                    }
                }
            }
        }
        if (!any) break;
        std::vector<Octant> leaves;
        std::vector<ElementStatus> status;
        for (std::size_t e = 0; e < m.leaves_.size(); ++e) {
            if (split[e]) {
                MeshBuilder::split_into(m, m.leaves_[e], leaves, status, m.carved_);
            } else {
                leaves.push_back(m.leaves_[e]);
                status.push_back(m.status_[e]);
            }
        }
        m.leaves_.swap(leaves);
        m.status_.swap(status);
    }
    MeshBuilder::finish(m);
    return m;
}

bool is_balanced(const TreeMesh& mesh) {
    std::unordered_map<OctKey, std::size_t, OctKeyHash> lookup;
    for (std::size_t e = 0; e < mesh.leaves().size(); ++e) {
        lookup.emplace(OctKey{mesh.leaves()[e].anchor, mesh.leaves()[e].depth}, e);
    }
    const auto dirs = balance_directions(mesh.dim());
    for (const auto& o : mesh.leaves()) {
        for (const auto& d : dirs) {
            IPoint n = o.anchor;
            for (int a = 0; a < mesh.dim(); ++a) n[a] += d[a] * o.length();
            if (!wrap_point(mesh.grid(), n, false)) continue;
            for (int depth = o.depth - 2; depth >= 0; --depth) {
                const auto len = kRootLen >> depth;
                IPoint anc = n;
                for (int a = 0; a < mesh.dim(); ++a) anc[a] = (n[a] / len) * len;
                if (lookup.count(OctKey{anc, depth})) return false;
            }
        }
    }
    return true;
}

TreeMesh classify(const TreeMesh& mesh, const GeometryClassifier& geom) {
    if (!geom.in_domain) throw MeshError("geometry classifier has no predicate");
    TreeMesh m = mesh;
    m.geometry_ = geom;
    std::vector<Octant> leaves;
    std::vector<ElementStatus> status;
    for (const auto& o : m.leaves_) {
        const auto st = MeshBuilder::classify_octant(m, o);
        if (st == ElementStatus::Inactive) {
            m.carved_.push_back(o);
        } else {
            leaves.push_back(o);
            status.push_back(st);
        }
    }
    if (leaves.empty()) throw MeshError("geometry classification inactivates the whole mesh");
    m.leaves_.swap(leaves);
    m.status_.swap(status);
    MeshBuilder::finish(m);
    return enumerate_nodes(m);
}

TreeMesh enumerate_nodes(const TreeMesh& mesh) {
    if (!is_balanced(mesh)) throw MeshError("enumerate_nodes requires a 2:1 balanced mesh");
    TreeMesh m = mesh;
    const int dim = m.dim();
    const int nc = m.corners_per_element();
    const auto& g = m.grid_;

    std::unordered_map<IPoint, int, IPointHash> index;
    std::unordered_set<IPoint, IPointHash> images;
    index.reserve(m.leaves_.size() * 2);
    m.node_coords_.clear();
    m.node_tags_.clear();
    m.node_outside_.clear();
    m.periodic_pairs_.clear();
    m.element_nodes_.assign(m.leaves_.size() * nc, -1);
    std::vector<IPoint> keys;

    auto node_of = [&](IPoint raw) {
        IPoint w = raw;
        wrap_point(g, w, true);
        auto [it, inserted] = index.emplace(w, static_cast<int>(keys.size()));
        if (inserted) {
            keys.push_back(w);
            m.node_coords_.push_back(m.to_physical(w));
            std::uint32_t tags = 0;
            for (int a = 0; a < dim; ++a) {
                if (g.periodic[a]) continue;
                if (w[a] == 0) tags |= 1u << (2 * a);
                if (w[a] == domain_len(g, a)) tags |= 1u << (2 * a + 1);
            }
            m.node_tags_.push_back(tags);
            m.node_outside_.push_back(0);
        }
        if (w != raw && images.insert(raw).second) {
            m.periodic_pairs_.emplace_back(it->second, m.to_physical(raw));
        }
        return it->second;
    };

    for (std::size_t e = 0; e < m.leaves_.size(); ++e) {
        const auto& o = m.leaves_[e];
        for (int c = 0; c < nc; ++c) {
            IPoint p = o.anchor;
            for (int a = 0; a < dim; ++a) {
                if ((c >> a) & 1) p[a] += o.length();
            }
            const int id = node_of(p);
            m.element_nodes_[e * nc + c] = id;
            if (m.status_[e] == ElementStatus::Intercepted) {
                m.node_tags_[id] |= kCarved;
                if (m.geometry_.in_domain && !m.geometry_.in_domain(m.node_coords_[id])) m.node_outside_[id] = 1;
            }
        }
    }

    // Hanging nodes: corner nodes lying at the midpoint of a leaf's edge (or the
    // center of a face in 3-D).
    std::vector<std::vector<std::pair<int, double>>> direct(keys.size());
    std::vector<char> hanging(keys.size(), 0);
    for (std::size_t e = 0; e < m.leaves_.size(); ++e) {
        const auto& o = m.leaves_[e];
        const auto len = o.length();
        if (len < 2) continue;
        for (int free_mask = 1; free_mask < (1 << dim); ++free_mask) {
            const int nfree = __builtin_popcount(static_cast<unsigned>(free_mask));
            if (nfree == dim) continue;  // element interior
            const int nfixed = dim - nfree;
            for (int fixed_bits = 0; fixed_bits < (1 << nfixed); ++fixed_bits) {
                IPoint mid = o.anchor;
                IPoint base = o.anchor;
                int fb = 0;
                for (int a = 0; a < dim; ++a) {
                    if ((free_mask >> a) & 1) {
                        mid[a] += len / 2;
                    } else {
                        if ((fixed_bits >> fb) & 1) {
                            mid[a] += len;
                            base[a] += len;
                        }
                        ++fb;
                    }
                }
                IPoint wm = mid;
                if (!wrap_point(g, wm, true)) continue;
                auto it = index.find(wm);
                if (it == index.end()) continue;
                const int h = it->second;
                if (hanging[h]) continue;
                hanging[h] = 1;
                const double w = 1.0 / static_cast<double>(1 << nfree);
                for (int k = 0; k < (1 << nfree); ++k) {
                    IPoint corner = base;
                    int kb = 0;
                    for (int a = 0; a < dim; ++a) {
                        if ((free_mask >> a) & 1) {
                            if ((k >> kb) & 1) corner[a] += len;
                            ++kb;
                        }
                    }
                    wrap_point(g, corner, true);
                    direct[h].emplace_back(index.at(corner), w);
                }
            }
        }
    }

    // Resolve chains so that every master is an independent node.
    std::vector<std::vector<std::pair<int, double>>> resolved(keys.size());
    std::vector<char> done(keys.size(), 0);
    std::function<const std::vector<std::pair<int, double>>&(int)> resolve = [&](int n) -> const auto& {
        if (done[n]) return resolved[n];
        std::map<int, double> acc;
        if (!hanging[n]) {
            acc[n] = 1.0;
        } else {
            for (const auto& [mnode, w] : direct[n]) {
                for (const auto& [r, rw] : resolve(mnode)) acc[r] += w * rw;
            }
        }
        resolved[n].assign(acc.begin(), acc.end());
        done[n] = 1;
        return resolved[n];
    };

    m.hanging_index_.assign(keys.size(), -1);
    m.constraints_.clear();
    for (std::size_t n = 0; n < keys.size(); ++n) {
        if (!hanging[n]) continue;
        HangingConstraint hc;
        hc.node = static_cast<int>(n);
        hc.masters = resolve(static_cast<int>(n));
        m.hanging_index_[n] = static_cast<int>(m.constraints_.size());
        m.constraints_.push_back(std::move(hc));
    }
    m.enumerated_ = true;
    return m;
}

RefineRule band_rule(int axis, double limit, int fine_level, int coarse_level) {
    RefineRule r;
    r.max_level = std::max(fine_level, coarse_level);
    r.target = [=](const Box& b) { return b.lo[axis] < limit ? fine_level : coarse_level; };
    return r;
}

}  // namespace ekdns
