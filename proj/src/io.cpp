#include <json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ekdns/io.hpp"

#ifndef EKDNS_VERSION
#define EKDNS_VERSION "0.0.0"
#endif

namespace ekdns {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------

const VtkArray* VtkData::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

std::vector<VtkArray> state_arrays(const TreeMesh& mesh, const FieldState& state, const NondimGroups& groups) {
    const std::size_t nn = mesh.num_nodes();
    const int dim = mesh.dim();
    const int nsc = ns_components(dim);
    const int npc = pnp_components(groups.num_species());
    if (state.ns.size() != nn * nsc || state.pnp.size() != nn * npc) {
        throw IoError("state does not match the mesh");
    }
    Vec ns = state.ns, pnp = state.pnp;
    apply_constraints(mesh, nsc, ns);
    apply_constraints(mesh, npc, pnp);
    std::vector<VtkArray> out;
    VtkArray vel{"velocity", 3, std::vector<double>(nn * 3, 0.0)};
    VtkArray p{"pressure", 1, std::vector<double>(nn)};
    VtkArray phi{"potential", 1, std::vector<double>(nn)};
    VtkArray rho{"charge_density", 1, std::vector<double>(nn, 0.0)};
    std::vector<VtkArray> species;
    for (int s = 0; s < groups.num_species(); ++s) {
        std::string name = groups.num_species() == 2 ? (s == 0 ? "c_plus" : "c_minus") : "c_" + std::to_string(s);
        species.push_back({name, 1, std::vector<double>(nn)});
    }
    for (std::size_t n = 0; n < nn; ++n) {
        for (int k = 0; k < dim; ++k) vel.values[n * 3 + k] = ns[n * nsc + k];
        p.values[n] = ns[n * nsc + dim];
        phi.values[n] = pnp[n * npc];
        for (int s = 0; s < groups.num_species(); ++s) {
            const double c = pnp[n * npc + 1 + s];
            species[s].values[n] = c;
            rho.values[n] += groups.species[s].z * c;
        }
    }
    out.push_back(std::move(vel));
    out.push_back(std::move(p));
    out.push_back(std::move(phi));
    for (auto& s : species) out.push_back(std::move(s));
    out.push_back(std::move(rho));
    return out;
}

void write_vtk(const TreeMesh& mesh, const std::vector<VtkArray>& arrays, const std::string& path,
               const std::string& title) {
    const int dim = mesh.dim();
    const int nc = mesh.corners_per_element();
    const std::size_t nn = mesh.num_nodes();
    for (const auto& a : arrays) {
        if (a.values.size() != nn * a.ncomp) throw IoError("array '" + a.name + "' does not match the mesh");
        if (a.ncomp != 1 && a.ncomp != 3) throw IoError("array '" + a.name + "' must have 1 or 3 components");
    }

    // Periodic seams share node ids across the domain; elements touching
    // them get private copies of the wrapped corners.
    std::vector<Point> pts(mesh.num_nodes());
    std::vector<std::size_t> source(nn);
    for (std::size_t n = 0; n < nn; ++n) {
        pts[n] = mesh.node(n);
        source[n] = n;
    }
    std::map<std::pair<std::size_t, std::array<long long, 3>>, std::size_t> images;
    std::vector<std::size_t> conn(mesh.num_elements() * nc);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const Box b = mesh.element_box(e);
        const int* en = mesh.element_nodes(e);
        const double h = b.hi[0] - b.lo[0];
        for (int c = 0; c < nc; ++c) {
            Point x = b.lo;
            for (int a = 0; a < dim; ++a) {
                if ((c >> a) & 1) x[a] = b.hi[a];
            }
            const std::size_t n = static_cast<std::size_t>(en[c]);
            bool same = true;
            for (int a = 0; a < dim; ++a) same = same && std::abs(x[a] - pts[n][a]) <= 1e-9 * h;
            if (same) {
                conn[e * nc + c] = n;
                continue;
            }
            std::array<long long, 3> key{0, 0, 0};
            for (int a = 0; a < dim; ++a) key[a] = std::llround(x[a] * 1e9);
            auto [it, inserted] = images.emplace(std::make_pair(n, key), pts.size());
            if (inserted) {
                pts.push_back(x);
                source.push_back(n);
            }
            conn[e * nc + c] = it->second;
        }
    }

    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write '" + path + "': " + std::strerror(errno));
    std::fprintf(f, "# vtk DataFile Version 3.0\n%s\nASCII\nDATASET UNSTRUCTURED_GRID\n", title.c_str());
    std::fprintf(f, "POINTS %zu double\n", pts.size());
    for (const auto& x : pts) std::fprintf(f, "%.17g %.17g %.17g\n", x[0], x[1], dim == 3 ? x[2] : 0.0);
    const std::size_t ne = mesh.num_elements();
    std::fprintf(f, "CELLS %zu %zu\n", ne, ne * (nc + 1));
    // Lexicographic corners to VTK's counter-clockwise ordering.
    static const int quad[4] = {0, 1, 3, 2};
    static const int hex[8] = {0, 1, 3, 2, 4, 5, 7, 6};
    const int* order = dim == 2 ? quad : hex;
    for (std::size_t e = 0; e < ne; ++e) {
        std::fprintf(f, "%d", nc);
        for (int c = 0; c < nc; ++c) std::fprintf(f, " %zu", conn[e * nc + order[c]]);
        std::fprintf(f, "\n");
    }
    std::fprintf(f, "CELL_TYPES %zu\n", ne);
    for (std::size_t e = 0; e < ne; ++e) std::fprintf(f, "%d\n", dim == 2 ? 9 : 12);
    if (!arrays.empty()) std::fprintf(f, "POINT_DATA %zu\n", pts.size());
    for (const auto& a : arrays) {
        if (a.ncomp == 3) {
            std::fprintf(f, "VECTORS %s double\n", a.name.c_str());
            for (std::size_t i = 0; i < pts.size(); ++i) {
                const double* v = &a.values[source[i] * 3];
                std::fprintf(f, "%.17g %.17g %.17g\n", v[0], v[1], v[2]);
            }
        } else {
            std::fprintf(f, "SCALARS %s double 1\nLOOKUP_TABLE default\n", a.name.c_str());
            for (std::size_t i = 0; i < pts.size(); ++i) std::fprintf(f, "%.17g\n", a.values[source[i]]);
        }
    }
    const bool bad = std::ferror(f) != 0;
    if (std::fclose(f) != 0 || bad) throw IoError("error while writing '" + path + "'");
}

void write_vtk(const TreeMesh& mesh, const FieldState& state, const NondimGroups& groups, const std::string& path) {
    write_vtk(mesh, state_arrays(mesh, state, groups), path);
}

VtkData read_vtk(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    VtkData d;
    std::string line;
    for (int i = 0; i < 4 && std::getline(in, line); ++i) {
        if (i == 0 && line.rfind("# vtk DataFile", 0) != 0) throw IoError("'" + path + "' is not a legacy VTK file");
        if (i == 2 && line != "ASCII") throw IoError("only ASCII VTK files are supported");
    }
    std::string tok;
    std::size_t npoint_data = 0;
    while (in >> tok) {
        if (tok == "POINTS") {
            std::size_t n;
            std::string type;
            in >> n >> type;
            d.points.resize(n);
            for (auto& p : d.points) in >> p[0] >> p[1] >> p[2];
        } else if (tok == "CELLS") {
            std::size_t n, total;
            in >> n >> total;
            d.cells.resize(n);
            for (auto& c : d.cells) {
                std::size_t k;
                in >> k;
                c.resize(k);
                for (auto& v : c) in >> v;
            }
        } else if (tok == "CELL_TYPES") {
            std::size_t n;
            in >> n;
            d.cell_types.resize(n);
            for (auto& t : d.cell_types) in >> t;
        } else if (tok == "POINT_DATA") {
            in >> npoint_data;
        } else if (tok == "SCALARS" || tok == "VECTORS") {
            VtkArray a;
            std::string type;
            in >> a.name >> type;
            a.ncomp = 3;
            if (tok == "SCALARS") {
                std::string rest;
                std::getline(in, rest);
                a.ncomp = rest.empty() ? 1 : std::max(1, std::atoi(rest.c_str()));
                std::string lt, name;
                in >> lt >> name;
            }
            a.values.resize(npoint_data * a.ncomp);
            for (auto& v : a.values) in >> v;
            d.arrays.push_back(std::move(a));
        } else {
            throw IoError("unexpected token '" + tok + "' in '" + path + "'");
        }
        if (in.fail()) throw IoError("malformed section " + tok + " in '" + path + "'");
    }
    return d;
}

std::string snapshot_name(std::int64_t step, const std::string& stem) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%06lld.vtk", static_cast<long long>(step));
    return stem + buf;
}

// ---------------------------------------------------------------------------

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), width_(header.size()), f_(nullptr) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    f_ = std::fopen(path.c_str(), "w");
    if (!f_) throw IoError("cannot write '" + path + "': " + std::strerror(errno));
    for (std::size_t i = 0; i < header.size(); ++i) std::fprintf(f_, "%s%s", i ? "," : "", header[i].c_str());
    std::fprintf(f_, "\n");
}

CsvWriter::~CsvWriter() {
    if (f_) std::fclose(f_);
}

void CsvWriter::row(const std::vector<double>& values) {
    if (values.size() != width_) throw IoError("row width does not match the header of '" + path_ + "'");
    for (double v : values) {
        if (!std::isfinite(v)) throw NonFiniteError("non-finite value for '" + path_ + "'");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::fprintf(f_, "%s%.17g", i ? "," : "", values[i]);
    }
    std::fprintf(f_, "\n");
    if (std::ferror(f_)) throw IoError("error while writing '" + path_ + "'");
}

void write_current_csv(const std::string& path, const std::vector<CurrentSample>& trace) {
    CsvWriter w(path, {"t", "j_plus", "j_minus", "net"});
    for (const auto& s : trace) w.row({s.t, s.j_plus, s.j_minus, s.net});
}

void write_profiles_csv(const std::string& path, const std::vector<ProfileRow>& rows) {
    CsvWriter w(path, {"y", "dphi_dy", "c_plus", "c_minus", "charge_density"});
    for (const auto& r : rows) w.row({r.y, r.dphi_dy, r.c_plus, r.c_minus, r.charge});
}

void write_convergence_csv(const std::string& path, const ConvergenceStudy& s, bool temporal) {
    std::vector<std::string> h{"level", "h", "dt", "steps", "time", "velocity", "pressure", "potential", "c_plus",
                               "c_minus"};
    if (temporal) {
        for (const char* n : {"velocity_self", "pressure_self", "potential_self", "c_plus_self", "c_minus_self"}) {
            h.push_back(n);
        }
    }
    for (const char* n : {"slope_velocity", "slope_pressure", "slope_potential", "slope_c_plus", "slope_c_minus"}) {
        h.push_back(n);
    }
    CsvWriter w(path, h);
    const bool self = temporal && s.reference;
    auto emit = [&](const MmsErrors& r, bool is_reference) {
        std::vector<double> v{double(r.level), r.h, r.dt, double(r.steps), r.time, r.velocity, r.pressure, r.potential,
                              r.c_plus, r.c_minus};
        if (temporal) {
            for (double x : {r.velocity_self, r.pressure_self, r.potential_self, r.c_plus_self, r.c_minus_self}) {
                v.push_back(x);
            }
        }
        if (is_reference) {
            for (int i = 0; i < 5; ++i) v.push_back(0.0);
        } else if (self) {
            for (double x : {s.self_slope_velocity, s.self_slope_pressure, s.self_slope_potential, s.self_slope_c_plus,
                             s.self_slope_c_minus}) {
                v.push_back(x);
            }
        } else {
            for (double x : {s.slope_velocity, s.slope_pressure, s.slope_potential, s.slope_c_plus, s.slope_c_minus}) {
                v.push_back(x);
            }
        }
        w.row(v);
    };
    for (const auto& r : s.rows) {
        if (r.ok) emit(r, false);
    }
    if (s.reference && s.reference->ok) emit(*s.reference, true);
}

void write_edl_csv(const std::string& path, const EdlResult& r) {
    CsvWriter w(path, {"y", "phi", "c_plus", "c_minus"});
    for (std::size_t i = 0; i < r.y.size(); ++i) w.row({r.y[i], r.phi[i], r.c_plus[i], r.c_minus[i]});
}

std::vector<std::vector<double>> read_csv(const std::string& path, std::vector<std::string>* header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    std::vector<std::vector<double>> rows;
    if (!std::getline(in, line)) return rows;
    if (header) {
        header->clear();
        std::istringstream h(line);
        for (std::string c; std::getline(h, c, ',');) header->push_back(c);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> r;
        std::istringstream l(line);
        for (std::string c; std::getline(l, c, ',');) r.push_back(std::strtod(c.c_str(), nullptr));
        rows.push_back(std::move(r));
    }
    return rows;
}

bool all_finite(const Vec& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

bool all_finite(const FieldState& s) {
    return all_finite(s.ns) && all_finite(s.ns_prev) && all_finite(s.pnp) && all_finite(s.pnp_prev) &&
           std::isfinite(s.time);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'K', 'D', 'N', 'S', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::ofstream& o, const T& v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
    return v;
}

void put_vec(std::ofstream& o, const Vec& v) {
    put<std::uint64_t>(o, v.size());
    o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vec get_vec(std::ifstream& in, const std::string& path) {
    const auto n = get<std::uint64_t>(in, path);
    if (n > (1ull << 34)) throw IoError("corrupt checkpoint '" + path + "'");
    Vec v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
    return v;
}

}  // namespace

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream o;
    o << rng;
    return o.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream o(tmp, std::ios::binary | std::ios::trunc);
        if (!o) throw IoError("cannot write '" + tmp + "'");
        o.write(kMagic, sizeof kMagic);
        put<std::uint32_t>(o, kCheckpointVersion);
        put<std::int32_t>(o, ck.state.dim);
        put<std::int32_t>(o, ck.state.nspecies);
        put<std::int64_t>(o, ck.state.step);
        put<double>(o, ck.state.time);
        put<double>(o, ck.dt);
        put<std::uint64_t>(o, ck.config_hash);
        put_vec(o, ck.state.ns);
        put_vec(o, ck.state.ns_prev);
        put_vec(o, ck.state.pnp);
        put_vec(o, ck.state.pnp_prev);
        put<std::uint64_t>(o, ck.rng_state.size());
        o.write(ck.rng_state.data(), static_cast<std::streamsize>(ck.rng_state.size()));
        if (!o) throw IoError("error while writing '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError("'" + path + "' is not a checkpoint");
    if (get<std::uint32_t>(in, path) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
    Checkpoint ck;
    ck.state.dim = get<std::int32_t>(in, path);
    ck.state.nspecies = get<std::int32_t>(in, path);
    ck.state.step = get<std::int64_t>(in, path);
    ck.state.time = get<double>(in, path);
    ck.dt = get<double>(in, path);
    ck.config_hash = get<std::uint64_t>(in, path);
    ck.state.ns = get_vec(in, path);
    ck.state.ns_prev = get_vec(in, path);
    ck.state.pnp = get_vec(in, path);
    ck.state.pnp_prev = get_vec(in, path);
    const auto n = get<std::uint64_t>(in, path);
    if (n > (1u << 20)) throw IoError("corrupt checkpoint '" + path + "'");
    ck.rng_state.resize(n);
    in.read(ck.rng_state.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
    if (ck.state.ns.size() != ck.state.ns_prev.size() || ck.state.pnp.size() != ck.state.pnp_prev.size()) {
        throw IoError("inconsistent checkpoint '" + path + "'");
    }
    return ck;
}

// ---------------------------------------------------------------------------

std::string code_version() { return EKDNS_VERSION; }

std::string wall_clock_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::json j;
    j["case"] = m.case_name;
    j["config_hash"] = hex64(m.config_hash);
    j["code_version"] = m.code_version;
    j["start_time"] = m.start_time;
    j["end_time"] = m.end_time;
    j["steps"] = m.steps;
    j["ns_iterations"] = m.ns_iterations;
    j["newton_iterations"] = m.newton_iterations;
    j["files"] = m.files;
    j["notes"] = m.notes;
    j["ok"] = m.ok;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream o(tmp, std::ios::trunc);
        if (!o) throw IoError("cannot write '" + tmp + "'");
        o << j.dump(2) << "\n";
        if (!o) throw IoError("error while writing '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

void setup_logging(const std::string& out_dir, bool verbose) {
    std::vector<spdlog::sink_ptr> sinks;
    sinks.push_back(std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>((fs::path(out_dir) / "run.log").string(), true));
    }
    auto logger = std::make_shared<spdlog::logger>("ekdns", sinks.begin(), sinks.end());
    logger->set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    spdlog::set_default_logger(logger);
}

}  // namespace ekdns
