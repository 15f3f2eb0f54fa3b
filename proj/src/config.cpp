#include <spdlog/spdlog.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ekdns/io.hpp"

namespace ekdns {

std::string to_string(CaseKind kind) {
    switch (kind) {
        case CaseKind::Mms: return "mms";
        case CaseKind::Edl1d: return "edl1d";
        case CaseKind::Electroconvection: return "electroconvection";
        case CaseKind::Carve: return "carve";
    }
    return "?";
}

namespace {

CaseKind case_from(const std::string& s, const std::string& where) {
    if (s == "mms") return CaseKind::Mms;
    if (s == "edl1d") return CaseKind::Edl1d;
    if (s == "electroconvection") return CaseKind::Electroconvection;
    if (s == "carve") return CaseKind::Carve;
    throw ConfigError(where + "unknown case '" + s + "' (mms, edl1d, electroconvection, carve)");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

struct Entry {
    std::string key;
    std::string value;
    int line = 0;
};

class Reader {
public:
    Reader(std::string origin, const Entry& e) : where_(origin + ":" + std::to_string(e.line) + ": "), e_(e) {}

    const std::string& where() const { return where_; }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + msg); }

    double number() const { return number_of(e_.value); }

    double number_of(const std::string& text) const {
        double v = 0.0;
        const auto* b = text.data();
        const auto* end = b + text.size();
        const auto r = std::from_chars(b, end, v);
        if (r.ec != std::errc() || r.ptr != end) fail("expected a number for '" + e_.key + "', got '" + text + "'");
        if (!std::isfinite(v)) fail("'" + e_.key + "' must be finite");
        return v;
    }

    double positive() const {
        const double v = number();
        if (!(v > 0.0)) fail("'" + e_.key + "' must be positive");
        return v;
    }

    long integer() const { return integer_of(e_.value); }

    long integer_of(const std::string& text) const {
        long v = 0;
        const auto* b = text.data();
        const auto* end = b + text.size();
        const auto r = std::from_chars(b, end, v);
        if (r.ec != std::errc() || r.ptr != end) fail("expected an integer for '" + e_.key + "', got '" + text + "'");
        return v;
    }

    int count(long lo) const {
        const long v = integer();
        if (v < lo) fail("'" + e_.key + "' must be at least " + std::to_string(lo));
        return static_cast<int>(v);
    }

    bool boolean() const {
        std::string s = e_.value;
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        fail("expected true or false for '" + e_.key + "', got '" + e_.value + "'");
    }

    std::vector<std::string> words() const {
        std::string s = e_.value;
        std::replace(s.begin(), s.end(), ',', ' ');
        std::istringstream in(s);
        std::vector<std::string> out;
        for (std::string w; in >> w;) out.push_back(w);
        if (out.empty()) fail("'" + e_.key + "' needs a value");
        return out;
    }

    std::vector<double> numbers() const {
        std::vector<double> out;
        for (const auto& w : words()) out.push_back(number_of(w));
        return out;
    }

    std::string word() const { return unquote(e_.value); }

private:
    std::string where_;
    const Entry& e_;
};

void apply_solver_block(const std::string& origin, const std::vector<Entry>& entries, SolverConfig& s) {
    std::set<std::string> seen;
    for (const auto& e : entries) {
        Reader r(origin, e);
        if (!seen.insert(e.key).second) r.fail("duplicate key '" + e.key + "'");
        if (e.key == "ksp_atol") {
            s.atol = r.number();
        } else if (e.key == "ksp_rtol") {
            s.rtol = r.number();
        } else if (e.key == "ksp_max_it") {
            s.max_iters = r.count(1);
        } else if (e.key == "ksp_gmres_restart") {
            s.restart = r.count(1);
        } else if (e.key == "ksp_type") {
            const auto t = r.word();
            if (t == "bcgs" || t == "bicgstab") {
                s.method = KrylovMethod::BiCGStab;
            } else if (t == "gmres" || t == "fgmres") {
                s.method = KrylovMethod::Gmres;
            } else {
                r.fail("unsupported ksp_type '" + t + "' (bcgs, gmres, fgmres)");
            }
        } else if (e.key == "pc_type") {
            const auto t = r.word();
            if (t == "none") {
                s.preconditioner = PreconditionerKind::None;
            } else if (t == "jacobi") {
                s.preconditioner = PreconditionerKind::Jacobi;
            } else if (t == "bjacobi") {
                s.preconditioner = PreconditionerKind::BlockJacobi;
            } else if (t == "ilu") {
                s.preconditioner = PreconditionerKind::Ilu0;
            } else if (t == "asm" || t == "gamg") {
                spdlog::warn("{}pc_type {} is not available, using ilu", r.where(), t);
                s.preconditioner = PreconditionerKind::Ilu0;
            } else {
                r.fail("unsupported pc_type '" + t + "' (none, jacobi, bjacobi, ilu)");
            }
        } else if (e.key == "ksp_stol" || e.key == "ksp_monitor" || e.key == "ksp_converged_reason" ||
                   e.key == "pc_gamg_asm_use_agg" || e.key == "mg_levels_ksp_type" || e.key == "mg_levels_pc_type" ||
                   e.key == "mg_levels_ksp_max_it") {
            spdlog::warn("{}{} has no effect here", r.where(), e.key);
        } else {
            r.fail("unknown solver option '" + e.key + "'");
        }
    }
    try {
        s.validate();
    } catch (const SolverError& ex) {
        throw ConfigError(origin + ": " + ex.what());
    }
}

BoundaryCondition parse_bc(const Reader& r) {
    const auto w = r.words();
    const std::string& k = w[0];
    if (w.size() == 1) {
        if (k == "zero_flux" || k == "natural") return {BcKind::ZeroFlux, 0.0};
        if (k == "periodic") return {BcKind::Periodic, 0.0};
        if (k == "outflow") return {BcKind::Outflow, 0.0};
        return {BcKind::Dirichlet, r.number_of(k)};
    }
    if (w.size() == 2 && k == "dirichlet") return {BcKind::Dirichlet, r.number_of(w[1])};
    r.fail("boundary condition must be a number, 'dirichlet <value>', zero_flux, periodic or outflow");
}

Sphere parse_sphere(const Reader& r, int dim) {
    const auto v = r.numbers();
    Sphere s;
    if (static_cast<int>(v.size()) != dim + 1) {
        r.fail("a sphere needs " + std::to_string(dim) + " center coordinates and a radius");
    }
    for (int k = 0; k < dim; ++k) s.center[k] = v[k];
    s.center[2] = dim == 3 ? v[2] : 0.0;
    s.radius = v[dim];
    if (!(s.radius > 0.0)) r.fail("sphere radius must be positive");
    return s;
}

using Setter = std::function<void(CaseConfig&, const Reader&)>;

struct KeySpec {
    std::set<CaseKind> cases;
    Setter set;
};

const std::map<std::string, KeySpec>& key_table() {
    using K = CaseKind;
    static const std::set<K> all{K::Mms, K::Edl1d, K::Electroconvection, K::Carve};
    static const std::map<std::string, KeySpec> t = {
        {"seed", {all, [](CaseConfig& c, const Reader& r) {
             const long v = r.integer();
             if (v < 0) r.fail("seed must be non-negative");
             c.seed = static_cast<std::uint64_t>(v);
         }}},
        {"threads", {all, [](CaseConfig& c, const Reader& r) { c.threads = r.count(1); }}},
        {"output.vtk_every", {all, [](CaseConfig& c, const Reader& r) { c.output.vtk_every = r.count(0); }}},
        {"output.checkpoint_every",
         {all, [](CaseConfig& c, const Reader& r) { c.output.checkpoint_every = r.count(0); }}},
        {"dt", {{K::Mms, K::Electroconvection, K::Edl1d}, [](CaseConfig& c, const Reader& r) {
             const double v = r.positive();
             c.mms.run.dt = v;
             c.electroconvection.dt = v;
             c.edl.equilibrate.dt = v;
         }}},
        {"t_end", {{K::Mms, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             const double v = r.positive();
             c.mms.run.t_end = v;
             c.electroconvection.t_end = v;
         }}},
        {"Lambda", {{K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.edl.Lambda = c.electroconvection.Lambda = r.positive();
         }}},
        {"dphi", {{K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.edl.dphi = c.electroconvection.dphi = r.number();
         }}},
        {"kappa", {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.electroconvection.kappa = r.number();
             if (c.electroconvection.kappa < 0.0) r.fail("kappa must be non-negative");
         }}},
        {"Sc", {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) { c.electroconvection.Sc = r.positive(); }}},
        {"level", {{K::Mms, K::Carve}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.level = c.carve.level = r.count(0);
         }}},
        {"mms.study", {{K::Mms}, [](CaseConfig& c, const Reader& r) {
             const auto w = r.word();
             if (w != "spatial" && w != "temporal") r.fail("mms.study must be spatial or temporal");
             c.mms.temporal = w == "temporal";
         }}},
        {"mms.levels", {{K::Mms}, [](CaseConfig& c, const Reader& r) {
             c.mms.levels.clear();
             for (const auto& w : r.words()) {
                 const long v = r.integer_of(w);
                 if (v < 1) r.fail("levels must be at least 1");
                 c.mms.levels.push_back(static_cast<int>(v));
             }
         }}},
        {"mms.dts", {{K::Mms}, [](CaseConfig& c, const Reader& r) {
             c.mms.dts = r.numbers();
             for (double v : c.mms.dts) {
                 if (!(v > 0.0)) r.fail("time steps must be positive");
             }
         }}},
        {"mms.reference_dt", {{K::Mms}, [](CaseConfig& c, const Reader& r) { c.mms.reference_dt = r.number(); }}},
        {"edl.cells", {{K::Edl1d}, [](CaseConfig& c, const Reader& r) { c.edl.cells = r.count(1); }}},
        {"equilibrate.dt", {{K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.edl.equilibrate.dt = c.electroconvection.equilibrate.dt = r.positive();
         }}},
        {"equilibrate.max_dt_factor", {{K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.edl.equilibrate.max_dt_factor = c.electroconvection.equilibrate.max_dt_factor = r.positive();
         }}},
        {"equilibrate.steady_tol", {{K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.edl.equilibrate.steady_tol = c.electroconvection.equilibrate.steady_tol = r.positive();
         }}},
        {"equilibrate.max_steps", {{K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.edl.equilibrate.max_steps = c.electroconvection.equilibrate.max_steps = r.count(1);
         }}},
        {"mesh.fine_level",
         {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) { c.electroconvection.fine_level = r.count(0); }}},
        {"mesh.coarse_level",
         {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) { c.electroconvection.coarse_level = r.count(0); }}},
        {"mesh.band",
         {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) { c.electroconvection.band = r.positive(); }}},
        {"perturbation", {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.electroconvection.perturbation = r.number();
             if (c.electroconvection.perturbation < 0.0 || c.electroconvection.perturbation >= 1.0) {
                 r.fail("perturbation must lie in [0, 1)");
             }
         }}},
        {"current_every",
         {{K::Electroconvection}, [](CaseConfig& c, const Reader& r) { c.electroconvection.current_every = r.count(1); }}},
        {"newton.tol", {{K::Mms, K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.newton.tol = c.edl.newton.tol = c.electroconvection.newton.tol = r.positive();
         }}},
        {"newton.residual_rtol", {{K::Mms, K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.newton.residual_rtol = c.edl.newton.residual_rtol = c.electroconvection.newton.residual_rtol =
                 r.number();
         }}},
        {"newton.residual_atol", {{K::Mms, K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.newton.residual_atol = c.edl.newton.residual_atol = c.electroconvection.newton.residual_atol =
                 r.number();
         }}},
        {"newton.max_iters", {{K::Mms, K::Edl1d, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.newton.max_iters = c.edl.newton.max_iters = c.electroconvection.newton.max_iters = r.count(1);
         }}},
        {"block.max_iters", {{K::Mms, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.block.max_iters = c.electroconvection.block.max_iters = r.count(1);
         }}},
        {"block.tol", {{K::Mms, K::Electroconvection}, [](CaseConfig& c, const Reader& r) {
             c.mms.run.block.tol = c.electroconvection.block.tol = r.number();
         }}},
        {"carve.dim", {{K::Carve}, [](CaseConfig& c, const Reader& r) {
             const int d = r.count(2);
             if (d > 3) r.fail("carve.dim must be 2 or 3");
             c.carve.dim = d;
         }}},
        {"carve.surface_value", {{K::Carve}, [](CaseConfig& c, const Reader& r) { c.carve.surface_value = r.number(); }}},
        {"carve.outer_value", {{K::Carve}, [](CaseConfig& c, const Reader& r) { c.carve.outer_value = r.number(); }}},
    };
    return t;
}

CaseConfig parse_entries(const std::string& origin, const std::vector<Entry>& top,
                         const std::map<std::string, std::pair<int, std::vector<Entry>>>& blocks,
                         const CaseKind* fallback) {
    const Entry* case_entry = nullptr;
    for (const auto& e : top) {
        if (e.key == "case") {
            if (case_entry) throw ConfigError(origin + ":" + std::to_string(e.line) + ": duplicate key 'case'");
            case_entry = &e;
        }
    }
    CaseKind kind;
    if (case_entry) {
        kind = case_from(unquote(case_entry->value), origin + ":" + std::to_string(case_entry->line) + ": ");
        if (fallback && *fallback != kind) {
            throw ConfigError(origin + ":" + std::to_string(case_entry->line) + ": file describes case '" +
                              to_string(kind) + "' but '" + to_string(*fallback) + "' was requested");
        }
    } else if (fallback) {
        kind = *fallback;
    } else {
        throw ConfigError(origin + ": missing required key 'case'");
    }
    CaseConfig cfg = default_config(kind);
    cfg.origin = origin;

    std::set<std::string> seen;
    BoundarySet bcs;
    std::vector<const Entry*> spheres;
    const Entry* outer = nullptr;
    for (const auto& e : top) {
        if (e.key == "case") continue;
        Reader r(origin, e);
        if (e.key == "carve.sphere") {
            if (kind != CaseKind::Carve) r.fail("key 'carve.sphere' does not apply to case " + to_string(kind));
            spheres.push_back(&e);
            continue;
        }
        if (!seen.insert(e.key).second) r.fail("duplicate key '" + e.key + "'");
        if (e.key == "carve.outer") {
            if (kind != CaseKind::Carve) r.fail("key 'carve.outer' does not apply to case " + to_string(kind));
            outer = &e;
            continue;
        }
        if (e.key.rfind("bc.", 0) == 0) {
            if (kind != CaseKind::Electroconvection) r.fail("boundary keys apply to case electroconvection only");
            const auto dot = e.key.find('.', 3);
            if (dot == std::string::npos) r.fail("boundary keys have the form bc.<face>.<variable>");
            const std::string face = e.key.substr(3, dot - 3), var = e.key.substr(dot + 1);
            const auto& faces = boundary_faces();
            const auto& vars = boundary_variables();
            if (std::find(faces.begin(), faces.end(), face) == faces.end()) {
                r.fail("unknown face '" + face + "' (left, right, bottom, top)");
            }
            if (std::find(vars.begin(), vars.end(), var) == vars.end()) {
                r.fail("unknown variable '" + var + "' (u, v, p, phi, c_plus, c_minus)");
            }
            bcs[face][var] = parse_bc(r);
            continue;
        }
        const auto& table = key_table();
        const auto it = table.find(e.key);
        if (it == table.end()) r.fail("unknown key '" + e.key + "'");
        if (!it->second.cases.count(kind)) r.fail("key '" + e.key + "' does not apply to case " + to_string(kind));
        it->second.set(cfg, r);
    }
    if (!spheres.empty()) cfg.carve.spheres.clear();
    for (const auto* e : spheres) cfg.carve.spheres.push_back(parse_sphere(Reader(origin, *e), cfg.carve.dim));
    if (outer) cfg.carve.outer = parse_sphere(Reader(origin, *outer), cfg.carve.dim);

    for (const auto& [name, blk] : blocks) {
        const std::string where = origin + ":" + std::to_string(blk.first) + ": ";
        if (name == "solver_options_ns") {
            if (kind != CaseKind::Mms && kind != CaseKind::Electroconvection) {
                throw ConfigError(where + "solver_options_ns does not apply to case " + to_string(kind));
            }
            apply_solver_block(origin, blk.second, cfg.mms.run.ns_solver);
            cfg.electroconvection.ns_solver = cfg.mms.run.ns_solver;
        } else if (name == "solver_options_pnp") {
            if (kind == CaseKind::Carve) throw ConfigError(where + "solver_options_pnp does not apply to case carve");
            apply_solver_block(origin, blk.second, cfg.mms.run.newton.linear);
            cfg.edl.newton.linear = cfg.electroconvection.newton.linear = cfg.mms.run.newton.linear;
        } else if (name == "solver_options") {
            if (kind != CaseKind::Carve) throw ConfigError(where + "solver_options applies to case carve only");
            apply_solver_block(origin, blk.second, cfg.carve.solver);
        } else {
            throw ConfigError(where + "unknown option block '" + name +
                              "' (solver_options_ns, solver_options_pnp, solver_options)");
        }
    }

    if (!bcs.empty()) {
        try {
            validate_boundaries(bcs);
        } catch (const ConfigError& ex) {
            throw ConfigError(origin + ": " + ex.what());
        }
        cfg.electroconvection.boundaries = bcs;
    }
    cfg.electroconvection.seed = cfg.seed;
    cfg.mms.run.threads = cfg.electroconvection.threads = cfg.threads;
    if (cfg.mms.temporal && cfg.mms.reference_dt < 0.0) throw ConfigError(origin + ": mms.reference_dt must be >= 0");
    if (kind == CaseKind::Electroconvection && cfg.electroconvection.fine_level < cfg.electroconvection.coarse_level) {
        throw ConfigError(origin + ": mesh.fine_level must not be below mesh.coarse_level");
    }
    return cfg;
}

}  // namespace

CaseConfig default_config(CaseKind kind) {
    CaseConfig c;
    c.kind = kind;
    if (kind == CaseKind::Mms) {
        c.mms.run.level = 6;
        c.mms.run.t_end = 3.141592653589793;
    }
    if (kind == CaseKind::Carve) c.carve.spheres = {Sphere{{0.5, 0.5, 0.5}, 0.25}};
    return c;
}

CaseConfig parse_config_text(const std::string& text, const std::string& origin, const CaseKind* fallback) {
    std::vector<Entry> top;
    std::map<std::string, std::pair<int, std::vector<Entry>>> blocks;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    std::string block;
    int block_line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string s = trim(strip_comment(raw));
        const std::string where = origin + ":" + std::to_string(line) + ": ";
        if (s.empty()) continue;
        if (!block.empty() && (s == "};" || s == "}")) {
            block.clear();
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + s + "'");
        Entry e{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
        if (e.key.empty()) throw ConfigError(where + "missing key before '='");
        if (e.value == "{") {
            if (!block.empty()) throw ConfigError(where + "option blocks cannot be nested");
            if (blocks.count(e.key)) throw ConfigError(where + "duplicate block '" + e.key + "'");
            block = e.key;
            block_line = line;
            blocks[block] = {line, {}};
            continue;
        }
        if (e.value.empty()) throw ConfigError(where + "missing value for '" + e.key + "'");
        if (!e.value.empty() && e.value.back() == ';') e.value = trim(e.value.substr(0, e.value.size() - 1));
        (block.empty() ? top : blocks[block].second).push_back(e);
    }
    if (!block.empty()) {
        throw ConfigError(origin + ":" + std::to_string(block_line) + ": block '" + block + "' is not closed");
    }
    CaseConfig cfg = parse_entries(origin, top, blocks, fallback);
    cfg.source = text;
    return cfg;
}

CaseConfig parse_config(const std::string& path, const CaseKind* fallback) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path, fallback);
}

namespace {

/// Shortest text that reads back to the same double.
std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string solver_text(const std::string& prefix, const SolverConfig& s) {
    std::ostringstream o;
    o << prefix << ".ksp_type = " << (s.method == KrylovMethod::BiCGStab ? "bcgs" : "gmres") << "\n";
    o << prefix << ".pc_type = ";
    switch (s.preconditioner) {
        case PreconditionerKind::None: o << "none"; break;
        case PreconditionerKind::Jacobi: o << "jacobi"; break;
        case PreconditionerKind::BlockJacobi: o << "bjacobi"; break;
        case PreconditionerKind::Ilu0: o << "ilu"; break;
    }
    o << "\n" << prefix << ".ksp_atol = " << num(s.atol) << "\n";
    o << prefix << ".ksp_rtol = " << num(s.rtol) << "\n";
    o << prefix << ".ksp_max_it = " << s.max_iters << "\n";
    if (s.method == KrylovMethod::Gmres) o << prefix << ".ksp_gmres_restart = " << s.restart << "\n";
    return o.str();
}

std::string newton_text(const NewtonConfig& n) {
    std::ostringstream o;
    o << "newton.tol = " << num(n.tol) << "\n";
    o << "newton.residual_rtol = " << num(n.residual_rtol) << "\n";
    o << "newton.residual_atol = " << num(n.residual_atol) << "\n";
    o << "newton.max_iters = " << n.max_iters << "\n";
    o << solver_text("solver_options_pnp", n.linear);
    return o.str();
}

std::string equilibrate_text(const EquilibrateConfig& e) {
    std::ostringstream o;
    o << "equilibrate.dt = " << num(e.dt) << "\n";
    o << "equilibrate.max_dt_factor = " << num(e.max_dt_factor) << "\n";
    o << "equilibrate.steady_tol = " << num(e.steady_tol) << "\n";
    o << "equilibrate.max_steps = " << e.max_steps << "\n";
    return o.str();
}

std::string list_text(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
    return s;
}

}  // namespace

std::string describe(const CaseConfig& c) {
    std::ostringstream o;
    o << "case = " << to_string(c.kind) << "\n";
    o << "seed = " << c.seed << "\nthreads = " << c.threads << "\n";
    o << "output.vtk_every = " << c.output.vtk_every << "\n";
    o << "output.checkpoint_every = " << c.output.checkpoint_every << "\n";
    switch (c.kind) {
        case CaseKind::Mms: {
            const auto& m = c.mms;
            o << "mms.study = " << (m.temporal ? "temporal" : "spatial") << "\n";
            if (m.temporal) {
                o << "level = " << m.run.level << "\nmms.dts = " << list_text(m.dts) << "\n";
                o << "mms.reference_dt = " << num(m.reference_dt) << "\n";
            } else {
                std::vector<double> lv(m.levels.begin(), m.levels.end());
                o << "mms.levels = " << list_text(lv) << "\ndt = " << num(m.run.dt) << "\n";
            }
            o << "t_end = " << num(m.run.t_end) << "\n";
            o << "block.max_iters = " << m.run.block.max_iters << "\nblock.tol = " << num(m.run.block.tol)
              << "\n";
            o << newton_text(m.run.newton) << solver_text("solver_options_ns", m.run.ns_solver);
            break;
        }
        case CaseKind::Edl1d: {
            const auto& e = c.edl;
            o << "Lambda = " << num(e.Lambda) << "\ndphi = " << num(e.dphi) << "\n";
            o << "edl.cells = " << e.cells << "\n" << equilibrate_text(e.equilibrate) << newton_text(e.newton);
            break;
        }
        case CaseKind::Electroconvection: {
            const auto& e = c.electroconvection;
            o << "dphi = " << num(e.dphi) << "\nLambda = " << num(e.Lambda)
              << "\nkappa = " << num(e.kappa) << "\nSc = " << num(e.Sc) << "\n";
            o << "dt = " << num(e.dt) << "\nt_end = " << num(e.t_end) << "\n";
            o << "mesh.fine_level = " << e.fine_level << "\nmesh.coarse_level = " << e.coarse_level
              << "\nmesh.band = " << num(e.band) << "\n";
            o << "perturbation = " << num(e.perturbation) << "\ncurrent_every = " << e.current_every << "\n";
            o << "block.max_iters = " << e.block.max_iters << "\nblock.tol = " << num(e.block.tol) << "\n";
            o << equilibrate_text(e.equilibrate) << newton_text(e.newton) << solver_text("solver_options_ns", e.ns_solver);
            const auto bcs = e.boundaries.empty() ? electroconvection_boundaries(e.dphi) : e.boundaries;
            for (const auto& [face, vars] : bcs) {
                for (const auto& [var, bc] : vars) {
                    o << "bc." << face << "." << var << " = ";
                    if (bc.kind == BcKind::Dirichlet) {
                        o << num(bc.value);
                    } else {
                        o << to_string(bc.kind);
                    }
                    o << "\n";
                }
            }
            break;
        }
        case CaseKind::Carve: {
            const auto& k = c.carve;
            o << "carve.dim = " << k.dim << "\nlevel = " << k.level << "\n";
            for (const auto& s : k.spheres) {
                o << "carve.sphere = " << num(s.center[0]) << " " << num(s.center[1]) << " ";
                if (k.dim == 3) o << num(s.center[2]) << " ";
                o << num(s.radius) << "\n";
            }
            if (k.outer) {
                o << "carve.outer = " << num(k.outer->center[0]) << " " << num(k.outer->center[1])
                  << " ";
                if (k.dim == 3) o << num(k.outer->center[2]) << " ";
                o << num(k.outer->radius) << "\n";
            }
            o << "carve.surface_value = " << num(k.surface_value) << "\n";
            o << "carve.outer_value = " << num(k.outer_value) << "\n";
            o << solver_text("solver_options", k.solver);
            break;
        }
    }
    return o.str();
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace ekdns
