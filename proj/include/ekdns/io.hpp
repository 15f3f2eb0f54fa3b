/// @file io.hpp
/// @brief Case configuration files, VTK/CSV output, checkpoints and run manifests.
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ekdns/cases.hpp"

namespace ekdns {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class CaseKind { Mms, Edl1d, Electroconvection, Carve };

std::string to_string(CaseKind kind);

struct MmsStudy {
    bool temporal = false;
    std::vector<int> levels{4, 5, 6, 7};
    std::vector<double> dts{0.1, 0.05, 0.025, 0.0125};
    double reference_dt = 0.0;
    MmsRunConfig run;
};

struct OutputSchedule {
    /// VTK snapshot every this many steps; 0 writes only the final state.
    int vtk_every = 0;
    /// Checkpoint every this many steps; 0 writes only the final state.
    int checkpoint_every = 0;
};

struct CaseConfig {
    CaseKind kind = CaseKind::Electroconvection;
    MmsStudy mms;
    EdlConfig edl;
    ElectroconvectionConfig electroconvection;
    CarvingConfig carve;
    OutputSchedule output;
    std::uint64_t seed = 1;
    int threads = 1;
    /// Exact bytes of the parsed file (empty for built-in defaults).
    std::string source;
    std::string origin;
};

/// Built-in defaults for a case.
CaseConfig default_config(CaseKind kind);

/// key = value lines, '#' comments and option blocks of the form
///   solver_options_ns = {
///   ksp_rtol = 1e-8
///   };
/// Errors carry "origin:line:". When `fallback` is given it supplies the case
/// if the file has no `case` key.
CaseConfig parse_config_text(const std::string& text, const std::string& origin = "<string>",
                             const CaseKind* fallback = nullptr);
CaseConfig parse_config(const std::string& path, const CaseKind* fallback = nullptr);

/// Resolved configuration as key = value lines, defaults included.
std::string describe(const CaseConfig& config);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------

struct VtkArray {
    std::string name;
    int ncomp = 1;
    std::vector<double> values;
};

struct VtkData {
    std::vector<std::array<double, 3>> points;
    std::vector<std::vector<std::size_t>> cells;
    std::vector<int> cell_types;
    std::vector<VtkArray> arrays;

    const VtkArray* find(const std::string& name) const;
};

/// velocity (3 components, z = 0 in 2-D), pressure, potential, c_plus, c_minus, charge_density.
std::vector<VtkArray> state_arrays(const TreeMesh& mesh, const FieldState& state, const NondimGroups& groups);

/// Legacy ASCII unstructured grid with quads (9) or hexahedra (12). Hanging
/// nodes are written with their constrained values.
void write_vtk(const TreeMesh& mesh, const std::vector<VtkArray>& arrays, const std::string& path,
               const std::string& title = "ekdns");
void write_vtk(const TreeMesh& mesh, const FieldState& state, const NondimGroups& groups, const std::string& path);
VtkData read_vtk(const std::string& path);

/// Zero-padded snapshot name, e.g. state_000120.vtk.
std::string snapshot_name(std::int64_t step, const std::string& stem = "state");

// ---------------------------------------------------------------------------

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Comma-separated rows with a header and 17 significant digits. Non-finite
/// values throw NonFiniteError.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<double>& values);

private:
    std::string path_;
    std::size_t width_;
    std::FILE* f_;
};

std::string format_double(double v);

void write_current_csv(const std::string& path, const std::vector<CurrentSample>& trace);
void write_profiles_csv(const std::string& path, const std::vector<ProfileRow>& rows);
void write_convergence_csv(const std::string& path, const ConvergenceStudy& study, bool temporal);
void write_edl_csv(const std::string& path, const EdlResult& result);

/// Reads a CSV written by CsvWriter: header and numeric rows.
std::vector<std::vector<double>> read_csv(const std::string& path, std::vector<std::string>* header = nullptr);

bool all_finite(const Vec& v);
bool all_finite(const FieldState& s);

// ---------------------------------------------------------------------------

struct Checkpoint {
    FieldState state;
    double dt = 0.0;
    std::uint64_t config_hash = 0;
    std::string rng_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);
std::string rng_state(const std::mt19937_64& rng);

// ---------------------------------------------------------------------------

struct RunManifest {
    std::string case_name;
    std::uint64_t config_hash = 0;
    std::string code_version;
    std::string start_time, end_time;
    std::int64_t steps = 0;
    std::vector<int> ns_iterations;
    std::vector<int> newton_iterations;
    std::vector<std::string> files;
    std::vector<std::string> notes;
    bool ok = false;
};

std::string code_version();
std::string wall_clock_now();
/// Written to a temporary name and renamed.
void write_manifest(const std::string& path, const RunManifest& m);

/// Console plus <dir>/run.log.
void setup_logging(const std::string& out_dir, bool verbose = false);

}  // namespace ekdns
