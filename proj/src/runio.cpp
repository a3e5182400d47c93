#include "lcfm/runio.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lcfm/errors.hpp"
#include "lcfm/serialize.hpp"

namespace lcfm {

namespace {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

// Shortest round-trip decimal; keeps csv output deterministic across runs.
std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = std::strtod(buf, nullptr);
    for (int prec = 1; prec <= 16; ++prec) {
        char s[32];
        std::snprintf(s, sizeof s, "%.*g", prec, v);
        if (std::strtod(s, nullptr) == back) return s;
    }
    return buf;
}

namespace {
const auto& fmt_double = format_double;

}  // namespace

RunPaths RunPaths::at(const std::string& root) {
    namespace fs = std::filesystem;
    RunPaths p;
    p.root = root;
    p.config_json = (fs::path(root) / "config.json").string();
    p.metrics_csv = (fs::path(root) / "metrics.csv").string();
    p.manifest_json = (fs::path(root) / "manifest.json").string();
    p.checkpoints_dir = (fs::path(root) / "checkpoints").string();
    p.samples_dir = (fs::path(root) / "samples").string();
    return p;
}

RunPaths init_run_dir(const std::string& root, const nlohmann::json& config) {
    RunPaths p = RunPaths::at(root);
    std::filesystem::create_directories(p.checkpoints_dir);
    std::filesystem::create_directories(p.samples_dir);
    write_text_atomic(p.config_json, config.dump(2) + "\n");
    return p;
}

std::string config_hash(const nlohmann::json& config) {
    const std::string dump = config.dump();  // nlohmann emits sorted object keys
    return hex64(fnv1a(dump.data(), dump.size()));
}

std::uint64_t file_fnv1a(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file for hashing: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       std::uint64_t seed, const std::string& method) {
    std::ostringstream os;
    os << "step,metric,value,seed,method\n";
    for (const MetricRow& r : rows)
        os << r.step << ',' << r.metric << ',' << fmt_double(r.value) << ',' << seed << ','
           << method << '\n';
    write_text_atomic(path, os.str());
}

std::vector<MetricRow> read_metrics_csv(const std::string& path, std::uint64_t* seed_out,
                                        std::string* method_out) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read metrics csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "step,metric,value,seed,method")
        throw IoError("bad metrics csv header: " + path);
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string step, metric, value, seed, method;
        if (!std::getline(ls, step, ',') || !std::getline(ls, metric, ',') ||
            !std::getline(ls, value, ',') || !std::getline(ls, seed, ',') ||
            !std::getline(ls, method))
            throw IoError("bad metrics csv row: " + line);
        rows.push_back({std::stoull(step), metric, std::stod(value)});
        if (seed_out != nullptr) *seed_out = std::stoull(seed);
        if (method_out != nullptr) *method_out = method;
    }
    return rows;
}

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ostringstream os;
    os << "metric,value,n_a,n_b,config_hash\n";
    for (const EvalRow& r : rows)
        os << r.metric << ',' << fmt_double(r.value) << ',' << r.n_a << ',' << r.n_b << ','
           << r.config_hash << '\n';
    write_text_atomic(path, os.str());
}

void write_beta_csv(const std::string& path, const std::vector<BetaSweepRow>& rows) {
    std::ostringstream os;
    os << "beta,test_kl,final_loss\n";
    for (const BetaSweepRow& r : rows)
        os << fmt_double(r.beta) << ',' << fmt_double(r.test_kl) << ','
           << fmt_double(r.final_loss) << '\n';
    write_text_atomic(path, os.str());
}

void write_traj_csv(const std::string& path, const Trajectory& traj) {
    if (traj.states.empty()) throw ContractError("write_traj_csv: empty trajectory");
    std::ostringstream os;
    os << "traj_id,t,x,y\n";
    const std::size_t n = traj.states.front().rows();
    const std::size_t d = traj.states.front().cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < traj.times.size(); ++k) {
            const Matrix& s = traj.states[k];
            os << i << ',' << fmt_double(traj.times[k]) << ',' << fmt_double(s(i, 0)) << ','
               << fmt_double(d > 1 ? s(i, 1) : 0.0) << '\n';
        }
    write_text_atomic(path, os.str());
}

void write_histogram_csv(const std::string& path, std::vector<double> values, std::size_t bins) {
    if (values.empty()) throw ContractError("write_histogram_csv: no values");
    if (bins == 0) throw ConfigError("write_histogram_csv: bins must be positive");
    double smallest = std::numeric_limits<double>::infinity();
    for (double v : values)
        if (v > 0.0 && v < smallest) smallest = v;
    if (!std::isfinite(smallest)) smallest = 1e-300;  // all nonpositive
    for (double& v : values) v = std::log10(std::max(v, smallest));
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) hi = lo + 1.0;
    const double w = (hi - lo) / static_cast<double>(bins);
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
        std::size_t b = static_cast<std::size_t>((v - lo) / w);
        if (b >= bins) b = bins - 1;
        ++counts[b];
    }
    std::ostringstream os;
    os << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < bins; ++b)
        os << fmt_double(lo + w * double(b)) << ',' << fmt_double(lo + w * double(b + 1)) << ','
           << counts[b] << '\n';
    write_text_atomic(path, os.str());
}

void write_manifest(const RunPaths& paths, const std::string& command,
                    const nlohmann::json& config, const std::vector<std::string>& artifacts) {
    nlohmann::json m;
    const std::string hash = config_hash(config);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    m["run_id"] = hex64(fnv1a(&secs, sizeof secs, fnv1a(hash.data(), hash.size())));
    m["command"] = command;
    m["config_hash"] = hash;
    m["created_unix"] = secs;
    m["tool"] = "lcfm 1.0";
    nlohmann::json list = nlohmann::json::array();
    for (const std::string& a : artifacts) {
        if (!std::filesystem::exists(a)) throw IoError("manifest artifact missing: " + a);
        list.push_back({{"path", a}, {"fnv1a", hex64(file_fnv1a(a))}});
    }
    m["artifacts"] = list;
    write_text_atomic(paths.manifest_json, m.dump(2) + "\n");
}

}  // namespace lcfm
