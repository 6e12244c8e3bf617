#pragma once

// Experiment configuration, seeded orchestration of the figure presets and
// generic sweeps, and CSV emission.
//
// Config documents are line oriented: `key = value`, '#' starts a comment.
// List keys take whitespace-separated values and may repeat (values append);
// scalar keys may appear once.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/baselines.hpp"
#include "ntklab/common.hpp"
#include "ntklab/ground_truth.hpp"
#include "ntklab/harmonics.hpp"
#include "ntklab/nn_reference.hpp"
#include "ntklab/ntk_core.hpp"
#include "ntklab/spectral_bounds.hpp"

namespace ntklab {

struct ConfigError : std::runtime_error {
    ConfigError(std::size_t line_no, const std::string& what)
        : std::runtime_error(line_no == 0 ? what : "line " + std::to_string(line_no) + ": " + what),
          line(line_no) {}
    std::size_t line;
};

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct NNConfig {
    bool enabled = true;
    std::size_t epochs = 2000;
    std::optional<double> step_size;  // default 1/sqrt(p)
    std::size_t max_p = 10000;        // NN runs are skipped above this width
};

struct ExperimentConfig {
    std::string experiment;
    std::size_t n = 50;
    int d = 2;
    std::vector<std::size_t> p_grid;
    std::vector<std::size_t> n_grid;
    std::vector<int> d_grid;
    std::vector<double> sigma_sq_list;
    std::vector<std::uint64_t> seeds;
    std::string target;  // target descriptor, see parse_target
    std::size_t test_points = 512;
    NNConfig nn;
    std::string output_path;

    double noise_norm_sq = 0.01;  // figure1 presets: exact ||eps||_2^2
    std::size_t fourier_l1_max_p = 10000;
    int l_max = 10;
    std::size_t mc_samples = kDefaultMcSamples;
    std::optional<double> m;  // bounds: default min(2, ln n / ln(pi/2))
    double q = kDefaultQ;
    double g_inf = 1.0;
    double g_l1 = 1.0;
    double eps_norm = 0.1;
};

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = {"figure1a", "figure1b", "figure3a", "figure3b",
                                                   "delta",    "harmonic-table", "bounds", "sweep"};
    return names;
}

inline std::vector<std::size_t> default_p_grid() { return {100, 300, 1000, 3000, 10000, 30000, 100000}; }

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

template <typename T>
T parse_number(const std::string& tok, std::size_t line, const std::string& key) {
    T v{};
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    if constexpr (std::is_floating_point_v<T>) {
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || !std::isfinite(v))
            throw ConfigError(line, "malformed number '" + tok + "' for key '" + key + "'");
    } else {
        // Integers accept scientific notation such as 1e5 when the value is integral.
        double dv = 0.0;
        auto [ptr, ec] = std::from_chars(first, last, dv);
        if (ec != std::errc() || ptr != last || !std::isfinite(dv) || dv != std::floor(dv) ||
            (std::is_unsigned_v<T> && dv < 0) || std::abs(dv) > 9.0e15)
            throw ConfigError(line, "malformed integer '" + tok + "' for key '" + key + "'");
        v = static_cast<T>(dv);
    }
    return v;
}

inline bool parse_bool(const std::string& tok, std::size_t line, const std::string& key) {
    if (tok == "true" || tok == "1" || tok == "yes" || tok == "on") return true;
    if (tok == "false" || tok == "0" || tok == "no" || tok == "off") return false;
    throw ConfigError(line, "malformed boolean '" + tok + "' for key '" + key + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Target descriptors
// ---------------------------------------------------------------------------

/// Builds a target for dimension d from a descriptor:
///   figure1a | figure1b | fourier k:sin:cos ... | axis-poly l [a1 ... ad]
///   | harmonic l [a1 ... ad] | const-g c | delta-g w@z1,...,zd ...
inline GroundTruthSpec parse_target(const std::string& text, int d, std::size_t line = 0) {
    const auto tok = detail::split_ws(text);
    if (tok.empty()) throw ConfigError(line, "empty target descriptor");
    const std::string& kind = tok[0];
    auto need_d2 = [&] {
        if (d != 2) throw ConfigError(line, "target '" + kind + "' requires d = 2");
    };
    auto axis_from = [&](std::size_t from) -> UnitVector {
        if (tok.size() == from) return UnitVector::basis(d, 0);
        if (tok.size() - from != static_cast<std::size_t>(d))
            throw ConfigError(line, "target axis must have exactly d = " + std::to_string(d) + " entries");
        Eigen::VectorXd v(d);
        for (int i = 0; i < d; ++i) v(i) = detail::parse_number<double>(tok[from + i], line, "target");
        try {
            return UnitVector::normalized(v);
        } catch (const std::exception& e) {
            throw ConfigError(line, std::string("target axis: ") + e.what());
        }
    };
    if (kind == "figure1a" || kind == "figure1b") {
        if (tok.size() != 1) throw ConfigError(line, "target '" + kind + "' takes no arguments");
        need_d2();
        return kind == "figure1a" ? figure1a_target() : figure1b_target();
    }
    if (kind == "fourier") {
        need_d2();
        if (tok.size() < 2) throw ConfigError(line, "fourier target needs at least one k:sin:cos term");
        FourierMixture f;
        for (std::size_t i = 1; i < tok.size(); ++i) {
            const auto a = tok[i].find(':'), b = tok[i].rfind(':');
            if (a == std::string::npos || a == b)
                throw ConfigError(line, "fourier term '" + tok[i] + "' must be k:sin:cos");
            const int k = detail::parse_number<int>(tok[i].substr(0, a), line, "target");
            if (k < 0) throw ConfigError(line, "fourier frequency must be non-negative");
            f.terms.push_back({k, detail::parse_number<double>(tok[i].substr(a + 1, b - a - 1), line, "target"),
                               detail::parse_number<double>(tok[i].substr(b + 1), line, "target")});
        }
        return f;
    }
    if (kind == "axis-poly" || kind == "harmonic") {
        if (tok.size() < 2) throw ConfigError(line, "target '" + kind + "' needs a degree");
        const int l = detail::parse_number<int>(tok[1], line, "target");
        if (l < 0) throw ConfigError(line, "degree must be non-negative");
        if (kind == "axis-poly") return AxisPolynomial{axis_from(2), l};
        if (d < 3) throw ConfigError(line, "harmonic target requires d >= 3");
        return HarmonicAxisTarget{l, axis_from(2)};
    }
    if (kind == "const-g") {
        if (tok.size() != 2) throw ConfigError(line, "const-g takes exactly one value");
        return ConvolvedG{ConstantG{detail::parse_number<double>(tok[1], line, "target")}, d};
    }
    if (kind == "delta-g") {
        if (tok.size() < 2) throw ConfigError(line, "delta-g needs at least one w@z1,...,zd atom");
        DiracMixtureG g;
        for (std::size_t i = 1; i < tok.size(); ++i) {
            const auto at = tok[i].find('@');
            if (at == std::string::npos) throw ConfigError(line, "delta-g atom '" + tok[i] + "' must be w@z1,...,zd");
            const double w = detail::parse_number<double>(tok[i].substr(0, at), line, "target");
            std::vector<double> coords;
            std::stringstream ss(tok[i].substr(at + 1));
            for (std::string c; std::getline(ss, c, ',');) coords.push_back(detail::parse_number<double>(c, line, "target"));
            if (coords.size() != static_cast<std::size_t>(d))
                throw ConfigError(line, "delta-g atom must have d = " + std::to_string(d) + " coordinates");
            try {
                g.atoms.push_back({UnitVector::normalized(Eigen::Map<Eigen::VectorXd>(coords.data(), d)), w});
            } catch (const std::exception& e) {
                throw ConfigError(line, std::string("delta-g atom: ") + e.what());
            }
        }
        return ConvolvedG{g, d};
    }
    throw ConfigError(line, "unknown target kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline void fill_defaults(ExperimentConfig& c, const std::set<std::string>& given) {
    const auto has = [&](const char* k) { return given.count(k) != 0; };
    const std::string& e = c.experiment;
    auto seeds_upto = [](std::uint64_t k) {
        std::vector<std::uint64_t> s;
        for (std::uint64_t i = 1; i <= k; ++i) s.push_back(i);
        return s;
    };
    if (e == "figure1a" || e == "figure1b") {
        if (!has("target")) c.target = e;
        if (!has("p_grid")) c.p_grid = default_p_grid();
        if (!has("seeds")) c.seeds = seeds_upto(9);
    } else if (e == "figure3a") {
        if (!has("target")) c.target = "figure1a";
        if (!has("p_grid")) c.p_grid = default_p_grid();
        if (!has("sigma_sq")) c.sigma_sq_list = {0.0, 0.04, 0.16};
        if (!has("seeds")) c.seeds = seeds_upto(5);
    } else if (e == "figure3b") {
        if (!has("target")) c.target = "figure1a";
        if (!has("p_grid")) c.p_grid = {20000};
        if (!has("n_grid")) c.n_grid = {25, 50, 100, 200, 400};
        if (!has("sigma_sq")) c.sigma_sq_list = {0.0, 0.01};
        if (!has("seeds")) c.seeds = seeds_upto(5);
    } else if (e == "delta") {
        if (!has("p_grid")) c.p_grid = {20000};
        if (!has("n_grid")) c.n_grid = {8, 16, 32, 64, 128, 256};
        if (!has("d_grid")) c.d_grid = {2, 10};
        if (!has("seeds")) c.seeds = seeds_upto(10);
    } else if (e == "harmonic-table") {
        if (!has("d_grid")) c.d_grid = {2, 3, 5};
    } else if (e == "bounds") {
        if (!has("n_grid")) c.n_grid = {16, 32, 50, 64, 128};
        if (!has("p_grid")) c.p_grid = {20000, 100000};
        if (!has("d_grid")) c.d_grid = {2, 3};
    } else if (e == "sweep") {
        if (!has("target")) c.target = c.d == 2 ? "figure1a" : "axis-poly 1";
        if (!has("p_grid")) c.p_grid = {1000, 10000};
        if (!has("seeds")) c.seeds = {1};
        if (!has("nn.enabled")) c.nn.enabled = false;
    }
    if (c.n_grid.empty()) c.n_grid = {c.n};
    if (c.d_grid.empty()) c.d_grid = {c.d};
    if (c.sigma_sq_list.empty()) c.sigma_sq_list = {0.0};
    if (c.seeds.empty()) c.seeds = {1};
    if (c.p_grid.empty()) c.p_grid = {c.n};
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text, const std::string& experiment_override = {}) {
    static const std::set<std::string> list_keys = {"p_grid", "n_grid", "d_grid", "sigma_sq", "seeds"};
    static const std::set<std::string> scalar_keys = {
        "experiment", "n",        "d",  "target", "test_points", "nn.enabled", "nn.epochs", "nn.step_size",
        "nn.max_p",   "output",   "noise_norm_sq", "fourier_l1_max_p", "l_max", "mc_samples", "m", "q",
        "g_inf",      "g_l1",     "eps_norm"};
    ExperimentConfig c;
    std::set<std::string> given;
    std::size_t target_line = 0;
    std::istringstream in(text);
    std::string raw;
    for (std::size_t line = 1; std::getline(in, raw); ++line) {
        const auto hash = raw.find('#');
        const std::string body = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'");
        const std::string key = detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (value.empty()) throw ConfigError(line, "empty value for key '" + key + "'");
        const bool is_list = list_keys.count(key) != 0;
        if (!is_list && scalar_keys.count(key) == 0) throw ConfigError(line, "unknown key '" + key + "'");
        if (!is_list && given.count(key)) throw ConfigError(line, "duplicate key '" + key + "'");
        given.insert(key);
        const auto toks = detail::split_ws(value);
        auto one = [&]() -> const std::string& {
            if (toks.size() != 1) throw ConfigError(line, "key '" + key + "' takes a single value");
            return toks[0];
        };
        using detail::parse_number;
        if (key == "p_grid" || key == "n_grid") {
            auto& dst = key == "p_grid" ? c.p_grid : c.n_grid;
            for (const auto& t : toks) {
                const auto v = parse_number<std::size_t>(t, line, key);
                if (v < 1) throw ConfigError(line, key + " entries must be >= 1");
                dst.push_back(v);
            }
        } else if (key == "d_grid") {
            for (const auto& t : toks) c.d_grid.push_back(parse_number<int>(t, line, key));
        } else if (key == "sigma_sq") {
            for (const auto& t : toks) {
                const double v = parse_number<double>(t, line, key);
                if (v < 0.0) throw ConfigError(line, "sigma_sq entries must be >= 0");
                c.sigma_sq_list.push_back(v);
            }
        } else if (key == "seeds") {
            for (const auto& t : toks) c.seeds.push_back(parse_number<std::uint64_t>(t, line, key));
        } else if (key == "experiment") {
            c.experiment = one();
            const auto& names = experiment_names();
            if (std::find(names.begin(), names.end(), c.experiment) == names.end())
                throw ConfigError(line, "unknown experiment '" + c.experiment + "'");
        } else if (key == "n") {
            c.n = parse_number<std::size_t>(one(), line, key);
        } else if (key == "d") {
            c.d = parse_number<int>(one(), line, key);
        } else if (key == "target") {
            c.target = value;
            target_line = line;
        } else if (key == "test_points") {
            c.test_points = parse_number<std::size_t>(one(), line, key);
        } else if (key == "nn.enabled") {
            c.nn.enabled = detail::parse_bool(one(), line, key);
        } else if (key == "nn.epochs") {
            c.nn.epochs = parse_number<std::size_t>(one(), line, key);
        } else if (key == "nn.step_size") {
            c.nn.step_size = parse_number<double>(one(), line, key);
            if (!(*c.nn.step_size > 0.0)) throw ConfigError(line, "nn.step_size must be positive");
        } else if (key == "nn.max_p") {
            c.nn.max_p = parse_number<std::size_t>(one(), line, key);
        } else if (key == "output") {
            c.output_path = value;
        } else if (key == "noise_norm_sq") {
            c.noise_norm_sq = parse_number<double>(one(), line, key);
            if (c.noise_norm_sq < 0.0) throw ConfigError(line, "noise_norm_sq must be >= 0");
        } else if (key == "fourier_l1_max_p") {
            c.fourier_l1_max_p = parse_number<std::size_t>(one(), line, key);
        } else if (key == "l_max") {
            c.l_max = parse_number<int>(one(), line, key);
            if (c.l_max < 0) throw ConfigError(line, "l_max must be >= 0");
        } else if (key == "mc_samples") {
            c.mc_samples = parse_number<std::size_t>(one(), line, key);
            if (c.mc_samples < 1) throw ConfigError(line, "mc_samples must be >= 1");
        } else if (key == "m") {
            c.m = parse_number<double>(one(), line, key);
        } else if (key == "q") {
            c.q = parse_number<double>(one(), line, key);
            if (!(c.q >= 1.0)) throw ConfigError(line, "q must be >= 1");
        } else if (key == "g_inf") {
            c.g_inf = parse_number<double>(one(), line, key);
        } else if (key == "g_l1") {
            c.g_l1 = parse_number<double>(one(), line, key);
        } else if (key == "eps_norm") {
            c.eps_norm = parse_number<double>(one(), line, key);
        }
    }
    if (!experiment_override.empty()) {
        if (given.count("experiment") && c.experiment != experiment_override)
            throw ConfigError(0, "config declares experiment '" + c.experiment + "' but subcommand is '" +
                                     experiment_override + "'");
        const auto& names = experiment_names();
        if (std::find(names.begin(), names.end(), experiment_override) == names.end())
            throw ConfigError(0, "unknown experiment '" + experiment_override + "'");
        c.experiment = experiment_override;
    }
    if (c.experiment.empty()) throw ConfigError(0, "missing required key 'experiment'");
    detail::fill_defaults(c, given);

    if (c.d < 2) throw ConfigError(0, "d must be >= 2");
    for (int d : c.d_grid)
        if (d < 2) throw ConfigError(0, "d_grid entries must be >= 2");
    if (c.n < 1) throw ConfigError(0, "n must be >= 1");
    if (c.test_points < 1) throw ConfigError(0, "test_points must be >= 1");
    for (const auto* grid : {&c.p_grid, &c.n_grid})
        if (grid->empty()) throw ConfigError(0, "grids must be nonempty");
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
        throw ConfigError(0, "seeds must be distinct");
    if (!c.target.empty()) {
        const int td = (c.experiment == "figure1a" || c.experiment == "figure1b") ? 2 : c.d;
        parse_target(c.target, td, target_line);
    }
    if ((c.experiment == "figure1a" || c.experiment == "figure1b" || c.experiment == "figure3a" ||
         c.experiment == "figure3b") && c.d != 2)
        throw ConfigError(0, c.experiment + " is defined for d = 2");
    return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& experiment_override = {}) {
    std::ifstream f(path);
    if (!f) throw ConfigError(0, "cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), experiment_override);
}

// ---------------------------------------------------------------------------
// Records and CSV
// ---------------------------------------------------------------------------

struct CurveRecord {
    std::string experiment;
    std::string model;   // ntk | nn | fourier_l2 | fourier_l1 | gaussian_formula | null_risk | f_inf
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t p = 0;   // 0 for width-free quantities
    int d = 2;
    double sigma_sq = 0.0;
    std::string metric;  // test_mse | train_mse | model_error | mineig_over_p | sup_gap | noise_gap | *_se
    double value = 0.0;
};

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline bool record_less(const CurveRecord& a, const CurveRecord& b) {
    return std::tie(a.model, a.n, a.p, a.sigma_sq, a.seed, a.metric, a.d, a.experiment, a.value) <
           std::tie(b.model, b.n, b.p, b.sigma_sq, b.seed, b.metric, b.d, b.experiment, b.value);
}

inline std::string records_to_csv(std::vector<CurveRecord> records) {
    std::stable_sort(records.begin(), records.end(), record_less);
    std::string out = "experiment,model,seed,n,p,d,sigma_sq,metric,value\n";
    for (const auto& r : records) {
        out += r.experiment + ',' + r.model + ',' + std::to_string(r.seed) + ',' + std::to_string(r.n) + ',' +
               std::to_string(r.p) + ',' + std::to_string(r.d) + ',' + format_double(r.sigma_sq) + ',' +
               r.metric + ',' + format_double(r.value) + '\n';
    }
    return out;
}

inline void write_text(const std::string& text, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
    f.flush();
    if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline void write_csv(const std::vector<CurveRecord>& records, const std::string& path) {
    write_text(records_to_csv(records), path);
}

// ---------------------------------------------------------------------------
// Trial construction
// ---------------------------------------------------------------------------

namespace stream {
inline constexpr std::uint64_t bank = 0x100;
inline constexpr std::uint64_t noise_direction = 0x204;
inline constexpr std::uint64_t z0 = 0x402;
}  // namespace stream

/// Training inputs, clean targets, a standard-normal noise direction and a
/// test set, drawn once per (seed, n).
struct Trial {
    Eigen::MatrixXd train;      // d x n
    Eigen::VectorXd truth;      // F(X)
    Eigen::VectorXd noise_dir;  // i.i.d. N(0, 1)
    Eigen::MatrixXd test;       // d x test_points
    Eigen::VectorXd test_truth;
};

inline Trial make_trial(const GroundTruthSpec& spec, int d, std::size_t n, std::uint64_t seed,
                        std::size_t test_points) {
    Trial t;
    RandomSource in_src(derive_seed(seed, stream::train_inputs, n));
    t.train = sample_unit_columns(d, n, in_src);
    t.truth = eval_target_many(spec, t.train);
    RandomSource noise_src(derive_seed(seed, stream::noise_direction, n));
    t.noise_dir.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < t.noise_dir.size(); ++i) t.noise_dir(i) = noise_src.gaussian();
    RandomSource test_src(derive_seed(seed, stream::test_inputs, n));
    t.test = sample_unit_columns(d, test_points, test_src);
    t.test_truth = eval_target_many(spec, t.test);
    return t;
}

/// Bank for (seed, p), shared across n.
inline NeuronBank trial_bank(std::uint64_t seed, std::size_t p, int d) {
    return build_bank(p, d, derive_seed(seed, stream::bank, p * 1000 + static_cast<std::size_t>(d)));
}

/// Noise with exact Euclidean norm sqrt(norm_sq).
inline Eigen::VectorXd fixed_norm_noise(const Trial& t, double norm_sq) {
    const double nrm = t.noise_dir.norm();
    if (norm_sq == 0.0 || nrm == 0.0) return Eigen::VectorXd::Zero(t.noise_dir.size());
    return t.noise_dir * (std::sqrt(norm_sq) / nrm);
}

struct MseEstimate {
    double mse = 0.0;
    double se = 0.0;
};

inline MseEstimate test_mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    const Eigen::ArrayXd sq = (pred - truth).array().square();
    const double m = static_cast<double>(sq.size());
    const double mean = sq.mean();
    const double var = sq.size() > 1 ? (sq - mean).square().sum() / (m - 1.0) : 0.0;
    return {mean, std::sqrt(var / m)};
}

inline std::vector<double> angles_of(const Eigen::MatrixXd& pts) {
    std::vector<double> a(static_cast<std::size_t>(pts.cols()));
    for (Eigen::Index i = 0; i < pts.cols(); ++i) a[static_cast<std::size_t>(i)] = std::atan2(pts(1, i), pts(0, i));
    return a;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct TaskFailure {
    std::string experiment;
    std::uint64_t seed = 0;
    std::size_t n = 0, p = 0;
    int d = 0;
    std::string message;
};

struct ExperimentResult {
    std::vector<CurveRecord> records;
    std::vector<TaskFailure> failures;
    std::vector<TaskFailure> warnings;  // rank-deficient grid points solved by pseudo-inverse
    // Experiments with their own table layout (harmonic-table, bounds).
    std::optional<std::string> table_csv;
    std::string summary;
};

namespace detail {

struct TaskOutput {
    std::vector<CurveRecord> records;
    std::vector<TaskFailure> failures;
    std::vector<TaskFailure> warnings;
};

class Recorder {
public:
    Recorder(std::string experiment, std::uint64_t seed, std::size_t n, std::size_t p, int d, TaskOutput& out)
        : experiment_(std::move(experiment)), seed_(seed), n_(n), p_(p), d_(d), out_(out) {}

    void add(const std::string& model, double sigma_sq, const std::string& metric, double value,
             std::optional<std::size_t> p = std::nullopt) {
        if (!std::isfinite(value)) {
            fail(model + "/" + metric + ": non-finite value");
            return;
        }
        out_.records.push_back({experiment_, model, seed_, n_, p.value_or(p_), d_, sigma_sq, metric, value});
    }

    void add_mse(const std::string& model, double sigma_sq, const MseEstimate& e,
                 std::optional<std::size_t> p = std::nullopt) {
        add(model, sigma_sq, "test_mse", e.mse, p);
        add(model, sigma_sq, "test_mse_se", e.se, p);
    }

    void fail(const std::string& message) { out_.failures.push_back({experiment_, seed_, n_, p_, d_, message}); }

    void warn(const std::string& model, std::size_t rank) {
        out_.warnings.push_back({experiment_, seed_, n_, p_, d_,
                                 model + ": Gram matrix has numerical rank " + std::to_string(rank) + " of " +
                                     std::to_string(n_) + "; used the pseudo-inverse (least-squares) solution"});
    }

    /// Runs fn and records any exception as a failure of this task.
    template <typename F>
    void guard(const std::string& what, F&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            fail(what + ": " + e.what());
        }
    }

private:
    std::string experiment_;
    std::uint64_t seed_;
    std::size_t n_, p_;
    int d_;
    TaskOutput& out_;
};

inline ExperimentResult run_tasks(std::vector<std::function<void(TaskOutput&)>> tasks, std::size_t threads) {
    std::vector<TaskOutput> outs(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t i) { tasks[i](outs[i]); });
    ExperimentResult r;
    for (auto& o : outs) {
        r.records.insert(r.records.end(), o.records.begin(), o.records.end());
        r.failures.insert(r.failures.end(), o.failures.begin(), o.failures.end());
        r.warnings.insert(r.warnings.end(), o.warnings.begin(), o.warnings.end());
    }
    std::stable_sort(r.records.begin(), r.records.end(), record_less);
    return r;
}

// figure1a / figure1b: p-sweep of NTK, NN, Fourier baselines, null risk, Gaussian formula, f_inf.
inline ExperimentResult run_figure1(const ExperimentConfig& c, std::size_t threads) {
    const GroundTruthSpec spec = parse_target(c.target, 2);
    const double null = null_risk(spec, 2).value;
    const double sigma_sq = c.noise_norm_sq / static_cast<double>(c.n);
    std::vector<std::function<void(TaskOutput&)>> tasks;
    for (auto seed : c.seeds) {
        tasks.push_back([=, &c](TaskOutput& out) {
            Recorder rec(c.experiment, seed, c.n, 0, 2, out);
            rec.guard("f_inf", [&] {
                const Trial t = make_trial(spec, 2, c.n, seed, c.test_points);
                const Eigen::VectorXd y = t.truth + fixed_norm_noise(t, c.noise_norm_sq);
                rec.add_mse("f_inf", sigma_sq, test_mse(InfiniteWidthModel(t.train, y).predict_many(t.test), t.test_truth));
            });
        });
        for (auto p : c.p_grid) {
            tasks.push_back([=, &c](TaskOutput& out) {
                Recorder rec(c.experiment, seed, c.n, p, 2, out);
                const Trial t = make_trial(spec, 2, c.n, seed, c.test_points);
                const Eigen::VectorXd noise = fixed_norm_noise(t, c.noise_norm_sq);
                const Dataset data = Dataset::make(t.train, t.truth, noise);
                rec.add("null_risk", sigma_sq, "test_mse", null);
                if (p >= c.n + 2) rec.add("gaussian_formula", sigma_sq, "test_mse", gaussian_mse_formula(null, c.n, p, sigma_sq));
                const NeuronBank bank = trial_bank(seed, p, 2);
                rec.guard("ntk", [&] {
                    const MinNormSolver solver(bank, data, true);
                    if (solver.rank_deficient()) rec.warn("ntk", solver.rank());
                    const DualModel model = solver.solve(data.labels);
                    const Eigen::VectorXd pred = model.predict_many(t.test);
                    rec.add_mse("ntk", sigma_sq, test_mse(pred, t.test_truth));
                    const Eigen::VectorXd lim = InfiniteWidthModel(data).predict_many(t.test);
                    rec.add("f_inf", sigma_sq, "sup_gap", (pred - lim).lpNorm<Eigen::Infinity>());
                });
                const auto train_angles = angles_of(t.train);
                const auto test_angles = angles_of(t.test);
                const FourierDesign design(train_angles, p);
                rec.guard("fourier_l2", [&] {
                    const Eigen::VectorXd beta = fourier_min_l2(design, data.labels);
                    rec.add_mse("fourier_l2", sigma_sq, test_mse(design.evaluate(beta, test_angles), t.test_truth));
                });
                if (p <= c.fourier_l1_max_p && p >= c.n) {
                    rec.guard("fourier_l1", [&] {
                        const L1Result r = fourier_min_l1(design, data.labels);
                        rec.add_mse("fourier_l1", sigma_sq, test_mse(design.evaluate(r.beta, test_angles), t.test_truth));
                    });
                }
                if (c.nn.enabled && p <= c.nn.max_p) {
                    rec.guard("nn", [&] {
                        NNOptions opts;
                        opts.epochs = c.nn.epochs;
                        opts.step_size = c.nn.step_size;
                        const NNState s = train_nn(bank, data, opts);
                        rec.add_mse("nn", sigma_sq, test_mse(predict_nn_model(s, t.test), t.test_truth));
                        rec.add("nn", sigma_sq, "train_mse", nn_train_mse(s, data));
                    });
                }
            });
        }
    }
    return run_tasks(std::move(tasks), threads);
}

// figure3a (p-sweep) and figure3b (n-sweep): NTK test MSE under i.i.d. N(0, sigma^2) noise.
inline ExperimentResult run_figure3(const ExperimentConfig& c, std::size_t threads) {
    const GroundTruthSpec spec = parse_target(c.target, 2);
    const double null = null_risk(spec, 2).value;
    const bool has_zero = std::find(c.sigma_sq_list.begin(), c.sigma_sq_list.end(), 0.0) != c.sigma_sq_list.end();
    const std::vector<std::size_t> ns = c.experiment == "figure3a" ? std::vector<std::size_t>{c.n} : c.n_grid;
    std::vector<std::function<void(TaskOutput&)>> tasks;
    for (auto seed : c.seeds)
        for (auto n : ns)
            for (auto p : c.p_grid)
                tasks.push_back([=, &c](TaskOutput& out) {
                    Recorder rec(c.experiment, seed, n, p, 2, out);
                    const Trial t = make_trial(spec, 2, n, seed, c.test_points);
                    const NeuronBank bank = trial_bank(seed, p, 2);
                    rec.guard("ntk", [&] {
                        const MinNormSolver solver(bank, t.train, true);
                        if (solver.rank_deficient()) rec.warn("ntk", solver.rank());
                        std::map<double, double> mse;
                        for (double s2 : c.sigma_sq_list) {
                            const Eigen::VectorXd y = t.truth + std::sqrt(s2) * t.noise_dir;
                            const MseEstimate e = test_mse(solver.solve(y).predict_many(t.test), t.test_truth);
                            rec.add_mse("ntk", s2, e);
                            mse[s2] = e.mse;
                            if (p >= n + 2) rec.add("gaussian_formula", s2, "test_mse", gaussian_mse_formula(null, n, p, s2));
                        }
                        if (has_zero)
                            for (double s2 : c.sigma_sq_list)
                                if (s2 != 0.0) rec.add("ntk", s2, "noise_gap", mse[s2] - mse[0.0]);
                    });
                });
    return run_tasks(std::move(tasks), threads);
}

// delta: ||(P - I) dV*|| vs n for constant g and a single Dirac g.
inline ExperimentResult run_delta(const ExperimentConfig& c, std::size_t threads) {
    std::vector<std::function<void(TaskOutput&)>> tasks;
    for (auto seed : c.seeds)
        for (int d : c.d_grid)
            for (auto p : c.p_grid)
                for (auto n : c.n_grid)
                    tasks.push_back([=](TaskOutput& out) {
                        Recorder rc(std::string("delta/constant-g"), seed, n, p, d, out);
                        Recorder rd(std::string("delta/dirac-g"), seed, n, p, d, out);
                        const NeuronBank bank = trial_bank(seed, p, d);
                        RandomSource in_src(derive_seed(seed, stream::train_inputs, n * 1000 + static_cast<std::size_t>(d)));
                        const Eigen::MatrixXd x = sample_unit_columns(d, n, in_src);
                        RandomSource z_src(derive_seed(seed, stream::z0, static_cast<std::uint64_t>(d)));
                        const UnitVector z0 = sample_unit(d, z_src);
                        try {
                            const MinNormSolver solver(bank, x, true);
                            if (solver.rank_deficient()) rc.warn("ntk", solver.rank());
                            rc.guard("constant-g", [&] {
                                rc.add("ntk", 0.0, "model_error", solver.projection_residual(dv_star(ConstantG{1.0}, bank).blocks));
                            });
                            rd.guard("dirac-g", [&] {
                                const GFunction g = DiracMixtureG{{{z0, 1.0}}};
                                rd.add("ntk", 0.0, "model_error", solver.projection_residual(dv_star(g, bank).blocks));
                            });
                        } catch (const std::exception& e) {
                            rc.fail(std::string("solver: ") + e.what());
                        }
                    });
    return run_tasks(std::move(tasks), threads);
}

inline ExperimentResult run_harmonic_table(const ExperimentConfig& c) {
    ExperimentResult r;
    std::string csv = "l,d,c_h,classification\n";
    for (int d : c.d_grid) {
        std::optional<QuadratureRule> rule;
        if (d >= 3) rule = QuadratureRule::colatitude(d);
        for (int l = 0; l <= c.l_max; ++l) {
            const double v = d == 2 ? fourier_ch_closed(l) : c_h_coefficient(l, d, *rule);
            csv += std::to_string(l) + ',' + std::to_string(d) + ',' + format_double(v) + ',' +
                   (classified_zero(v) ? "zero" : "nonzero") + '\n';
        }
    }
    r.table_csv = csv;
    r.summary = "coefficients are defined up to a fixed positive constant per dimension\n";
    return r;
}

inline ExperimentResult run_bounds(const ExperimentConfig& c) {
    ExperimentResult r;
    std::string csv =
        "n,p,d,m,q,j_m,c_d,d_ndd,term1,term2,term3,term4,term5,term6,term7,mineig_lower,mineig_upper,"
        "variance_cap,p_threshold,side_condition\n";
    for (int d : c.d_grid)
        for (auto n : c.n_grid)
            for (auto p : c.p_grid) {
                try {
                    const double m = c.m.value_or(default_m(n));
                    const BoundReport b = make_bound_report(n, static_cast<double>(p), d, m, c.q, c.g_inf, c.g_l1, c.eps_norm);
                    csv += std::to_string(n) + ',' + std::to_string(p) + ',' + std::to_string(d) + ',' +
                           format_double(b.m) + ',' + format_double(b.q) + ',' + format_double(b.j_m) + ',' +
                           format_double(b.c_d) + ',' + format_double(b.d_ndd);
                    for (double t : b.terms) csv += ',' + format_double(t);
                    csv += ',' + format_double(b.mineig_lower) + ',' +
                           (b.mineig_upper ? format_double(*b.mineig_upper) : std::string("NA")) + ',' +
                           format_double(b.variance_cap) + ',' + format_double(b.p_threshold) + ',' +
                           (b.side_condition ? "true" : "false") + '\n';
                    r.summary += summarize(b);
                } catch (const std::exception& e) {
                    r.failures.push_back({"bounds", 0, n, p, d, e.what()});
                }
            }
    r.summary += "||g||_inf and ||g||_1 are caller-supplied (g_inf = " + format_double(c.g_inf) +
                 ", g_l1 = " + format_double(c.g_l1) + ")\n";
    r.table_csv = csv;
    return r;
}

// sweep: n x p x sigma^2 grid for any target; NTK (and optionally NN) plus diagnostics.
inline ExperimentResult run_sweep(const ExperimentConfig& c, std::size_t threads) {
    std::vector<std::function<void(TaskOutput&)>> tasks;
    for (auto seed : c.seeds)
        for (auto n : c.n_grid)
            for (auto p : c.p_grid)
                tasks.push_back([=, &c](TaskOutput& out) {
                    Recorder rec("sweep", seed, n, p, c.d, out);
                    rec.guard("sweep", [&] {
                        const GroundTruthSpec spec = parse_target(c.target, c.d);
                        const Trial t = make_trial(spec, c.d, n, seed, c.test_points);
                        const NeuronBank bank = trial_bank(seed, p, c.d);
                        const MinNormSolver solver(bank, t.train, true);
                        if (solver.rank_deficient()) rec.warn("ntk", solver.rank());
                        if (n <= 200) rec.add("ntk", 0.0, "mineig_over_p", solver.min_eigenvalue() / static_cast<double>(p));
                        for (double s2 : c.sigma_sq_list) {
                            const Eigen::VectorXd noise = std::sqrt(s2) * t.noise_dir;
                            const Dataset data = Dataset::make(t.train, t.truth, noise);
                            const DualModel model = solver.solve(data.labels);
                            const Eigen::VectorXd pred = model.predict_many(t.test);
                            rec.add_mse("ntk", s2, test_mse(pred, t.test_truth));
                            rec.add("ntk", s2, "train_mse", (model.predict_many(t.train) - data.labels).squaredNorm() / static_cast<double>(n));
                            const InfiniteWidthModel lim(data);
                            const Eigen::VectorXd lim_pred = lim.predict_many(t.test);
                            rec.add_mse("f_inf", s2, test_mse(lim_pred, t.test_truth));
                            rec.add("f_inf", s2, "sup_gap", (pred - lim_pred).lpNorm<Eigen::Infinity>());
                            if (c.nn.enabled && p <= c.nn.max_p) {
                                NNOptions opts;
                                opts.epochs = c.nn.epochs;
                                opts.step_size = c.nn.step_size;
                                const NNState s = train_nn(bank, data, opts);
                                rec.add_mse("nn", s2, test_mse(predict_nn_model(s, t.test), t.test_truth));
                                rec.add("nn", s2, "train_mse", nn_train_mse(s, data));
                            }
                        }
                    });
                });
    return run_tasks(std::move(tasks), threads);
}

}  // namespace detail

/// Runs one experiment. Results are independent of `threads`.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t threads = 1) {
    const std::string& e = cfg.experiment;
    if (e == "figure1a" || e == "figure1b") return detail::run_figure1(cfg, threads);
    if (e == "figure3a" || e == "figure3b") return detail::run_figure3(cfg, threads);
    if (e == "delta") return detail::run_delta(cfg, threads);
    if (e == "harmonic-table") return detail::run_harmonic_table(cfg);
    if (e == "bounds") return detail::run_bounds(cfg);
    if (e == "sweep") return detail::run_sweep(cfg, threads);
    throw ConfigError(0, "unknown experiment '" + e + "'");
}

/// Applies a seed offset to every seed in the config.
inline void offset_seeds(ExperimentConfig& cfg, std::uint64_t offset) {
    for (auto& s : cfg.seeds) s += offset;
}

/// Mean of `metric` for `model` over seeds at each p (or n), keyed by grid value.
inline std::map<std::size_t, double> seed_mean(const std::vector<CurveRecord>& recs, const std::string& model,
                                               const std::string& metric, double sigma_sq, bool by_n,
                                               const std::string& experiment = {}) {
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (const auto& r : recs) {
        if (r.model != model || r.metric != metric || r.sigma_sq != sigma_sq) continue;
        if (!experiment.empty() && r.experiment != experiment) continue;
        auto& a = acc[by_n ? r.n : r.p];
        a.first += r.value;
        a.second += 1;
    }
    std::map<std::size_t, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
    return out;
}

}  // namespace ntklab
