#pragma once

#include <wzapprox/approximant.hpp>
#include <wzapprox/errors.hpp>
#include <wzapprox/harness.hpp>
#include <wzapprox/systems.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace wz::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// One INI section as flat key-value pairs. Every key must be consumed.
class Section {
public:
    Section() = default;
    Section(std::string name, std::map<std::string, std::string> values)
        : name_(std::move(name)), values_(std::move(values)) {}

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string text(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double number(const std::string& key, double fallback) {
        used_.insert(key);
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_number(key, it->second);
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        const double v = number(key, static_cast<double>(fallback));
        if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
            throw ValidationError(fmt::format("[{}] {}: expected a non-negative integer", name_, key));
        }
        return static_cast<std::size_t>(v);
    }

    std::vector<double> list(const std::string& key, std::vector<double> fallback) {
        used_.insert(key);
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(parse_number(key, item));
        if (out.empty()) throw ValidationError(fmt::format("[{}] {}: empty list", name_, key));
        return out;
    }

    /// Keys `param_<name>` as system parameters.
    SystemParams system_params() {
        SystemParams p;
        for (const auto& [k, v] : values_) {
            if (k.rfind("param_", 0) == 0) {
                used_.insert(k);
                p[k.substr(6)] = parse_number(k, v);
            }
        }
        return p;
    }

    void finish() const {
        for (const auto& [k, v] : values_) {
            if (!used_.count(k)) throw ValidationError(fmt::format("[{}] unknown key '{}'", name_, k));
        }
    }

private:
    /// A decimal number or a power of two written as 2^k.
    double parse_number(const std::string& key, std::string s) const {
        const auto trim = [](std::string& x) {
            x.erase(0, x.find_first_not_of(" \t"));
            x.erase(x.find_last_not_of(" \t") + 1);
        };
        trim(s);
        try {
            std::size_t used = 0;
            double v = 0.0;
            if (s.rfind("2^", 0) == 0) {
                const int e = std::stoi(s.substr(2), &used);
                used += 2;
                v = std::ldexp(1.0, e);
            } else {
                v = std::stod(s, &used);
            }
            if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ValidationError(fmt::format("[{}] {}: cannot parse '{}' as a number", name_, key, s));
        }
    }

    std::string name_;
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

/// Section `name` of an INI file; an empty path yields an empty section.
inline Section read_section(const std::filesystem::path& file, const std::string& name) {
    if (file.empty()) return Section(name, {});
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot read config file '" + file.string() + "'");
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ValidationError("config file '" + file.string() + "': " + e.message() + " (line " +
                              std::to_string(e.line()) + ")");
    }
    std::map<std::string, std::string> values;
    const auto child = tree.get_child_optional(boost::property_tree::ptree::path_type(name, '\0'));
    if (child) {
        for (const auto& [k, v] : *child) values[k] = v.data();
    }
    return Section(name, std::move(values));
}

/// Experiment settings of a converge/decompose/lemmas section.
inline ExperimentConfig experiment_from_section(Section& s, Mode mode, std::uint64_t seed, unsigned threads) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.threads = threads;
    if (mode == Mode::weak) {
        cfg.system = "diagonal-nemytskii";
        cfg.deltas = {0x1p-4, 0x1p-5, 0x1p-6, 0x1p-7, 0x1p-8};
        cfg.replicas = 200;
        cfg.error_exponent = 4.0;
        cfg.x0 = {0.5};
        cfg.x0_amplitude = 0.25;
    }
    cfg.system = s.text("system", cfg.system);
    cfg.params = s.system_params();
    cfg.horizon = s.number("horizon", cfg.horizon);
    cfg.path_step = s.number("path_step", cfg.path_step);
    cfg.deltas = s.list("deltas", cfg.deltas);
    cfg.n_exponent = s.number("n_exponent", cfg.n_exponent);
    cfg.replicas = s.count("replicas", cfg.replicas);
    cfg.basis_size = s.count("basis_size", cfg.basis_size);
    cfg.domain_length = s.number("domain_length", cfg.domain_length);
    cfg.error_exponent = s.number("p", cfg.error_exponent);
    cfg.ref_divisor = s.count("ref_divisor", cfg.ref_divisor);
    cfg.x0 = s.list("x0", cfg.x0);
    cfg.x0_amplitude = s.number("x0_amplitude", cfg.x0_amplitude);
    cfg.weak.bound = s.number("bound", cfg.weak.bound);
    cfg.weak.stability_limit = s.number("stability_limit", cfg.weak.stability_limit);
    return cfg;
}

inline SamplingOptions sampling_from_section(Section& s, std::uint64_t seed, unsigned threads) {
    SamplingOptions opt;
    opt.seed = seed;
    opt.threads = threads;
    opt.dims = s.count("dims", opt.dims);
    opt.substeps = s.count("substeps", opt.substeps);
    return opt;
}

struct RunContext {
    std::string subcommand;
    std::filesystem::path config;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::filesystem::path cache_dir;
    std::vector<std::string> outputs;

    std::ofstream open(const std::string& name) {
        std::ofstream os(out_dir / name, std::ios::binary);
        if (!os) throw ValidationError("cannot write output file '" + (out_dir / name).string() + "'");
        outputs.push_back(name);
        return os;
    }
};

namespace detail {

inline std::string utc_now() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

inline void run_moments(RunContext& ctx) {
    Section s = read_section(ctx.config, ctx.subcommand);
    const auto deltas = s.list("deltas", {0x1p-4, 0x1p-5, 0x1p-6, 0x1p-7, 0x1p-8, 0x1p-9, 0x1p-10});
    const std::size_t paths = s.count("paths", 200000);
    const SamplingOptions opt = sampling_from_section(s, ctx.seed, ctx.threads);
    s.finish();
    const DiagnosticTable t = check_moment_axioms(wong_zakai_family(), deltas, paths, opt);
    auto os = ctx.open("moments.csv");
    write_diagnostic_csv(os, t);
}

inline void run_cjn(RunContext& ctx) {
    Section s = read_section(ctx.config, ctx.subcommand);
    const double delta = s.number("delta", 0x1p-8);
    const double exponent = s.number("k_exponent", 0.5);
    const std::size_t paths = s.count("paths", 100000);
    SamplingOptions opt = sampling_from_section(s, ctx.seed, ctx.threads);
    if (!s.has("dims")) opt.dims = 2;
    const double t = s.has("t") ? s.number("t", 0.0) : delta * static_cast<double>(ceil_power_schedule(delta, exponent));
    s.finish();
    const CorrectionEstimate est = estimate_cjn(wong_zakai_family(), t, delta, paths, opt);
    auto os = ctx.open("cjn.csv");
    write_correction_csv(os, est);
}

inline void run_sup(RunContext& ctx) {
    Section s = read_section(ctx.config, ctx.subcommand);
    const auto deltas = s.list("deltas", {0x1p-2, 0x1p-3, 0x1p-4, 0x1p-5, 0x1p-6, 0x1p-7, 0x1p-8});
    const std::size_t paths = s.count("paths", 2000);
    const double horizon = s.number("horizon", 1.0);
    const double step = s.number("step", 0x1p-12);
    const SamplingOptions opt = sampling_from_section(s, ctx.seed, ctx.threads);
    s.finish();
    const DiagnosticTable t = check_sup_convergence(wong_zakai_family(), deltas, paths, horizon, step, opt);
    auto os = ctx.open("sup.csv");
    write_diagnostic_csv(os, t);
}

inline void run_converge(RunContext& ctx, Mode mode) {
    Section s = read_section(ctx.config, ctx.subcommand);
    ExperimentConfig cfg = experiment_from_section(s, mode, ctx.seed, ctx.threads);
    s.finish();
    cfg.path_cache = ctx.cache_dir;
    const ConvergenceReport rep = run_convergence(cfg);
    {
        auto os = ctx.open("report.csv");
        write_report_csv(os, rep);
    }
    auto js = ctx.open("summary.json");
    js << report_summary(rep, cfg).dump(2) << '\n';
}

inline void run_decompose(RunContext& ctx) {
    Section s = read_section(ctx.config, ctx.subcommand);
    ExperimentConfig cfg = experiment_from_section(s, Mode::weak, ctx.seed, ctx.threads);
    if (!s.has("deltas")) cfg.deltas = {0x1p-6};
    if (!s.has("replicas")) cfg.replicas = 20;
    const std::size_t times = s.count("times", 10);
    s.finish();
    cfg.path_cache = ctx.cache_dir;
    const auto rows = run_decomposition(cfg, times);
    auto os = ctx.open("decompose.csv");
    write_decomposition_csv(os, rows);
}

inline void run_lemmas(RunContext& ctx) {
    Section s = read_section(ctx.config, ctx.subcommand);
    ExperimentConfig cfg = experiment_from_section(s, Mode::weak, ctx.seed, ctx.threads);
    s.finish();
    cfg.path_cache = ctx.cache_dir;
    const DiagnosticTable t = run_increment_lemmas(cfg);
    auto os = ctx.open("lemmas.csv");
    write_diagnostic_csv(os, t);
}

inline void write_manifest(const RunContext& ctx, const std::string& started, const std::string& status,
                           const std::string& message) {
    nlohmann::json j;
    j["subcommand"] = ctx.subcommand;
    j["config"] = ctx.config.string();
    j["output_dir"] = ctx.out_dir.string();
    j["seed"] = ctx.seed;
    j["threads"] = ctx.threads;
    j["tool_version"] = kToolVersion;
    j["started"] = started;
    j["finished"] = utc_now();
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    j["outputs"] = ctx.outputs;
    std::ofstream os(ctx.out_dir / "manifest.json");
    if (os) os << j.dump(2) << '\n';
}

}  // namespace detail

/// Parses argv, runs one subcommand and returns the process exit code:
/// 0 success, 1 invalid input, 2 numerical abort.
inline int dispatch(int argc, const char* const* argv, std::ostream& err = std::cerr) {
    CLI::App app{"Wong-Zakai approximation experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    RunContext ctx;
    std::string config, out_dir = ".", cache_dir;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;

    using Runner = std::function<void(RunContext&)>;
    const std::vector<std::tuple<std::string, std::string, Runner>> commands{
        {"moments", "moment axioms of the approximant", detail::run_moments},
        {"cjn", "correction tensor estimate", detail::run_cjn},
        {"sup", "sup-norm convergence of the approximant", detail::run_sup},
        {"converge-sde", "finite-dimensional convergence experiment",
         [](RunContext& c) { detail::run_converge(c, Mode::finite); }},
        {"converge-spde", "Galerkin weak-solution convergence experiment",
         [](RunContext& c) { detail::run_converge(c, Mode::weak); }},
        {"decompose", "H-term identity residuals", detail::run_decompose},
        {"lemmas", "increment bound ratios", detail::run_lemmas},
    };
    std::map<CLI::App*, Runner> runners;
    for (const auto& [name, help, run] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "INI file; section [" + name + "]");
        sub->add_option("--seed", seed, "master seed")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--threads", threads, "worker threads")->check(CLI::Range(1u, 1024u));
        sub->add_option("--cache-paths", cache_dir, "directory for cached Wiener paths");
        runners[sub] = run;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, std::cout, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cout, err);
        return 1;
    }

    CLI::App* chosen = app.get_subcommands().front();
    ctx.subcommand = chosen->get_name();
    ctx.config = config;
    ctx.out_dir = out_dir;
    ctx.seed = *seed;
    ctx.threads = threads;
    ctx.cache_dir = cache_dir;
    const std::string started = detail::utc_now();

    std::error_code ec;
    std::filesystem::create_directories(ctx.out_dir, ec);
    if (ec || !std::filesystem::is_directory(ctx.out_dir)) {
        err << "error: cannot create output directory '" << ctx.out_dir.string() << "'\n";
        return 1;
    }
    if (!ctx.cache_dir.empty()) {
        std::filesystem::create_directories(ctx.cache_dir, ec);
        if (ec) {
            err << "error: cannot create cache directory '" << ctx.cache_dir.string() << "'\n";
            return 1;
        }
    }

    int code = 0;
    std::string status = "ok", message;
    try {
        runners.at(chosen)(ctx);
    } catch (const NumericalAbort& e) {
        code = 2;
        status = "numerical_abort";
        message = e.what();
    } catch (const std::exception& e) {
        code = 1;
        status = "error";
        message = e.what();
    }
    if (code != 0) err << "error: " << message << '\n';
    detail::write_manifest(ctx, started, status, message);
    return code;
}

}  // namespace wz::cli
