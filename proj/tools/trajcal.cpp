// trajcal — batch toolkit for trajectory-confidence calibration.
//
// Subcommands: extract, train, eval, transfer, gac, baselines, synth.
// Every run writes its primary outputs atomically (temp file + rename) and
// one manifest next to the first output; re-running with identical inputs
// and seed reproduces the primary outputs byte for byte.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajcal/baselines.hpp"
#include "trajcal/calibrator.hpp"
#include "trajcal/features.hpp"
#include "trajcal/metrics.hpp"
#include "trajcal/parallel.hpp"
#include "trajcal/pipeline.hpp"
#include "trajcal/synthgen.hpp"
#include "trajcal/trace.hpp"
#include "trajcal/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 1 usage, 2 input parse/validation, 3 computation, 4 I/O.
constexpr int kExitUsage = 1;
constexpr int kExitParse = 2;
constexpr int kExitCompute = 3;
constexpr int kExitIo = 4;

struct CommandFailure {
    int code;
    std::string message;
};

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CommandFailure{kExitIo, "cannot open input file: " + path.string()};
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CommandFailure{kExitIo, "cannot open output file: " + tmp.string()};
        out << content;
        if (!out) {
            std::remove(tmp.c_str());
            throw CommandFailure{kExitIo, "failed writing output file: " + tmp.string()};
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        throw CommandFailure{kExitIo, "failed to move output into place: " + path.string()};
    }
}

struct Manifest {
    std::string command;
    json config = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    std::map<std::string, double> timings_ms;

    void write(const fs::path& primary_output) const {
        json j;
        j["command"] = command;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["seed"] = seed;
        j["toolkit_version"] = trajcal::kVersion;
        j["timings_ms"] = timings_ms;
        atomic_write(primary_output.string() + ".manifest.json", j.dump(2) + "\n");
    }
};

trajcal::TraceFile parse_trace_file(const fs::path& path) {
    const std::string bytes = read_file(path);
    try {
        return trajcal::parse_trace_string(bytes);
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitParse, std::string(e.what()) + " (" + path.string() + ")"};
    }
}

trajcal::Dataset read_table(const fs::path& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    try {
        return trajcal::read_feature_table(in, path.stem().string());
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitParse, std::string(e.what()) + " (" + path.string() + ")"};
    }
}

trajcal::CalibrationModel load_model_file(const fs::path& path) {
    try {
        return trajcal::load_model(read_file(path));
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitParse, std::string(e.what()) + " (" + path.string() + ")"};
    }
}

std::set<trajcal::FeatureCategory> parse_categories(const std::string& spec) {
    std::set<trajcal::FeatureCategory> cats;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "dynamics") cats.insert(trajcal::FeatureCategory::Dynamics);
        else if (item == "position") cats.insert(trajcal::FeatureCategory::Position);
        else if (item == "stability") cats.insert(trajcal::FeatureCategory::Stability);
        else if (item == "structure") cats.insert(trajcal::FeatureCategory::Structure);
        else throw CommandFailure{kExitUsage, "unknown feature category '" + item + "'"};
    }
    if (cats.empty()) throw CommandFailure{kExitUsage, "empty category list"};
    return cats;
}

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> grid;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            grid.push_back(trajcal::parse_double(item));
        } catch (const trajcal::Error&) {
            throw CommandFailure{kExitUsage, "bad grid value '" + item + "'"};
        }
    }
    if (grid.empty()) throw CommandFailure{kExitUsage, "empty alpha grid"};
    return grid;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractOpts {
    std::string input, output, categories;
    std::size_t k_override = 0;
    std::size_t prefix = 0;
};

int cmd_extract(const ExtractOpts& opt) {
    Manifest manifest;
    manifest.command = "extract";
    manifest.inputs = {opt.input};
    manifest.config = {{"k", opt.k_override},
                       {"categories", opt.categories},
                       {"prefix", opt.prefix}};

    Stopwatch parse_timer;
    const trajcal::TraceFile file = parse_trace_file(opt.input);
    manifest.timings_ms["parse_ms"] = parse_timer.ms();
    if (opt.k_override != 0 && opt.k_override != file.k) {
        throw CommandFailure{kExitParse, "file header has k=" + std::to_string(file.k) +
                                             ", --k requested " + std::to_string(opt.k_override)};
    }

    std::vector<std::size_t> indices;
    std::vector<std::string> names = trajcal::feature_names();
    if (!opt.categories.empty()) {
        indices = trajcal::category_indices(parse_categories(opt.categories));
        names.clear();
        for (std::size_t i : indices) names.emplace_back(trajcal::feature_name(i));
    }

    const auto& trajs = file.trajectories;
    std::vector<trajcal::FeatureRow> rows(trajs.size());
    Stopwatch extract_timer;
    try {
        trajcal::parallel_for(trajs.size(), [&](std::size_t i) {
            const std::size_t S = trajs[i].steps.size();
            const std::size_t m = opt.prefix == 0 ? S : std::min<std::size_t>(opt.prefix, S);
            const trajcal::FeatureVector full = trajcal::prefix_features(trajs[i], m);
            trajcal::FeatureRow row;
            row.id = trajs[i].id;
            row.label = trajs[i].label;
            if (indices.empty()) {
                row.values.assign(full.begin(), full.end());
            } else {
                for (std::size_t j : indices) row.values.push_back(full[j]);
            }
            rows[i] = std::move(row);
        });
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitCompute, e.what()};
    }
    const double extract_ms = extract_timer.ms();
    manifest.timings_ms["extract_ms"] = extract_ms;
    manifest.timings_ms["extract_mean_ms_per_trajectory"] =
        trajs.empty() ? 0.0 : extract_ms / static_cast<double>(trajs.size());

    Stopwatch write_timer;
    std::ostringstream table;
    trajcal::write_feature_table(table, rows, names);
    atomic_write(opt.output, table.str());
    manifest.timings_ms["write_ms"] = write_timer.ms();
    manifest.outputs = {opt.output};
    manifest.write(opt.output);
    std::cout << "extract: " << rows.size() << " trajectories, " << names.size()
              << " features -> " << opt.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / gac
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::vector<std::string> inputs;
    std::string output, report, penalty = "l2", grid;
    double alpha = 0.0;
    std::uint64_t seed = trajcal::kDefaultSeed;
    std::size_t folds = trajcal::kDefaultFolds;
    std::size_t bins = trajcal::kDefaultBins;
};

int run_training(const char* name, const TrainOpts& opt) {
    Manifest manifest;
    manifest.command = name;
    manifest.inputs = opt.inputs;
    manifest.seed = opt.seed;

    trajcal::CVConfig cfg;
    cfg.penalty = trajcal::penalty_from_name(opt.penalty);
    cfg.k = opt.folds;
    cfg.seed = opt.seed;
    cfg.bins = opt.bins;
    if (opt.alpha > 0.0) {
        cfg.grid = {opt.alpha};
    } else if (!opt.grid.empty()) {
        cfg.grid = parse_grid(opt.grid);
    }
    manifest.config = {{"penalty", opt.penalty},
                       {"grid", cfg.grid},
                       {"folds", cfg.k},
                       {"bins", cfg.bins}};

    Stopwatch read_timer;
    std::vector<trajcal::Dataset> datasets;
    for (const auto& path : opt.inputs) datasets.push_back(read_table(path));
    manifest.timings_ms["read_ms"] = read_timer.ms();

    Stopwatch train_timer;
    trajcal::GridSearchResult result;
    try {
        result = datasets.size() == 1 ? trajcal::grid_search_cv(datasets.front(), cfg)
                                      : trajcal::pretrain_gac(datasets, cfg);
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitCompute, e.what()};
    }
    manifest.timings_ms["train_ms"] = train_timer.ms();

    const std::string report_path =
        opt.report.empty() ? opt.output + ".cv.json" : opt.report;
    Stopwatch write_timer;
    // compose everything first so a failure cannot leave partial outputs
    const std::string model_bytes = trajcal::save_model(result.model);
    const std::string report_bytes = trajcal::cv_report_to_json(result.report).dump(2) + "\n";
    atomic_write(opt.output, model_bytes);
    atomic_write(report_path, report_bytes);
    manifest.timings_ms["write_ms"] = write_timer.ms();
    manifest.outputs = {opt.output, report_path};
    manifest.write(opt.output);

    std::cout << name << ": chose alpha=" << trajcal::format_double(result.report.chosen_alpha)
              << " (" << opt.penalty << "), " << trajcal::selected_features(result.model).size()
              << " features selected, model -> " << opt.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval / transfer
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string model, input, output, bin_table;
    std::size_t bins = trajcal::kDefaultBins;
};

int run_eval(const char* name, const EvalOpts& opt) {
    Manifest manifest;
    manifest.command = name;
    manifest.inputs = {opt.model, opt.input};
    manifest.config = {{"bins", opt.bins}};

    Stopwatch read_timer;
    const trajcal::CalibrationModel model = load_model_file(opt.model);
    const trajcal::Dataset target = read_table(opt.input);
    manifest.timings_ms["read_ms"] = read_timer.ms();

    Stopwatch eval_timer;
    trajcal::EvalReport report;
    try {
        report = trajcal::transfer_eval(model, target, opt.bins);
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitCompute, e.what()};
    }
    manifest.timings_ms["eval_ms"] = eval_timer.ms();

    Stopwatch write_timer;
    const std::string report_bytes = trajcal::eval_report_to_json(report).dump(2) + "\n";
    std::ostringstream bt;
    trajcal::write_bin_table(bt, report.bins);
    atomic_write(opt.output, report_bytes);
    manifest.outputs = {opt.output};
    if (!opt.bin_table.empty()) {
        atomic_write(opt.bin_table, bt.str());
        manifest.outputs.push_back(opt.bin_table);
    }
    manifest.timings_ms["write_ms"] = write_timer.ms();
    manifest.write(opt.output);

    std::cout << name << ": n=" << report.n << " ece=" << trajcal::format_double(report.ece)
              << " brier=" << trajcal::format_double(report.brier)
              << " auroc=" << trajcal::format_double(report.auroc) << " -> " << opt.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// baselines
// ---------------------------------------------------------------------------

struct BaselineOpts {
    std::string input, output, scores;
    double fit_frac = 0.2;
    std::uint64_t seed = trajcal::kDefaultSeed;
    std::size_t bins = trajcal::kDefaultBins;
};

int cmd_baselines(const BaselineOpts& opt) {
    Manifest manifest;
    manifest.command = "baselines";
    manifest.inputs = {opt.input};
    manifest.seed = opt.seed;
    manifest.config = {{"fit_frac", opt.fit_frac}, {"bins", opt.bins}};

    Stopwatch read_timer;
    const trajcal::TraceFile file = parse_trace_file(opt.input);
    manifest.timings_ms["read_ms"] = read_timer.ms();
    if (file.trajectories.empty()) throw CommandFailure{kExitParse, "trace file has no records"};

    std::vector<int> labels;
    std::vector<double> last_step, global_trace;
    for (const auto& t : file.trajectories) {
        if (!t.label) {
            throw CommandFailure{kExitParse, "trajectory '" + t.id + "' has no label"};
        }
        labels.push_back(*t.label);
        last_step.push_back(trajcal::last_step_confidence(t));
        global_trace.push_back(trajcal::global_trace_confidence(t));
    }

    Stopwatch fit_timer;
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto [fit_idx, eval_idx] =
        trajcal::stratified_split(all, labels, opt.fit_frac, opt.seed);
    if (fit_idx.empty() || eval_idx.empty()) {
        throw CommandFailure{kExitCompute, "fit fraction leaves an empty split"};
    }

    auto gather_d = [](const std::vector<double>& xs, const std::vector<std::size_t>& idx) {
        std::vector<double> out;
        for (std::size_t i : idx) out.push_back(xs[i]);
        return out;
    };
    auto gather_i = [](const std::vector<int>& xs, const std::vector<std::size_t>& idx) {
        std::vector<int> out;
        for (std::size_t i : idx) out.push_back(xs[i]);
        return out;
    };

    json methods = json::object();
    json scores_rows = json::array();
    std::ostringstream scores_csv;
    scores_csv << "id,method,raw_confidence,scaled_confidence\n";
    try {
        const std::vector<int> fit_y = gather_i(labels, fit_idx);
        const std::vector<int> eval_y = gather_i(labels, eval_idx);
        struct Entry {
            const char* name;
            const std::vector<double>* raw;
        };
        for (const Entry& entry : {Entry{"laststep_tp", &last_step}, Entry{"globaltrace_tp", &global_trace}}) {
            const auto temp =
                trajcal::fit_temperature(gather_d(*entry.raw, fit_idx), fit_y);
            trajcal::PredictionSet raw_set{gather_d(*entry.raw, eval_idx), eval_y};
            trajcal::PredictionSet scaled_set = raw_set;
            for (double& c : scaled_set.confidences) c = trajcal::apply_temperature(c, temp);
            methods[entry.name] = trajcal::eval_report_to_json(trajcal::evaluate(raw_set, opt.bins));
            json scaled = trajcal::eval_report_to_json(trajcal::evaluate(scaled_set, opt.bins));
            scaled["temperature"] = temp.temperature;
            methods[std::string(entry.name) + "_temp"] = std::move(scaled);
            for (std::size_t r = 0; r < eval_idx.size(); ++r) {
                scores_csv << file.trajectories[eval_idx[r]].id << ',' << entry.name << ','
                           << trajcal::format_double(raw_set.confidences[r]) << ','
                           << trajcal::format_double(scaled_set.confidences[r]) << '\n';
            }
        }
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitCompute, e.what()};
    }
    manifest.timings_ms["fit_eval_ms"] = fit_timer.ms();

    json out;
    out["n_fit"] = fit_idx.size();
    out["n_eval"] = eval_idx.size();
    out["methods"] = std::move(methods);
    Stopwatch write_timer;
    atomic_write(opt.output, out.dump(2) + "\n");
    manifest.outputs = {opt.output};
    if (!opt.scores.empty()) {
        atomic_write(opt.scores, scores_csv.str());
        manifest.outputs.push_back(opt.scores);
    }
    manifest.timings_ms["write_ms"] = write_timer.ms();
    manifest.write(opt.output);
    std::cout << "baselines: fit on " << fit_idx.size() << ", evaluated on " << eval_idx.size()
              << " -> " << opt.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string config, output, sidecar;
};

int cmd_synth(const SynthOpts& opt) {
    Manifest manifest;
    manifest.command = "synth";
    manifest.inputs = {opt.config};

    trajcal::GenConfig cfg;
    try {
        cfg = trajcal::gen_config_from_json(json::parse(read_file(opt.config)));
    } catch (const json::exception& e) {
        throw CommandFailure{kExitParse, std::string("bad generator config: ") + e.what()};
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitParse, e.what()};
    }
    manifest.seed = cfg.seed;
    manifest.config = {{"n_trajectories", cfg.n_trajectories},
                       {"steps_range", {cfg.steps_min, cfg.steps_max}},
                       {"tokens_range", {cfg.tokens_min, cfg.tokens_max}},
                       {"noise", cfg.noise},
                       {"leak", cfg.leak},
                       {"k", cfg.k}};

    Stopwatch gen_timer;
    std::vector<trajcal::SyntheticRecord> records;
    try {
        records = trajcal::generate(cfg);
    } catch (const trajcal::Error& e) {
        throw CommandFailure{kExitCompute, e.what()};
    }
    manifest.timings_ms["generate_ms"] = gen_timer.ms();

    trajcal::TraceFile file;
    file.k = cfg.k;
    for (const auto& rec : records) file.trajectories.push_back(rec.trajectory);

    const std::string sidecar_path =
        opt.sidecar.empty() ? opt.output + ".sidecar.ndjson" : opt.sidecar;
    Stopwatch write_timer;
    const std::string trace_bytes = trajcal::serialize_trace_string(file);
    std::ostringstream side;
    trajcal::write_sidecar(side, records);
    atomic_write(opt.output, trace_bytes);
    atomic_write(sidecar_path, side.str());
    manifest.timings_ms["write_ms"] = write_timer.ms();
    manifest.outputs = {opt.output, sidecar_path};
    manifest.write(opt.output);
    std::cout << "synth: " << records.size() << " trajectories -> " << opt.output << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajcal: trajectory-confidence calibration toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", trajcal::kVersion);

    ExtractOpts ex;
    auto* extract = app.add_subcommand("extract", "trace file -> feature table");
    extract->add_option("--input", ex.input, "trace file (trajcal-trace)")->required();
    extract->add_option("--output", ex.output, "feature table to write")->required();
    extract->add_option("--k", ex.k_override, "expected top-k width (must match the file header)");
    extract->add_option("--categories", ex.categories,
                        "comma list of dynamics,position,stability,structure");
    extract->add_option("--prefix", ex.prefix, "use only the first M steps of each trajectory");

    TrainOpts tr;
    auto* train_cmd = app.add_subcommand("train", "feature table -> calibration model + CV report");
    train_cmd->add_option("--input", tr.inputs, "feature table")->required()->expected(1);
    train_cmd->add_option("--output", tr.output, "model file to write")->required();
    train_cmd->add_option("--penalty", tr.penalty, "l1 or l2")->required();
    auto* tr_alpha =
        train_cmd->add_option("--alpha", tr.alpha, "train at a single alpha instead of the grid");
    train_cmd->add_option("--grid", tr.grid, "comma list of alphas (default: published 15 values)")
        ->excludes(tr_alpha);
    train_cmd->add_option("--seed", tr.seed, "fold seed (default 42)");
    train_cmd->add_option("--folds", tr.folds, "fold count (default 5)");
    train_cmd->add_option("--bins", tr.bins, "reliability bins (default 10)");
    train_cmd->add_option("--report", tr.report, "CV report path (default: <output>.cv.json)");

    TrainOpts gc;
    auto* gac = app.add_subcommand("gac", "pooled pretraining over several feature tables");
    gac->add_option("--input", gc.inputs, "feature tables (repeat per source)")
        ->required()
        ->take_all();
    gac->add_option("--output", gc.output, "model file to write")->required();
    gac->add_option("--penalty", gc.penalty, "l1 or l2")->required();
    auto* gc_alpha =
        gac->add_option("--alpha", gc.alpha, "train at a single alpha instead of the grid");
    gac->add_option("--grid", gc.grid, "comma list of alphas (default: published 15 values)")
        ->excludes(gc_alpha);
    gac->add_option("--seed", gc.seed, "fold seed (default 42)");
    gac->add_option("--folds", gc.folds, "fold count (default 5)");
    gac->add_option("--bins", gc.bins, "reliability bins (default 10)");
    gac->add_option("--report", gc.report, "CV report path (default: <output>.cv.json)");

    EvalOpts ev;
    auto* eval_cmd = app.add_subcommand("eval", "score a feature table with a saved model");
    eval_cmd->add_option("--model", ev.model, "model file")->required();
    eval_cmd->add_option("--input", ev.input, "feature table with labels")->required();
    eval_cmd->add_option("--output", ev.output, "evaluation report (json)")->required();
    eval_cmd->add_option("--bins", ev.bins, "reliability bins (default 10)");
    eval_cmd->add_option("--bin-table", ev.bin_table, "also write the reliability bin table (csv)");

    EvalOpts tf;
    auto* transfer = app.add_subcommand("transfer", "zero-shot evaluation on a target table");
    transfer->add_option("--model", tf.model, "model file (source-trained)")->required();
    transfer->add_option("--input", tf.input, "target feature table")->required();
    transfer->add_option("--output", tf.output, "evaluation report (json)")->required();
    transfer->add_option("--bins", tf.bins, "reliability bins (default 10)");
    transfer->add_option("--bin-table", tf.bin_table, "also write the reliability bin table (csv)");

    BaselineOpts bl;
    auto* baselines = app.add_subcommand("baselines", "inference-only baselines on a trace file");
    baselines->add_option("--input", bl.input, "trace file with labels")->required();
    baselines->add_option("--output", bl.output, "report (json)")->required();
    baselines->add_option("--fit-frac", bl.fit_frac, "fraction used to fit temperature (default 0.2)");
    baselines->add_option("--seed", bl.seed, "split seed (default 42)");
    baselines->add_option("--bins", bl.bins, "reliability bins (default 10)");
    baselines->add_option("--scores", bl.scores, "also write per-trajectory scores (csv)");

    SynthOpts sy;
    auto* synth = app.add_subcommand("synth", "generate synthetic trajectories");
    synth->add_option("--config", sy.config, "generator config (json)")->required();
    synth->add_option("--output", sy.output, "trace file to write")->required();
    synth->add_option("--sidecar", sy.sidecar,
                      "ground-truth sidecar path (default: <output>.sidecar.ndjson)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (extract->parsed()) return cmd_extract(ex);
        if (train_cmd->parsed()) return run_training("train", tr);
        if (gac->parsed()) return run_training("gac", gc);
        if (eval_cmd->parsed()) return run_eval("eval", ev);
        if (transfer->parsed()) return run_eval("transfer", tf);
        if (baselines->parsed()) return cmd_baselines(bl);
        if (synth->parsed()) return cmd_synth(sy);
    } catch (const CommandFailure& f) {
        std::cerr << "trajcal: " << f.message << "\n";
        return f.code;
    } catch (const trajcal::Error& e) {
        std::cerr << "trajcal: " << e.what() << "\n";
        return kExitCompute;
    } catch (const std::exception& e) {
        std::cerr << "trajcal: unexpected error: " << e.what() << "\n";
        return kExitCompute;
    }
    return kExitUsage;
}
