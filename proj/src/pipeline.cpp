#include "evoad/pipeline.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "evoad/checkpoint.hpp"
#include "evoad/error.hpp"

namespace evoad {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t synth_seed(std::uint64_t master) { return derive_seed(master, "synth"); }
std::uint64_t evolution_seed(std::uint64_t master) { return derive_seed(master, "evolution"); }
std::uint64_t ensemble_seed(std::uint64_t master) { return derive_seed(master, "ensemble"); }

namespace {

void log_line(const RunOptions& options, const std::string& line) {
    if (options.log) *options.log << line << std::endl;
}

std::string fmt(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw RuntimeFailure("cannot create output directory " + dir.string() + ": " + ec.message());
    }
}

bool csv_has_column(const std::string& path, const std::string& column) {
    std::ifstream in(path);
    std::string header;
    if (!in || !std::getline(in, header)) return false;
    if (!header.empty() && header.back() == '\r') header.pop_back();
    std::stringstream ss(header);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell == column) return true;
    }
    return false;
}

json mean_summary(const std::vector<double>& scores, const std::optional<std::vector<Label>>& labels) {
    double sum = 0.0, sum_normal = 0.0, sum_anomaly = 0.0, max = 0.0;
    std::size_t n_normal = 0, n_anomaly = 0;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        sum += scores[t];
        max = std::max(max, scores[t]);
        if (labels && (*labels)[t] == Label::anomaly) {
            sum_anomaly += scores[t];
            ++n_anomaly;
        } else {
            sum_normal += scores[t];
            ++n_normal;
        }
    }
    json j{{"mean", scores.empty() ? 0.0 : sum / static_cast<double>(scores.size())}, {"max", max}};
    if (labels) {
        j["mean_normal"] = n_normal ? sum_normal / static_cast<double>(n_normal) : 0.0;
        j["mean_anomaly"] = n_anomaly ? sum_anomaly / static_cast<double>(n_anomaly) : 0.0;
    }
    return j;
}

void save_models(const EnsembleModel& ensemble, const fs::path& dir, const std::string& prefix) {
    ensure_dir(dir);
    for (std::size_t i = 0; i < ensemble.submodels.size(); ++i) {
        const auto& sub = ensemble.submodels[i];
        const std::string stem = (dir / (prefix + std::to_string(i))).string();
        if (const auto* net = std::get_if<nn::Network<float>>(&sub.model)) {
            nn::save_checkpoint(stem + ".ckpt", *net);
        } else {
            const auto& usad = std::get<UsadModel>(sub.model);
            nn::save_checkpoint(stem + ".encoder.ckpt", usad.encoder);
            nn::save_checkpoint(stem + ".decoder1.ckpt", usad.decoder1);
            nn::save_checkpoint(stem + ".decoder2.ckpt", usad.decoder2);
        }
    }
}

std::string scores_csv(const std::vector<std::vector<double>>& scores, const std::vector<Label>& labels,
                       const std::vector<Label>& pred) {
    std::string out = "point,label";
    for (std::size_t i = 0; i < scores.size(); ++i) out += ",score_" + std::to_string(i);
    out += ",prediction\n";
    for (std::size_t t = 0; t < labels.size(); ++t) {
        out += std::to_string(t) + ',' + (labels[t] == Label::anomaly ? '1' : '0');
        for (const auto& s : scores) out += ',' + fmt(s[t]);
        out += ',';
        out += pred[t] == Label::anomaly ? '1' : '0';
        out += '\n';
    }
    return out;
}

struct EvalOutcome {
    json section;
    std::string scores_csv;
};

EvalOutcome run_ensemble(const Partition& partition, const PreparedData& data, const RunConfig& cfg,
                         const RunOptions& options, bool adjust, const fs::path& model_dir,
                         const std::string& model_prefix) {
    auto ensemble = train_ensemble(partition, data.train, data.stats, cfg.model, cfg.ensemble.final_epochs,
                                   ensemble_seed(cfg.seed), options.jobs);
    ensemble.rule = cfg.ensemble.voting;
    calibrate_thresholds(ensemble, data.val_raw, cfg.ensemble.percentile, options.jobs);
    const auto scores = ensemble_scores(ensemble, data.test_raw, options.jobs);
    std::vector<double> thresholds;
    for (const auto& s : ensemble.submodels) thresholds.push_back(*s.threshold);
    const auto pred = vote_scores(scores, thresholds, ensemble.rule);
    const auto& truth = *data.test_raw.labels;

    json section;
    section["partition"] = partition_to_json(partition);
    section["voters"] = ensemble.submodels.size();
    json subs = json::array();
    for (std::size_t i = 0; i < ensemble.submodels.size(); ++i) {
        const auto& s = ensemble.submodels[i];
        subs.push_back({{"group", s.group.indices()},
                        {"threshold", *s.threshold},
                        {"final_train_loss", s.meta.loss_history.empty() ? 0.0 : s.meta.loss_history.back()},
                        {"test_scores", mean_summary(scores[i], data.test_raw.labels)}});
    }
    section["submodels"] = subs;
    section["metrics"] = metrics_to_json(evaluate(pred, truth));
    if (adjust) section["point_adjusted_metrics"] = metrics_to_json(evaluate(point_adjust(pred, truth), truth));
    section["log"] = ensemble.log;
    save_models(ensemble, model_dir, model_prefix);
    return {section, scores_csv(scores, truth, pred)};
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_double(const std::string& cell, const std::string& where) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || end != cell.data() + cell.size()) {
        throw ValidationError(where + ": '" + cell + "' is not a number");
    }
    return v;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + " is not valid JSON: " + e.what());
    }
}

}  // namespace

json partition_to_json(const Partition& p) {
    json groups = json::array();
    for (const auto& g : p.groups) groups.push_back(g.indices());
    return groups;
}

json metrics_to_json(const Metrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
            {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}, {"tn", m.tn}};
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write " + tmp);
        out << content;
        out.flush();
        if (!out) throw RuntimeFailure("failed writing " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw RuntimeFailure("cannot move " + tmp + " to " + path + ": " + ec.message());
}

std::pair<TimeSeries, TimeSeries> load_dataset(const RunConfig& cfg) {
    if (cfg.data.kind == DataSource::Kind::synth) {
        SynthConfig s = cfg.data.synth;
        s.seed = synth_seed(cfg.seed);
        return synth_generate(s);
    }
    const auto& d = cfg.data;
    auto label_if_present = [&](const std::string& path) -> std::optional<std::string> {
        return csv_has_column(path, d.label_column) ? std::optional(d.label_column) : std::nullopt;
    };
    TimeSeries train = load_csv(d.train_csv, label_if_present(d.train_csv));
    TimeSeries test = load_csv(d.test_csv, label_if_present(d.test_csv));
    if (train.n_features() != test.n_features()) {
        throw ValidationError("train CSV has " + std::to_string(train.n_features()) + " features, test CSV has " +
                              std::to_string(test.n_features()));
    }
    return {std::move(train), std::move(test)};
}

PreparedData prepare_data(const RunConfig& cfg) {
    auto [train, test] = load_dataset(cfg);
    if (static_cast<Index>(cfg.evolution.k) > train.n_features()) {
        throw ValidationError("evolution.k = " + std::to_string(cfg.evolution.k) + " exceeds the " +
                              std::to_string(train.n_features()) + " features of the dataset");
    }
    PreparedData out;
    train = downsample(train, cfg.preprocess.downsample);
    out.test_raw = downsample(test, cfg.preprocess.downsample);
    std::tie(out.train_raw, out.val_raw) =
        split_train_val(train, cfg.preprocess.val_fraction, cfg.model.window());
    out.stats = cfg.preprocess.normalize ? fit_normalize(out.train_raw)
                                         : NormStats::identity(static_cast<std::size_t>(train.n_features()));
    out.train = apply_normalize(out.train_raw, out.stats);
    out.val = apply_normalize(out.val_raw, out.stats);
    return out;
}

json cmd_synth(const RunConfig& cfg, const RunOptions& options) {
    if (cfg.data.kind != DataSource::Kind::synth) throw ValidationError("synth needs data.source = \"synth\"");
    const fs::path dir(cfg.output_dir);
    ensure_dir(dir);
    auto [train, test] = load_dataset(cfg);
    write_csv((dir / "train.csv").string(), train, cfg.data.label_column);
    write_csv((dir / "test.csv").string(), test, cfg.data.label_column);

    const auto& s = cfg.data.synth;
    json segments = json::array();
    for (const auto& a : s.anomaly_segments) {
        segments.push_back({{"start", a.start}, {"end", a.end}, {"cluster", a.cluster}, {"magnitude", a.magnitude}});
    }
    json clusters = json::array();
    for (Index f = 0; f < s.n_features; ++f) clusters.push_back(s.cluster_of(f));
    json manifest{{"config_hash", config_hash(cfg)},
                  {"seed", cfg.seed},
                  {"synth_seed", synth_seed(cfg.seed)},
                  {"files", {"train.csv", "test.csv"}},
                  {"label_column", cfg.data.label_column},
                  {"n_train", s.n_train},
                  {"n_test", s.n_test},
                  {"n_features", s.n_features},
                  {"feature_cluster", clusters},
                  {"anomaly_segments", segments}};
    write_file_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    log_line(options, "wrote " + (dir / "train.csv").string() + " and " + (dir / "test.csv").string());
    return manifest;
}

json cmd_evolve(const RunConfig& cfg, const RunOptions& options) {
    const fs::path dir(cfg.output_dir);
    const auto data = prepare_data(cfg);
    ensure_dir(dir);
    write_file_atomic((dir / "config.json").string(), config_to_json(cfg).dump(2) + "\n");

    EvolutionConfig ecfg = cfg.evolution;
    ecfg.model = cfg.model;
    ecfg.seed = evolution_seed(cfg.seed);
    ecfg.jobs = options.jobs;
    const std::string hash = config_hash(cfg);

    auto log_json = [&](const std::vector<GenerationLog>& history, bool complete) {
        json gens = json::array();
        std::size_t best = 0;
        for (std::size_t g = 0; g < history.size(); ++g) {
            const auto& h = history[g];
            json pop = json::array();
            for (const auto& p : h.population) pop.push_back(partition_to_json(p));
            gens.push_back({{"generation", h.generation},
                            {"fitness", h.fitness},
                            {"population", pop},
                            {"best_partition", partition_to_json(h.best)},
                            {"best_fitness", h.best_fitness},
                            {"best_so_far", h.best_so_far},
                            {"duration_seconds", h.duration_seconds},
                            {"events", h.events}});
            if (h.best_fitness > history[best].best_fitness) best = g;
        }
        json j{{"config_hash", hash}, {"complete", complete}, {"generations", gens}};
        if (!history.empty()) {
            j["base_partition"] = partition_to_json(history.front().population.front());
            j["base_fitness"] = history.front().fitness.front();
            j["best_partition"] = partition_to_json(history[best].best);
            j["best_fitness"] = history[best].best_fitness;
            j["best_generation"] = history[best].generation;
        }
        return j;
    };
    auto fitness_csv = [](const std::vector<GenerationLog>& history) {
        std::string out = "generation,solution,fitness,non_empty_groups\n";
        for (const auto& h : history) {
            for (std::size_t i = 0; i < h.fitness.size(); ++i) {
                out += std::to_string(h.generation) + ',' + std::to_string(i) + ',' + fmt(h.fitness[i]) + ',' +
                       std::to_string(h.population[i].non_empty_groups()) + '\n';
            }
        }
        return out;
    };

    auto on_generation = [&](const std::vector<GenerationLog>& history) {
        const auto& h = history.back();
        write_file_atomic((dir / "generation_log.json").string(), log_json(history, false).dump(2) + "\n");
        write_file_atomic((dir / "fitness.csv").string(), fitness_csv(history));
        log_line(options, "generation " + std::to_string(h.generation) + ": best " + fmt(h.best_fitness) +
                              ", best so far " + fmt(h.best_so_far) + " (" + fmt(h.duration_seconds) + " s)");
        for (const auto& e : h.events) log_line(options, "  " + e);
    };

    const auto result = evolve(data.train, data.val, ecfg, on_generation);
    save_partition((dir / "best_partition.txt").string(), result.best);
    const json summary = log_json(result.history, true);
    write_file_atomic((dir / "generation_log.json").string(), summary.dump(2) + "\n");
    log_line(options, "best partition " + result.best.to_string() + " fitness " + fmt(result.best_fitness));
    return summary;
}

json cmd_train_eval(const RunConfig& cfg, const RunOptions& options) {
    const fs::path dir(cfg.output_dir);
    const std::string partition_path =
        options.partition_path ? *options.partition_path : (dir / "best_partition.txt").string();
    if (!fs::is_regular_file(partition_path)) throw ValidationError("partition file not found: " + partition_path);
    const Partition partition = load_partition(partition_path);

    const auto data = prepare_data(cfg);
    if (!data.test_raw.labels) throw ValidationError("test data has no '" + cfg.data.label_column + "' labels");
    partition.validate(partition.k(), static_cast<std::size_t>(data.train.n_features()));
    ensure_dir(dir);

    const bool pa = cfg.ensemble.point_adjust || options.point_adjust;
    json report{{"config_hash", config_hash(cfg)},
                {"model_family", std::string(to_string(cfg.model.family))},
                {"voting", cfg.ensemble.voting.to_string()},
                {"percentile", cfg.ensemble.percentile},
                {"final_epochs", cfg.ensemble.final_epochs},
                {"test_points", data.test_raw.n_points()},
                {"test_anomalies", std::count(data.test_raw.labels->begin(), data.test_raw.labels->end(),
                                              Label::anomaly)}};

    log_line(options, "training ensemble on " + partition.to_string());
    auto ens = run_ensemble(partition, data, cfg, options, pa, dir / "models", "submodel_");
    report["ensemble"] = ens.section;
    if (cfg.ensemble.dump_scores) write_file_atomic((dir / "scores.csv").string(), ens.scores_csv);
    log_line(options, "ensemble F1 " + fmt(ens.section["metrics"]["f1"].get<double>()));

    if (options.baseline) {
        const Partition mono{{FeatureGroup::all(static_cast<std::size_t>(data.train.n_features()))}};
        log_line(options, "training monolithic baseline");
        auto base = run_ensemble(mono, data, cfg, options, pa, dir / "models", "baseline_");
        report["baseline"] = base.section;
        if (cfg.ensemble.dump_scores) write_file_atomic((dir / "baseline_scores.csv").string(), base.scores_csv);
        log_line(options, "baseline F1 " + fmt(base.section["metrics"]["f1"].get<double>()));
    }
    write_file_atomic((dir / "report.json").string(), report.dump(2) + "\n");
    return report;
}

json cmd_evaluate(const RunConfig& cfg, const RunOptions& options) {
    const fs::path scores_path = options.scores_path ? fs::path(*options.scores_path) : fs::path(cfg.output_dir) / "scores.csv";
    const fs::path report_path = scores_path.parent_path() / "report.json";
    const json report = read_json(report_path);
    if (!report.contains("ensemble")) throw ValidationError(report_path.string() + " has no ensemble section");
    std::vector<double> thresholds;
    for (const auto& s : report["ensemble"]["submodels"]) thresholds.push_back(s["threshold"].get<double>());

    std::ifstream in(scores_path);
    if (!in) throw ValidationError("cannot open score dump " + scores_path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(scores_path.string() + " is empty");
    const auto header = split_csv_line(line);
    const std::size_t v = thresholds.size();
    if (header.size() != v + 3 || header[1] != "label") {
        throw ValidationError(scores_path.string() + " does not match the " + std::to_string(v) +
                              " submodels listed in " + report_path.string());
    }
    std::vector<std::vector<double>> scores(v);
    std::vector<Label> truth;
    for (std::size_t row = 1; std::getline(in, line); ++row) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string where = scores_path.string() + " row " + std::to_string(row);
        if (cells.size() != header.size()) throw ValidationError(where + ": wrong number of columns");
        if (cells[1] != "0" && cells[1] != "1") throw ValidationError(where + ": label must be 0 or 1");
        truth.push_back(cells[1] == "1" ? Label::anomaly : Label::normal);
        for (std::size_t i = 0; i < v; ++i) scores[i].push_back(parse_double(cells[2 + i], where));
    }
    if (truth.empty()) throw ValidationError(scores_path.string() + " has no data rows");

    const auto pred = vote_scores(scores, thresholds, cfg.ensemble.voting);
    json out{{"scores", scores_path.string()},
             {"voting", cfg.ensemble.voting.to_string()},
             {"metrics", metrics_to_json(evaluate(pred, truth))}};
    if (cfg.ensemble.point_adjust || options.point_adjust) {
        out["point_adjusted_metrics"] = metrics_to_json(evaluate(point_adjust(pred, truth), truth));
    }
    write_file_atomic((scores_path.parent_path() / "evaluation.json").string(), out.dump(2) + "\n");
    log_line(options, "F1 " + fmt(out["metrics"]["f1"].get<double>()));
    return out;
}

}  // namespace evoad
