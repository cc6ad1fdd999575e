#include "evoad/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "evoad/error.hpp"

namespace evoad {

using nlohmann::json;

namespace {

// Strict view of one JSON object: typed getters, and finish() rejects keys
// nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(path_ + " must be an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void integer(const std::string& key, Index& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) fail(key, "an integer");
            out = v->get<Index>();
        }
    }
    void count(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
                fail(key, "a non-negative integer");
            }
            out = v->get<std::size_t>();
        }
    }
    void seed(const std::string& key, std::uint64_t& out) {
        if (const json* v = find(key)) {
            const bool ok = v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0);
            if (!ok) fail(key, "a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void number(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) fail(key, "a number");
            out = v->get<double>();
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) fail(key, "true or false");
            out = v->get<bool>();
        }
    }
    void string(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) fail(key, "a string");
            out = v->get<std::string>();
        }
    }
    template <std::size_t N>
    void triple(const std::string& key, std::array<Index, N>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array() || v->size() != N) fail(key, "an array of " + std::to_string(N) + " integers");
            for (std::size_t i = 0; i < N; ++i) {
                if (!(*v)[i].is_number_integer()) fail(key, "an array of integers");
                out[i] = (*v)[i].get<Index>();
            }
        }
    }

    std::optional<ObjectReader> object(const std::string& key) {
        if (const json* v = find(key)) return ObjectReader(*v, path_ + "." + key);
        return std::nullopt;
    }

    const std::string& path() const { return path_; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.contains(item.key())) throw ValidationError("unknown config key " + path_ + "." + item.key());
        }
    }

private:
    [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
        throw ValidationError("config key " + path_ + "." + key + " must be " + expected);
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string resolve(const std::string& p, const std::filesystem::path& base) {
    if (p.empty() || base.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

void read_synth(ObjectReader& r, SynthConfig& s) {
    r.integer("n_train", s.n_train);
    r.integer("n_test", s.n_test);
    r.integer("n_features", s.n_features);
    r.integer("n_clusters", s.n_clusters);
    r.number("intra_cluster_corr", s.intra_cluster_corr);
    if (const json* v = r.find("cluster_corr")) {
        if (!v->is_array()) throw ValidationError("config key " + r.path() + ".cluster_corr must be an array");
        s.cluster_corr.clear();
        for (const auto& c : *v) {
            if (!c.is_number()) throw ValidationError("config key " + r.path() + ".cluster_corr must hold numbers");
            s.cluster_corr.push_back(c.get<double>());
        }
    }
    if (const json* v = r.find("anomaly_segments")) {
        if (!v->is_array()) throw ValidationError("config key " + r.path() + ".anomaly_segments must be an array");
        s.anomaly_segments.clear();
        for (std::size_t i = 0; i < v->size(); ++i) {
            ObjectReader seg((*v)[i], r.path() + ".anomaly_segments[" + std::to_string(i) + "]");
            AnomalySegment a;
            seg.integer("start", a.start);
            seg.integer("end", a.end);
            seg.integer("cluster", a.cluster);
            seg.number("magnitude", a.magnitude);
            seg.finish();
            s.anomaly_segments.push_back(a);
        }
    }
    r.finish();
}

void read_cnn(ObjectReader& r, CnnAeSpec& c) {
    r.integer("window", c.window);
    r.triple("kernel_sizes", c.kernel_sizes);
    r.triple("filters", c.filters);
    r.number("lr", c.lr);
    r.number("lrelu_slope", c.lrelu_slope);
    r.number("bn_epsilon", c.bn_epsilon);
    r.number("bn_momentum", c.bn_momentum);
    r.finish();
}

void read_usad(ObjectReader& r, UsadSpec& u) {
    r.integer("window", u.window);
    r.integer("hidden_dim", u.hidden_dim);
    r.integer("latent_dim", u.latent_dim);
    r.number("lr", u.lr);
    r.number("alpha", u.alpha);
    r.number("beta", u.beta);
    r.number("lrelu_slope", u.lrelu_slope);
    r.finish();
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

}  // namespace

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    ObjectReader root(j, "config");

    Index schema = -1;
    root.integer("schema_version", schema);
    if (schema != kConfigSchemaVersion) {
        throw ValidationError("config schema_version must be " + std::to_string(kConfigSchemaVersion) +
                              (schema < 0 ? " (missing)" : ", got " + std::to_string(schema)));
    }
    root.seed("seed", cfg.seed);
    root.string("output_dir", cfg.output_dir);
    cfg.output_dir = resolve(cfg.output_dir, base_dir);

    if (auto data = root.object("data")) {
        std::string source = "synth";
        data->string("source", source);
        if (source == "csv") {
            cfg.data.kind = DataSource::Kind::csv;
            data->string("train_csv", cfg.data.train_csv);
            data->string("test_csv", cfg.data.test_csv);
            data->string("label_column", cfg.data.label_column);
            cfg.data.train_csv = resolve(cfg.data.train_csv, base_dir);
            cfg.data.test_csv = resolve(cfg.data.test_csv, base_dir);
        } else if (source == "synth") {
            cfg.data.kind = DataSource::Kind::synth;
            if (auto synth = data->object("synth")) read_synth(*synth, cfg.data.synth);
        } else {
            throw ValidationError("config.data.source must be \"csv\" or \"synth\", got \"" + source + "\"");
        }
        data->finish();
    }

    if (auto pre = root.object("preprocess")) {
        pre->integer("downsample", cfg.preprocess.downsample);
        pre->number("val_fraction", cfg.preprocess.val_fraction);
        pre->boolean("normalize", cfg.preprocess.normalize);
        pre->finish();
    }

    if (auto model = root.object("model")) {
        std::string family = std::string(to_string(cfg.model.family));
        model->string("family", family);
        cfg.model.family = parse_model_family(family);
        model->integer("batch_size", cfg.model.batch_size);
        if (auto cnn = model->object("cnn")) read_cnn(*cnn, cfg.model.cnn);
        if (auto usad = model->object("usad")) read_usad(*usad, cfg.model.usad);
        model->finish();
    }

    if (auto evo = root.object("evolution")) {
        auto& e = cfg.evolution;
        evo->count("k", e.k);
        evo->number("p_m", e.p_m);
        evo->integer("generations", e.generations);
        evo->count("population", e.population);
        evo->count("parents", e.parents);
        evo->integer("fitness_epochs", e.fitness_epochs);
        evo->number("penalty_empty", e.penalty_empty);
        evo->number("init_reassign_prob", e.init_reassign_prob);
        evo->finish();
    }

    if (auto ens = root.object("ensemble")) {
        auto& e = cfg.ensemble;
        ens->integer("final_epochs", e.final_epochs);
        ens->number("percentile", e.percentile);
        std::string voting = e.voting.to_string();
        ens->string("voting", voting);
        e.voting = VotingRule::parse(voting);
        ens->boolean("point_adjust", e.point_adjust);
        ens->boolean("dump_scores", e.dump_scores);
        ens->finish();
    }
    root.finish();

    cfg.evolution.model = cfg.model;
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    require(schema_version == kConfigSchemaVersion, "unsupported config schema_version");
    require(!output_dir.empty(), "output_dir must not be empty");

    if (data.kind == DataSource::Kind::csv) {
        require(!data.train_csv.empty(), "data.train_csv is required for csv sources");
        require(!data.test_csv.empty(), "data.test_csv is required for csv sources");
        require(!data.label_column.empty(), "data.label_column must not be empty");
        for (const auto& p : {data.train_csv, data.test_csv}) {
            require(std::filesystem::is_regular_file(p), "data file not found: " + p);
        }
    } else {
        data.synth.validate();
        require(static_cast<Index>(evolution.k) <= data.synth.n_features,
                "evolution.k exceeds the number of synthetic features");
    }

    require(preprocess.downsample >= 1, "preprocess.downsample must be >= 1");
    require(preprocess.val_fraction > 0.0 && preprocess.val_fraction < 1.0, "preprocess.val_fraction must lie in (0, 1)");

    const auto& c = model.cnn;
    require(c.window >= 1, "model.cnn.window must be >= 1");
    for (std::size_t i = 0; i < 3; ++i) {
        require(c.kernel_sizes[i] >= 1, "model.cnn.kernel_sizes must be >= 1");
        require(c.filters[i] >= 1, "model.cnn.filters must be >= 1");
    }
    require(c.lr > 0.0 && std::isfinite(c.lr), "model.cnn.lr must be positive");
    require(c.lrelu_slope > 0.0 && c.lrelu_slope < 1.0, "model.cnn.lrelu_slope must lie in (0, 1)");
    require(c.bn_epsilon > 0.0, "model.cnn.bn_epsilon must be positive");
    require(c.bn_momentum > 0.0 && c.bn_momentum <= 1.0, "model.cnn.bn_momentum must lie in (0, 1]");
    const auto& u = model.usad;
    require(u.window >= 1, "model.usad.window must be >= 1");
    require(u.hidden_dim >= 0 && u.latent_dim >= 0, "model.usad layer sizes must be >= 0 (0 = default)");
    require(u.lr > 0.0 && std::isfinite(u.lr), "model.usad.lr must be positive");
    require(u.alpha >= 0.0 && u.beta >= 0.0, "model.usad.alpha and beta must be >= 0");
    require(u.lrelu_slope > 0.0 && u.lrelu_slope < 1.0, "model.usad.lrelu_slope must lie in (0, 1)");
    require(model.batch_size >= 1, "model.batch_size must be >= 1");

    evolution.validate();

    require(ensemble.final_epochs >= 1, "ensemble.final_epochs must be >= 1");
    require(ensemble.percentile > 50.0 && ensemble.percentile <= 100.0, "ensemble.percentile must lie in (50, 100]");
}

json config_to_json(const RunConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;

    json data;
    if (cfg.data.kind == DataSource::Kind::csv) {
        data["source"] = "csv";
        data["train_csv"] = cfg.data.train_csv;
        data["test_csv"] = cfg.data.test_csv;
        data["label_column"] = cfg.data.label_column;
    } else {
        const auto& s = cfg.data.synth;
        data["source"] = "synth";
        json segments = json::array();
        for (const auto& a : s.anomaly_segments) {
            segments.push_back({{"start", a.start}, {"end", a.end}, {"cluster", a.cluster}, {"magnitude", a.magnitude}});
        }
        data["synth"] = {{"n_train", s.n_train},
                         {"n_test", s.n_test},
                         {"n_features", s.n_features},
                         {"n_clusters", s.n_clusters},
                         {"intra_cluster_corr", s.intra_cluster_corr},
                         {"cluster_corr", s.cluster_corr},
                         {"anomaly_segments", segments}};
    }
    j["data"] = data;

    j["preprocess"] = {{"downsample", cfg.preprocess.downsample},
                       {"val_fraction", cfg.preprocess.val_fraction},
                       {"normalize", cfg.preprocess.normalize}};

    const auto& c = cfg.model.cnn;
    const auto& u = cfg.model.usad;
    j["model"] = {{"family", std::string(to_string(cfg.model.family))},
                  {"batch_size", cfg.model.batch_size},
                  {"cnn",
                   {{"window", c.window},
                    {"kernel_sizes", c.kernel_sizes},
                    {"filters", c.filters},
                    {"lr", c.lr},
                    {"lrelu_slope", c.lrelu_slope},
                    {"bn_epsilon", c.bn_epsilon},
                    {"bn_momentum", c.bn_momentum}}},
                  {"usad",
                   {{"window", u.window},
                    {"hidden_dim", u.hidden_dim},
                    {"latent_dim", u.latent_dim},
                    {"lr", u.lr},
                    {"alpha", u.alpha},
                    {"beta", u.beta},
                    {"lrelu_slope", u.lrelu_slope}}}};

    const auto& e = cfg.evolution;
    j["evolution"] = {{"k", e.k},
                      {"p_m", e.p_m},
                      {"generations", e.generations},
                      {"population", e.population},
                      {"parents", e.parents},
                      {"fitness_epochs", e.fitness_epochs},
                      {"penalty_empty", e.penalty_empty},
                      {"init_reassign_prob", e.init_reassign_prob}};

    j["ensemble"] = {{"final_epochs", cfg.ensemble.final_epochs},
                     {"percentile", cfg.ensemble.percentile},
                     {"voting", cfg.ensemble.voting.to_string()},
                     {"point_adjust", cfg.ensemble.point_adjust},
                     {"dump_scores", cfg.ensemble.dump_scores}};
    return j;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

std::string config_hash(const RunConfig& cfg) {
    auto j = config_to_json(cfg);
    j.erase("output_dir");
    const std::string canonical = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace evoad
