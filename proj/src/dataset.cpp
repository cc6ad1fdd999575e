#include "evoad/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "evoad/error.hpp"
#include "evoad/random.hpp"

namespace evoad {

bool TimeSeries::has_anomalies() const {
    return labels && std::any_of(labels->begin(), labels->end(), [](Label l) { return l == Label::anomaly; });
}

void TimeSeries::validate() const {
    if (n_points() < 1) throw ValidationError("time series has no points");
    if (n_features() < 1) throw ValidationError("time series has no features");
    if (labels && static_cast<Index>(labels->size()) != n_points()) {
        throw ValidationError("label count " + std::to_string(labels->size()) + " does not match point count " +
                              std::to_string(n_points()));
    }
    if (static_cast<Index>(feature_names.size()) != n_features()) {
        throw ValidationError("feature name count does not match feature count");
    }
    std::set<std::string> seen;
    for (const auto& name : feature_names) {
        if (!seen.insert(name).second) throw ValidationError("duplicate feature name '" + name + "'");
    }
}

TimeSeries TimeSeries::slice(Index begin, Index end) const {
    TimeSeries out;
    out.values = values.middleRows(begin, end - begin);
    if (labels) out.labels = std::vector<Label>(labels->begin() + begin, labels->begin() + end);
    out.feature_names = feature_names;
    out.sample_period = sample_period;
    return out;
}

std::vector<std::string> default_feature_names(Index n_features) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(n_features));
    for (Index i = 0; i < n_features; ++i) names.push_back("f" + std::to_string(i));
    return names;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

bool parse_double(std::string_view cell, double& out) {
    if (cell.empty()) return false;
    if (cell.front() == '+') cell.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

TimeSeries load_csv(const std::string& path, const std::optional<std::string>& label_column) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open CSV file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ValidationError("CSV file '" + path + "' is empty (header row required)");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    std::vector<std::string> header;
    for (auto cell : split_commas(line)) header.emplace_back(cell);

    std::optional<std::size_t> label_col;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (label_column && header[c] == *label_column) {
            label_col = c;
        } else {
            names.emplace_back(header[c]);
        }
    }
    if (label_column && !label_col) {
        throw ValidationError("CSV file '" + path + "' has no label column '" + *label_column + "'");
    }

    std::vector<double> flat;
    std::vector<Label> labels;
    Index row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw ValidationError("CSV '" + path + "' row " + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (label_col && c == *label_col) {
                if (cells[c] == "0") {
                    labels.push_back(Label::normal);
                } else if (cells[c] == "1") {
                    labels.push_back(Label::anomaly);
                } else {
                    throw ValidationError("CSV '" + path + "' row " + std::to_string(row) + ": label value '" +
                                          std::string(cells[c]) + "' is not 0 or 1");
                }
                continue;
            }
            double v = 0.0;
            if (!parse_double(cells[c], v)) {
                throw ValidationError("CSV '" + path + "' row " + std::to_string(row) + ", column '" +
                                      header[c] + "': cannot parse '" + std::string(cells[c]) +
                                      "' as a number");
            }
            flat.push_back(v);
        }
    }

    TimeSeries ts;
    const auto n_features = static_cast<Index>(names.size());
    ts.values = RowMatrix(row, n_features);
    std::copy(flat.begin(), flat.end(), ts.values.data());
    ts.feature_names = std::move(names);
    if (label_col) ts.labels = std::move(labels);
    ts.validate();
    return ts;
}

void write_csv(const std::string& path, const TimeSeries& ts, const std::string& label_column) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write CSV file '" + path + "'");
    for (Index c = 0; c < ts.n_features(); ++c) out << (c ? "," : "") << ts.feature_names[static_cast<std::size_t>(c)];
    if (ts.labels) out << ',' << label_column;
    out << '\n';
    for (Index r = 0; r < ts.n_points(); ++r) {
        for (Index c = 0; c < ts.n_features(); ++c) out << (c ? "," : "") << format_double(ts.values(r, c));
        if (ts.labels) out << ',' << ((*ts.labels)[static_cast<std::size_t>(r)] == Label::anomaly ? '1' : '0');
        out << '\n';
    }
    if (!out) throw RuntimeFailure("error while writing CSV file '" + path + "'");
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

NormStats NormStats::identity(std::size_t n_features) {
    return NormStats{std::vector<double>(n_features, 0.0), std::vector<double>(n_features, 1.0)};
}

NormStats NormStats::restrict_to(const FeatureGroup& group) const {
    NormStats out;
    for (FeatureIndex f : group) {
        if (f >= size()) throw ValidationError("feature " + std::to_string(f) + " outside normalization stats");
        out.min.push_back(min[f]);
        out.max.push_back(max[f]);
    }
    return out;
}

NormStats fit_normalize(const TimeSeries& ts) {
    NormStats stats;
    for (Index c = 0; c < ts.n_features(); ++c) {
        stats.min.push_back(ts.values.col(c).minCoeff());
        stats.max.push_back(ts.values.col(c).maxCoeff());
    }
    return stats;
}

namespace {
void check_stats(const TimeSeries& ts, const NormStats& stats) {
    if (static_cast<Index>(stats.size()) != ts.n_features() || stats.max.size() != stats.min.size()) {
        throw ShapeError("normalization stats cover " + std::to_string(stats.size()) + " features, series has " +
                         std::to_string(ts.n_features()));
    }
}
}  // namespace

TimeSeries apply_normalize(const TimeSeries& ts, const NormStats& stats) {
    check_stats(ts, stats);
    TimeSeries out = ts;
    for (Index c = 0; c < ts.n_features(); ++c) {
        const double lo = stats.min[static_cast<std::size_t>(c)];
        const double range = stats.max[static_cast<std::size_t>(c)] - lo;
        if (range > 0.0) {
            out.values.col(c) = (ts.values.col(c).array() - lo) / range;
        } else {
            out.values.col(c).setZero();
        }
    }
    return out;
}

TimeSeries invert_normalize(const TimeSeries& ts, const NormStats& stats) {
    check_stats(ts, stats);
    TimeSeries out = ts;
    for (Index c = 0; c < ts.n_features(); ++c) {
        const double lo = stats.min[static_cast<std::size_t>(c)];
        const double range = stats.max[static_cast<std::size_t>(c)] - lo;
        out.values.col(c) = ts.values.col(c).array() * range + lo;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling and splitting
// ---------------------------------------------------------------------------

TimeSeries downsample(const TimeSeries& ts, Index ratio) {
    if (ratio < 1) throw ValidationError("downsample ratio must be >= 1");
    const Index n_out = (ts.n_points() + ratio - 1) / ratio;
    TimeSeries out;
    out.values = RowMatrix(n_out, ts.n_features());
    out.feature_names = ts.feature_names;
    if (ts.sample_period) out.sample_period = *ts.sample_period * static_cast<double>(ratio);
    if (ts.labels) out.labels = std::vector<Label>(static_cast<std::size_t>(n_out), Label::normal);
    for (Index b = 0; b < n_out; ++b) {
        const Index begin = b * ratio;
        const Index count = std::min(ratio, ts.n_points() - begin);
        out.values.row(b) = ts.values.middleRows(begin, count).colwise().sum() / static_cast<double>(count);
        if (ts.labels) {
            for (Index i = begin; i < begin + count; ++i) {
                if ((*ts.labels)[static_cast<std::size_t>(i)] == Label::anomaly) {
                    (*out.labels)[static_cast<std::size_t>(b)] = Label::anomaly;
                }
            }
        }
    }
    return out;
}

std::pair<TimeSeries, TimeSeries> split_train_val(const TimeSeries& ts, double val_fraction, Index min_side_points) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must be in (0, 1)");
    if (ts.has_anomalies()) throw ValidationError("train/validation split requires anomaly-free data");
    const Index n = ts.n_points();
    const auto n_val = static_cast<Index>(std::llround(static_cast<double>(n) * val_fraction));
    const Index n_train = n - n_val;
    if (n_train < min_side_points || n_val < min_side_points) {
        throw ValidationError("split of " + std::to_string(n) + " points at fraction " + std::to_string(val_fraction) +
                              " leaves " + std::to_string(n_train) + "/" + std::to_string(n_val) +
                              " points, fewer than the required " + std::to_string(min_side_points));
    }
    return {ts.slice(0, n_train), ts.slice(n_train, n)};
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

Index window_count(Index n_points, Index width, Index stride) {
    if (width < 1 || stride < 1) throw ValidationError("window width and stride must be positive");
    if (width > n_points) {
        throw ValidationError("window width " + std::to_string(width) + " exceeds series length " +
                              std::to_string(n_points));
    }
    return (n_points - width) / stride + 1;
}

WindowBatch window(const TimeSeries& ts, Index width, Index stride) {
    WindowBatch batch;
    batch.n_windows = window_count(ts.n_points(), width, stride);
    batch.width = width;
    batch.stride = stride;
    batch.n_features = ts.n_features();
    batch.windows.resize(static_cast<std::size_t>(batch.n_windows * width * batch.n_features));
    batch.origin_index.resize(static_cast<std::size_t>(batch.n_windows));
    double* dst = batch.windows.data();
    for (Index w = 0; w < batch.n_windows; ++w) {
        const Index start = w * stride;
        // Rows of a row-major matrix are contiguous, so a window is one block.
        const double* src = ts.values.data() + start * ts.n_features();
        dst = std::copy(src, src + width * ts.n_features(), dst);
        batch.origin_index[static_cast<std::size_t>(w)] = start + width - 1;
    }
    return batch;
}

namespace {
void check_group(const FeatureGroup& group, Index n_features) {
    if (group.empty()) throw ValidationError("cannot select an empty feature group");
    if (static_cast<Index>(group.back()) >= n_features) {
        throw ValidationError("feature index " + std::to_string(group.back()) + " out of range for " +
                              std::to_string(n_features) + " features");
    }
}
}  // namespace

TimeSeries select_features(const TimeSeries& ts, const FeatureGroup& group) {
    check_group(group, ts.n_features());
    TimeSeries out;
    out.values = RowMatrix(ts.n_points(), static_cast<Index>(group.size()));
    for (std::size_t j = 0; j < group.size(); ++j) {
        out.values.col(static_cast<Index>(j)) = ts.values.col(static_cast<Index>(group[j]));
        out.feature_names.push_back(ts.feature_names[group[j]]);
    }
    out.labels = ts.labels;
    out.sample_period = ts.sample_period;
    return out;
}

WindowBatch select_features(const WindowBatch& batch, const FeatureGroup& group) {
    check_group(group, batch.n_features);
    WindowBatch out;
    out.n_windows = batch.n_windows;
    out.width = batch.width;
    out.stride = batch.stride;
    out.n_features = static_cast<Index>(group.size());
    out.origin_index = batch.origin_index;
    out.windows.reserve(static_cast<std::size_t>(out.n_windows * out.width * out.n_features));
    for (Index w = 0; w < batch.n_windows; ++w) {
        for (Index s = 0; s < batch.width; ++s) {
            for (FeatureIndex f : group) out.windows.push_back(batch.at(w, s, static_cast<Index>(f)));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (n_train < 1 || n_test < 1) throw ValidationError("synthetic train and test lengths must be positive");
    if (n_features < 1 || n_clusters < 1) throw ValidationError("synthetic feature and cluster counts must be positive");
    if (n_features < n_clusters) {
        throw ValidationError("n_features (" + std::to_string(n_features) + ") must be >= n_clusters (" +
                              std::to_string(n_clusters) + ")");
    }
    if (!(intra_cluster_corr >= 0.0 && intra_cluster_corr <= 1.0)) {
        throw ValidationError("intra_cluster_corr must be in [0, 1]");
    }
    if (!cluster_corr.empty() && static_cast<Index>(cluster_corr.size()) != n_clusters) {
        throw ValidationError("cluster_corr needs one value per cluster (" + std::to_string(n_clusters) + "), got " +
                              std::to_string(cluster_corr.size()));
    }
    for (double c : cluster_corr) {
        if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("cluster_corr values must be in [0, 1]");
    }
    for (const auto& s : anomaly_segments) {
        if (s.start < 0 || s.end > n_test || s.start >= s.end) {
            throw ValidationError("anomaly segment [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                  ") outside test range [0, " + std::to_string(n_test) + ")");
        }
        if (s.cluster < 0 || s.cluster >= n_clusters) {
            throw ValidationError("anomaly segment references cluster " + std::to_string(s.cluster));
        }
        if (!std::isfinite(s.magnitude)) throw ValidationError("anomaly magnitude must be finite");
    }
}

double SynthConfig::corr_of_cluster(Index cluster) const {
    return cluster_corr.empty() ? intra_cluster_corr : cluster_corr[static_cast<std::size_t>(cluster)];
}

Index SynthConfig::cluster_of(Index feature) const {
    const Index size = n_features / n_clusters;
    return std::min(feature / size, n_clusters - 1);
}

std::pair<TimeSeries, TimeSeries> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const Index n = cfg.n_train + cfg.n_test;
    Rng rng(derive_seed(cfg.seed, "synth/base"));

    struct Driver {
        double period_a, period_b, phase_a, phase_b;
    };
    std::vector<Driver> drivers;
    for (Index c = 0; c < cfg.n_clusters; ++c) {
        const double pa = rng.uniform(40.0, 200.0);
        drivers.push_back({pa, pa * rng.uniform(2.3, 3.7), rng.uniform(0.0, 2.0 * std::numbers::pi),
                           rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
    // Unit-variance latent per cluster: half periodic (variance 0.625 before
    // scaling), half AR(1) with stationary variance 1.
    constexpr double kAr = 0.98;
    const double ar_innovation = std::sqrt(1.0 - kAr * kAr);
    RowMatrix latent(n, cfg.n_clusters);
    for (Index c = 0; c < cfg.n_clusters; ++c) {
        const auto& d = drivers[static_cast<std::size_t>(c)];
        double ar = rng.normal();
        for (Index t = 0; t < n; ++t) {
            const double tt = static_cast<double>(t);
            const double periodic = std::sin(2.0 * std::numbers::pi * tt / d.period_a + d.phase_a) +
                                    0.5 * std::sin(2.0 * std::numbers::pi * tt / d.period_b + d.phase_b);
            latent(t, c) = std::sqrt(0.5 / 0.625) * periodic + std::sqrt(0.5) * ar;
            ar = kAr * ar + ar_innovation * rng.normal();
        }
    }

    std::vector<double> mean(static_cast<std::size_t>(cfg.n_features));
    std::vector<double> sd(mean.size());
    std::vector<double> sign(mean.size());
    for (std::size_t f = 0; f < mean.size(); ++f) {
        mean[f] = rng.uniform(-5.0, 5.0);
        sd[f] = rng.uniform(0.5, 3.0);
        sign[f] = rng.bernoulli(0.5) ? 1.0 : -1.0;
    }

    RowMatrix values(n, cfg.n_features);
    for (Index t = 0; t < n; ++t) {
        for (Index f = 0; f < cfg.n_features; ++f) {
            const auto fi = static_cast<std::size_t>(f);
            const Index c = cfg.cluster_of(f);
            const double rho = cfg.corr_of_cluster(c);
            const double z = latent(t, c);
            values(t, f) = mean[fi] + sd[fi] * (std::sqrt(rho) * sign[fi] * z + std::sqrt(1.0 - rho) * rng.normal());
        }
    }

    TimeSeries train;
    train.values = values.topRows(cfg.n_train);
    train.feature_names = default_feature_names(cfg.n_features);
    train.labels = std::vector<Label>(static_cast<std::size_t>(cfg.n_train), Label::normal);

    TimeSeries test;
    test.values = values.bottomRows(cfg.n_test);
    test.feature_names = train.feature_names;
    test.labels = std::vector<Label>(static_cast<std::size_t>(cfg.n_test), Label::normal);

    Rng anomaly_rng(derive_seed(cfg.seed, "synth/anomalies"));
    for (const auto& seg : cfg.anomaly_segments) {
        for (Index f = 0; f < cfg.n_features; ++f) {
            if (cfg.cluster_of(f) != seg.cluster) continue;
            const double direction = anomaly_rng.bernoulli(0.5) ? 1.0 : -1.0;
            const double shift = seg.magnitude * sd[static_cast<std::size_t>(f)] * direction;
            test.values.col(f).segment(seg.start, seg.end - seg.start).array() += shift;
        }
        for (Index t = seg.start; t < seg.end; ++t) (*test.labels)[static_cast<std::size_t>(t)] = Label::anomaly;
    }
    return {std::move(train), std::move(test)};
}

}  // namespace evoad
