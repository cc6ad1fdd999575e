#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evoad/feature_group.hpp"

namespace evoad {

using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Label : std::uint8_t { normal = 0, anomaly = 1 };

// Multivariate series: one row per time step, one column per feature.
struct TimeSeries {
    RowMatrix values;
    std::optional<std::vector<Label>> labels;
    std::vector<std::string> feature_names;
    std::optional<double> sample_period;

    Index n_points() const { return values.rows(); }
    Index n_features() const { return values.cols(); }
    bool has_anomalies() const;

    // Throws ValidationError when the invariants do not hold.
    void validate() const;

    // Rows [begin, end).
    TimeSeries slice(Index begin, Index end) const;
};

std::vector<std::string> default_feature_names(Index n_features);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// Header row required, one row per time step. When label_column is given the
// column is removed from the values and parsed as 0 = normal, 1 = anomaly.
TimeSeries load_csv(const std::string& path, const std::optional<std::string>& label_column = std::nullopt);

// Values are written in shortest round-trip form; labels (if any) go to a
// trailing column named label_column.
void write_csv(const std::string& path, const TimeSeries& ts, const std::string& label_column = "attack");

// ---------------------------------------------------------------------------
// Min-max normalization
// ---------------------------------------------------------------------------

struct NormStats {
    std::vector<double> min;
    std::vector<double> max;

    std::size_t size() const { return min.size(); }
    static NormStats identity(std::size_t n_features);
    NormStats restrict_to(const FeatureGroup& group) const;
};

NormStats fit_normalize(const TimeSeries& ts);
// (x - min) / (max - min); constant features map to 0. Values outside the
// fitted range are not clipped.
TimeSeries apply_normalize(const TimeSeries& ts, const NormStats& stats);
TimeSeries invert_normalize(const TimeSeries& ts, const NormStats& stats);

// ---------------------------------------------------------------------------
// Resampling and splitting
// ---------------------------------------------------------------------------

// Means over consecutive buckets of `ratio` points; a bucket is an anomaly if
// any member is. The trailing partial bucket is kept.
TimeSeries downsample(const TimeSeries& ts, Index ratio);

// Chronological split, the last val_fraction of points become validation.
// Throws if either side would have fewer than min_side_points points or if
// the input contains anomaly labels.
std::pair<TimeSeries, TimeSeries> split_train_val(const TimeSeries& ts, double val_fraction,
                                                  Index min_side_points = 1);

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

struct WindowBatch {
    // Row-major [n_windows][width][n_features].
    std::vector<double> windows;
    Index n_windows = 0;
    Index width = 0;
    Index stride = 1;
    Index n_features = 0;
    // Index of the last source point covered by each window.
    std::vector<Index> origin_index;

    const double* window_data(Index i) const { return windows.data() + i * width * n_features; }
    double at(Index window, Index step, Index feature) const {
        return windows[static_cast<std::size_t>((window * width + step) * n_features + feature)];
    }
};

// Window i covers points [i*stride, i*stride + width).
WindowBatch window(const TimeSeries& ts, Index width, Index stride = 1);

Index window_count(Index n_points, Index width, Index stride);

// Restricts the feature axis to the group's indices (ascending).
TimeSeries select_features(const TimeSeries& ts, const FeatureGroup& group);
WindowBatch select_features(const WindowBatch& batch, const FeatureGroup& group);

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

struct AnomalySegment {
    Index start = 0;  // in test-set coordinates
    Index end = 0;    // exclusive
    Index cluster = 0;
    double magnitude = 0.0;  // in per-feature standard deviations
};

struct SynthConfig {
    Index n_train = 20000;
    Index n_test = 5000;
    Index n_features = 30;
    Index n_clusters = 3;
    double intra_cluster_corr = 0.8;
    // Per-cluster override of intra_cluster_corr (empty, or one value per cluster).
    std::vector<double> cluster_corr;
    std::vector<AnomalySegment> anomaly_segments;
    std::uint64_t seed = 0;

    void validate() const;
    // Cluster that feature f belongs to; clusters are contiguous and the
    // remainder goes to the last one.
    Index cluster_of(Index feature) const;
    double corr_of_cluster(Index cluster) const;
};

// Each cluster shares a latent driver (two sinusoids plus an AR(1) component,
// unit variance); feature f = mean_f + sd_f * (sqrt(rho) * sign_f * driver +
// sqrt(1 - rho) * noise). The series is generated continuously and cut into
// train then test. Anomaly segments shift every feature of the affected cluster
// by magnitude * sd_f with an independent random sign per feature, which
// breaks the within-cluster correlation.
std::pair<TimeSeries, TimeSeries> synth_generate(const SynthConfig& cfg);

}  // namespace evoad
