#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "evoad/dataset.hpp"
#include "evoad/nn.hpp"

namespace evoad {

enum class ModelFamily { cnn1d, usad };

std::string_view to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view name);

// 1D convolutional autoencoder: three conv stages with same padding, each
// followed by LReLU and batchnorm, mirrored by transposed convolutions.
struct CnnAeSpec {
    Index window = 4;
    std::array<Index, 3> kernel_sizes{8, 6, 4};
    std::array<Index, 3> filters{64, 128, 256};
    double lr = 0.01;
    double lrelu_slope = 0.01;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
};

// Dense adversarial autoencoder pair sharing one encoder. Zero sizes select
// the defaults: hidden = in / 2, latent = max(5, in / 8), where in is the
// flattened window size.
struct UsadSpec {
    Index window = 12;
    Index hidden_dim = 0;
    Index latent_dim = 0;
    double lr = 1e-3;
    double alpha = 0.5;  // anomaly score weight of the AE1 reconstruction error
    double beta = 0.5;   // anomaly score weight of the AE2(AE1) error
    double lrelu_slope = 0.01;

    Index input_dim(Index n_features) const { return window * n_features; }
    Index resolved_hidden(Index n_features) const;
    Index resolved_latent(Index n_features) const;
};

struct ModelConfig {
    ModelFamily family = ModelFamily::cnn1d;
    CnnAeSpec cnn;
    UsadSpec usad;
    Index batch_size = 32;

    Index window() const { return family == ModelFamily::cnn1d ? cnn.window : usad.window; }
    double lr() const { return family == ModelFamily::cnn1d ? cnn.lr : usad.lr; }
};

nn::Network<float> build_cnn_ae(const CnnAeSpec& spec, Index n_features, std::uint64_t seed);

struct UsadModel {
    nn::Network<float> encoder;
    nn::Network<float> decoder1;
    nn::Network<float> decoder2;
};

UsadModel build_usad(const UsadSpec& spec, Index n_features, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
    Index epochs = 15;
    double lr = 0.01;
    std::uint64_t seed = 0;  // minibatch shuffling
    Index batch_size = 32;
};

// Adam on the mean squared reconstruction error over shuffled minibatches.
// Returns the per-epoch mean training loss. Throws TrainingDiverged on a
// non-finite loss.
std::vector<double> train_reconstruction(nn::Network<float>& net, const WindowBatch& batch,
                                         const TrainOptions& options);

// Loss weights at 1-based epoch n: reconstruction 1/n, adversarial 1 - 1/n.
struct UsadWeights {
    double reconstruction;
    double adversarial;
};
UsadWeights usad_weights(Index epoch);

struct UsadHistory {
    std::vector<double> ae1_loss;
    std::vector<double> ae2_loss;
};

// Two-phase training per minibatch, with AE1 = D1(E(W)), AE2 = D2(E(W)):
//   phase 1 updates E and D1 on  w_r * mse(W, AE1) + w_a * mse(W, AE2(AE1))
//   phase 2 updates D2 on        w_r * mse(W, AE2) - w_a * mse(W, AE2(AE1))
// Only phase 1 moves the shared encoder, so with w_a = 0 (epoch 1) the AE1
// trajectory is exactly that of train_reconstruction on D1(E(.)).
UsadHistory train_usad(UsadModel& model, const WindowBatch& batch, const TrainOptions& options);

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

std::vector<double> cnn_window_scores(const nn::Network<float>& net, const WindowBatch& batch);
std::vector<double> usad_window_scores(const UsadModel& model, const WindowBatch& batch, double alpha,
                                       double beta);

// Each window's score goes to its last point. Points between window ends keep
// the most recent score; points before the first window end take the first score.
std::vector<double> window_scores_to_points(std::span<const double> window_scores, std::span<const Index> origin_index,
                                            Index n_points);

struct TrainMeta {
    Index epochs = 0;
    std::vector<double> loss_history;  // AE1 loss for usad
    std::uint64_t seed = 0;
};

struct TrainedSubmodel {
    FeatureGroup group;
    ModelConfig config;
    std::variant<nn::Network<float>, UsadModel> model;
    NormStats norm_stats;  // restricted to group
    std::optional<double> threshold;
    TrainMeta meta;

    ModelFamily family() const { return config.family; }
};

// Trains a fresh model of the configured family on `train` (already
// normalized with `stats`, all features) restricted to `group`. The network
// initialization and shuffling streams are derived from `seed`.
TrainedSubmodel fit_submodel(const FeatureGroup& group, const TimeSeries& train, const NormStats& stats,
                             const ModelConfig& config, Index epochs, std::uint64_t seed);

// Per-window scores on a series that is already normalized and restricted to
// the submodel's group.
std::vector<double> window_scores(const TrainedSubmodel& model, const WindowBatch& batch);

// Mean per-window reconstruction score on normalized data (all features).
double mean_reconstruction_loss(const TrainedSubmodel& model, const TimeSeries& normalized);

// Per-point anomaly scores for a raw (unnormalized) series holding all
// features of the dataset; normalization is applied internally.
std::vector<double> score(const TrainedSubmodel& model, const TimeSeries& raw);

}  // namespace evoad
