#include "evoad/autoencoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evoad/error.hpp"
#include "evoad/random.hpp"

namespace evoad {

using nn::Matrix;
using nn::Mode;
using nn::Network;
using nn::Tensor;

std::string_view to_string(ModelFamily family) {
    return family == ModelFamily::cnn1d ? "cnn1d" : "usad";
}

ModelFamily parse_model_family(std::string_view name) {
    if (name == "cnn1d") return ModelFamily::cnn1d;
    if (name == "usad") return ModelFamily::usad;
    throw ValidationError("unknown model family '" + std::string(name) + "' (expected cnn1d or usad)");
}

Index UsadSpec::resolved_hidden(Index n_features) const {
    return hidden_dim > 0 ? hidden_dim : std::max<Index>(1, input_dim(n_features) / 2);
}

Index UsadSpec::resolved_latent(Index n_features) const {
    return latent_dim > 0 ? latent_dim : std::max<Index>(5, input_dim(n_features) / 8);
}

nn::Network<float> build_cnn_ae(const CnnAeSpec& spec, Index n_features, std::uint64_t seed) {
    if (n_features < 1) throw ValidationError("autoencoder needs at least one feature");
    if (spec.window < 1) throw ValidationError("window must be positive");
    Rng rng(seed);
    std::vector<nn::Layer<float>> layers;
    Index channels = n_features;
    for (std::size_t i = 0; i < 3; ++i) {
        layers.emplace_back(
            nn::make_conv1d<float>(channels, spec.filters[i], nn::ConvGeometry::same(spec.kernel_sizes[i]), rng));
        layers.emplace_back(nn::make_lrelu<float>(spec.lrelu_slope));
        layers.emplace_back(nn::make_batchnorm1d<float>(spec.filters[i], spec.bn_epsilon, spec.bn_momentum));
        channels = spec.filters[i];
    }
    // Mirror: 256->128 (k3), 128->64 (k2), then 64->n_features (k1) as a
    // linear output layer.
    for (std::size_t i = 3; i-- > 0;) {
        const Index out = i > 0 ? spec.filters[i - 1] : n_features;
        layers.emplace_back(nn::make_transposed_conv1d<float>(channels, out,
                                                              nn::ConvGeometry::same(spec.kernel_sizes[i]), rng));
        if (i > 0) {
            layers.emplace_back(nn::make_lrelu<float>(spec.lrelu_slope));
            layers.emplace_back(nn::make_batchnorm1d<float>(out, spec.bn_epsilon, spec.bn_momentum));
        }
        channels = out;
    }
    return Network<float>(nn::Shape{spec.window, n_features}, std::move(layers));
}

UsadModel build_usad(const UsadSpec& spec, Index n_features, std::uint64_t seed) {
    if (n_features < 1) throw ValidationError("autoencoder needs at least one feature");
    const Index in = spec.input_dim(n_features);
    const Index hidden = spec.resolved_hidden(n_features);
    const Index latent = spec.resolved_latent(n_features);
    auto dense_stack = [&](std::initializer_list<Index> sizes, bool activate_last, std::uint64_t s) {
        Rng rng(s);
        std::vector<nn::Layer<float>> layers;
        const std::vector<Index> dims(sizes);
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            layers.emplace_back(nn::make_dense<float>(dims[i], dims[i + 1], rng));
            if (i + 2 < dims.size() || activate_last) layers.emplace_back(nn::make_lrelu<float>(spec.lrelu_slope));
        }
        return Network<float>(nn::Shape{1, dims.front()}, std::move(layers));
    };
    return UsadModel{dense_stack({in, hidden, latent}, true, derive_seed(seed, "usad/encoder")),
                     dense_stack({latent, hidden, in}, false, derive_seed(seed, "usad/decoder1")),
                     dense_stack({latent, hidden, in}, false, derive_seed(seed, "usad/decoder2"))};
}

// ---------------------------------------------------------------------------
// Minibatch assembly
// ---------------------------------------------------------------------------

namespace {

// Sequence layout (CNN): length = width, channels = features, time-major rows.
Tensor<float> sequence_tensor(const WindowBatch& batch, std::span<const Index> rows) {
    const auto b = static_cast<Index>(rows.size());
    Tensor<float> t;
    t.length = batch.width;
    t.data.resize(batch.width * b, batch.n_features);
    for (Index i = 0; i < b; ++i) {
        const double* src = batch.window_data(rows[static_cast<std::size_t>(i)]);
        for (Index s = 0; s < batch.width; ++s) {
            for (Index f = 0; f < batch.n_features; ++f) {
                t.data(s * b + i, f) = static_cast<float>(src[s * batch.n_features + f]);
            }
        }
    }
    return t;
}

// Flat layout (USAD): one row per window, width * features columns.
Tensor<float> flat_tensor(const WindowBatch& batch, std::span<const Index> rows) {
    const auto b = static_cast<Index>(rows.size());
    const Index dim = batch.width * batch.n_features;
    Tensor<float> t;
    t.length = 1;
    t.data.resize(b, dim);
    for (Index i = 0; i < b; ++i) {
        const double* src = batch.window_data(rows[static_cast<std::size_t>(i)]);
        for (Index k = 0; k < dim; ++k) t.data(i, k) = static_cast<float>(src[k]);
    }
    return t;
}

void check_batch(const WindowBatch& batch, Index expected_width, Index expected_features) {
    if (batch.n_windows < 1) throw ValidationError("training batch is empty");
    if (batch.width != expected_width || batch.n_features != expected_features) {
        throw ShapeError("window batch is " + std::to_string(batch.width) + " x " + std::to_string(batch.n_features) +
                         ", model expects " + std::to_string(expected_width) + " x " +
                         std::to_string(expected_features));
    }
}

void shuffle(std::vector<Index>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
}

template <typename Fn>
void for_each_minibatch(const std::vector<Index>& order, Index batch_size, Fn&& fn) {
    const auto n = static_cast<Index>(order.size());
    for (Index start = 0, b = 0; start < n; start += batch_size, ++b) {
        const Index count = std::min(batch_size, n - start);
        fn(b, std::span<const Index>(order.data() + start, static_cast<std::size_t>(count)));
    }
}

void check_finite(double loss, Index epoch, Index minibatch, const char* what) {
    if (!std::isfinite(loss)) {
        throw TrainingDiverged(std::string(what) + " became non-finite (" + std::to_string(loss) + ") at epoch " +
                               std::to_string(epoch) + ", minibatch " + std::to_string(minibatch));
    }
}

std::vector<Matrix<float>*> joined_parameters(Network<float>& a, Network<float>& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    pa.insert(pa.end(), pb.begin(), pb.end());
    return pa;
}

void accumulate(std::vector<Matrix<float>>& into, const std::vector<Matrix<float>>& add) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += add[i];
}

}  // namespace

std::vector<double> train_reconstruction(nn::Network<float>& net, const WindowBatch& batch,
                                         const TrainOptions& options) {
    const nn::Shape in = net.input_shape();
    const bool flat = in.length == 1 && batch.width * batch.n_features == in.channels;
    if (!flat) check_batch(batch, in.length, in.channels);
    if (batch.n_windows < 1) throw ValidationError("training batch is empty");
    if (options.batch_size < 1) throw ValidationError("batch size must be positive");

    Rng rng(derive_seed(options.seed, "shuffle"));
    nn::AdamState<float> adam;
    adam.lr = options.lr;
    std::vector<Index> order(static_cast<std::size_t>(batch.n_windows));
    std::iota(order.begin(), order.end(), Index{0});

    std::vector<double> history;
    for (Index epoch = 1; epoch <= options.epochs; ++epoch) {
        shuffle(order, rng);
        double total = 0.0;
        for_each_minibatch(order, options.batch_size, [&](Index b, std::span<const Index> rows) {
            const Tensor<float> x = flat ? flat_tensor(batch, rows) : sequence_tensor(batch, rows);
            auto fwd = net.forward(x, Mode::train);
            auto loss = nn::mse_loss(fwd.output, x);
            check_finite(loss.loss, epoch, b, "reconstruction loss");
            auto grads = net.backward(fwd.tape, loss.grad);
            nn::adam_step<float>(net.parameters(), grads.params, adam);
            net.commit_running_stats(fwd.tape);
            total += loss.loss * static_cast<double>(rows.size());
        });
        history.push_back(total / static_cast<double>(batch.n_windows));
    }
    return history;
}

UsadWeights usad_weights(Index epoch) {
    if (epoch < 1) throw ValidationError("USAD epochs are 1-based");
    const double r = 1.0 / static_cast<double>(epoch);
    return {r, 1.0 - r};
}

UsadHistory train_usad(UsadModel& model, const WindowBatch& batch, const TrainOptions& options) {
    if (options.epochs < 1) throw ValidationError("train_usad needs at least one epoch");
    if (batch.n_windows < 1) throw ValidationError("training batch is empty");
    if (batch.width * batch.n_features != model.encoder.input_shape().channels) {
        throw ShapeError("window batch does not match the USAD input size");
    }

    Rng rng(derive_seed(options.seed, "shuffle"));
    nn::AdamState<float> adam1;  // encoder + decoder1
    nn::AdamState<float> adam2;  // decoder2
    adam1.lr = adam2.lr = options.lr;
    std::vector<Index> order(static_cast<std::size_t>(batch.n_windows));
    std::iota(order.begin(), order.end(), Index{0});

    auto& E = model.encoder;
    auto& D1 = model.decoder1;
    auto& D2 = model.decoder2;

    UsadHistory history;
    for (Index epoch = 1; epoch <= options.epochs; ++epoch) {
        const auto w = usad_weights(epoch);
        const auto w_rec = static_cast<float>(w.reconstruction);
        const auto w_adv = static_cast<float>(w.adversarial);
        shuffle(order, rng);
        double total1 = 0.0;
        double total2 = 0.0;
        for_each_minibatch(order, options.batch_size, [&](Index b, std::span<const Index> rows) {
            const Tensor<float> x = flat_tensor(batch, rows);

            // Phase 1: E and D1.
            {
                auto e1 = E.forward(x, Mode::train);
                auto d1 = D1.forward(e1.output, Mode::train);
                auto rec = nn::mse_loss(d1.output, x);
                double loss1 = w.reconstruction * rec.loss;
                Tensor<float> d_ae1 = rec.grad;
                d_ae1.data *= w_rec;

                std::vector<Matrix<float>> grad_e_adv;
                if (w.adversarial > 0.0) {
                    auto e2 = E.forward(d1.output, Mode::train);
                    auto d2 = D2.forward(e2.output, Mode::train);
                    auto adv = nn::mse_loss(d2.output, x);
                    loss1 += w.adversarial * adv.loss;
                    adv.grad.data *= w_adv;
                    auto g_d2 = D2.backward(d2.tape, adv.grad);
                    auto g_e2 = E.backward(e2.tape, g_d2.input);
                    grad_e_adv = std::move(g_e2.params);
                    d_ae1.data += g_e2.input.data;
                }
                check_finite(loss1, epoch, b, "USAD AE1 loss");

                auto g_d1 = D1.backward(d1.tape, d_ae1);
                auto g_e1 = E.backward(e1.tape, g_d1.input);
                if (!grad_e_adv.empty()) accumulate(g_e1.params, grad_e_adv);

                std::vector<Matrix<float>> grads = std::move(g_e1.params);
                grads.insert(grads.end(), std::make_move_iterator(g_d1.params.begin()),
                             std::make_move_iterator(g_d1.params.end()));
                nn::adam_step<float>(joined_parameters(E, D1), grads, adam1);
                E.commit_running_stats(e1.tape);
                D1.commit_running_stats(d1.tape);
                total1 += loss1 * static_cast<double>(rows.size());
            }

            // Phase 2: D2 only, on the updated encoder and decoder1.
            {
                const auto z = E.forward(x, Mode::eval).output;
                auto d2a = D2.forward(z, Mode::train);
                auto rec = nn::mse_loss(d2a.output, x);
                double loss2 = w.reconstruction * rec.loss;
                rec.grad.data *= w_rec;
                auto grads = D2.backward(d2a.tape, rec.grad).params;
                if (w.adversarial > 0.0) {
                    const auto ae1 = D1.forward(z, Mode::eval).output;
                    const auto z2 = E.forward(ae1, Mode::eval).output;
                    auto d2b = D2.forward(z2, Mode::train);
                    auto adv = nn::mse_loss(d2b.output, x);
                    loss2 -= w.adversarial * adv.loss;
                    adv.grad.data *= -w_adv;
                    accumulate(grads, D2.backward(d2b.tape, adv.grad).params);
                }
                check_finite(loss2, epoch, b, "USAD AE2 loss");
                nn::adam_step<float>(D2.parameters(), grads, adam2);
                D2.commit_running_stats(d2a.tape);
                total2 += loss2 * static_cast<double>(rows.size());
            }
        });
        history.ae1_loss.push_back(total1 / static_cast<double>(batch.n_windows));
        history.ae2_loss.push_back(total2 / static_cast<double>(batch.n_windows));
    }
    return history;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

namespace {
constexpr Index kScoreChunk = 256;

template <typename Fn>
std::vector<double> chunked_scores(const WindowBatch& batch, Fn&& score_chunk) {
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(batch.n_windows));
    std::vector<Index> rows;
    for (Index start = 0; start < batch.n_windows; start += kScoreChunk) {
        const Index count = std::min(kScoreChunk, batch.n_windows - start);
        rows.resize(static_cast<std::size_t>(count));
        std::iota(rows.begin(), rows.end(), start);
        const auto chunk = score_chunk(std::span<const Index>(rows));
        scores.insert(scores.end(), chunk.begin(), chunk.end());
    }
    return scores;
}
}  // namespace

std::vector<double> cnn_window_scores(const nn::Network<float>& net, const WindowBatch& batch) {
    check_batch(batch, net.input_shape().length, net.input_shape().channels);
    return chunked_scores(batch, [&](std::span<const Index> rows) {
        const auto x = sequence_tensor(batch, rows);
        return nn::per_sample_mse(net.predict(x), x);
    });
}

std::vector<double> usad_window_scores(const UsadModel& model, const WindowBatch& batch, double alpha,
                                       double beta) {
    if (batch.n_windows < 1) throw ValidationError("no windows to score");
    if (batch.width * batch.n_features != model.encoder.input_shape().channels) {
        throw ShapeError("window batch does not match the USAD input size");
    }
    return chunked_scores(batch, [&](std::span<const Index> rows) {
        const auto x = flat_tensor(batch, rows);
        const auto ae1 = model.decoder1.predict(model.encoder.predict(x));
        const auto ae2_of_ae1 = model.decoder2.predict(model.encoder.predict(ae1));
        auto s1 = nn::per_sample_mse(ae1, x);
        const auto s2 = nn::per_sample_mse(ae2_of_ae1, x);
        for (std::size_t i = 0; i < s1.size(); ++i) s1[i] = alpha * s1[i] + beta * s2[i];
        return s1;
    });
}

std::vector<double> window_scores_to_points(std::span<const double> window_scores, std::span<const Index> origin_index,
                                            Index n_points) {
    if (window_scores.empty() || window_scores.size() != origin_index.size()) {
        throw ValidationError("window scores and origin indices must be non-empty and of equal length");
    }
    std::vector<double> points(static_cast<std::size_t>(n_points));
    std::size_t w = 0;
    double current = window_scores.front();
    for (Index p = 0; p < n_points; ++p) {
        while (w < origin_index.size() && origin_index[w] <= p) current = window_scores[w++];
        points[static_cast<std::size_t>(p)] = current;
    }
    return points;
}

TrainedSubmodel fit_submodel(const FeatureGroup& group, const TimeSeries& train, const NormStats& stats,
                             const ModelConfig& config, Index epochs, std::uint64_t seed) {
    TrainedSubmodel sub;
    sub.group = group;
    sub.config = config;
    sub.norm_stats = stats.restrict_to(group);
    sub.meta.epochs = epochs;
    sub.meta.seed = seed;

    const auto batch = window(select_features(train, group), config.window(), 1);
    const auto n_features = static_cast<Index>(group.size());
    const TrainOptions options{epochs, config.lr(), derive_seed(seed, "train"), config.batch_size};
    if (config.family == ModelFamily::cnn1d) {
        auto net = build_cnn_ae(config.cnn, n_features, derive_seed(seed, "init"));
        sub.meta.loss_history = train_reconstruction(net, batch, options);
        sub.model = std::move(net);
    } else {
        auto model = build_usad(config.usad, n_features, derive_seed(seed, "init"));
        if (epochs > 0) sub.meta.loss_history = train_usad(model, batch, options).ae1_loss;
        sub.model = std::move(model);
    }
    return sub;
}

std::vector<double> window_scores(const TrainedSubmodel& model, const WindowBatch& batch) {
    if (const auto* net = std::get_if<nn::Network<float>>(&model.model)) return cnn_window_scores(*net, batch);
    const auto& usad = std::get<UsadModel>(model.model);
    return usad_window_scores(usad, batch, model.config.usad.alpha, model.config.usad.beta);
}

double mean_reconstruction_loss(const TrainedSubmodel& model, const TimeSeries& normalized) {
    const auto batch = window(select_features(normalized, model.group), model.config.window(), 1);
    const auto scores = window_scores(model, batch);
    return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

std::vector<double> score(const TrainedSubmodel& model, const TimeSeries& raw) {
    if (!model.group.empty() && static_cast<Index>(model.group.back()) >= raw.n_features()) {
        throw ValidationError("series is missing feature " + std::to_string(model.group.back()) +
                              " required by a submodel");
    }
    const auto normalized = apply_normalize(select_features(raw, model.group), model.norm_stats);
    const auto batch = window(normalized, model.config.window(), 1);
    const auto scores = window_scores(model, batch);
    return window_scores_to_points(scores, batch.origin_index, raw.n_points());
}

}  // namespace evoad
