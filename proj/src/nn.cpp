#include "evoad/nn.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "evoad/error.hpp"

namespace evoad::nn {

std::string Shape::to_string() const {
    return "(" + std::to_string(length) + " x " + std::to_string(channels) + ")";
}

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::transposed_conv1d: return "transposed_conv1d";
        case LayerKind::batchnorm1d: return "batchnorm1d";
        case LayerKind::lrelu: return "lrelu";
    }
    return "unknown";
}

ConvGeometry ConvGeometry::same(Index kernel) {
    ConvGeometry g;
    g.kernel = kernel;
    g.pad_left = (kernel - 1) / 2;
    g.pad_right = kernel - 1 - g.pad_left;
    return g;
}

Index conv_output_length(Index input_length, const ConvGeometry& g) {
    const Index padded = input_length + g.pad_left + g.pad_right;
    if (padded < g.kernel) return 0;
    return (padded - g.kernel) / g.stride + 1;
}

Index transposed_conv_output_length(Index input_length, const ConvGeometry& g) {
    return (input_length - 1) * g.stride - g.pad_left - g.pad_right + g.kernel + g.output_padding;
}

namespace {

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

template <typename T>
Matrix<T> uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
    Matrix<T> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    return m;
}

void check_geometry(const ConvGeometry& g) {
    if (g.kernel < 1 || g.stride < 1 || g.pad_left < 0 || g.pad_right < 0 || g.output_padding < 0) {
        throw ShapeError("invalid convolution geometry");
    }
}

// ---------------------------------------------------------------------------
// Convolution tap bookkeeping
// ---------------------------------------------------------------------------

// A run of `count` consecutive (in, out) position pairs linked by one tap.
struct TapRun {
    Index in_pos;
    Index out_pos;
    Index count;
};

// For each tap, the (in, out) position pairs it connects. With stride 1 a tap
// links one contiguous run, so each run becomes a single GEMM over count*B rows.
std::vector<std::vector<TapRun>> tap_runs(Index in_len, Index out_len, const ConvGeometry& g, bool transposed) {
    std::vector<std::vector<TapRun>> runs(static_cast<std::size_t>(g.kernel));
    for (Index j = 0; j < g.kernel; ++j) {
        auto& list = runs[static_cast<std::size_t>(j)];
        // Iterate over the "driving" axis: output for conv, input for transposed.
        const Index drive_len = transposed ? in_len : out_len;
        for (Index t = 0; t < drive_len; ++t) {
            const Index other = t * g.stride - g.pad_left + j;
            const Index other_len = transposed ? out_len : in_len;
            if (other < 0 || other >= other_len) continue;
            const Index in_pos = transposed ? t : other;
            const Index out_pos = transposed ? other : t;
            if (!list.empty()) {
                auto& last = list.back();
                if (last.in_pos + last.count == in_pos && last.out_pos + last.count == out_pos) {
                    ++last.count;
                    continue;
                }
            }
            list.push_back({in_pos, out_pos, 1});
        }
    }
    return runs;
}

// ---------------------------------------------------------------------------
// Shape propagation
// ---------------------------------------------------------------------------

template <typename T>
Shape output_shape(const Dense<T>& l, Shape in) {
    if (in.channels != l.in_features) {
        throw ShapeError("dense expects " + std::to_string(l.in_features) + " input features, got " + in.to_string());
    }
    return {in.length, l.out_features};
}

template <typename T>
Shape output_shape(const Conv1d<T>& l, Shape in) {
    if (in.channels != l.in_channels) {
        throw ShapeError("conv1d expects " + std::to_string(l.in_channels) + " channels, got " + in.to_string());
    }
    const Index len = conv_output_length(in.length, l.geometry);
    if (len < 1) throw ShapeError("conv1d output would be empty for input " + in.to_string());
    return {len, l.out_channels};
}

template <typename T>
Shape output_shape(const TransposedConv1d<T>& l, Shape in) {
    if (in.channels != l.in_channels) {
        throw ShapeError("transposed_conv1d expects " + std::to_string(l.in_channels) + " channels, got " +
                         in.to_string());
    }
    const Index len = transposed_conv_output_length(in.length, l.geometry);
    if (len < 1) throw ShapeError("transposed_conv1d output would be empty for input " + in.to_string());
    return {len, l.out_channels};
}

template <typename T>
Shape output_shape(const BatchNorm1d<T>& l, Shape in) {
    if (in.channels != l.channels) {
        throw ShapeError("batchnorm1d expects " + std::to_string(l.channels) + " channels, got " + in.to_string());
    }
    return in;
}

template <typename T>
Shape output_shape(const LeakyRelu<T>&, Shape in) {
    return in;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> forward(const Dense<T>& l, const Tensor<T>& x, Mode, LayerCache<T>&) {
    Tensor<T> y;
    y.length = x.length;
    y.data.noalias() = x.data * l.weight;
    y.data.rowwise() += l.bias.row(0);
    return y;
}

template <typename T>
Tensor<T> conv_forward(const Matrix<T>& weight, const Matrix<T>& bias, Index in_channels, const ConvGeometry& g,
                       bool transposed, const Tensor<T>& x, Index out_len) {
    const Index batch = x.batch();
    Tensor<T> y;
    y.length = out_len;
    y.data = Matrix<T>::Zero(out_len * batch, weight.cols());
    const auto runs = tap_runs(x.length, out_len, g, transposed);
    for (Index j = 0; j < g.kernel; ++j) {
        const auto w = weight.middleRows(j * in_channels, in_channels);
        for (const auto& r : runs[static_cast<std::size_t>(j)]) {
            y.data.middleRows(r.out_pos * batch, r.count * batch).noalias() +=
                x.data.middleRows(r.in_pos * batch, r.count * batch) * w;
        }
    }
    y.data.rowwise() += bias.row(0);
    return y;
}

template <typename T>
Tensor<T> forward(const Conv1d<T>& l, const Tensor<T>& x, Mode, LayerCache<T>&) {
    return conv_forward(l.weight, l.bias, l.in_channels, l.geometry, false, x,
                        conv_output_length(x.length, l.geometry));
}

template <typename T>
Tensor<T> forward(const TransposedConv1d<T>& l, const Tensor<T>& x, Mode, LayerCache<T>&) {
    return conv_forward(l.weight, l.bias, l.in_channels, l.geometry, true, x,
                        transposed_conv_output_length(x.length, l.geometry));
}

template <typename T>
Tensor<T> forward(const BatchNorm1d<T>& l, const Tensor<T>& x, Mode mode, LayerCache<T>& cache) {
    Tensor<T> y;
    y.length = x.length;
    const T eps = static_cast<T>(l.epsilon);
    if (mode == Mode::train) {
        const Index n = x.data.rows();
        cache.batch_mean = x.data.colwise().sum() / static_cast<T>(n);
        Matrix<T> centered = x.data.rowwise() - cache.batch_mean.row(0);
        cache.batch_var = centered.array().square().colwise().sum() / static_cast<T>(n);
        cache.inv_std = (cache.batch_var.array() + eps).rsqrt();
        cache.normalized = centered.array().rowwise() * cache.inv_std.row(0).array();
        y.data = cache.normalized.array().rowwise() * l.gamma.row(0).array();
    } else {
        const Matrix<T> inv_std = (l.running_var.array() + eps).rsqrt();
        const Matrix<T> scale = inv_std.array() * l.gamma.array();
        y.data = (x.data.rowwise() - l.running_mean.row(0)).array().rowwise() * scale.row(0).array();
    }
    y.data.rowwise() += l.beta.row(0);
    return y;
}

template <typename T>
Tensor<T> forward(const LeakyRelu<T>& l, const Tensor<T>& x, Mode, LayerCache<T>&) {
    const T slope = static_cast<T>(l.slope);
    Tensor<T> y;
    y.length = x.length;
    y.data = x.data.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
    return y;
}

// ---------------------------------------------------------------------------
// Backward: returns the input gradient, writes parameter gradients.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> backward(const Dense<T>& l, const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Matrix<T>> grads) {
    grads[0].noalias() = cache.input.data.transpose() * dy.data;
    grads[1] = dy.data.colwise().sum();
    Tensor<T> dx;
    dx.length = dy.length;
    dx.data.noalias() = dy.data * l.weight.transpose();
    return dx;
}

template <typename T>
Tensor<T> conv_backward(const Matrix<T>& weight, Index in_channels, const ConvGeometry& g, bool transposed,
                        const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Matrix<T>> grads) {
    const Tensor<T>& x = cache.input;
    const Index batch = x.batch();
    Tensor<T> dx;
    dx.length = x.length;
    dx.data = Matrix<T>::Zero(x.data.rows(), x.data.cols());
    grads[0] = Matrix<T>::Zero(weight.rows(), weight.cols());
    const auto runs = tap_runs(x.length, dy.length, g, transposed);
    for (Index j = 0; j < g.kernel; ++j) {
        const auto w = weight.middleRows(j * in_channels, in_channels);
        auto dw = grads[0].middleRows(j * in_channels, in_channels);
        for (const auto& r : runs[static_cast<std::size_t>(j)]) {
            const auto x_block = x.data.middleRows(r.in_pos * batch, r.count * batch);
            const auto dy_block = dy.data.middleRows(r.out_pos * batch, r.count * batch);
            dw.noalias() += x_block.transpose() * dy_block;
            dx.data.middleRows(r.in_pos * batch, r.count * batch).noalias() += dy_block * w.transpose();
        }
    }
    grads[1] = dy.data.colwise().sum();
    return dx;
}

template <typename T>
Tensor<T> backward(const Conv1d<T>& l, const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Matrix<T>> grads) {
    return conv_backward(l.weight, l.in_channels, l.geometry, false, cache, dy, grads);
}

template <typename T>
Tensor<T> backward(const TransposedConv1d<T>& l, const LayerCache<T>& cache, const Tensor<T>& dy,
                   std::span<Matrix<T>> grads) {
    return conv_backward(l.weight, l.in_channels, l.geometry, true, cache, dy, grads);
}

template <typename T>
Tensor<T> backward(const BatchNorm1d<T>& l, const LayerCache<T>& cache, const Tensor<T>& dy,
                   std::span<Matrix<T>> grads) {
    const Index n = dy.data.rows();
    const auto& xhat = cache.normalized;
    grads[0] = (dy.data.array() * xhat.array()).colwise().sum();
    grads[1] = dy.data.colwise().sum();
    const Matrix<T> dxhat = dy.data.array().rowwise() * l.gamma.row(0).array();
    const Matrix<T> sum_dxhat = dxhat.colwise().sum();
    const Matrix<T> sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum();
    Tensor<T> dx;
    dx.length = dy.length;
    // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    dx.data = (static_cast<T>(n) * dxhat.array()).rowwise() - sum_dxhat.row(0).array();
    dx.data.array() -= xhat.array().rowwise() * sum_dxhat_xhat.row(0).array();
    dx.data.array().rowwise() *= (cache.inv_std.array() / static_cast<T>(n)).row(0);
    return dx;
}

template <typename T>
Tensor<T> backward(const LeakyRelu<T>& l, const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Matrix<T>>) {
    const T slope = static_cast<T>(l.slope);
    Tensor<T> dx;
    dx.length = dy.length;
    dx.data = dy.data.binaryExpr(cache.input.data, [slope](T g, T v) { return v > T(0) ? g : slope * g; });
    return dx;
}

// ---------------------------------------------------------------------------
// Parameter enumeration
// ---------------------------------------------------------------------------

template <typename T>
std::vector<Matrix<T>*> params_of(Layer<T>& layer) {
    return std::visit(
        [](auto& l) -> std::vector<Matrix<T>*> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, BatchNorm1d<T>>) {
                return {&l.gamma, &l.beta};
            } else if constexpr (std::is_same_v<L, LeakyRelu<T>>) {
                return {};
            } else {
                return {&l.weight, &l.bias};
            }
        },
        layer);
}

template <typename T>
std::vector<Matrix<T>*> buffers_of(Layer<T>& layer) {
    if (auto* bn = std::get_if<BatchNorm1d<T>>(&layer)) return {&bn->running_mean, &bn->running_var};
    return {};
}

template <typename U, typename T>
Matrix<U> cast_matrix(const Matrix<T>& m) {
    return m.template cast<U>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer factories
// ---------------------------------------------------------------------------

template <typename T>
Dense<T> make_dense(Index in, Index out, Rng& rng) {
    if (in < 1 || out < 1) throw ShapeError("dense layer sizes must be positive");
    Dense<T> l;
    l.in_features = in;
    l.out_features = out;
    const double fan_in = static_cast<double>(in);
    l.weight = uniform_matrix<T>(in, out, std::sqrt(6.0 / fan_in), rng);
    l.bias = uniform_matrix<T>(1, out, 1.0 / std::sqrt(fan_in), rng);
    return l;
}

template <typename T>
Conv1d<T> make_conv1d(Index in_channels, Index out_channels, ConvGeometry geometry, Rng& rng) {
    check_geometry(geometry);
    if (in_channels < 1 || out_channels < 1) throw ShapeError("conv1d channel counts must be positive");
    Conv1d<T> l;
    l.in_channels = in_channels;
    l.out_channels = out_channels;
    l.geometry = geometry;
    const double fan_in = static_cast<double>(in_channels * geometry.kernel);
    l.weight = uniform_matrix<T>(geometry.kernel * in_channels, out_channels, std::sqrt(6.0 / fan_in), rng);
    l.bias = uniform_matrix<T>(1, out_channels, 1.0 / std::sqrt(fan_in), rng);
    return l;
}

template <typename T>
TransposedConv1d<T> make_transposed_conv1d(Index in_channels, Index out_channels, ConvGeometry geometry, Rng& rng) {
    check_geometry(geometry);
    if (in_channels < 1 || out_channels < 1) throw ShapeError("transposed_conv1d channel counts must be positive");
    TransposedConv1d<T> l;
    l.in_channels = in_channels;
    l.out_channels = out_channels;
    l.geometry = geometry;
    const double fan_in = static_cast<double>(in_channels * geometry.kernel);
    l.weight = uniform_matrix<T>(geometry.kernel * in_channels, out_channels, std::sqrt(6.0 / fan_in), rng);
    l.bias = uniform_matrix<T>(1, out_channels, 1.0 / std::sqrt(fan_in), rng);
    return l;
}

template <typename T>
BatchNorm1d<T> make_batchnorm1d(Index channels, double epsilon, double momentum) {
    if (channels < 1) throw ShapeError("batchnorm1d channel count must be positive");
    if (!(epsilon > 0.0)) throw ShapeError("batchnorm1d epsilon must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ShapeError("batchnorm1d momentum must be in [0, 1]");
    BatchNorm1d<T> l;
    l.channels = channels;
    l.epsilon = epsilon;
    l.momentum = momentum;
    l.gamma = Matrix<T>::Ones(1, channels);
    l.beta = Matrix<T>::Zero(1, channels);
    l.running_mean = Matrix<T>::Zero(1, channels);
    l.running_var = Matrix<T>::Ones(1, channels);
    return l;
}

template <typename T>
LeakyRelu<T> make_lrelu(double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw ShapeError("lrelu negative slope must be in (0, 1)");
    return LeakyRelu<T>{slope};
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
std::uint64_t Network<T>::next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
}

template <typename T>
Network<T>::Network(Shape input, std::vector<Layer<T>> layers)
    : input_(input), output_(input), layers_(std::move(layers)), id_(next_id()) {
    if (input.length < 1 || input.channels < 1) throw ShapeError("network input shape must be positive");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            output_ = std::visit([&](const auto& l) { return nn::output_shape(l, output_); }, layers_[i]);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + std::string(to_string(layer_kind(layers_[i]))) +
                             "): " + e.what());
        }
    }
}

template <typename T>
Network<T>::Network(const Network& other)
    : input_(other.input_), output_(other.output_), layers_(other.layers_), id_(next_id()) {}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
    if (this != &other) {
        input_ = other.input_;
        output_ = other.output_;
        layers_ = other.layers_;
        id_ = next_id();
        revision_ = 0;
    }
    return *this;
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& x, Mode mode) const {
    if (x.shape() != input_ || x.data.rows() % x.length != 0 || x.data.rows() == 0) {
        throw ShapeError("layer 0 expects input " + input_.to_string() + ", got " + x.shape().to_string() + " with " +
                         std::to_string(x.data.rows()) + " rows");
    }
    ForwardResult<T> result;
    result.tape.network_id = id_;
    result.tape.revision = revision_;
    result.tape.mode = mode;
    if (mode == Mode::train) result.tape.caches.resize(layers_.size());

    Tensor<T> current = x;
    LayerCache<T> scratch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        LayerCache<T>& cache = mode == Mode::train ? result.tape.caches[i] : scratch;
        Tensor<T> next = std::visit([&](const auto& l) { return nn::forward(l, current, mode, cache); }, layers_[i]);
        if (mode == Mode::train) cache.input = std::move(current);
        current = std::move(next);
    }
    result.output = std::move(current);
    return result;
}

template <typename T>
Gradients<T> Network<T>::backward(const Tape<T>& tape, const Tensor<T>& grad_output) const {
    if (tape.network_id != id_ || tape.revision != revision_) {
        throw ValidationError("stale tape: it was recorded by a different network or before a parameter update");
    }
    if (tape.mode != Mode::train || tape.caches.size() != layers_.size()) {
        throw ValidationError("backward requires a train-mode tape from a matching forward call");
    }
    const Index batch = tape.caches.empty() ? grad_output.batch() : tape.caches.front().input.batch();
    if (grad_output.shape() != output_ || grad_output.batch() != batch) {
        throw ShapeError("output gradient " + grad_output.shape().to_string() + " does not match network output " +
                         output_.to_string());
    }

    Gradients<T> grads;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& layer : layers_) {
        offsets.push_back(total);
        total += params_of(const_cast<Layer<T>&>(layer)).size();
    }
    grads.params.resize(total);

    Tensor<T> current = grad_output;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const std::size_t n_params = params_of(const_cast<Layer<T>&>(layers_[i])).size();
        std::span<Matrix<T>> slots(grads.params.data() + offsets[i], n_params);
        current = std::visit([&](const auto& l) { return nn::backward(l, tape.caches[i], current, slots); },
                             layers_[i]);
    }
    grads.input = std::move(current);
    return grads;
}

template <typename T>
void Network<T>::commit_running_stats(const Tape<T>& tape) {
    if (tape.network_id != id_ || tape.mode != Mode::train || tape.caches.size() != layers_.size()) {
        throw ValidationError("commit_running_stats requires a train-mode tape from this network");
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto* bn = std::get_if<BatchNorm1d<T>>(&layers_[i]);
        if (!bn) continue;
        const auto& cache = tape.caches[i];
        const Index n = cache.input.data.rows();
        const T m = static_cast<T>(bn->momentum);
        const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
        bn->running_mean = (T(1) - m) * bn->running_mean + m * cache.batch_mean;
        bn->running_var = (T(1) - m) * bn->running_var + (m * unbias) * cache.batch_var;
    }
}

template <typename T>
std::vector<Matrix<T>*> Network<T>::parameters() {
    touch();
    std::vector<Matrix<T>*> out;
    for (auto& layer : layers_) {
        auto p = params_of(layer);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

template <typename T>
std::vector<const Matrix<T>*> Network<T>::parameters() const {
    std::vector<const Matrix<T>*> out;
    for (auto& layer : layers_) {
        auto p = params_of(const_cast<Layer<T>&>(layer));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

template <typename T>
std::vector<Matrix<T>*> Network<T>::buffers() {
    touch();
    std::vector<Matrix<T>*> out;
    for (auto& layer : layers_) {
        auto b = buffers_of(layer);
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

template <typename T>
std::vector<const Matrix<T>*> Network<T>::buffers() const {
    std::vector<const Matrix<T>*> out;
    for (auto& layer : layers_) {
        auto b = buffers_of(const_cast<Layer<T>&>(layer));
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->size());
    return n;
}

template <typename T>
Layer<T>& Network<T>::mutable_layer(std::size_t i) {
    touch();
    return layers_.at(i);
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    std::vector<Layer<U>> layers;
    for (const auto& layer : layers_) {
        layers.push_back(std::visit(
            [](const auto& l) -> Layer<U> {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Dense<T>>) {
                    return Dense<U>{l.in_features, l.out_features, cast_matrix<U>(l.weight), cast_matrix<U>(l.bias)};
                } else if constexpr (std::is_same_v<L, Conv1d<T>>) {
                    return Conv1d<U>{l.in_channels, l.out_channels, l.geometry, cast_matrix<U>(l.weight),
                                     cast_matrix<U>(l.bias)};
                } else if constexpr (std::is_same_v<L, TransposedConv1d<T>>) {
                    return TransposedConv1d<U>{l.in_channels, l.out_channels, l.geometry, cast_matrix<U>(l.weight),
                                               cast_matrix<U>(l.bias)};
                } else if constexpr (std::is_same_v<L, BatchNorm1d<T>>) {
                    return BatchNorm1d<U>{l.channels,
                                          l.epsilon,
                                          l.momentum,
                                          cast_matrix<U>(l.gamma),
                                          cast_matrix<U>(l.beta),
                                          cast_matrix<U>(l.running_mean),
                                          cast_matrix<U>(l.running_var)};
                } else {
                    return LeakyRelu<U>{l.slope};
                }
            },
            layer));
    }
    return Network<U>(input_, std::move(layers));
}

template <typename T>
Network<T> Network<T>::concat(const Network& first, const Network& second) {
    if (first.output_ != second.input_) {
        throw ShapeError("cannot chain networks: " + first.output_.to_string() + " -> " + second.input_.to_string());
    }
    std::vector<Layer<T>> layers = first.layers_;
    layers.insert(layers.end(), second.layers_.begin(), second.layers_.end());
    return Network(first.input_, std::move(layers));
}

// ---------------------------------------------------------------------------
// Loss and optimizer
// ---------------------------------------------------------------------------

template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.length != target.length || pred.data.rows() != target.data.rows() ||
        pred.data.cols() != target.data.cols()) {
        throw ShapeError("mse_loss shape mismatch: " + pred.shape().to_string() + " vs " + target.shape().to_string());
    }
    const auto count = static_cast<double>(pred.data.size());
    LossResult<T> result;
    result.grad.length = pred.length;
    result.grad.data = pred.data - target.data;
    result.loss = result.grad.data.template cast<double>().squaredNorm() / count;
    result.grad.data *= static_cast<T>(2.0 / count);
    return result;
}

template <typename T>
std::vector<double> per_sample_mse(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape() || pred.data.rows() != target.data.rows()) {
        throw ShapeError("per_sample_mse shape mismatch");
    }
    const Index batch = pred.batch();
    std::vector<double> out(static_cast<std::size_t>(batch), 0.0);
    for (Index t = 0; t < pred.length; ++t) {
        for (Index b = 0; b < batch; ++b) {
            const Index row = t * batch + b;
            out[static_cast<std::size_t>(b)] +=
                (pred.data.row(row) - target.data.row(row)).template cast<double>().squaredNorm();
        }
    }
    const auto count = static_cast<double>(pred.length * pred.data.cols());
    for (auto& v : out) v /= count;
    return out;
}

template <typename T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>> grads, AdamState<T>& state) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols()) {
            throw ShapeError("adam_step: gradient " + std::to_string(i) + " shape does not match its parameter");
        }
    }
    if (state.first_moment.empty()) {
        for (const auto* p : params) {
            state.first_moment.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
            state.second_moment.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
        }
    }
    if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match");

    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    const T step_size = static_cast<T>(state.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(state.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.rows() != grads[i].rows() || m.cols() != grads[i].cols()) {
            throw ShapeError("adam_step: optimizer state does not match");
        }
        m = b1 * m + (T(1) - b1) * grads[i];
        v = b2 * v + (T(1) - b2) * grads[i].cwiseAbs2();
        params[i]->array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

template <typename T>
GradCheckReport grad_check(const Network<T>& net, const Tensor<T>& x, const Tensor<T>& target, double eps, Mode mode) {
    Network<T> work = net;
    Tensor<T> input = x;

    auto loss_at = [&]() { return mse_loss(work.forward(input, mode).output, target).loss; };

    // Analytic gradients. Eval-mode tapes are not accepted by backward, so an
    // eval check runs backward through a train tape only when the network has
    // no batchnorm (the passes coincide then).
    const Mode tape_mode = Mode::train;
    auto fwd = work.forward(input, tape_mode);
    if (mode == Mode::eval) {
        for (const auto& l : work.layers()) {
            if (layer_kind(l) == LayerKind::batchnorm1d) {
                throw ValidationError("grad_check in eval mode is not supported for networks with batchnorm");
            }
        }
    }
    const auto loss = mse_loss(fwd.output, target);
    const auto analytic = work.backward(fwd.tape, loss.grad);

    GradCheckReport report;
    auto compare = [&](double a, double numeric, const std::string& where) {
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max(std::abs(a) + std::abs(numeric), 1e-6);
        ++report.checked;
        report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
        if (rel > report.max_relative_error || report.worst.empty()) {
            report.max_relative_error = rel;
            std::ostringstream os;
            os << where << " analytic=" << a << " numeric=" << numeric;
            report.worst = os.str();
        }
    };

    auto params = work.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix<T>& m = *params[p];
        for (Index i = 0; i < m.size(); ++i) {
            const T saved = m.data()[i];
            m.data()[i] = static_cast<T>(saved + eps);
            const double up = loss_at();
            m.data()[i] = static_cast<T>(saved - eps);
            const double down = loss_at();
            m.data()[i] = saved;
            compare(static_cast<double>(analytic.params[p].data()[i]), (up - down) / (2.0 * eps),
                    "param " + std::to_string(p) + "[" + std::to_string(i) + "]");
        }
    }
    for (Index i = 0; i < input.data.size(); ++i) {
        const T saved = input.data.data()[i];
        input.data.data()[i] = static_cast<T>(saved + eps);
        const double up = loss_at();
        input.data.data()[i] = static_cast<T>(saved - eps);
        const double down = loss_at();
        input.data.data()[i] = saved;
        compare(static_cast<double>(analytic.input.data.data()[i]), (up - down) / (2.0 * eps),
                "input[" + std::to_string(i) + "]");
    }
    return report;
}

template <typename T>
GradCheckReport grad_check(const Network<T>& net, const Tensor<T>& x, double eps, Mode mode,
                           std::uint64_t target_seed) {
    Rng rng(target_seed);
    Tensor<T> target;
    target.length = net.output_shape().length;
    target.data.resize(x.batch() * target.length, net.output_shape().channels);
    for (Index i = 0; i < target.data.size(); ++i) target.data.data()[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
    return grad_check(net, x, target, eps, mode);
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define EVOAD_NN_INSTANTIATE(T)                                                                                  \
    template Dense<T> make_dense<T>(Index, Index, Rng&);                                                         \
    template Conv1d<T> make_conv1d<T>(Index, Index, ConvGeometry, Rng&);                                         \
    template TransposedConv1d<T> make_transposed_conv1d<T>(Index, Index, ConvGeometry, Rng&);                    \
    template BatchNorm1d<T> make_batchnorm1d<T>(Index, double, double);                                          \
    template LeakyRelu<T> make_lrelu<T>(double);                                                                 \
    template class Network<T>;                                                                                   \
    template LossResult<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template std::vector<double> per_sample_mse<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template void adam_step<T>(std::span<Matrix<T>* const>, std::span<const Matrix<T>>, AdamState<T>&);          \
    template GradCheckReport grad_check<T>(const Network<T>&, const Tensor<T>&, const Tensor<T>&, double, Mode); \
    template GradCheckReport grad_check<T>(const Network<T>&, const Tensor<T>&, double, Mode, std::uint64_t);

EVOAD_NN_INSTANTIATE(float)
EVOAD_NN_INSTANTIATE(double)

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

}  // namespace evoad::nn
