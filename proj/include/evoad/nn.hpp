#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "evoad/random.hpp"

// Minimal feed-forward engine for the reconstruction models: a closed set of
// layer kinds, each with a hand-written forward and backward pass.
//
// Activations are stored time-major: a batch of B sequences of length L with
// C channels is an (L*B) x C row-major matrix whose row t*B + b holds step t
// of sequence b. Dense layers act row-wise, so flat inputs use L = 1.
namespace evoad::nn {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-sample shape.
struct Shape {
    Index length = 1;
    Index channels = 1;

    friend bool operator==(const Shape&, const Shape&) = default;
    std::string to_string() const;
};

template <typename T>
struct Tensor {
    Matrix<T> data;
    Index length = 1;

    Index batch() const { return length > 0 ? data.rows() / length : 0; }
    Shape shape() const { return {length, data.cols()}; }
};

enum class Mode { train, eval };

enum class LayerKind { dense, conv1d, transposed_conv1d, batchnorm1d, lrelu };

std::string_view to_string(LayerKind kind);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct Dense {
    Index in_features = 0;
    Index out_features = 0;
    Matrix<T> weight;  // in x out
    Matrix<T> bias;    // 1 x out
};

struct ConvGeometry {
    Index kernel = 1;
    Index stride = 1;
    Index pad_left = 0;
    Index pad_right = 0;
    Index output_padding = 0;  // transposed only

    // Output length equals input length at stride 1.
    static ConvGeometry same(Index kernel);
};

// Shared storage for conv1d and transposed conv1d. Tap j of the kernel is the
// Cin x Cout block weight.middleRows(j * Cin, Cin).
//   conv1d:            out[t] += in[t*stride - pad_left + j] * W_j
//   transposed conv1d: out[t*stride - pad_left + j] += in[t] * W_j
template <typename T>
struct Conv1d {
    Index in_channels = 0;
    Index out_channels = 0;
    ConvGeometry geometry;
    Matrix<T> weight;  // (kernel * in) x out
    Matrix<T> bias;    // 1 x out
};

template <typename T>
struct TransposedConv1d {
    Index in_channels = 0;
    Index out_channels = 0;
    ConvGeometry geometry;
    Matrix<T> weight;
    Matrix<T> bias;
};

// Normalizes each channel over all rows (batch and time steps).
template <typename T>
struct BatchNorm1d {
    Index channels = 0;
    double epsilon = 1e-5;
    double momentum = 0.1;
    Matrix<T> gamma;  // 1 x C
    Matrix<T> beta;
    Matrix<T> running_mean;
    Matrix<T> running_var;
};

template <typename T>
struct LeakyRelu {
    double slope = 0.01;
};

template <typename T>
using Layer = std::variant<Dense<T>, Conv1d<T>, TransposedConv1d<T>, BatchNorm1d<T>, LeakyRelu<T>>;

// Weights are uniform in +-sqrt(6 / fan_in), biases in +-1 / sqrt(fan_in).
template <typename T>
Dense<T> make_dense(Index in, Index out, Rng& rng);
template <typename T>
Conv1d<T> make_conv1d(Index in_channels, Index out_channels, ConvGeometry geometry, Rng& rng);
template <typename T>
TransposedConv1d<T> make_transposed_conv1d(Index in_channels, Index out_channels, ConvGeometry geometry, Rng& rng);
template <typename T>
BatchNorm1d<T> make_batchnorm1d(Index channels, double epsilon = 1e-5, double momentum = 0.1);
template <typename T>
LeakyRelu<T> make_lrelu(double slope = 0.01);

template <typename T>
constexpr LayerKind kind_of(const Dense<T>&) { return LayerKind::dense; }
template <typename T>
constexpr LayerKind kind_of(const Conv1d<T>&) { return LayerKind::conv1d; }
template <typename T>
constexpr LayerKind kind_of(const TransposedConv1d<T>&) { return LayerKind::transposed_conv1d; }
template <typename T>
constexpr LayerKind kind_of(const BatchNorm1d<T>&) { return LayerKind::batchnorm1d; }
template <typename T>
constexpr LayerKind kind_of(const LeakyRelu<T>&) { return LayerKind::lrelu; }

template <typename T>
LayerKind layer_kind(const Layer<T>& layer) {
    return std::visit([](const auto& l) { return kind_of(l); }, layer);
}

Index conv_output_length(Index input_length, const ConvGeometry& g);
Index transposed_conv_output_length(Index input_length, const ConvGeometry& g);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
struct LayerCache {
    Tensor<T> input;
    Matrix<T> normalized;  // batchnorm x_hat
    Matrix<T> inv_std;
    Matrix<T> batch_mean;
    Matrix<T> batch_var;  // biased
};

// What backward needs from a forward call. Bound to the network instance and
// parameter revision that produced it.
template <typename T>
struct Tape {
    std::uint64_t network_id = 0;
    std::uint64_t revision = 0;
    Mode mode = Mode::eval;
    std::vector<LayerCache<T>> caches;
};

template <typename T>
struct ForwardResult {
    Tensor<T> output;
    Tape<T> tape;
};

template <typename T>
struct Gradients {
    std::vector<Matrix<T>> params;  // same order as Network::parameters()
    Tensor<T> input;
};

template <typename T>
class Network {
public:
    Network() : id_(next_id()) {}
    // Throws ShapeError (naming the layer index) if adjacent shapes do not compose.
    Network(Shape input, std::vector<Layer<T>> layers);

    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    Shape input_shape() const { return input_; }
    Shape output_shape() const { return output_; }
    const std::vector<Layer<T>>& layers() const { return layers_; }
    std::size_t size() const { return layers_.size(); }

    // Does not modify the network. In train mode batchnorm uses batch
    // statistics and records them in the tape; see commit_running_stats.
    ForwardResult<T> forward(const Tensor<T>& x, Mode mode) const;
    Tensor<T> predict(const Tensor<T>& x) const { return forward(x, Mode::eval).output; }

    // Requires a train-mode tape from this network at its current revision.
    Gradients<T> backward(const Tape<T>& tape, const Tensor<T>& grad_output) const;

    // Folds the batch statistics recorded in a train-mode tape into the
    // batchnorm running averages.
    void commit_running_stats(const Tape<T>& tape);

    // Trainable tensors in layer order. The mutable overload invalidates
    // outstanding tapes.
    std::vector<Matrix<T>*> parameters();
    std::vector<const Matrix<T>*> parameters() const;
    // Non-trainable state (batchnorm running statistics).
    std::vector<Matrix<T>*> buffers();
    std::vector<const Matrix<T>*> buffers() const;

    std::size_t parameter_count() const;

    // Layer access for construction and checkpoint loading; invalidates tapes.
    Layer<T>& mutable_layer(std::size_t i);

    template <typename U>
    Network<U> cast() const;

    static Network concat(const Network& first, const Network& second);

private:
    static std::uint64_t next_id();
    void touch() { ++revision_; }

    Shape input_;
    Shape output_;
    std::vector<Layer<T>> layers_;
    std::uint64_t id_ = 0;
    std::uint64_t revision_ = 0;
};

// ---------------------------------------------------------------------------
// Loss and optimizer
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;
};

// Mean squared error over all elements; grad = 2 (pred - target) / count.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Per-sample mean squared error (one value per sequence in the batch).
template <typename T>
std::vector<double> per_sample_mse(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<Matrix<T>> first_moment;
    std::vector<Matrix<T>> second_moment;
};

// Bias-corrected Adam. Moments are allocated on the first call.
template <typename T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>> grads, AdamState<T>& state);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // which element produced max_relative_error
};

// Compares backward() of mse_loss(forward(x), target) against central
// differences for every parameter element and every input element.
// Relative error is |a - n| / max(|a| + |n|, 1e-6).
template <typename T>
GradCheckReport grad_check(const Network<T>& net, const Tensor<T>& x, const Tensor<T>& target, double eps,
                           Mode mode = Mode::train);

// Same, with a seeded random target of the network's output shape.
template <typename T>
GradCheckReport grad_check(const Network<T>& net, const Tensor<T>& x, double eps, Mode mode = Mode::train,
                           std::uint64_t target_seed = 0);

}  // namespace evoad::nn
