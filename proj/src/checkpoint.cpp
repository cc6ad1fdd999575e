#include "evoad/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evoad/error.hpp"
#include "json.hpp"

namespace evoad::nn {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'E', 'V', 'O', 'A', 'D', 'N', 'N', '\0'};

template <typename U>
void put_le(std::ostream& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::istream& in) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        const int c = in.get();
        if (c == EOF) throw ValidationError("checkpoint truncated");
        value |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return value;
}

json geometry_json(const ConvGeometry& g) {
    return {{"kernel", g.kernel},     {"stride", g.stride},
            {"pad_left", g.pad_left}, {"pad_right", g.pad_right},
            {"output_padding", g.output_padding}};
}

ConvGeometry geometry_from(const json& j) {
    ConvGeometry g;
    g.kernel = j.at("kernel").get<Index>();
    g.stride = j.at("stride").get<Index>();
    g.pad_left = j.at("pad_left").get<Index>();
    g.pad_right = j.at("pad_right").get<Index>();
    g.output_padding = j.at("output_padding").get<Index>();
    return g;
}

json layer_json(const Layer<float>& layer) {
    return std::visit(
        [](const auto& l) -> json {
            using L = std::decay_t<decltype(l)>;
            json j{{"kind", std::string(to_string(kind_of(l)))}};
            if constexpr (std::is_same_v<L, Dense<float>>) {
                j["in_features"] = l.in_features;
                j["out_features"] = l.out_features;
            } else if constexpr (std::is_same_v<L, Conv1d<float>> || std::is_same_v<L, TransposedConv1d<float>>) {
                j["in_channels"] = l.in_channels;
                j["out_channels"] = l.out_channels;
                j["geometry"] = geometry_json(l.geometry);
            } else if constexpr (std::is_same_v<L, BatchNorm1d<float>>) {
                j["channels"] = l.channels;
                j["epsilon"] = l.epsilon;
                j["momentum"] = l.momentum;
            } else {
                j["slope"] = l.slope;
            }
            return j;
        },
        layer);
}

// Builds a zero-initialized layer of the declared kind; tensors are filled
// from the payload afterwards.
Layer<float> layer_from(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    Rng unused(0);
    if (kind == "dense") {
        return make_dense<float>(j.at("in_features").get<Index>(), j.at("out_features").get<Index>(), unused);
    }
    if (kind == "conv1d") {
        return make_conv1d<float>(j.at("in_channels").get<Index>(), j.at("out_channels").get<Index>(),
                                  geometry_from(j.at("geometry")), unused);
    }
    if (kind == "transposed_conv1d") {
        return make_transposed_conv1d<float>(j.at("in_channels").get<Index>(), j.at("out_channels").get<Index>(),
                                             geometry_from(j.at("geometry")), unused);
    }
    if (kind == "batchnorm1d") {
        return make_batchnorm1d<float>(j.at("channels").get<Index>(), j.at("epsilon").get<double>(),
                                       j.at("momentum").get<double>());
    }
    if (kind == "lrelu") return make_lrelu<float>(j.at("slope").get<double>());
    throw ValidationError("checkpoint contains unknown layer kind '" + kind + "'");
}

struct NamedTensor {
    std::string name;
    const Matrix<float>* tensor;
};

std::vector<NamedTensor> tensor_table(const Network<float>& net) {
    std::vector<NamedTensor> table;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const auto prefix = "layer" + std::to_string(i) + ".";
        std::visit(
            [&](const auto& l) {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, BatchNorm1d<float>>) {
                    table.push_back({prefix + "gamma", &l.gamma});
                    table.push_back({prefix + "beta", &l.beta});
                    table.push_back({prefix + "running_mean", &l.running_mean});
                    table.push_back({prefix + "running_var", &l.running_var});
                } else if constexpr (!std::is_same_v<L, LeakyRelu<float>>) {
                    table.push_back({prefix + "weight", &l.weight});
                    table.push_back({prefix + "bias", &l.bias});
                }
            },
            net.layers()[i]);
    }
    return table;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Network<float>& net) {
    json header;
    header["input"] = {{"length", net.input_shape().length}, {"channels", net.input_shape().channels}};
    header["layers"] = json::array();
    for (const auto& layer : net.layers()) header["layers"].push_back(layer_json(layer));
    header["tensors"] = json::array();
    const auto table = tensor_table(net);
    for (const auto& t : table) {
        header["tensors"].push_back({{"name", t.name}, {"rows", t.tensor->rows()}, {"cols", t.tensor->cols()}});
    }
    const std::string text = header.dump();

    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : table) {
        for (Index i = 0; i < t.tensor->size(); ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(t.tensor->data()[i]));
    }
    if (!out) throw RuntimeFailure("error while writing checkpoint");
}

Network<float> load_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw ValidationError("not a model checkpoint (bad magic)");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint format version " + std::to_string(version));
    }
    const auto header_len = get_le<std::uint64_t>(in);
    if (header_len > (std::uint64_t{1} << 30)) throw ValidationError("checkpoint header too large");
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ValidationError("checkpoint truncated in header");

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    try {
        std::vector<Layer<float>> layers;
        for (const auto& lj : header.at("layers")) layers.push_back(layer_from(lj));
        Network<float> net(Shape{header.at("input").at("length").get<Index>(),
                                 header.at("input").at("channels").get<Index>()},
                           std::move(layers));

        // Resolve the table against the rebuilt network and fill it.
        const auto table = tensor_table(net);
        const auto& declared = header.at("tensors");
        if (declared.size() != table.size()) throw ValidationError("checkpoint tensor table does not match its layers");
        for (std::size_t t = 0; t < table.size(); ++t) {
            if (declared[t].at("name").get<std::string>() != table[t].name ||
                declared[t].at("rows").get<Index>() != table[t].tensor->rows() ||
                declared[t].at("cols").get<Index>() != table[t].tensor->cols()) {
                throw ValidationError("checkpoint tensor '" + table[t].name + "' has unexpected shape");
            }
            auto* dst = const_cast<Matrix<float>*>(table[t].tensor);
            for (Index i = 0; i < dst->size(); ++i) dst->data()[i] = std::bit_cast<float>(get_le<std::uint32_t>(in));
        }
        return net;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed checkpoint header: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const Network<float>& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path);
    save_checkpoint(out, net);
}

Network<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path);
    return load_checkpoint(in);
}

std::string checkpoint_bytes(const Network<float>& net) {
    std::ostringstream os(std::ios::binary);
    save_checkpoint(os, net);
    return os.str();
}

}  // namespace evoad::nn
