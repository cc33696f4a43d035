#pragma once

// Feature-extraction network (forward pass only) and its weight container.
//
// .dsw layout:
//   8 bytes   magic "DISAW001"
//   4 bytes   little-endian u32 header length
//   header    UTF-8 JSON {"layers": [...]}, each layer one of
//               {"type": "conv2d", "in_ch", "out_ch", "kernel"}
//               {"type": "leaky_relu", "slope"}
//               {"type": "residual_block", "channels", "kernel", "slope"}
//               {"type": "blurpool"}
//   tensors   little-endian f32, in layer order; per convolution the weights [out][in][ky][kx]
//             followed by the bias [out]; a residual block stores conv1 then conv2

#include "error.hpp"
#include "features.hpp"
#include "image.hpp"
#include "io.hpp"
#include "parallel.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

namespace slicereg
{

inline constexpr int kFeatureChannels = 16;
inline constexpr int kFeatureStride = 4;

struct Conv2d
{
    int in_ch = 1;
    int out_ch = 1;
    int kernel = 3;
    std::vector<float> weight; ///< [out][in][ky][kx]
    std::vector<float> bias;   ///< [out]

    Conv2d() = default;
    Conv2d(int in, int out, int k)
        : in_ch(in)
        , out_ch(out)
        , kernel(k)
        , weight(static_cast<std::size_t>(out) * in * k * k, 0.0f)
        , bias(out, 0.0f)
    {
    }

    float& w(int o, int i, int ky, int kx)
    {
        return weight[((static_cast<std::size_t>(o) * in_ch + i) * kernel + ky) * kernel + kx];
    }
    float w(int o, int i, int ky, int kx) const
    {
        return weight[((static_cast<std::size_t>(o) * in_ch + i) * kernel + ky) * kernel + kx];
    }
};

enum class LayerKind
{
    Conv,
    LeakyRelu,
    Residual,
    BlurPool,
};

struct Layer
{
    LayerKind kind = LayerKind::Conv;
    Conv2d conv;  ///< Conv, or the first convolution of a residual block
    Conv2d conv2; ///< second convolution of a residual block
    double slope = 0.1;

    static Layer convolution(int in, int out, int k) { return {LayerKind::Conv, Conv2d(in, out, k), {}, 0.0}; }
    static Layer leaky_relu(double slope) { return {LayerKind::LeakyRelu, {}, {}, slope}; }
    static Layer residual(int ch, int k, double slope)
    {
        return {LayerKind::Residual, Conv2d(ch, ch, k), Conv2d(ch, ch, k), slope};
    }
    static Layer blurpool() { return {LayerKind::BlurPool, {}, {}, 0.0}; }
};

/// Planar activation tensor [c][y][x].
struct Tensor
{
    int channels = 1;
    int width = 1;
    int height = 1;
    std::vector<float> data = std::vector<float>(1, 0.0f);

    Tensor() = default;
    Tensor(int c, int w, int h, float fill = 0.0f)
        : channels(c)
        , width(w)
        , height(h)
        , data(static_cast<std::size_t>(c) * w * h, fill)
    {
    }

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
    float* plane(int c) { return data.data() + c * plane_size(); }
    const float* plane(int c) const { return data.data() + c * plane_size(); }
    float& at(int c, int x, int y) { return plane(c)[static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int x, int y) const { return plane(c)[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail
{
inline Tensor apply_conv(const Tensor& x, const Conv2d& c)
{
    require(x.channels == c.in_ch, ErrorCode::ChannelMismatch, "convolution input channel mismatch");
    const int w = x.width, h = x.height, r = c.kernel / 2;
    Tensor y(c.out_ch, w, h);
    for (int o = 0; o < c.out_ch; ++o)
    {
        float* out = y.plane(o);
        std::fill(out, out + y.plane_size(), c.bias[o]);
        for (int i = 0; i < c.in_ch; ++i)
        {
            const float* in = x.plane(i);
            for (int ky = 0; ky < c.kernel; ++ky)
            {
                const int dy = ky - r;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < c.kernel; ++kx)
                {
                    const int dx = kx - r;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const float wt = c.w(o, i, ky, kx);
                    if (wt == 0.0f)
                        continue;
                    for (int yy = y0; yy < y1; ++yy)
                    {
                        float* orow = out + static_cast<std::size_t>(yy) * w;
                        const float* irow = in + static_cast<std::size_t>(yy + dy) * w + dx;
                        for (int xx = x0; xx < x1; ++xx)
                            orow[xx] += wt * irow[xx];
                    }
                }
            }
        }
    }
    return y;
}

inline void apply_leaky_relu(Tensor& x, double slope)
{
    const float s = static_cast<float>(slope);
    for (float& v : x.data)
        v = v < 0.0f ? s * v : v;
}

// [1,2,1]⊗[1,2,1]/16 with clamp-to-edge padding, evaluated at even positions.
inline Tensor apply_blurpool(const Tensor& x)
{
    const int w = x.width, h = x.height;
    const int ow = (w + 1) / 2, oh = (h + 1) / 2;
    Tensor y(x.channels, ow, oh);
    std::vector<float> rows(static_cast<std::size_t>(ow) * h);
    for (int c = 0; c < x.channels; ++c)
    {
        const float* in = x.plane(c);
        for (int yy = 0; yy < h; ++yy)
            for (int i = 0; i < ow; ++i)
            {
                const int xc = 2 * i;
                const float* row = in + static_cast<std::size_t>(yy) * w;
                rows[static_cast<std::size_t>(yy) * ow + i] =
                    0.25f * row[std::max(xc - 1, 0)] + 0.5f * row[xc] + 0.25f * row[std::min(xc + 1, w - 1)];
            }
        float* out = y.plane(c);
        for (int j = 0; j < oh; ++j)
        {
            const int yc = 2 * j;
            const float* a = rows.data() + static_cast<std::size_t>(std::max(yc - 1, 0)) * ow;
            const float* b = rows.data() + static_cast<std::size_t>(yc) * ow;
            const float* d = rows.data() + static_cast<std::size_t>(std::min(yc + 1, h - 1)) * ow;
            for (int i = 0; i < ow; ++i)
                out[static_cast<std::size_t>(j) * ow + i] = 0.25f * a[i] + 0.5f * b[i] + 0.25f * d[i];
        }
    }
    return y;
}
} // namespace detail

class ConvNet
{
public:
    ConvNet() = default;

    /// Builds and validates a network; throws the weight error codes on bad chaining. With
    /// full_contract false only the chaining is checked (test and experiment networks).
    explicit ConvNet(std::vector<Layer> layers, bool full_contract = true)
        : m_layers(std::move(layers))
    {
        if (full_contract)
            validate();
        else
            validate_chain();
    }

    const std::vector<Layer>& layers() const { return m_layers; }
    std::vector<Layer>& mutable_layers() { return m_layers; }

    int input_channels() const { return m_layers.front().conv.in_ch; }

    int output_channels() const
    {
        int ch = input_channels();
        for (const auto& l : m_layers)
            if (l.kind == LayerKind::Conv)
                ch = l.conv.out_ch;
        return ch;
    }

    int stride() const
    {
        int s = 1;
        for (const auto& l : m_layers)
            if (l.kind == LayerKind::BlurPool)
                s *= 2;
        return s;
    }

    /// Checks layer chaining only (no stride / channel-count contract).
    void validate_chain() const
    {
        require(!m_layers.empty() && m_layers.front().kind == LayerKind::Conv, ErrorCode::MalformedWeights,
                "network must start with a convolution");
        int ch = m_layers.front().conv.in_ch;
        for (const auto& l : m_layers)
        {
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::Residual)
            {
                for (const Conv2d* c : {&l.conv, &l.conv2})
                {
                    if (c == &l.conv2 && l.kind != LayerKind::Residual)
                        continue;
                    require(c->kernel >= 1 && c->kernel % 2 == 1, ErrorCode::MalformedWeights,
                            "convolution kernels must be odd");
                    require(c->in_ch >= 1 && c->out_ch >= 1, ErrorCode::MalformedWeights,
                            "convolution channel counts must be >= 1");
                    require(c->weight.size() ==
                                    static_cast<std::size_t>(c->out_ch) * c->in_ch * c->kernel * c->kernel &&
                                c->bias.size() == static_cast<std::size_t>(c->out_ch),
                            ErrorCode::MalformedWeights, "convolution tensor sizes do not match the layer");
                    require(c->in_ch == ch, ErrorCode::ChannelMismatch,
                            "layer expects " + std::to_string(c->in_ch) + " channels but receives " +
                                std::to_string(ch));
                    ch = c->out_ch;
                }
                if (l.kind == LayerKind::Residual)
                    require(l.conv.in_ch == l.conv2.out_ch, ErrorCode::ChannelMismatch,
                            "residual block must preserve channels");
            }
            require(std::isfinite(l.slope), ErrorCode::MalformedWeights, "activation slope must be finite");
        }
    }

    /// Full contract: chaining, one input channel, stride 4, 16 output channels.
    void validate() const
    {
        validate_chain();
        require(input_channels() == 1, ErrorCode::ChannelMismatch, "network input must have one channel");
        require(stride() == kFeatureStride, ErrorCode::BadStride,
                "network stride is " + std::to_string(stride()) + ", expected 4");
        require(output_channels() == kFeatureChannels, ErrorCode::BadOutputChannels,
                "network produces " + std::to_string(output_channels()) + " channels, expected 16");
    }

    Tensor forward(Tensor x) const
    {
        for (const auto& l : m_layers)
        {
            switch (l.kind)
            {
                case LayerKind::Conv: x = detail::apply_conv(x, l.conv); break;
                case LayerKind::LeakyRelu: detail::apply_leaky_relu(x, l.slope); break;
                case LayerKind::BlurPool: x = detail::apply_blurpool(x); break;
                case LayerKind::Residual:
                {
                    Tensor t = detail::apply_conv(x, l.conv);
                    detail::apply_leaky_relu(t, l.slope);
                    t = detail::apply_conv(t, l.conv2);
                    detail::apply_leaky_relu(t, l.slope);
                    for (std::size_t i = 0; i < x.data.size(); ++i)
                        x.data[i] += t.data[i];
                    break;
                }
            }
        }
        return x;
    }

private:
    std::vector<Layer> m_layers;
};

/// conv3(1→16)+lrelu → residual(16) → blurpool → conv3(16→32)+lrelu → residual(32) → blurpool → conv3(32→16).
inline std::vector<Layer> default_architecture(double slope = 0.1)
{
    return {Layer::convolution(1, 16, 3), Layer::leaky_relu(slope), Layer::residual(16, 3, slope),
            Layer::blurpool(),           Layer::convolution(16, 32, 3), Layer::leaky_relu(slope),
            Layer::residual(32, 3, slope), Layer::blurpool(),           Layer::convolution(32, 16, 3)};
}

/// He-normal weights and zero biases from a seeded generator.
inline void randomize(std::vector<Layer>& layers, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    auto fill = [&](Conv2d& c, double gain) {
        std::normal_distribution<double> n(0.0, gain * std::sqrt(2.0 / (c.in_ch * c.kernel * c.kernel)));
        for (float& v : c.weight)
            v = static_cast<float>(n(rng));
        std::fill(c.bias.begin(), c.bias.end(), 0.0f);
    };
    for (auto& l : layers)
    {
        if (l.kind == LayerKind::Conv)
            fill(l.conv, 1.0);
        else if (l.kind == LayerKind::Residual)
        {
            fill(l.conv, 1.0);
            fill(l.conv2, 0.5);
        }
    }
}

inline ConvNet random_network(std::uint64_t seed)
{
    auto layers = default_architecture();
    randomize(layers, seed);
    return ConvNet(std::move(layers));
}

namespace detail
{
inline constexpr char kDswMagic[8] = {'D', 'I', 'S', 'A', 'W', '0', '0', '1'};

inline void put_conv(std::string& out, const Conv2d& c)
{
    for (float v : c.weight)
        put_le<float>(out, v);
    for (float v : c.bias)
        put_le<float>(out, v);
}

inline void get_conv(const std::string& bytes, std::size_t& pos, Conv2d& c)
{
    const std::size_t need = (c.weight.size() + c.bias.size()) * 4;
    require(bytes.size() - pos >= need, ErrorCode::Truncated,
            "weight file truncated: tensor needs " + std::to_string(need) + " bytes, " +
                std::to_string(bytes.size() - pos) + " remain");
    for (float& v : c.weight)
    {
        v = get_le<float>(bytes.data() + pos);
        pos += 4;
    }
    for (float& v : c.bias)
    {
        v = get_le<float>(bytes.data() + pos);
        pos += 4;
    }
    auto finite = [](float v) { return std::isfinite(v); };
    require(std::all_of(c.weight.begin(), c.weight.end(), finite) && std::all_of(c.bias.begin(), c.bias.end(), finite),
            ErrorCode::MalformedWeights, "weight tensor contains non-finite values");
}
} // namespace detail

inline std::string encode_weights(const ConvNet& net)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers())
    {
        switch (l.kind)
        {
            case LayerKind::Conv:
                layers.push_back(
                    {{"type", "conv2d"}, {"in_ch", l.conv.in_ch}, {"out_ch", l.conv.out_ch}, {"kernel", l.conv.kernel}});
                break;
            case LayerKind::LeakyRelu: layers.push_back({{"type", "leaky_relu"}, {"slope", l.slope}}); break;
            case LayerKind::Residual:
                layers.push_back({{"type", "residual_block"},
                                  {"channels", l.conv.in_ch},
                                  {"kernel", l.conv.kernel},
                                  {"slope", l.slope}});
                break;
            case LayerKind::BlurPool: layers.push_back({{"type", "blurpool"}}); break;
        }
    }
    const std::string header = nlohmann::json{{"layers", layers}}.dump();
    std::string out(detail::kDswMagic, 8);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (const auto& l : net.layers())
    {
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Residual)
            detail::put_conv(out, l.conv);
        if (l.kind == LayerKind::Residual)
            detail::put_conv(out, l.conv2);
    }
    return out;
}

/// Parses and validates a weight container (all checks of ConvNet::validate apply).
inline ConvNet decode_weights(const std::string& bytes)
{
    require(bytes.size() >= 8 && std::memcmp(bytes.data(), detail::kDswMagic, 8) == 0, ErrorCode::BadMagic,
            "weight file does not start with DISAW001");
    require(bytes.size() >= 12, ErrorCode::Truncated, "weight file truncated before the header length");
    const std::uint32_t hlen = detail::get_le<std::uint32_t>(bytes.data() + 8);
    require(bytes.size() - 12 >= hlen, ErrorCode::Truncated, "weight file truncated inside the header");

    std::vector<Layer> layers;
    try
    {
        const auto h = nlohmann::json::parse(bytes.substr(12, hlen));
        for (const auto& j : h.at("layers"))
        {
            const std::string type = j.at("type").get<std::string>();
            if (type == "conv2d")
            {
                const int in = j.at("in_ch").get<int>(), out = j.at("out_ch").get<int>(), k = j.at("kernel").get<int>();
                require(in >= 1 && out >= 1 && k >= 1 && k % 2 == 1 && in * out * k * k <= (1 << 26),
                        ErrorCode::MalformedWeights, "invalid conv2d shape");
                layers.push_back(Layer::convolution(in, out, k));
            }
            else if (type == "leaky_relu")
                layers.push_back(Layer::leaky_relu(j.at("slope").get<double>()));
            else if (type == "residual_block")
            {
                const int ch = j.at("channels").get<int>(), k = j.at("kernel").get<int>();
                require(ch >= 1 && k >= 1 && k % 2 == 1 && ch * ch * k * k <= (1 << 26), ErrorCode::MalformedWeights,
                        "invalid residual_block shape");
                layers.push_back(Layer::residual(ch, k, j.value("slope", 0.1)));
            }
            else if (type == "blurpool")
                layers.push_back(Layer::blurpool());
            else
                throw Error(ErrorCode::MalformedWeights, "unknown layer type '" + type + "'");
        }
    }
    catch (const nlohmann::json::exception& e)
    {
        throw Error(ErrorCode::MalformedWeights, std::string("bad weight header: ") + e.what());
    }

    std::size_t pos = 12 + hlen;
    for (auto& l : layers)
    {
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Residual)
            detail::get_conv(bytes, pos, l.conv);
        if (l.kind == LayerKind::Residual)
            detail::get_conv(bytes, pos, l.conv2);
    }
    require(pos == bytes.size(), ErrorCode::MalformedWeights, "weight file has trailing bytes");
    return ConvNet(std::move(layers));
}

inline void write_weights(const std::filesystem::path& path, const ConvNet& net)
{
    detail::write_file(path, encode_weights(net));
}

inline ConvNet load_weights(const std::filesystem::path& path)
{
    return decode_weights(detail::read_file(path));
}

/// Features of a scalar image; spacing is 4× the input spacing, feature pixel i sits over input pixel 4i.
inline FeatureMap forward(const ConvNet& net, const Image2D& img)
{
    require(img.channels() == 1, ErrorCode::ChannelMismatch, "network input must be a single-channel image");
    Tensor x(1, img.width(), img.height());
    std::copy(img.data().begin(), img.data().end(), x.data.begin());
    Tensor y = net.forward(std::move(x));
    const double s = net.stride();
    FeatureMap m(y.width, y.height, y.channels, {img.spacing().x * s, img.spacing().y * s}, img.origin());
    m.data = std::move(y.data);
    return m;
}

/// Per-slice forward, stacked with the volume's z spacing and origin.
inline FeatureVolume feature_volume(const ConvNet& net, const Volume3D& vol, int threads = thread_count())
{
    std::vector<FeatureMap> maps(vol.nz());
    parallel_for(
        vol.nz(), [&](int k) { maps[k] = forward(net, vol.slice(k)); }, threads);
    return stack_features(maps, vol.spacing().z, vol.origin().z);
}

} // namespace slicereg
