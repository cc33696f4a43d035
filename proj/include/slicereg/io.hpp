#pragma once

// Raster container (".imv") and portable anymap import/export.
//
// .imv layout:
//   8 bytes   magic "IMVOL001"
//   4 bytes   little-endian u32 header length
//   header    UTF-8 JSON: dims [nx,ny,nz], spacing_um [sx,sy,sz], origin_um [ox,oy,oz],
//             channels, dtype ("f32" | "u8" | "u16")
//   payload   little-endian samples, channel fastest, then x, y, z

#include "error.hpp"
#include "image.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace slicereg
{

enum class SampleType
{
    F32,
    U8,
    U16,
};

inline const char* dtype_name(SampleType t)
{
    switch (t)
    {
        case SampleType::F32: return "f32";
        case SampleType::U8: return "u8";
        case SampleType::U16: return "u16";
    }
    return "f32";
}

inline SampleType parse_dtype(const std::string& s)
{
    if (s == "f32")
        return SampleType::F32;
    if (s == "u8")
        return SampleType::U8;
    if (s == "u16")
        return SampleType::U16;
    throw Error(ErrorCode::Format, "unknown dtype '" + s + "'");
}

/// Untyped raster as stored on disk; samples are always decoded to float.
struct Raster
{
    std::array<int, 3> dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};
    int channels = 1;
    SampleType dtype = SampleType::F32;
    std::vector<float> data;
};

namespace detail
{
inline constexpr char kImvMagic[8] = {'I', 'M', 'V', 'O', 'L', '0', '0', '1'};

template <typename T>
void put_le(std::string& out, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const char* p)
{
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::Io, "write failed for '" + path.string() + "'");
}
} // namespace detail

inline std::string encode_imv(const Raster& r)
{
    const std::size_t n = static_cast<std::size_t>(r.dims[0]) * r.dims[1] * r.dims[2] * r.channels;
    require(r.data.size() == n, ErrorCode::DimensionMismatch, "raster data length does not match header");

    nlohmann::json h;
    h["dims"] = {r.dims[0], r.dims[1], r.dims[2]};
    h["spacing_um"] = {r.spacing.x, r.spacing.y, r.spacing.z};
    h["origin_um"] = {r.origin.x, r.origin.y, r.origin.z};
    h["channels"] = r.channels;
    h["dtype"] = dtype_name(r.dtype);
    const std::string header = h.dump();

    std::string out(detail::kImvMagic, 8);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (float v : r.data)
    {
        switch (r.dtype)
        {
            case SampleType::F32: detail::put_le<float>(out, v); break;
            case SampleType::U8:
                detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
                break;
            case SampleType::U16:
                detail::put_le<std::uint16_t>(out,
                                              static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L)));
                break;
        }
    }
    return out;
}

inline Raster decode_imv(const std::string& bytes)
{
    require(bytes.size() >= 12 && std::memcmp(bytes.data(), detail::kImvMagic, 8) == 0, ErrorCode::Format,
            "not an IMVOL001 container");
    const std::uint32_t hlen = detail::get_le<std::uint32_t>(bytes.data() + 8);
    require(bytes.size() >= 12 + static_cast<std::size_t>(hlen), ErrorCode::Format, "truncated header");

    Raster r;
    try
    {
        auto h = nlohmann::json::parse(bytes.substr(12, hlen));
        for (int a = 0; a < 3; ++a)
            r.dims[a] = h.at("dims").at(a).get<int>();
        r.spacing = {h.at("spacing_um").at(0).get<double>(), h.at("spacing_um").at(1).get<double>(),
                     h.at("spacing_um").at(2).get<double>()};
        if (h.contains("origin_um"))
            r.origin = {h["origin_um"].at(0).get<double>(), h["origin_um"].at(1).get<double>(),
                        h["origin_um"].at(2).get<double>()};
        r.channels = h.at("channels").get<int>();
        r.dtype = parse_dtype(h.at("dtype").get<std::string>());
    }
    catch (const nlohmann::json::exception& e)
    {
        throw Error(ErrorCode::Format, std::string("bad container header: ") + e.what());
    }
    require(r.dims[0] >= 1 && r.dims[1] >= 1 && r.dims[2] >= 1 && r.channels >= 1, ErrorCode::Format,
            "container dims and channels must be >= 1");

    const std::size_t n = static_cast<std::size_t>(r.dims[0]) * r.dims[1] * r.dims[2] * r.channels;
    const std::size_t width = r.dtype == SampleType::F32 ? 4 : (r.dtype == SampleType::U16 ? 2 : 1);
    require(bytes.size() == 12 + hlen + n * width, ErrorCode::Format, "payload size does not match header");

    r.data.resize(n);
    const char* p = bytes.data() + 12 + hlen;
    for (std::size_t i = 0; i < n; ++i, p += width)
    {
        switch (r.dtype)
        {
            case SampleType::F32: r.data[i] = detail::get_le<float>(p); break;
            case SampleType::U8: r.data[i] = static_cast<float>(detail::get_le<std::uint8_t>(p)); break;
            case SampleType::U16: r.data[i] = static_cast<float>(detail::get_le<std::uint16_t>(p)); break;
        }
        require(std::isfinite(r.data[i]), ErrorCode::Format, "non-finite sample in container");
    }
    return r;
}

inline void write_raster(const std::filesystem::path& path, const Raster& r)
{
    detail::write_file(path, encode_imv(r));
}

inline Raster read_raster(const std::filesystem::path& path)
{
    return decode_imv(detail::read_file(path));
}

inline Raster to_raster(const Image2D& img)
{
    const auto d = img.data();
    return Raster{{img.width(), img.height(), 1},
                  {img.spacing().x, img.spacing().y, 1.0},
                  {img.origin().x, img.origin().y, 0.0},
                  img.channels(),
                  SampleType::F32,
                  std::vector<float>(d.begin(), d.end())};
}

inline Raster to_raster(const Volume3D& vol)
{
    const auto d = vol.data();
    return Raster{vol.dims(), vol.spacing(), vol.origin(), 1, SampleType::F32, std::vector<float>(d.begin(), d.end())};
}

inline Image2D image_from_raster(Raster r)
{
    require(r.dims[2] == 1, ErrorCode::Format, "expected a 2D raster (nz = 1)");
    Grid2D g{r.dims[0], r.dims[1], {r.spacing.x, r.spacing.y}, {r.origin.x, r.origin.y}};
    return Image2D(g, r.channels, std::move(r.data));
}

inline Volume3D volume_from_raster(Raster r)
{
    require(r.channels == 1, ErrorCode::Format, "expected a single-channel volume");
    return Volume3D(r.dims, r.spacing, r.origin, std::move(r.data));
}

inline void write_image(const std::filesystem::path& path, const Image2D& img)
{
    write_raster(path, to_raster(img));
}

inline void write_volume(const std::filesystem::path& path, const Volume3D& vol)
{
    write_raster(path, to_raster(vol));
}

inline Image2D read_image(const std::filesystem::path& path)
{
    return image_from_raster(read_raster(path));
}

inline Volume3D read_volume(const std::filesystem::path& path)
{
    return volume_from_raster(read_raster(path));
}

/// Reads binary PGM (P5) or PPM (P6), 8 or 16 bit. Samples keep their integer values.
inline Image2D read_pnm(const std::filesystem::path& path, Vec2 spacing = {1.0, 1.0})
{
    const std::string bytes = detail::read_file(path);
    std::size_t pos = 0;
    auto next_token = [&]() {
        while (pos < bytes.size())
        {
            if (bytes[pos] == '#')
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
            else if (std::isspace(static_cast<unsigned char>(bytes[pos])))
                ++pos;
            else
                break;
        }
        std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
            ++pos;
        return bytes.substr(start, pos - start);
    };
    const std::string magic = next_token();
    require(magic == "P5" || magic == "P6", ErrorCode::Format, "only binary P5/P6 anymaps are supported");
    const int channels = magic == "P5" ? 1 : 3;
    int w = 0, h = 0, maxval = 0;
    try
    {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    }
    catch (const std::exception&)
    {
        throw Error(ErrorCode::Format, "malformed anymap header");
    }
    require(w >= 1 && h >= 1 && maxval >= 1 && maxval <= 65535, ErrorCode::Format, "invalid anymap header");
    ++pos; // single whitespace after maxval
    const int bps = maxval < 256 ? 1 : 2;
    const std::size_t n = static_cast<std::size_t>(w) * h * channels;
    require(bytes.size() >= pos + n * bps, ErrorCode::Format, "anymap payload truncated");

    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        if (bps == 1)
            data[i] = static_cast<unsigned char>(bytes[pos + i]);
        else // big-endian per the netpbm format
            data[i] = static_cast<float>((static_cast<unsigned char>(bytes[pos + 2 * i]) << 8) |
                                         static_cast<unsigned char>(bytes[pos + 2 * i + 1]));
    }
    return Image2D(Grid2D{w, h, spacing, {0.0, 0.0}}, channels, std::move(data));
}

/// Writes a single-channel image as binary PGM; [lo, hi] maps linearly onto [0, maxval].
inline void write_pgm(const std::filesystem::path& path, const Image2D& img, int bits = 8, double lo = 0.0,
                      double hi = 1.0)
{
    require(img.channels() == 1, ErrorCode::ChannelMismatch, "PGM export needs a single-channel image");
    require(bits == 8 || bits == 16, ErrorCode::InvalidArgument, "PGM bit depth must be 8 or 16");
    require(hi > lo, ErrorCode::InvalidArgument, "PGM value range must be non-empty");
    const int maxval = bits == 8 ? 255 : 65535;
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n" +
                      std::to_string(maxval) + "\n";
    for (float v : img.data())
    {
        const long q = std::clamp(std::lround((v - lo) / (hi - lo) * maxval), 0L, static_cast<long>(maxval));
        if (bits == 8)
            out.push_back(static_cast<char>(q));
        else
        {
            out.push_back(static_cast<char>(q >> 8));
            out.push_back(static_cast<char>(q & 0xff));
        }
    }
    detail::write_file(path, out);
}

} // namespace slicereg
