#include "i2p/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "i2p/errors.hpp"

namespace i2p::io {

namespace {

constexpr char kCloudMagic[4] = {'I', '2', 'P', 'C'};

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("unexpected end of file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void put_f32s(std::ostream& os, const std::vector<float>& v) {
    for (float f : v) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(os, u);
    }
}

void get_f32s(std::istream& is, std::vector<float>& v) {
    for (auto& f : v) {
        const std::uint32_t u = get_u32(is);
        std::memcpy(&f, &u, 4);
    }
}

std::string lower_ext(const fs::path& p) {
    auto e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

// Next header token of a netpbm file, skipping whitespace and comments.
std::string pnm_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError("truncated netpbm header");
    return tok;
}

std::size_t pnm_number(std::istream& is) {
    const auto tok = pnm_token(is);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw DataError("bad netpbm header field '" + tok + "'");
    return std::stoul(tok);
}

}  // namespace

void write_i2pc(const fs::path& path, const pointops::PointCloud& pc) {
    auto out = open_out(path, std::ios::binary);
    out.write(kCloudMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(pc.size()));
    put_f32s(out, pc.xyz);
    if (!out) throw DataError("short write to " + path.string());
}

pointops::PointCloud read_i2pc(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCloudMagic, 4) != 0)
        throw DataError(path.string() + ": not an I2PC point cloud");
    const std::uint32_t n = get_u32(in);
    std::vector<float> xyz(std::size_t{n} * 3);
    try {
        get_f32s(in, xyz);
    } catch (const DataError&) {
        throw DataError(path.string() + ": truncated point data");
    }
    pointops::PointCloud pc(std::move(xyz));
    if (!pc.all_finite()) throw DataError(path.string() + ": non-finite coordinates");
    return pc;
}

pointops::PointCloud read_xyz(const fs::path& path) {
    auto in = open_in(path);
    pointops::PointCloud pc;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ss(line);
        float x, y, z;
        if (!(ss >> x >> y >> z) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y z'");
        pc.push_back({x, y, z});
    }
    return pc;
}

pointops::PointCloud read_cloud(const fs::path& path) {
    const auto e = lower_ext(path);
    if (e == ".i2pc") return read_i2pc(path);
    if (e == ".xyz") return read_xyz(path);
    throw DataError(path.string() + ": unsupported point cloud format");
}

void write_ppm(const fs::path& path, const encoders::ImageSample& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_ppm: only 1- or 3-channel images, got " + std::to_string(img.channels));
    if (img.pixels.size() != img.height * img.width * img.channels) throw DataError("write_ppm: pixel count mismatch");
    auto out = open_out(path, std::ios::binary);
    out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path.string());
}

encoders::ImageSample read_ppm(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    const auto magic = pnm_token(in);
    if (magic != "P5" && magic != "P6") throw DataError(path.string() + ": expected binary PGM/PPM (P5/P6)");
    encoders::ImageSample img;
    img.channels = magic == "P6" ? 3 : 1;
    img.width = pnm_number(in);
    img.height = pnm_number(in);
    const std::size_t maxval = pnm_number(in);
    if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit netpbm files are supported");
    if (img.width == 0 || img.height == 0) throw DataError(path.string() + ": empty image");
    std::vector<unsigned char> bytes(img.width * img.height * img.channels);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw DataError(path.string() + ": truncated pixel data");
    img.pixels.resize(bytes.size());
    const auto mv = static_cast<float>(maxval);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / mv;
    return img;
}

encoders::ImageSample read_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw DataError(path.string() + ": " + image.message);
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError(path.string() + ": " + image.message);
    }
    encoders::ImageSample img;
    img.width = image.width;
    img.height = image.height;
    img.channels = color ? 3 : 1;
    img.pixels.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
    return img;
}

encoders::ImageSample read_image(const fs::path& path) {
    const auto e = lower_ext(path);
    if (e == ".ppm" || e == ".pgm") return read_ppm(path);
    if (e == ".png") return read_png(path);
    throw DataError(path.string() + ": unsupported image format");
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw DataError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
    return std::any_of(tensors.begin(), tensors.end(), [&](const auto& p) { return p.first == name; });
}

void save_checkpoint(const fs::path& manifest, const Checkpoint& ckpt) {
    auto blob = manifest;
    blob.replace_extension(".bin");
    nlohmann::json m;
    m["format"] = "i2p-checkpoint";
    m["blob"] = blob.filename().string();
    m["meta"] = ckpt.meta;
    nlohmann::json params = nlohmann::json::array();
    std::size_t offset = 0;
    {
        auto out = open_out(blob, std::ios::binary);
        for (const auto& [name, t] : ckpt.tensors) {
            params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
            put_f32s(out, t.vec());
            offset += t.size() * sizeof(float);
        }
        if (!out) throw DataError("short write to " + blob.string());
    }
    m["tensors"] = std::move(params);
    m["bytes"] = offset;
    auto out = open_out(manifest);
    out << m.dump(1) << '\n';
}

Checkpoint load_checkpoint(const fs::path& manifest) {
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_text(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest.string() + ": malformed checkpoint manifest: " + e.what());
    }
    if (m.value("format", "") != "i2p-checkpoint") throw DataError(manifest.string() + ": not a checkpoint manifest");
    const auto blob = manifest.parent_path() / m.at("blob").get<std::string>();
    auto in = open_in(blob, std::ios::binary);
    Checkpoint ck;
    ck.meta = m.value("meta", nlohmann::json::object());
    for (const auto& item : m.at("tensors")) {
        Shape shape = item.at("shape").get<Shape>();
        Tensor<float> t(shape);
        in.seekg(static_cast<std::streamoff>(item.at("offset").get<std::size_t>()));
        try {
            get_f32s(in, t.vec());
        } catch (const DataError&) {
            throw DataError(blob.string() + ": truncated tensor '" + item.at("name").get<std::string>() + "'");
        }
        ck.tensors.emplace_back(item.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

std::string read_text(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("short write to " + path.string());
}

}  // namespace i2p::io
