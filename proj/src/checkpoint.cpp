#include "npbg/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace npbg {

namespace {

constexpr char kCkptMagic[8] = {'N', 'P', 'B', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

uint16_t read_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensorf>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kCkptMagic, 8);
    write_u32(os, kCkptVersion);
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff)
            throw std::runtime_error("checkpoint: tensor name too long: " + name);
        write_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.rank()));
        for (int64_t e : t.shape) write_u32(os, static_cast<uint32_t>(e));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<std::pair<std::string, Tensorf>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    const uint32_t version = read_u32(is);
    if (version != kCkptVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t count = read_u32(is);
    std::vector<std::pair<std::string, Tensorf>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = read_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rank = read_u32(is);
        std::vector<int64_t> shape(rank);
        for (uint32_t r = 0; r < rank; ++r) shape[r] = read_u32(is);
        std::vector<float> values(static_cast<size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
        out.emplace_back(std::move(name), Tensorf(std::move(shape), std::move(values)));
    }
    return out;
}

void save_rendernet(const std::string& path, const RenderNetParams<float>& params) {
    save_checkpoint(path, params.entries);
    nlohmann::json j;
    j["levels"] = params.config.levels;
    j["in_channels"] = params.config.in_channels;
    j["base_channels"] = params.config.base_channels;
    j["pyramid_levels"] = params.config.pyramid_levels;
    std::ofstream os(path + ".json");
    if (!os) throw std::runtime_error("checkpoint: cannot write sidecar '" + path + ".json'");
    os << j.dump(2) << "\n";
}

RenderNetParams<float> load_rendernet(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw std::runtime_error("checkpoint: missing sidecar '" + path + ".json'");
    nlohmann::json j;
    is >> j;
    RenderNetParams<float> params;
    params.config.levels = j.at("levels").get<int>();
    params.config.in_channels = j.at("in_channels").get<int>();
    params.config.base_channels = j.at("base_channels").get<int>();
    params.config.pyramid_levels = j.at("pyramid_levels").get<int>();
    params.config.validate();
    params.entries = load_checkpoint(path);
    // Cross-check against a freshly built skeleton: same names, same shapes.
    RenderNetParams<float> skeleton = build_rendernet<float>(params.config, 0);
    if (skeleton.entries.size() != params.entries.size())
        throw std::runtime_error("checkpoint: tensor count does not match config");
    for (size_t i = 0; i < skeleton.entries.size(); ++i) {
        if (skeleton.entries[i].first != params.entries[i].first)
            throw std::runtime_error("checkpoint: unexpected tensor '" + params.entries[i].first +
                                     "', expected '" + skeleton.entries[i].first + "'");
        if (skeleton.entries[i].second.shape != params.entries[i].second.shape)
            throw std::runtime_error("checkpoint: tensor '" + params.entries[i].first +
                                     "' has shape " + shape_str(params.entries[i].second.shape) +
                                     ", config implies " +
                                     shape_str(skeleton.entries[i].second.shape));
    }
    return params;
}

void save_descriptors(const std::string& path, const Tensorf& desc) {
    if (desc.rank() != 2)
        throw std::runtime_error("descriptors: expected rank-2 [N,M], got " +
                                 shape_str(desc.shape));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("descriptors: cannot open '" + path + "' for writing");
    os.write("NPBD", 4);
    write_u32(os, static_cast<uint32_t>(desc.shape[0]));
    write_u32(os, static_cast<uint32_t>(desc.shape[1]));
    os.write(reinterpret_cast<const char*>(desc.data()),
             static_cast<std::streamsize>(desc.numel() * sizeof(float)));
    if (!os) throw std::runtime_error("descriptors: write failed for '" + path + "'");
}

Tensorf load_descriptors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("descriptors: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NPBD", 4) != 0)
        throw std::runtime_error("descriptors: bad magic in '" + path + "'");
    const int64_t n = read_u32(is);
    const int64_t m = read_u32(is);
    std::vector<float> values(static_cast<size_t>(n * m));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!is) throw std::runtime_error("descriptors: truncated file '" + path + "'");
    return Tensorf({n, m}, std::move(values));
}

}  // namespace npbg
