#include "nighthaze/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "nighthaze/error.hpp"

namespace nighthaze::nn {

namespace {

constexpr char kMagic[8] = {'N', 'H', 'Z', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated checkpoint " + path.string());
    return v;
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
    const auto n = get<std::uint64_t>(is, path);
    if (n > (1u << 20)) throw FormatError("implausible string length in checkpoint " + path.string());
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated checkpoint " + path.string());
    return s;
}

}  // namespace

void save_checkpoint(const PriorQueryTransformer& model, std::uint64_t step, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    put_string(os, model.config().serialize());
    put<std::uint64_t>(os, step);
    put<std::uint64_t>(os, model.parameters().size());
    for (const auto& [name, t] : model.parameters()) {
        put_string(os, name);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) put<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw NotFoundError("checkpoint not found: " + path.string());
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[sizeof kMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw FormatError("not a checkpoint file: " + path.string());
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    ModelConfig cfg;
    try {
        cfg = ModelConfig::parse(get_string(is, path));
    } catch (const ParameterError& e) {
        throw FormatError("bad config in checkpoint " + path.string() + ": " + e.what());
    }
    LoadedCheckpoint out{PriorQueryTransformer(cfg), 0};
    out.step = get<std::uint64_t>(is, path);
    const auto count = get<std::uint64_t>(is, path);
    if (count != out.model.parameters().size()) throw FormatError("parameter count mismatch in " + path.string());
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::string name = get_string(is, path);
        if (!out.model.has_param(name)) throw FormatError("unexpected parameter '" + name + "' in " + path.string());
        Tensor& t = out.model.param(name);
        const auto rank = get<std::uint32_t>(is, path);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::int32_t>(is, path));
        if (shape != t.shape()) throw FormatError("shape mismatch for '" + name + "' in " + path.string());
        if (!is.read(reinterpret_cast<char*>(t.values().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
            throw FormatError("truncated checkpoint " + path.string());
        }
    }
    return out;
}

}  // namespace nighthaze::nn
