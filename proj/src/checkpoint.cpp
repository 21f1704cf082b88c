#include "isfl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace isfl {

namespace {

constexpr int kFormatVersion = 1;

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw IoError("checkpoint: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f64_le(std::ostream& out, const std::vector<double>& values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        for (double v : values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            write_u64_le(out, bits);
        }
    }
}

void read_f64_le(std::istream& in, std::vector<double>& values) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!in) throw IoError("checkpoint: truncated payload");
    } else {
        for (double& v : values) {
            const std::uint64_t bits = read_u64_le(in);
            std::memcpy(&v, &bits, 8);
        }
    }
}

nlohmann::json read_manifest(std::istream& in) {
    const std::uint64_t len = read_u64_le(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("checkpoint: truncated manifest");
    return nlohmann::json::parse(text);
}

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["model_config"] = nlohmann::json::parse(model.config().to_json());
    nlohmann::json params = nlohmann::json::array();
    for (const Parameter& p : model.params().list()) {
        params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    }
    manifest["parameters"] = params;
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_u64_le(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter& p : model.params().list()) write_f64_le(out, p.value.values());
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    const nlohmann::json manifest = read_manifest(in);
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
        throw IoError("checkpoint " + path + ": unsupported format version");
    }
    Model model(ModelConfig::from_json(manifest.at("model_config").dump()), /*seed=*/0);

    const auto& params = manifest.at("parameters");
    if (params.size() != model.params().count()) {
        throw IoError("checkpoint " + path + ": manifest lists " + std::to_string(params.size()) +
                      " parameters but the model has " + std::to_string(model.params().count()));
    }
    for (const auto& entry : params) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        Parameter* p = model.params().find(name);
        if (p == nullptr) {
            throw IoError("checkpoint " + path + ": unknown parameter '" + name + "'");
        }
        if (p->value.shape() != shape) {
            throw IoError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                          format_shape(shape) + " but the model expects " +
                          format_shape(p->value.shape()));
        }
        read_f64_le(in, p->value.values());
    }
    return model;
}

std::vector<std::string> checkpoint_parameter_names(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    const nlohmann::json manifest = read_manifest(in);
    std::vector<std::string> names;
    for (const auto& entry : manifest.at("parameters")) {
        names.push_back(entry.at("name").get<std::string>());
    }
    return names;
}

} // namespace isfl
