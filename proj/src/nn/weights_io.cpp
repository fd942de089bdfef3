#include "triage/nn/weights_io.hpp"

#include "triage/error.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace triage::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'T', 'R', 'I', 'A', 'G', 'E', 'W'};

std::uint64_t fnv1a(const char* data, std::size_t n)
{
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

const char* block_name(BlockType b) { return b == BlockType::Plain ? "plain" : "residual"; }

struct Container {
    json header;
    std::vector<char> payload;
};

Container read_container(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::UnreadableFile, "cannot open weights file " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw Error(ErrorCode::VersionMismatch, path.string() + " is not a weights file");
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kWeightsFormatVersion)
        throw Error(ErrorCode::VersionMismatch, "weights format version " + std::to_string(version) + ", expected " +
                                                    std::to_string(kWeightsFormatVersion));
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || header_len > (std::uint64_t(1) << 30))
        throw Error(ErrorCode::UnreadableFile, "corrupt weights header length in " + path.string());
    std::string text(header_len, '\0');
    in.read(text.data(), std::streamsize(header_len));
    if (!in)
        throw Error(ErrorCode::UnreadableFile, "truncated weights header in " + path.string());
    Container c;
    try {
        c.header = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::UnreadableFile, std::string("weights header parse error: ") + e.what());
    }
    c.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (c.header.value("format_version", 0u) != kWeightsFormatVersion)
        throw Error(ErrorCode::VersionMismatch, "header format version mismatch in " + path.string());
    if (c.header.value("payload_fnv1a", std::uint64_t(0)) != fnv1a(c.payload.data(), c.payload.size()))
        throw Error(ErrorCode::UnreadableFile, "weights payload checksum mismatch in " + path.string());
    return c;
}

const json& find_model(const json& header, const std::string& name, const fs::path& path)
{
    for (const json& m : header.at("models"))
        if (m.at("name") == name)
            return m;
    throw Error(ErrorCode::KeyMismatch, "no model named '" + name + "' in " + path.string());
}

} // namespace

json spec_to_json(const NetworkSpec& s)
{
    return json{{"kind", to_string(s.kind)},
                {"levels", s.levels},
                {"base_channels", s.base_channels},
                {"max_channels", s.max_channels},
                {"block", block_name(s.block)},
                {"attach", s.attach == Attach::Latent ? "latent" : "spatial"},
                {"attach_level", s.attach_level},
                {"pyramid_levels", s.pyramid_levels},
                {"fc_hidden", s.fc_hidden},
                {"norm_groups", s.norm_groups},
                {"patch_size", s.patch_size}};
}

NetworkSpec spec_from_json(const json& j)
{
    try {
        NetworkSpec s = default_spec(net_kind_from_string(j.at("kind").get<std::string>()));
        s.levels = j.value("levels", s.levels);
        s.base_channels = j.value("base_channels", s.base_channels);
        s.max_channels = j.value("max_channels", s.max_channels);
        if (j.contains("block")) {
            const std::string b = j.at("block");
            if (b != "plain" && b != "residual")
                throw Error(ErrorCode::InvalidSpec, "block must be plain or residual");
            s.block = b == "plain" ? BlockType::Plain : BlockType::Residual;
        }
        if (j.contains("attach")) {
            const std::string a = j.at("attach");
            if (a != "latent" && a != "spatial")
                throw Error(ErrorCode::InvalidSpec, "attach must be latent or spatial");
            s.attach = a == "latent" ? Attach::Latent : Attach::Spatial;
        }
        s.attach_level = j.value("attach_level", s.attach_level);
        s.pyramid_levels = j.value("pyramid_levels", s.pyramid_levels);
        s.fc_hidden = j.value("fc_hidden", s.fc_hidden);
        s.norm_groups = j.value("norm_groups", s.norm_groups);
        s.patch_size = j.value("patch_size", s.patch_size);
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidSpec, std::string("network spec: ") + e.what());
    }
}

template <typename T>
void save_weights(const std::vector<NamedModel<T>>& models, const fs::path& path)
{
    json header{{"format_version", kWeightsFormatVersion}, {"models", json::array()}};
    std::vector<double> values;
    for (const auto& nm : models) {
        json entry{{"name", nm.name}, {"spec", spec_to_json(nm.model->spec())}, {"tensors", json::array()}};
        for (Param<T>* p : nm.model->parameters()) {
            entry["tensors"].push_back({{"key", p->name}, {"shape", p->shape}, {"offset", values.size()}});
            for (T v : p->value) {
                if (!std::isfinite(double(v)))
                    throw Error(ErrorCode::IOFailure, "non-finite value in parameter " + p->name);
                values.push_back(double(v));
            }
        }
        header["models"].push_back(std::move(entry));
    }
    const char* payload = reinterpret_cast<const char*>(values.data());
    const std::size_t payload_size = values.size() * sizeof(double);
    header["payload_fnv1a"] = fnv1a(payload, payload_size);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IOFailure, "cannot write " + path.string());
    const std::uint32_t version = kWeightsFormatVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    out.write(payload, std::streamsize(payload_size));
    if (!out)
        throw Error(ErrorCode::IOFailure, "short write to " + path.string());
}

template <typename T>
void save_weights(Network<T>& model, const fs::path& path, const std::string& name)
{
    save_weights<T>(std::vector<NamedModel<T>>{{name, &model}}, path);
}

template <typename T>
void load_weights(Network<T>& model, const fs::path& path, const std::string& name)
{
    const Container c = read_container(path);
    const json& entry = find_model(c.header, name, path);
    const NetworkSpec stored = spec_from_json(entry.at("spec"));
    if (!(stored == model.spec()))
        throw Error(ErrorCode::KeyMismatch, "stored network spec differs from the target network");
    const auto params = model.parameters();
    const json& tensors = entry.at("tensors");
    if (tensors.size() != params.size())
        throw Error(ErrorCode::KeyMismatch, "parameter count differs from the target network");
    const std::size_t available = c.payload.size() / sizeof(double);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const json& t = tensors[i];
        Param<T>& p = *params[i];
        if (t.at("key") != p.name || t.at("shape").get<std::vector<int>>() != p.shape)
            throw Error(ErrorCode::KeyMismatch, "parameter '" + p.name + "' does not match stored '" +
                                                    t.at("key").get<std::string>() + "'");
        const std::size_t offset = t.at("offset");
        if (offset + p.size() > available)
            throw Error(ErrorCode::UnreadableFile, "weights payload truncated");
        for (std::size_t k = 0; k < p.size(); ++k) {
            double v;
            std::memcpy(&v, c.payload.data() + (offset + k) * sizeof(double), sizeof v);
            p.value[k] = T(v);
        }
    }
}

std::vector<std::string> model_names(const fs::path& path)
{
    const Container c = read_container(path);
    std::vector<std::string> names;
    for (const json& m : c.header.at("models"))
        names.push_back(m.at("name"));
    return names;
}

NetworkSpec read_spec(const fs::path& path, const std::string& name)
{
    const Container c = read_container(path);
    return spec_from_json(find_model(c.header, name, path).at("spec"));
}

template <typename T>
std::unique_ptr<Network<T>> load_network(const fs::path& path, const std::string& name)
{
    auto net = std::make_unique<Network<T>>(read_spec(path, name));
    load_weights(*net, path, name);
    return net;
}

template void save_weights<float>(const std::vector<NamedModel<float>>&, const fs::path&);
template void save_weights<double>(const std::vector<NamedModel<double>>&, const fs::path&);
template void save_weights<float>(Network<float>&, const fs::path&, const std::string&);
template void save_weights<double>(Network<double>&, const fs::path&, const std::string&);
template void load_weights<float>(Network<float>&, const fs::path&, const std::string&);
template void load_weights<double>(Network<double>&, const fs::path&, const std::string&);
template std::unique_ptr<Network<float>> load_network<float>(const fs::path&, const std::string&);
template std::unique_ptr<Network<double>> load_network<double>(const fs::path&, const std::string&);

} // namespace triage::nn
