#include "byteveil/checkpoint.hpp"

#include "byteveil/error.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

namespace byteveil {

namespace {

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t off)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    return v;
}

} // namespace

nlohmann::json hyper_to_json(const Hyper& h)
{
    return {{"d", h.d},         {"e", h.e},
            {"window", h.window}, {"stride", h.stride},
            {"n_filters", h.n_filters}, {"h", h.hidden},
            {"decov_weight", h.decov_weight}};
}

Hyper hyper_from_json(const nlohmann::json& j)
{
    Hyper h;
    h.d = j.at("d").get<std::size_t>();
    h.e = j.at("e").get<std::size_t>();
    h.window = j.at("window").get<std::size_t>();
    h.stride = j.at("stride").get<std::size_t>();
    h.n_filters = j.at("n_filters").get<std::size_t>();
    h.hidden = j.at("h").get<std::size_t>();
    h.decov_weight = j.at("decov_weight").get<double>();
    return h;
}

std::string serialize_checkpoint(const ModelParams& params, const nlohmann::json& meta)
{
    params.validate();
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors(params)) {
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.data->size() * sizeof(float);
    }
    const nlohmann::json header = {
        {"hyper", hyper_to_json(params.hyper)}, {"tensors", manifest}, {"meta", meta}};
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& t : tensors(params))
        for (float v : *t.data)
            put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& blob)
{
    if (blob.size() < 4 || blob.compare(0, 4, kCheckpointMagic, 4) != 0)
        throw Error(ErrorCode::BadMagic, "not a byteveil checkpoint");
    if (blob.size() < 12)
        throw Error(ErrorCode::CorruptTensor, "checkpoint truncated inside the preamble");
    const std::uint32_t version = get_u32(blob, 4);
    if (version != kCheckpointVersion)
        throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                    ", expected " +
                                                    std::to_string(kCheckpointVersion));
    const std::size_t header_len = get_u32(blob, 8);
    if (blob.size() < 12 + header_len)
        throw Error(ErrorCode::CorruptTensor, "checkpoint truncated inside the header");

    nlohmann::json header;
    Checkpoint ck;
    try {
        header = nlohmann::json::parse(blob.begin() + 12,
                                       blob.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
        ck.params = ModelParams::zeros(hyper_from_json(header.at("hyper")));
        if (header.contains("meta"))
            ck.meta = header.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptTensor, std::string("bad checkpoint header: ") + e.what());
    }

    const std::size_t data_start = 12 + header_len;
    const auto& manifest = header.at("tensors");
    auto views = tensors(ck.params);
    if (!manifest.is_array() || manifest.size() != views.size())
        throw Error(ErrorCode::CorruptTensor, "tensor manifest does not match the model layout");

    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& entry = manifest[i];
        auto& view = views[i];
        if (entry.at("name").get<std::string>() != view.name ||
            entry.at("shape").get<std::vector<std::size_t>>() != view.shape ||
            entry.at("offset").get<std::size_t>() != expected_offset)
            throw Error(ErrorCode::CorruptTensor, "manifest entry for " + view.name + " is wrong");
        const std::size_t start = data_start + expected_offset;
        const std::size_t count = view.data->size();
        if (blob.size() < start + count * sizeof(float))
            throw Error(ErrorCode::CorruptTensor, "tensor " + view.name + " is truncated");
        for (std::size_t k = 0; k < count; ++k)
            (*view.data)[k] = std::bit_cast<float>(get_u32(blob, start + k * sizeof(float)));
        expected_offset += count * sizeof(float);
    }
    if (blob.size() != data_start + expected_offset)
        throw Error(ErrorCode::CorruptTensor, "trailing bytes after the last tensor");
    try {
        ck.params.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::CorruptTensor, e.what());
    }
    return ck;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const nlohmann::json& meta)
{
    const std::string blob = serialize_checkpoint(params, meta);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot create " + path.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out)
        throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint_with_meta(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(blob);
}

ModelParams load_checkpoint(const std::filesystem::path& path)
{
    return load_checkpoint_with_meta(path).params;
}

} // namespace byteveil
