#ifndef BYTEVEIL_CHECKPOINT_HPP
#define BYTEVEIL_CHECKPOINT_HPP

#include "byteveil/malconv.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace byteveil {

// Layout: "BVML" | u32 version | u32 header length | JSON header | tensors.
// The header holds the hyperparameters, a tensor manifest (name, shape,
// byte offset into the tensor block) and free-form metadata. Tensors are
// little-endian float32, row-major, in manifest order.
inline constexpr char kCheckpointMagic[4] = {'B', 'V', 'M', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    nlohmann::json meta = nlohmann::json::object();
};

std::string serialize_checkpoint(const ModelParams& params,
                                 const nlohmann::json& meta = nlohmann::json::object());
Checkpoint deserialize_checkpoint(const std::string& blob);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint_with_meta(const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

nlohmann::json hyper_to_json(const Hyper& hyper);
Hyper hyper_from_json(const nlohmann::json& j);

} // namespace byteveil

#endif
