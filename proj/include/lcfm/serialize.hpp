#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/tensor.hpp"

namespace lcfm {

// Binary container: magic "LCFMBIN1", u32 version, u64 header length, JSON
// header bytes, u64 payload count, then count little-endian f64 values.
// Checkpoints and dataset files share this envelope and differ only in the
// header's "kind" plus kind-specific metadata.

inline constexpr char kContainerMagic[8] = {'L', 'C', 'F', 'M', 'B', 'I', 'N', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

// Atomic: writes to "<path>.tmp" then renames.
void save_container(const std::string& path, const nlohmann::json& header,
                    const std::vector<double>& payload);
std::pair<nlohmann::json, std::vector<double>> load_container(const std::string& path);

// Checkpoint layer: named tensors packed into one payload.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Matrix*>>& tensors,
                  const nlohmann::json& meta);
std::map<std::string, Matrix> load_tensors(const std::string& path, nlohmann::json* meta_out);

// Dataset layer: one [count x dim] matrix plus free-form metadata.
void save_dataset(const std::string& path, const Matrix& data, const nlohmann::json& meta);
Matrix load_dataset(const std::string& path, nlohmann::json* meta_out);

// Atomic text write (configs, manifests, csv).
void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace lcfm
