#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "routelab/prompt.hpp"

namespace routelab {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kFormatVersion = 1;

// Per-layer [n x d] float32 hidden states plus the prompt manifest. Row i of
// every layer belongs to manifest entry i. Instances are immutable; layer
// matrices are shared between copies.
class ActivationSet {
 public:
  ActivationSet() = default;
  ActivationSet(std::string model_id, Manifest manifest, std::map<int, Matrix> layers,
                nlohmann::json metadata = nlohmann::json::object());

  const std::string& model_id() const { return model_id_; }
  const Manifest& manifest() const { return manifest_; }
  const nlohmann::json& metadata() const { return metadata_; }

  std::vector<int> layers() const;
  bool has_layer(int layer) const { return layers_.contains(layer); }
  const Matrix& layer(int layer) const;
  std::shared_ptr<const Matrix> shared_layer(int layer) const;

  std::size_t rows() const { return manifest_.size(); }
  std::size_t dim() const { return dim_; }

  // Copy with one layer replaced (shape must match).
  ActivationSet with_layer(int layer, Matrix values) const;
  // Copy with a relabelled manifest; ids must match the current rows, in any
  // order, and row order is kept.
  ActivationSet with_manifest(const Manifest& updated) const;
  ActivationSet with_metadata(nlohmann::json metadata) const;

 private:
  using LayerMap = std::map<int, std::shared_ptr<const Matrix>>;
  ActivationSet(std::string model_id, Manifest manifest, LayerMap layers, nlohmann::json metadata,
                std::size_t dim);
  void validate() const;

  std::string model_id_;
  Manifest manifest_;
  LayerMap layers_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::size_t dim_ = 0;

  friend ActivationSet select_rows(const ActivationSet&, std::span<const std::size_t>);
};

// Bitwise equality of model id, manifest, metadata and every payload float.
bool bit_equal(const ActivationSet& a, const ActivationSet& b);

struct BlockChecksum {
  std::string name;
  std::uint64_t offset = 0;  // relative to payload start
  std::uint64_t bytes = 0;
  std::uint32_t crc32 = 0;
};

struct WriteSummary {
  std::uint32_t header_crc32 = 0;
  std::uint64_t header_bytes = 0;
  std::uint64_t payload_bytes = 0;
  std::uint64_t file_bytes = 0;
  std::vector<BlockChecksum> blocks;
};

nlohmann::json to_json(const WriteSummary& s);

WriteSummary write_activation_set(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet read_activation_set(const std::filesystem::path& path);

using PromptPredicate = std::function<bool(const PromptRecord&)>;

// Row indices matching `pred` in manifest order (possibly empty).
std::vector<std::size_t> matching_rows(const Manifest& manifest, const PromptPredicate& pred);
// Filters rows across all layers. Throws kEmptySelection when nothing matches.
ActivationSet select_subset(const ActivationSet& set, const PromptPredicate& pred);
ActivationSet select_rows(const ActivationSet& set, std::span<const std::size_t> rows);

// Low-level framing shared by every routelab binary file:
//
//   bytes 0..7    magic "RTLBFRM1"
//   bytes 8..15   header length H, uint64 little-endian
//   bytes 16..19  CRC-32 of the header bytes, uint32 little-endian
//   bytes 20..    H bytes of UTF-8 JSON header
//   then          payload: float32 little-endian blocks, contiguous
//
// The header carries "format", "version" and a "blocks" array with name,
// offset (relative to payload start), byte length and CRC-32 of each block.
struct FramedFile {
  nlohmann::json header;
  std::vector<std::string> block_names;
  std::vector<std::vector<float>> blocks;
};

WriteSummary write_framed(const std::filesystem::path& path, nlohmann::json header,
                          const std::vector<std::string>& block_names,
                          const std::vector<std::span<const float>>& blocks);
FramedFile read_framed(const std::filesystem::path& path, const std::string& expected_format);

// Throws kNonFinite naming the first offending position.
void check_finite(std::span<const float> values, const std::string& what);

}  // namespace routelab
