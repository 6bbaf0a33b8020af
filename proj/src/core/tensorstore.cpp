#include "routelab/tensorstore.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "routelab/crc32.hpp"
#include "routelab/error.hpp"

namespace routelab {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'T', 'L', 'B', 'F', 'R', 'M', '1'};
constexpr std::size_t kPreambleBytes = 8 + 8 + 4;
constexpr const char* kActivationFormat = "routelab.activations";

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

// Float payloads are stored little-endian regardless of host order.
std::vector<std::byte> encode_floats(std::span<const float> values) {
  std::vector<std::byte> out(values.size() * sizeof(float));
  std::memcpy(out.data(), values.data(), out.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < out.size(); i += 4) {
      std::swap(out[i], out[i + 3]);
      std::swap(out[i + 1], out[i + 2]);
    }
  }
  return out;
}

std::vector<float> decode_floats(const std::byte* data, std::size_t count) {
  std::vector<float> out(count);
  std::memcpy(out.data(), data, count * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<std::byte*>(out.data());
    for (std::size_t i = 0; i < count * 4; i += 4) {
      std::swap(b[i], b[i + 3]);
      std::swap(b[i + 1], b[i + 2]);
    }
  }
  return out;
}

std::string layer_block_name(int layer) { return "layer:" + std::to_string(layer); }

}  // namespace

void check_finite(std::span<const float> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      fail(ErrorCode::kNonFinite,
           "non-finite value in " + what + " at flat index " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// ActivationSet

ActivationSet::ActivationSet(std::string model_id, Manifest manifest, std::map<int, Matrix> layers,
                             nlohmann::json metadata)
    : model_id_(std::move(model_id)),
      manifest_(std::move(manifest)),
      metadata_(metadata.is_null() ? nlohmann::json::object() : std::move(metadata)) {
  for (auto& [layer, m] : layers) {
    layers_.emplace(layer, std::make_shared<const Matrix>(std::move(m)));
  }
  if (!layers_.empty()) dim_ = static_cast<std::size_t>(layers_.begin()->second->cols());
  validate();
}

ActivationSet::ActivationSet(std::string model_id, Manifest manifest, LayerMap layers,
                             nlohmann::json metadata, std::size_t dim)
    : model_id_(std::move(model_id)),
      manifest_(std::move(manifest)),
      layers_(std::move(layers)),
      metadata_(std::move(metadata)),
      dim_(dim) {}

void ActivationSet::validate() const {
  validate_manifest(manifest_);
  if (layers_.empty()) fail(ErrorCode::kInvalidArgument, "activation set has no layers");
  for (const auto& [layer, m] : layers_) {
    if (static_cast<std::size_t>(m->rows()) != manifest_.size()) {
      fail(ErrorCode::kDimensionMismatch,
           "layer " + std::to_string(layer) + " has " + std::to_string(m->rows()) +
               " rows but manifest has " + std::to_string(manifest_.size()));
    }
    if (static_cast<std::size_t>(m->cols()) != dim_) {
      fail(ErrorCode::kDimensionMismatch, "layer " + std::to_string(layer) +
                                              " hidden dimension differs from other layers");
    }
    check_finite(std::span<const float>(m->data(), static_cast<std::size_t>(m->size())),
                 "layer " + std::to_string(layer));
  }
}

std::vector<int> ActivationSet::layers() const {
  std::vector<int> out;
  out.reserve(layers_.size());
  for (const auto& [layer, m] : layers_) out.push_back(layer);
  return out;
}

const Matrix& ActivationSet::layer(int layer) const { return *shared_layer(layer); }

std::shared_ptr<const Matrix> ActivationSet::shared_layer(int layer) const {
  auto it = layers_.find(layer);
  if (it == layers_.end()) {
    fail(ErrorCode::kMissingLayer, "layer " + std::to_string(layer) + " not present in set");
  }
  return it->second;
}

ActivationSet ActivationSet::with_layer(int layer, Matrix values) const {
  if (!has_layer(layer)) {
    fail(ErrorCode::kMissingLayer, "layer " + std::to_string(layer) + " not present in set");
  }
  if (static_cast<std::size_t>(values.rows()) != rows() ||
      static_cast<std::size_t>(values.cols()) != dim_) {
    fail(ErrorCode::kDimensionMismatch, "replacement layer has the wrong shape");
  }
  check_finite(std::span<const float>(values.data(), static_cast<std::size_t>(values.size())),
               "layer " + std::to_string(layer));
  LayerMap layers = layers_;
  layers[layer] = std::make_shared<const Matrix>(std::move(values));
  return ActivationSet(model_id_, manifest_, std::move(layers), metadata_, dim_);
}

ActivationSet ActivationSet::with_manifest(const Manifest& updated) const {
  if (updated.size() != manifest_.size()) {
    fail(ErrorCode::kDimensionMismatch, "sidecar manifest has " + std::to_string(updated.size()) +
                                            " records, set has " + std::to_string(rows()));
  }
  validate_manifest(updated);
  std::map<std::string, const PromptRecord*> by_id;
  for (const auto& r : updated) by_id[r.prompt_id] = &r;
  Manifest relabelled;
  relabelled.reserve(manifest_.size());
  for (const auto& r : manifest_) {
    auto it = by_id.find(r.prompt_id);
    if (it == by_id.end()) {
      fail(ErrorCode::kFormat, "sidecar manifest lacks prompt_id '" + r.prompt_id + "'");
    }
    relabelled.push_back(*it->second);
  }
  return ActivationSet(model_id_, std::move(relabelled), layers_, metadata_, dim_);
}

ActivationSet ActivationSet::with_metadata(nlohmann::json metadata) const {
  return ActivationSet(model_id_, manifest_, layers_, std::move(metadata), dim_);
}

bool bit_equal(const ActivationSet& a, const ActivationSet& b) {
  if (a.model_id() != b.model_id() || a.manifest() != b.manifest() ||
      a.metadata() != b.metadata() || a.layers() != b.layers() || a.dim() != b.dim()) {
    return false;
  }
  for (int layer : a.layers()) {
    const Matrix& x = a.layer(layer);
    const Matrix& y = b.layer(layer);
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Framing

nlohmann::json to_json(const WriteSummary& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks) {
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"bytes", b.bytes}, {"crc32", b.crc32}});
  }
  return {{"header_crc32", s.header_crc32},
          {"header_bytes", s.header_bytes},
          {"payload_bytes", s.payload_bytes},
          {"file_bytes", s.file_bytes},
          {"blocks", blocks}};
}

WriteSummary write_framed(const std::filesystem::path& path, nlohmann::json header,
                          const std::vector<std::string>& block_names,
                          const std::vector<std::span<const float>>& blocks) {
  if (block_names.size() != blocks.size()) {
    fail(ErrorCode::kInvalidArgument, "block name count does not match block count");
  }
  WriteSummary summary;
  std::vector<std::vector<std::byte>> encoded;
  encoded.reserve(blocks.size());
  nlohmann::json block_json = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    check_finite(blocks[i], "block " + block_names[i]);
    encoded.push_back(encode_floats(blocks[i]));
    BlockChecksum c;
    c.name = block_names[i];
    c.offset = offset;
    c.bytes = encoded.back().size();
    c.crc32 = crc32(encoded.back());
    offset += c.bytes;
    block_json.push_back({{"name", c.name}, {"offset", c.offset}, {"bytes", c.bytes}, {"crc32", c.crc32}});
    summary.blocks.push_back(std::move(c));
  }
  header["version"] = kFormatVersion;
  header["dtype"] = "float32";
  header["byte_order"] = "little";
  header["blocks"] = std::move(block_json);
  const std::string header_text = header.dump();
  const auto header_bytes = std::as_bytes(std::span(header_text.data(), header_text.size()));

  summary.header_crc32 = crc32(header_bytes);
  summary.header_bytes = header_text.size();
  summary.payload_bytes = offset;
  summary.file_bytes = kPreambleBytes + header_text.size() + offset;

  std::string preamble(kMagic.begin(), kMagic.end());
  put_le<std::uint64_t>(preamble, header_text.size());
  put_le<std::uint32_t>(preamble, summary.header_crc32);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    out.write(preamble.data(), static_cast<std::streamsize>(preamble.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& e : encoded) {
      out.write(reinterpret_cast<const char*>(e.data()), static_cast<std::streamsize>(e.size()));
    }
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::kIo, "cannot move output into place at " + path.string());
  }
  return summary;
}

FramedFile read_framed(const std::filesystem::path& path, const std::string& expected_format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());

  if (raw.size() < kPreambleBytes) fail(ErrorCode::kTruncated, "file shorter than preamble");
  if (!std::equal(kMagic.begin(), kMagic.end(), raw.begin())) {
    fail(ErrorCode::kFormat, "bad magic; not a routelab container");
  }
  const auto header_len = get_le<std::uint64_t>(bytes + 8);
  const auto header_crc = get_le<std::uint32_t>(bytes + 16);
  if (header_len > raw.size() - kPreambleBytes) fail(ErrorCode::kTruncated, "header truncated");
  const auto header_span =
      std::as_bytes(std::span(raw.data() + kPreambleBytes, static_cast<std::size_t>(header_len)));
  if (crc32(header_span) != header_crc) fail(ErrorCode::kChecksum, "header checksum mismatch");

  FramedFile file;
  try {
    file.header = nlohmann::json::parse(raw.begin() + kPreambleBytes,
                                        raw.begin() + kPreambleBytes + static_cast<long>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kFormat, std::string("header is not valid JSON: ") + e.what());
  }
  if (!file.header.is_object()) fail(ErrorCode::kFormat, "header is not a JSON object");
  const int version = file.header.value("version", -1);
  if (version != kFormatVersion) {
    fail(ErrorCode::kVersion, "unsupported format version " + std::to_string(version));
  }
  if (file.header.value("format", std::string{}) != expected_format) {
    fail(ErrorCode::kFormat, "expected format '" + expected_format + "', found '" +
                                 file.header.value("format", std::string{}) + "'");
  }
  if (file.header.value("dtype", std::string{}) != "float32" ||
      file.header.value("byte_order", std::string{}) != "little") {
    fail(ErrorCode::kFormat, "only little-endian float32 payloads are supported");
  }

  const std::size_t payload_start = kPreambleBytes + static_cast<std::size_t>(header_len);
  const std::size_t payload_size = raw.size() - payload_start;
  std::uint64_t expected_offset = 0;
  for (const auto& b : file.header.at("blocks")) {
    const auto name = b.at("name").get<std::string>();
    const auto offset = b.at("offset").get<std::uint64_t>();
    const auto length = b.at("bytes").get<std::uint64_t>();
    const auto crc = b.at("crc32").get<std::uint32_t>();
    if (offset != expected_offset || length % sizeof(float) != 0) {
      fail(ErrorCode::kFormat, "block '" + name + "' has an invalid offset or length");
    }
    if (offset + length > payload_size) {
      fail(ErrorCode::kTruncated, "payload truncated in block '" + name + "'");
    }
    const auto* start = reinterpret_cast<const std::byte*>(raw.data() + payload_start + offset);
    if (crc32(std::span(start, static_cast<std::size_t>(length))) != crc) {
      fail(ErrorCode::kChecksum, "checksum mismatch in block '" + name + "'");
    }
    file.block_names.push_back(name);
    file.blocks.push_back(decode_floats(start, static_cast<std::size_t>(length / sizeof(float))));
    check_finite(file.blocks.back(), "block " + name);
    expected_offset = offset + length;
  }
  if (expected_offset != payload_size) {
    fail(ErrorCode::kFormat, "trailing bytes after last payload block");
  }
  return file;
}

// ---------------------------------------------------------------------------
// Activation container

WriteSummary write_activation_set(const ActivationSet& set, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = kActivationFormat;
  header["model_id"] = set.model_id();
  header["n"] = set.rows();
  header["d"] = set.dim();
  header["layers"] = set.layers();
  header["layout"] = "row_major";
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& r : set.manifest()) manifest.push_back(to_json(r));
  header["manifest"] = std::move(manifest);
  header["metadata"] = set.metadata();

  std::vector<std::string> names;
  std::vector<std::span<const float>> blocks;
  for (int layer : set.layers()) {
    const Matrix& m = set.layer(layer);
    names.push_back(layer_block_name(layer));
    blocks.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  }
  return write_framed(path, std::move(header), names, blocks);
}

ActivationSet read_activation_set(const std::filesystem::path& path) {
  FramedFile file = read_framed(path, kActivationFormat);
  const auto& h = file.header;
  std::size_t n = 0, d = 0;
  std::vector<int> layer_ids;
  Manifest manifest;
  try {
    n = h.at("n").get<std::size_t>();
    d = h.at("d").get<std::size_t>();
    layer_ids = h.at("layers").get<std::vector<int>>();
    for (const auto& r : h.at("manifest")) manifest.push_back(prompt_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed activation header: ") + e.what());
  }
  if (h.value("layout", std::string{}) != "row_major") fail(ErrorCode::kFormat, "unsupported layout");
  if (manifest.size() != n) fail(ErrorCode::kFormat, "manifest length differs from header n");
  if (layer_ids.size() != file.blocks.size()) {
    fail(ErrorCode::kFormat, "layer list does not match block count");
  }
  std::map<int, Matrix> layers;
  for (std::size_t i = 0; i < layer_ids.size(); ++i) {
    if (file.block_names[i] != layer_block_name(layer_ids[i])) {
      fail(ErrorCode::kFormat, "block order does not match layer list");
    }
    if (file.blocks[i].size() != n * d) {
      fail(ErrorCode::kTruncated, "layer " + std::to_string(layer_ids[i]) + " holds " +
                                      std::to_string(file.blocks[i].size()) + " values, expected " +
                                      std::to_string(n * d));
    }
    layers.emplace(layer_ids[i], Eigen::Map<const Matrix>(file.blocks[i].data(),
                                                          static_cast<Eigen::Index>(n),
                                                          static_cast<Eigen::Index>(d)));
  }
  return ActivationSet(h.value("model_id", std::string{}), std::move(manifest), std::move(layers),
                       h.value("metadata", nlohmann::json::object()));
}

// ---------------------------------------------------------------------------
// Selection

std::vector<std::size_t> matching_rows(const Manifest& manifest, const PromptPredicate& pred) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (pred(manifest[i])) rows.push_back(i);
  }
  return rows;
}

ActivationSet select_rows(const ActivationSet& set, std::span<const std::size_t> rows) {
  if (rows.empty()) fail(ErrorCode::kEmptySelection, "selection matched no prompts");
  Manifest manifest;
  manifest.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= set.rows()) fail(ErrorCode::kInvalidArgument, "row index out of range");
    manifest.push_back(set.manifest()[r]);
  }
  ActivationSet::LayerMap layers;
  for (int layer : set.layers()) {
    const Matrix& m = set.layer(layer);
    Matrix sub(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sub.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    }
    layers.emplace(layer, std::make_shared<const Matrix>(std::move(sub)));
  }
  validate_manifest(manifest);
  return ActivationSet(set.model_id(), std::move(manifest), std::move(layers), set.metadata(),
                       set.dim());
}

ActivationSet select_subset(const ActivationSet& set, const PromptPredicate& pred) {
  const auto rows = matching_rows(set.manifest(), pred);
  return select_rows(set, rows);
}

}  // namespace routelab
