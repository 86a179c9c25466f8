#pragma once

// VGAT attention dumps and their JSON metadata sidecars.
//
// A dump holds one sample's last-text-token attention towards the N*N visual
// tokens for every (layer, head) of the model:
//
//   offset  size  field
//   0       4     magic "VGAT"
//   4       2     version, u16 little-endian (currently 1)
//   6       1     dtype (0 = f32 little-endian)
//   7       4     L (layers), u32le
//   11      4     H (heads), u32le
//   15      4     N (patch-grid side), u32le
//   19      1     source kind (0 = question prompt, 1 = reference prompt)
//   20      ...   L*H*N*N f32le values, row-major [layer, head, patch]
//
// The sidecar <sample_id>.meta.json sits next to <sample_id>.q.vgat and
// <sample_id>.ref.vgat.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vgkit {

enum class SourceKind : std::uint8_t { question = 0, reference = 1 };

inline constexpr std::array<char, 4> kDumpMagic{'V', 'G', 'A', 'T'};
inline constexpr std::uint16_t kDumpVersion = 1;
inline constexpr std::uint8_t kDtypeF32Le = 0;
inline constexpr std::size_t kDumpHeaderSize = 20;
// Guard against absurd headers before allocating (2^31 floats = 8 GiB).
inline constexpr std::uint64_t kMaxDumpValues = std::uint64_t{1} << 31;

// Attention of one query token to the visual tokens, indexed
// [layer, head, patch]. Values are non-negative and finite.
class AttentionStack {
 public:
  AttentionStack() = default;
  // Zero-filled stack.
  AttentionStack(std::uint32_t layers, std::uint32_t heads, std::uint32_t grid_n,
                 SourceKind kind = SourceKind::question);
  // Takes ownership of `values`; throws InvariantError on a length mismatch,
  // zero dimension or negative/non-finite entry.
  AttentionStack(std::uint32_t layers, std::uint32_t heads, std::uint32_t grid_n,
                 std::vector<float> values, SourceKind kind = SourceKind::question);

  std::uint32_t layers() const noexcept { return layers_; }
  std::uint32_t heads() const noexcept { return heads_; }
  std::uint32_t grid_n() const noexcept { return grid_n_; }
  std::size_t patches() const noexcept { return std::size_t{grid_n_} * grid_n_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  SourceKind source_kind() const noexcept { return kind_; }
  void set_source_kind(SourceKind kind) noexcept { kind_ = kind; }

  std::span<const float> values() const noexcept { return values_; }
  // Mutable view; call validate() after writing through it.
  std::span<float> mutable_values() noexcept { return values_; }

  std::span<const float> head(std::size_t layer, std::size_t head) const;
  std::span<float> mutable_head(std::size_t layer, std::size_t head);

  float at(std::size_t layer, std::size_t head, std::size_t patch) const {
    return values_[offset(layer, head) + patch];
  }

  void validate() const;

  // Bit-exact comparison of dimensions, kind and payload.
  friend bool operator==(const AttentionStack& a, const AttentionStack& b);

 private:
  std::size_t offset(std::size_t layer, std::size_t head) const {
    return (layer * heads_ + head) * patches();
  }

  std::uint32_t layers_ = 0;
  std::uint32_t heads_ = 0;
  std::uint32_t grid_n_ = 0;
  SourceKind kind_ = SourceKind::question;
  std::vector<float> values_;
};

struct BBox {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

enum class QuestionKind { localization, attribute };

struct SampleMeta {
  std::string sample_id;
  int image_width = 0;
  int image_height = 0;
  int grid_n = 0;
  BBox bbox;
  std::string question;
  QuestionKind question_kind = QuestionKind::localization;
  std::string modality;

  // BboxError unless 0 <= min < max <= extent on both axes; MetaError for
  // non-positive image or grid sizes.
  void validate() const;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

std::string_view to_string(SourceKind kind);
std::string_view to_string(QuestionKind kind);
QuestionKind question_kind_from_string(std::string_view s);

// Binary codec. write_dump returns the number of bytes emitted.
std::size_t write_dump(const AttentionStack& stack, std::ostream& sink);
AttentionStack read_dump(std::istream& source);
std::vector<std::uint8_t> encode_dump(const AttentionStack& stack);
// Rejects trailing bytes after the payload.
AttentionStack decode_dump(std::span<const std::uint8_t> bytes);

void save_dump(const AttentionStack& stack, const std::filesystem::path& path);
AttentionStack load_dump(const std::filesystem::path& path);

// Sidecar codec.
SampleMeta read_meta(std::istream& source);
SampleMeta parse_meta(std::string_view json_text);
std::string meta_to_json(const SampleMeta& meta);
void save_meta(const SampleMeta& meta, const std::filesystem::path& path);
SampleMeta load_meta(const std::filesystem::path& path);

// GridMismatchError when the sidecar's grid_n differs from the dump's N.
void check_pairing(const SampleMeta& meta, const AttentionStack& stack);

// Conventional file names inside a sample directory.
std::filesystem::path question_dump_path(const std::filesystem::path& dir, std::string_view id);
std::filesystem::path reference_dump_path(const std::filesystem::path& dir, std::string_view id);
std::filesystem::path meta_path(const std::filesystem::path& dir, std::string_view id);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

}  // namespace vgkit
