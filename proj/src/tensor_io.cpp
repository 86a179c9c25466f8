#include "vgkit/tensor_io.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "vgkit/errors.hpp"

namespace vgkit {

using nlohmann::json;
namespace fs = std::filesystem;

// --- AttentionStack ----------------------------------------------------------

AttentionStack::AttentionStack(std::uint32_t layers, std::uint32_t heads, std::uint32_t grid_n,
                               SourceKind kind)
    : layers_(layers), heads_(heads), grid_n_(grid_n), kind_(kind) {
  if (layers == 0 || heads == 0 || grid_n == 0) {
    throw InvariantError("attention stack dimensions must be >= 1");
  }
  values_.assign(std::size_t{layers} * heads * grid_n * grid_n, 0.0f);
}

AttentionStack::AttentionStack(std::uint32_t layers, std::uint32_t heads, std::uint32_t grid_n,
                               std::vector<float> values, SourceKind kind)
    : layers_(layers), heads_(heads), grid_n_(grid_n), kind_(kind), values_(std::move(values)) {
  validate();
}

std::span<const float> AttentionStack::head(std::size_t layer, std::size_t head) const {
  if (layer >= layers_ || head >= heads_) {
    throw RangeError("head (" + std::to_string(layer) + ", " + std::to_string(head) +
                     ") out of range");
  }
  return std::span<const float>(values_).subspan(offset(layer, head), patches());
}

std::span<float> AttentionStack::mutable_head(std::size_t layer, std::size_t head) {
  if (layer >= layers_ || head >= heads_) {
    throw RangeError("head (" + std::to_string(layer) + ", " + std::to_string(head) +
                     ") out of range");
  }
  return std::span<float>(values_).subspan(offset(layer, head), patches());
}

void AttentionStack::validate() const {
  if (layers_ == 0 || heads_ == 0 || grid_n_ == 0) {
    throw InvariantError("attention stack dimensions must be >= 1");
  }
  const std::size_t expected = std::size_t{layers_} * heads_ * grid_n_ * grid_n_;
  if (values_.size() != expected) {
    throw InvariantError("attention stack holds " + std::to_string(values_.size()) +
                         " values, dimensions require " + std::to_string(expected));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const float v = values_[i];
    if (!std::isfinite(v) || v < 0.0f) {
      throw InvariantError("attention value at index " + std::to_string(i) +
                           " is negative or non-finite");
    }
  }
}

bool operator==(const AttentionStack& a, const AttentionStack& b) {
  return a.layers_ == b.layers_ && a.heads_ == b.heads_ && a.grid_n_ == b.grid_n_ &&
         a.kind_ == b.kind_ && a.values_.size() == b.values_.size() &&
         (a.values_.empty() ||
          std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) == 0);
}

// --- enums -------------------------------------------------------------------

std::string_view to_string(SourceKind kind) {
  return kind == SourceKind::question ? "question" : "reference";
}

std::string_view to_string(QuestionKind kind) {
  return kind == QuestionKind::localization ? "localization" : "attribute";
}

QuestionKind question_kind_from_string(std::string_view s) {
  if (s == "localization") return QuestionKind::localization;
  if (s == "attribute") return QuestionKind::attribute;
  throw MetaError("unknown question_kind '" + std::string(s) + "'");
}

// --- binary codec ------------------------------------------------------------

namespace {

void put_u16(std::uint8_t* out, std::uint16_t v) {
  out[0] = static_cast<std::uint8_t>(v);
  out[1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::uint8_t* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint16_t get_u16(const std::uint8_t* in) {
  return static_cast<std::uint16_t>(in[0] | (in[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{in[i]} << (8 * i);
  return v;
}

std::array<std::uint8_t, kDumpHeaderSize> encode_header(const AttentionStack& s) {
  std::array<std::uint8_t, kDumpHeaderSize> h{};
  std::memcpy(h.data(), kDumpMagic.data(), 4);
  put_u16(h.data() + 4, kDumpVersion);
  h[6] = kDtypeF32Le;
  put_u32(h.data() + 7, s.layers());
  put_u32(h.data() + 11, s.heads());
  put_u32(h.data() + 15, s.grid_n());
  h[19] = static_cast<std::uint8_t>(s.source_kind());
  return h;
}

void encode_payload(std::span<const float> values, std::uint8_t* out) {
  for (const float v : values) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
    out += 4;
  }
}

struct Header {
  std::uint32_t layers;
  std::uint32_t heads;
  std::uint32_t grid_n;
  SourceKind kind;
  std::uint64_t count;
};

Header decode_header(const std::uint8_t* h) {
  if (std::memcmp(h, kDumpMagic.data(), 4) != 0) {
    throw FormatError("bad magic: expected 'VGAT'");
  }
  const std::uint16_t version = get_u16(h + 4);
  if (version != kDumpVersion) {
    throw FormatError("unsupported dump version " + std::to_string(version));
  }
  if (h[6] != kDtypeF32Le) {
    throw FormatError("unsupported dtype code " + std::to_string(h[6]));
  }
  Header out{get_u32(h + 7), get_u32(h + 11), get_u32(h + 15), SourceKind::question, 0};
  if (h[19] > 1) {
    throw FormatError("unknown source kind flag " + std::to_string(h[19]));
  }
  out.kind = static_cast<SourceKind>(h[19]);
  if (out.layers == 0 || out.heads == 0 || out.grid_n == 0) {
    throw InvariantError("dump dimensions must be >= 1");
  }
  out.count = std::uint64_t{out.layers} * out.heads * out.grid_n * out.grid_n;
  if (out.count > kMaxDumpValues) {
    throw FormatError("dump claims " + std::to_string(out.count) + " values, above the limit");
  }
  return out;
}

std::vector<float> decode_payload(const std::uint8_t* in, std::size_t count) {
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(get_u32(in + 4 * i));
    if (!std::isfinite(v) || v < 0.0f) {
      throw InvariantError("payload value " + std::to_string(i) + " is negative or non-finite");
    }
    values[i] = v;
  }
  return values;
}

}  // namespace

std::vector<std::uint8_t> encode_dump(const AttentionStack& stack) {
  stack.validate();
  std::vector<std::uint8_t> out(kDumpHeaderSize + 4 * stack.size());
  const auto header = encode_header(stack);
  std::memcpy(out.data(), header.data(), header.size());
  encode_payload(stack.values(), out.data() + kDumpHeaderSize);
  return out;
}

std::size_t write_dump(const AttentionStack& stack, std::ostream& sink) {
  const auto bytes = encode_dump(stack);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) {
    throw IoError("sink failed while writing a " + std::to_string(bytes.size()) +
                  "-byte dump (stream position " +
                  std::to_string(static_cast<long long>(sink.tellp())) + ")");
  }
  return bytes.size();
}

AttentionStack read_dump(std::istream& source) {
  std::array<std::uint8_t, kDumpHeaderSize> h{};
  source.read(reinterpret_cast<char*>(h.data()), h.size());
  const auto got = static_cast<std::size_t>(source.gcount());
  if (got >= 4 && std::memcmp(h.data(), kDumpMagic.data(), 4) != 0) {
    throw FormatError("bad magic: expected 'VGAT'");
  }
  if (got < kDumpHeaderSize) {
    throw TruncationError("header truncated: " + std::to_string(got) + " of " +
                          std::to_string(kDumpHeaderSize) + " bytes");
  }
  const Header header = decode_header(h.data());
  std::vector<std::uint8_t> payload;
  // Read in bounded chunks so a lying header cannot force one giant allocation.
  const std::uint64_t want = header.count * 4;
  constexpr std::size_t kChunk = std::size_t{1} << 20;
  while (payload.size() < want) {
    const std::size_t step = static_cast<std::size_t>(std::min<std::uint64_t>(kChunk, want - payload.size()));
    const std::size_t old = payload.size();
    payload.resize(old + step);
    source.read(reinterpret_cast<char*>(payload.data() + old), static_cast<std::streamsize>(step));
    const auto n = static_cast<std::size_t>(source.gcount());
    if (n < step) {
      throw TruncationError("payload truncated: header declares " + std::to_string(header.count) +
                            " values, found " + std::to_string((old + n) / 4));
    }
  }
  return AttentionStack(header.layers, header.heads, header.grid_n,
                        decode_payload(payload.data(), header.count), header.kind);
}

AttentionStack decode_dump(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kDumpMagic.data(), 4) != 0) {
    throw FormatError("bad magic: expected 'VGAT'");
  }
  if (bytes.size() < kDumpHeaderSize) {
    throw TruncationError("header truncated: " + std::to_string(bytes.size()) + " of " +
                          std::to_string(kDumpHeaderSize) + " bytes");
  }
  const Header header = decode_header(bytes.data());
  const std::uint64_t have = bytes.size() - kDumpHeaderSize;
  if (have < header.count * 4) {
    throw TruncationError("payload truncated: header declares " + std::to_string(header.count) +
                          " values, found " + std::to_string(have / 4));
  }
  if (have > header.count * 4) {
    throw FormatError(std::to_string(have - header.count * 4) + " trailing bytes after payload");
  }
  return AttentionStack(header.layers, header.heads, header.grid_n,
                        decode_payload(bytes.data() + kDumpHeaderSize, header.count), header.kind);
}

void save_dump(const AttentionStack& stack, const fs::path& path) {
  write_file_atomic(path, encode_dump(stack));
}

AttentionStack load_dump(const fs::path& path) {
  try {
    return decode_dump(read_file_bytes(path));
  } catch (Error& e) {
    e.attach_path(path.string());
    throw;
  }
}

// --- metadata sidecar --------------------------------------------------------

void SampleMeta::validate() const {
  if (image_width <= 0 || image_height <= 0) {
    throw MetaError("image dimensions must be positive");
  }
  if (grid_n <= 0) throw MetaError("grid_n must be positive");
  const BBox& b = bbox;
  const bool finite = std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.x_max) &&
                      std::isfinite(b.y_max);
  if (!finite || !(0 <= b.x_min && b.x_min < b.x_max && b.x_max <= image_width)) {
    throw BboxError("bbox x-range [" + std::to_string(b.x_min) + ", " + std::to_string(b.x_max) +
                    ") invalid for image width " + std::to_string(image_width));
  }
  if (!(0 <= b.y_min && b.y_min < b.y_max && b.y_max <= image_height)) {
    throw BboxError("bbox y-range [" + std::to_string(b.y_min) + ", " + std::to_string(b.y_max) +
                    ") invalid for image height " + std::to_string(image_height));
  }
}

namespace {

const json& require(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw MissingFieldError(std::string("missing field '") + key + "'");
  return *it;
}

int require_int(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_number_integer()) {
    if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) {
      return static_cast<int>(v.get<double>());
    }
    throw MetaError(std::string("field '") + key + "' must be an integer");
  }
  return v.get<int>();
}

std::string require_string(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_string()) throw MetaError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

json number_json(double v) {
  if (std::floor(v) == v && std::abs(v) < 9e15) return json(static_cast<long long>(v));
  return json(v);
}

}  // namespace

SampleMeta parse_meta(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw MetaError(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw MetaError("metadata must be a JSON object");

  SampleMeta meta;
  meta.sample_id = require_string(doc, "sample_id");
  meta.image_width = require_int(doc, "image_width");
  meta.image_height = require_int(doc, "image_height");
  meta.grid_n = require_int(doc, "grid_n");
  const json& bbox = require(doc, "bbox");
  if (!bbox.is_array() || bbox.size() != 4 ||
      !std::all_of(bbox.begin(), bbox.end(), [](const json& v) { return v.is_number(); })) {
    throw BboxError("bbox must be an array of four numbers");
  }
  meta.bbox = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(),
               bbox[3].get<double>()};
  meta.question = require_string(doc, "question");
  meta.question_kind = question_kind_from_string(require_string(doc, "question_kind"));
  meta.modality = require_string(doc, "modality");
  try {
    meta.validate();
  } catch (Error& e) {
    e.attach_sample(meta.sample_id);
    throw;
  }
  return meta;
}

SampleMeta read_meta(std::istream& source) {
  std::ostringstream buf;
  buf << source.rdbuf();
  return parse_meta(buf.str());
}

std::string meta_to_json(const SampleMeta& meta) {
  json doc = json::object();
  doc["sample_id"] = meta.sample_id;
  doc["image_width"] = meta.image_width;
  doc["image_height"] = meta.image_height;
  doc["grid_n"] = meta.grid_n;
  doc["bbox"] = json::array({number_json(meta.bbox.x_min), number_json(meta.bbox.y_min),
                             number_json(meta.bbox.x_max), number_json(meta.bbox.y_max)});
  doc["question"] = meta.question;
  doc["question_kind"] = std::string(to_string(meta.question_kind));
  doc["modality"] = meta.modality;
  return doc.dump(2) + "\n";
}

void save_meta(const SampleMeta& meta, const fs::path& path) {
  meta.validate();
  write_file_atomic(path, meta_to_json(meta));
}

SampleMeta load_meta(const fs::path& path) {
  try {
    return parse_meta(read_file_text(path));
  } catch (Error& e) {
    e.attach_path(path.string());
    throw;
  }
}

void check_pairing(const SampleMeta& meta, const AttentionStack& stack) {
  if (meta.grid_n < 0 || static_cast<std::uint32_t>(meta.grid_n) != stack.grid_n()) {
    GridMismatchError e("meta grid_n " + std::to_string(meta.grid_n) + " does not match dump N " +
                        std::to_string(stack.grid_n()));
    e.attach_sample(meta.sample_id);
    throw e;
  }
}

fs::path question_dump_path(const fs::path& dir, std::string_view id) {
  return dir / (std::string(id) + ".q.vgat");
}

fs::path reference_dump_path(const fs::path& dir, std::string_view id) {
  return dir / (std::string(id) + ".ref.vgat");
}

fs::path meta_path(const fs::path& dir, std::string_view id) {
  return dir / (std::string(id) + ".meta.json");
}

// --- files -------------------------------------------------------------------

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000) +
         "_" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      IoError e("write failed after " + std::to_string(static_cast<long long>(out.tellp())) +
                " of " + std::to_string(bytes.size()) + " bytes");
      e.attach_path(path.string());
      throw e;
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move temporary file into '" + path.string() + "'");
  }
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    IoError e("cannot open file for reading");
    e.attach_path(path.string());
    throw e;
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string read_file_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace vgkit
