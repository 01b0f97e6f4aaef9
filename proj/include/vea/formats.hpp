#pragma once

// Interchange formats between the attention extractor and the analysis core:
// a JSON manifest plus a raw little-endian float32 payload per sample,
// JSONL annotation and prediction streams, the layer profile document and
// the pixel mask payload.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vea/error.hpp"
#include "vea/io.hpp"
#include "vea/selection.hpp"

namespace vea {

inline constexpr int kFormatVersion = 1;
inline constexpr double kRowSumTolerance = 1e-3;
inline constexpr double kDefaultLayerFraction = 0.10;

enum class PayloadKind { PerLayerFull, PerLayerPatch };

inline std::string_view to_string(PayloadKind kind) {
  return kind == PayloadKind::PerLayerFull ? "per_layer_full" : "per_layer_patch";
}

/// Half-open token range [begin, end).
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const TokenSpan&) const = default;
};

struct Manifest {
  int format_version = kFormatVersion;
  std::string sample_id;
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t seq_len = 0;
  std::size_t image_token_start = 0;
  std::size_t image_token_count = 0;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t image_width_px = 0;
  std::size_t image_height_px = 0;
  PayloadKind payload_kind = PayloadKind::PerLayerFull;
  std::vector<TokenSpan> text_spans;

  /// Number of floats per layer row in the payload.
  std::size_t row_length() const {
    return payload_kind == PayloadKind::PerLayerFull ? seq_len : image_token_count;
  }

  bool operator==(const Manifest&) const = default;
};

/// Head-averaged attention from the final input position, one row per layer.
struct AttentionDump {
  Manifest manifest;
  std::vector<float> values;

  std::span<const float> row(std::size_t layer) const {
    const std::size_t len = manifest.row_length();
    return std::span<const float>(values).subspan(layer * len, len);
  }

  bool operator==(const AttentionDump& other) const {
    return manifest == other.manifest && values.size() == other.values.size() &&
           std::memcmp(values.data(), other.values.data(), values.size() * sizeof(float)) == 0;
  }
};

/// Pixel-space box, top-left origin.
struct Box {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t w = 1;
  std::int64_t h = 1;
  bool operator==(const Box&) const = default;
};

struct EvidenceAnnotation {
  std::string sample_id;
  std::string question;
  std::vector<std::string> answers;
  std::vector<Box> evidence_boxes;
  bool operator==(const EvidenceAnnotation&) const = default;
};

struct LayerProfile {
  std::string model_id;
  std::size_t num_layers = 0;
  std::vector<double> per_layer_auroc;
  std::vector<std::size_t> selected_layers;
  std::size_t diagnostic_count = 0;
  double fraction = kDefaultLayerFraction;
  bool operator==(const LayerProfile&) const = default;
};

/// Row-major height x width float mask with its sidecar metadata.
struct MaskPayload {
  std::string sample_id;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;
};

// ---------------------------------------------------------------------------
// float32 little-endian packing

inline std::string pack_f32(std::span<const float> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

inline std::vector<float> unpack_f32(std::span<const std::byte> bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

namespace detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline json parse_document(std::string_view text, ErrorCode code, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(code, where + ": " + e.what());
  }
}

inline const json& require(const json& obj, const char* key, ErrorCode code, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(code, where + "missing field " + key);
  return *it;
}

inline std::size_t get_count(const json& obj, const char* key, ErrorCode code,
                             const std::string& where = {}) {
  const json& v = require(obj, key, code, where);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw Error(code, where + "field " + key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::int64_t get_int(const json& obj, const char* key, ErrorCode code,
                            const std::string& where = {}) {
  const json& v = require(obj, key, code, where);
  if (!v.is_number_integer()) throw Error(code, where + "field " + key + " must be an integer");
  return v.get<std::int64_t>();
}

inline std::string get_string(const json& obj, const char* key, ErrorCode code,
                              const std::string& where = {}) {
  const json& v = require(obj, key, code, where);
  if (!v.is_string()) throw Error(code, where + "field " + key + " must be a string");
  return v.get<std::string>();
}

inline std::string line_tag(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

template <typename Fn>
void for_each_record(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no));
    }
    if (!record.is_object()) throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no));
    fn(record, line_no);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Manifest

/// Throws InvariantViolation naming the broken field.
inline void validate_manifest(const Manifest& m) {
  auto fail = [](const char* what) { throw Error(ErrorCode::InvariantViolation, what); };
  if (m.format_version != kFormatVersion) fail("format_version");
  if (m.num_layers < 1) fail("num_layers");
  if (m.num_heads < 1) fail("num_heads");
  if (m.seq_len < 1) fail("seq_len");
  if (m.image_token_count < 1) fail("image_token_count");
  if (m.grid_rows < 1 || m.grid_cols < 1 || m.grid_rows * m.grid_cols != m.image_token_count)
    fail("grid");
  if (m.image_token_start + m.image_token_count > m.seq_len) fail("image span");
  if (m.image_width_px < 1 || m.image_height_px < 1) fail("image size");
  const std::size_t img_begin = m.image_token_start;
  const std::size_t img_end = m.image_token_start + m.image_token_count;
  std::vector<TokenSpan> spans = m.text_spans;
  std::sort(spans.begin(), spans.end(),
            [](const TokenSpan& a, const TokenSpan& b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const TokenSpan& s = spans[i];
    if (s.begin >= s.end || s.end > m.seq_len) fail("text_spans");
    if (s.begin < img_end && img_begin < s.end) fail("text_spans");
    if (i > 0 && spans[i - 1].end > s.begin) fail("text_spans");
  }
}

inline Manifest decode_manifest(std::string_view text) {
  using detail::get_count;
  constexpr auto kMal = ErrorCode::MalformedDocument;
  const auto doc = detail::parse_document(text, kMal, "manifest");
  if (!doc.is_object()) throw Error(kMal, "manifest is not an object");

  Manifest m;
  m.format_version = static_cast<int>(detail::get_int(doc, "format_version", kMal));
  m.sample_id = detail::get_string(doc, "sample_id", kMal);
  m.model_id = detail::get_string(doc, "model_id", kMal);
  m.num_layers = get_count(doc, "num_layers", kMal);
  m.num_heads = get_count(doc, "num_heads", kMal);
  m.seq_len = get_count(doc, "seq_len", kMal);
  m.image_token_start = get_count(doc, "image_token_start", kMal);
  m.image_token_count = get_count(doc, "image_token_count", kMal);
  m.grid_rows = get_count(doc, "grid_rows", kMal);
  m.grid_cols = get_count(doc, "grid_cols", kMal);
  m.image_width_px = get_count(doc, "image_width_px", kMal);
  m.image_height_px = get_count(doc, "image_height_px", kMal);

  const std::string kind = detail::get_string(doc, "payload_kind", kMal);
  if (kind == "per_layer_full") {
    m.payload_kind = PayloadKind::PerLayerFull;
  } else if (kind == "per_layer_patch") {
    m.payload_kind = PayloadKind::PerLayerPatch;
  } else {
    throw Error(kMal, "unknown payload_kind " + kind);
  }

  const auto& spans = detail::require(doc, "text_spans", kMal, "");
  if (!spans.is_array()) throw Error(kMal, "text_spans must be an array");
  for (const auto& s : spans) {
    if (!s.is_array() || s.size() != 2 || !s[0].is_number_unsigned() || !s[1].is_number_unsigned())
      throw Error(kMal, "text_spans entries must be [start, end] pairs");
    m.text_spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
  }

  validate_manifest(m);
  return m;
}

inline std::string encode_manifest(const Manifest& m) {
  validate_manifest(m);
  detail::ordered_json doc;
  doc["format_version"] = m.format_version;
  doc["sample_id"] = m.sample_id;
  doc["model_id"] = m.model_id;
  doc["num_layers"] = m.num_layers;
  doc["num_heads"] = m.num_heads;
  doc["seq_len"] = m.seq_len;
  doc["image_token_start"] = m.image_token_start;
  doc["image_token_count"] = m.image_token_count;
  doc["grid_rows"] = m.grid_rows;
  doc["grid_cols"] = m.grid_cols;
  doc["image_width_px"] = m.image_width_px;
  doc["image_height_px"] = m.image_height_px;
  doc["payload_kind"] = std::string(to_string(m.payload_kind));
  doc["text_spans"] = detail::ordered_json::array();
  for (const auto& s : m.text_spans) doc["text_spans"].push_back({s.begin, s.end});
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Payload

/// Checks count, sign and (for full payloads) row sums of `values` against the
/// manifest, throwing the specific decode error on the first violation.
inline void check_payload(const Manifest& m, std::span<const float> values) {
  const std::size_t len = m.row_length();
  const std::size_t expected = m.num_layers * len;
  if (values.size() != expected)
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(expected) + ", " + std::to_string(values.size()));
  for (std::size_t layer = 0; layer < m.num_layers; ++layer) {
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const float v = values[layer * len + i];
      if (!std::isfinite(v))
        throw Error(ErrorCode::InvariantViolation, "non-finite attention at layer " +
                                                       std::to_string(layer) + " index " +
                                                       std::to_string(i));
      if (v < 0.0f)
        throw Error(ErrorCode::NegativeAttention, std::to_string(layer) + ", " + std::to_string(i));
      sum += v;
    }
    if (m.payload_kind == PayloadKind::PerLayerFull && std::abs(sum - 1.0) > kRowSumTolerance)
      throw Error(ErrorCode::RowSumOutOfTolerance, std::to_string(layer));
  }
}

inline AttentionDump decode_payload(const Manifest& manifest, std::span<const std::byte> bytes) {
  const std::size_t expected = manifest.num_layers * manifest.row_length();
  if (bytes.size() % 4 != 0 || bytes.size() / 4 != expected)
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(expected) + ", " + std::to_string(bytes.size() / 4));
  AttentionDump dump{manifest, unpack_f32(bytes)};
  check_payload(manifest, dump.values);
  return dump;
}

struct EncodedDump {
  std::string manifest;
  std::string payload;
};

inline EncodedDump encode_dump(const AttentionDump& dump) {
  try {
    check_payload(dump.manifest, dump.values);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvariantViolation) throw;
    throw Error(ErrorCode::InvariantViolation, e.what());
  }
  return {encode_manifest(dump.manifest), pack_f32(dump.values)};
}

inline std::string manifest_path_suffix() { return ".manifest.json"; }
inline std::string payload_path_suffix() { return ".attn.f32"; }

/// Loads `<prefix>.manifest.json` + `<prefix>.attn.f32`; error details carry
/// the offending file name.
inline AttentionDump load_dump(const std::filesystem::path& prefix) {
  const std::string manifest_file = prefix.string() + manifest_path_suffix();
  const std::string payload_file = prefix.string() + payload_path_suffix();
  Manifest manifest;
  try {
    manifest = decode_manifest(io::read_file(manifest_file));
  } catch (const Error& e) {
    if (e.is_io()) throw;
    throw Error(e.code(), manifest_file + ": " + e.detail());
  }
  const std::string payload = io::read_file(payload_file);
  try {
    return decode_payload(manifest, io::as_bytes(payload));
  } catch (const Error& e) {
    throw Error(e.code(), payload_file + " (sample " + manifest.sample_id + "): " + e.detail());
  }
}

inline void save_dump(const std::filesystem::path& prefix, const AttentionDump& dump) {
  const auto encoded = encode_dump(dump);
  io::write_file_atomic(prefix.string() + manifest_path_suffix(), encoded.manifest);
  io::write_file_atomic(prefix.string() + payload_path_suffix(), encoded.payload);
}

/// Prefixes of every `*.manifest.json` in `dir`, sorted by file name.
inline std::vector<std::filesystem::path> list_dump_prefixes(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw Error(ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> prefixes;
  const std::string suffix = manifest_path_suffix();
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix))
      prefixes.push_back(dir / name.substr(0, name.size() - suffix.size()));
  }
  std::sort(prefixes.begin(), prefixes.end());
  return prefixes;
}

// ---------------------------------------------------------------------------
// Annotations and predictions (JSONL)

inline std::vector<EvidenceAnnotation> decode_annotations(std::string_view text) {
  std::vector<EvidenceAnnotation> out;
  detail::for_each_record(text, [&](const detail::json& rec, std::size_t line_no) {
    constexpr auto kMal = ErrorCode::MalformedRecord;
    const std::string tag = detail::line_tag(line_no);
    EvidenceAnnotation ann;
    ann.sample_id = detail::get_string(rec, "sample_id", kMal, tag);
    ann.question = detail::get_string(rec, "question", kMal, tag);
    const auto& answers = detail::require(rec, "answers", kMal, tag);
    if (!answers.is_array()) throw Error(kMal, tag + "answers must be an array");
    for (const auto& a : answers) {
      if (!a.is_string()) throw Error(kMal, tag + "answers must be strings");
      ann.answers.push_back(a.get<std::string>());
    }
    if (ann.answers.empty()) throw Error(ErrorCode::EmptyAnswers, "line " + std::to_string(line_no));
    if (auto it = rec.find("evidence_boxes"); it != rec.end()) {
      if (!it->is_array()) throw Error(kMal, tag + "evidence_boxes must be an array");
      for (const auto& b : *it) {
        if (!b.is_object()) throw Error(kMal, tag + "box must be an object");
        Box box{detail::get_int(b, "x", kMal, tag), detail::get_int(b, "y", kMal, tag),
                detail::get_int(b, "w", kMal, tag), detail::get_int(b, "h", kMal, tag)};
        if (box.w < 1 || box.h < 1) throw Error(kMal, tag + "box w and h must be >= 1");
        ann.evidence_boxes.push_back(box);
      }
    }
    out.push_back(std::move(ann));
  });
  return out;
}

inline std::string encode_annotation(const EvidenceAnnotation& ann) {
  detail::ordered_json rec;
  rec["sample_id"] = ann.sample_id;
  rec["question"] = ann.question;
  rec["answers"] = ann.answers;
  rec["evidence_boxes"] = detail::ordered_json::array();
  for (const auto& b : ann.evidence_boxes)
    rec["evidence_boxes"].push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
  return rec.dump() + "\n";
}

/// Last record wins on duplicate sample_id.
inline std::map<std::string, EvidenceAnnotation> index_annotations(
    std::vector<EvidenceAnnotation> annotations) {
  std::map<std::string, EvidenceAnnotation> out;
  for (auto& a : annotations) out.insert_or_assign(a.sample_id, std::move(a));
  return out;
}

/// Clamps a box to a width x height image; an empty result has w or h of 0.
inline Box clamp_box(const Box& b, std::size_t width, std::size_t height) {
  const auto W = static_cast<std::int64_t>(width);
  const auto H = static_cast<std::int64_t>(height);
  const std::int64_t x0 = std::clamp<std::int64_t>(b.x, 0, W);
  const std::int64_t y0 = std::clamp<std::int64_t>(b.y, 0, H);
  const std::int64_t x1 = std::clamp<std::int64_t>(b.x + b.w, 0, W);
  const std::int64_t y1 = std::clamp<std::int64_t>(b.y + b.h, 0, H);
  return Box{x0, y0, std::max<std::int64_t>(0, x1 - x0), std::max<std::int64_t>(0, y1 - y0)};
}

inline EvidenceAnnotation clamp_boxes(EvidenceAnnotation ann, std::size_t width, std::size_t height) {
  std::vector<Box> kept;
  for (const auto& b : ann.evidence_boxes) {
    const Box c = clamp_box(b, width, height);
    if (c.w > 0 && c.h > 0) kept.push_back(c);
  }
  ann.evidence_boxes = std::move(kept);
  return ann;
}

inline std::map<std::string, std::string> decode_predictions(std::string_view text) {
  std::map<std::string, std::string> out;
  detail::for_each_record(text, [&](const detail::json& rec, std::size_t line_no) {
    const std::string tag = detail::line_tag(line_no);
    auto id = detail::get_string(rec, "sample_id", ErrorCode::MalformedRecord, tag);
    auto pred = detail::get_string(rec, "prediction", ErrorCode::MalformedRecord, tag);
    out.insert_or_assign(std::move(id), std::move(pred));
  });
  return out;
}

inline std::string encode_prediction(const std::string& sample_id, const std::string& prediction) {
  detail::ordered_json rec;
  rec["sample_id"] = sample_id;
  rec["prediction"] = prediction;
  return rec.dump() + "\n";
}

// ---------------------------------------------------------------------------
// Layer profile

inline void validate_profile(const LayerProfile& p) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvariantViolation, what); };
  if (p.num_layers < 1) fail("num_layers");
  if (!(p.fraction > 0.0 && p.fraction <= 1.0)) fail("fraction");
  if (p.per_layer_auroc.size() != p.num_layers) fail("per_layer_auroc length");
  for (double a : p.per_layer_auroc)
    if (!(a >= 0.0 && a <= 1.0)) fail("per_layer_auroc out of [0,1]");
  if (p.selected_layers.size() != selection_size(p.num_layers, p.fraction))
    fail("selection size " + std::to_string(p.selected_layers.size()) + " != " +
         std::to_string(selection_size(p.num_layers, p.fraction)));
  if (p.selected_layers != select_top_layers(p.per_layer_auroc, p.fraction))
    fail("selection not argmax-consistent");
}

inline std::string encode_profile(const LayerProfile& p) {
  validate_profile(p);
  detail::ordered_json doc;
  doc["model_id"] = p.model_id;
  doc["num_layers"] = p.num_layers;
  doc["per_layer_auroc"] = p.per_layer_auroc;
  doc["selected_layers"] = p.selected_layers;
  doc["diagnostic_count"] = p.diagnostic_count;
  doc["fraction"] = p.fraction;
  return doc.dump(2) + "\n";
}

inline LayerProfile decode_profile(std::string_view text) {
  constexpr auto kMal = ErrorCode::MalformedDocument;
  const auto doc = detail::parse_document(text, kMal, "profile");
  if (!doc.is_object()) throw Error(kMal, "profile is not an object");
  LayerProfile p;
  p.model_id = detail::get_string(doc, "model_id", kMal);
  p.num_layers = detail::get_count(doc, "num_layers", kMal);
  p.diagnostic_count = detail::get_count(doc, "diagnostic_count", kMal);
  const auto& aurocs = detail::require(doc, "per_layer_auroc", kMal, "");
  if (!aurocs.is_array()) throw Error(kMal, "per_layer_auroc must be an array");
  for (const auto& a : aurocs) {
    if (!a.is_number()) throw Error(kMal, "per_layer_auroc entries must be numbers");
    p.per_layer_auroc.push_back(a.get<double>());
  }
  const auto& selected = detail::require(doc, "selected_layers", kMal, "");
  if (!selected.is_array()) throw Error(kMal, "selected_layers must be an array");
  for (const auto& s : selected) {
    if (!s.is_number_unsigned()) throw Error(kMal, "selected_layers entries must be indices");
    p.selected_layers.push_back(s.get<std::size_t>());
  }
  if (auto it = doc.find("fraction"); it != doc.end()) {
    if (!it->is_number()) throw Error(kMal, "fraction must be a number");
    p.fraction = it->get<double>();
  }
  validate_profile(p);
  return p;
}

// ---------------------------------------------------------------------------
// Mask payload

inline std::string encode_mask_sidecar(const MaskPayload& mask) {
  detail::ordered_json doc;
  doc["sample_id"] = mask.sample_id;
  doc["width"] = mask.width;
  doc["height"] = mask.height;
  return doc.dump(2) + "\n";
}

inline MaskPayload decode_mask(std::string_view sidecar, std::span<const std::byte> payload) {
  constexpr auto kMal = ErrorCode::MalformedDocument;
  const auto doc = detail::parse_document(sidecar, kMal, "mask sidecar");
  if (!doc.is_object()) throw Error(kMal, "mask sidecar is not an object");
  MaskPayload mask;
  mask.sample_id = detail::get_string(doc, "sample_id", kMal);
  mask.width = detail::get_count(doc, "width", kMal);
  mask.height = detail::get_count(doc, "height", kMal);
  if (mask.width < 1 || mask.height < 1) throw Error(ErrorCode::InvariantViolation, "mask size");
  const std::size_t expected = mask.width * mask.height;
  if (payload.size() % 4 != 0 || payload.size() / 4 != expected)
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(expected) + ", " + std::to_string(payload.size() / 4));
  mask.values = unpack_f32(payload);
  return mask;
}

inline void save_mask(const std::filesystem::path& prefix, const MaskPayload& mask) {
  io::write_file_atomic(prefix.string() + ".mask.f32", pack_f32(mask.values));
  io::write_file_atomic(prefix.string() + ".mask.json", encode_mask_sidecar(mask));
}

inline MaskPayload load_mask(const std::filesystem::path& prefix) {
  const std::string sidecar_file = prefix.string() + ".mask.json";
  const std::string payload_file = prefix.string() + ".mask.f32";
  const std::string sidecar = io::read_file(sidecar_file);
  const std::string payload = io::read_file(payload_file);
  try {
    return decode_mask(sidecar, io::as_bytes(payload));
  } catch (const Error& e) {
    throw Error(e.code(), prefix.string() + ": " + e.detail());
  }
}

}  // namespace vea
