#pragma once

// Bit-exact storage of representation matrices and the manifest contract
// shared with extractors.
//
// Matrices are D x M (rows = embedding dimension, columns = samples) and are
// always stored as little-endian f32 in an NPY v1.0 container, C order.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "clens/digest.hpp"
#include "clens/error.hpp"

namespace clens {

static_assert(std::endian::native == std::endian::little, "clens assumes a little-endian host");

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;
using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr const char* kManifestSchema = "clens/1";

struct HiddenStates {
  Matrix data;  // D x M
  std::vector<std::string> sample_ids;
  int layer = 0;
  std::string token_of_interest;
  std::string model_id;
  std::string dataset_id;
  // Interventions applied after extraction (steering), in order.
  std::vector<std::string> interventions;

  Eigen::Index dim() const { return data.rows(); }
  Eigen::Index samples() const { return data.cols(); }

  void validate() const {
    require(data.allFinite(), errc::kNonFinite, "hidden states contain NaN/Inf");
    require(static_cast<Eigen::Index>(sample_ids.size()) == data.cols(), errc::kDimMismatch,
            "sample_ids count " + std::to_string(sample_ids.size()) + " != M " +
                std::to_string(data.cols()));
    std::unordered_set<std::string> seen(sample_ids.begin(), sample_ids.end());
    require(seen.size() == sample_ids.size(), errc::kInvalidArgument, "sample ids are not unique");
    require(layer >= 0, errc::kInvalidArgument, "layer must be >= 0");
  }
};

/// Sequential ids "0".."M-1".
inline std::vector<std::string> default_sample_ids(Eigen::Index m) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) ids.push_back(std::to_string(i));
  return ids;
}

struct Unembedding {
  Matrix matrix;  // |Y| x D
  std::vector<std::string> vocab;

  void validate() const {
    require(static_cast<Eigen::Index>(vocab.size()) == matrix.rows(), errc::kDimMismatch,
            "vocab has " + std::to_string(vocab.size()) + " entries but unembedding has " +
                std::to_string(matrix.rows()) + " rows");
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const auto& t = vocab[i];
      const bool blank = std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); });
      require(!blank, errc::kInvalidArgument, "vocab entry " + std::to_string(i) + " is empty");
    }
    require(matrix.allFinite(), errc::kNonFinite, "unembedding contains NaN/Inf");
  }
};

struct Manifest {
  std::string schema = kManifestSchema;
  std::string model_id;
  std::string dataset_id;
  int layer = 0;
  std::string token_of_interest;
  Eigen::Index dim = 0;
  Eigen::Index samples = 0;
  std::string hidden_states_file;
  std::optional<std::string> unembedding_file;
  std::optional<std::string> vocab_file;
  std::optional<std::string> sample_ids_file;
  std::string created;

  Json to_json() const {
    Json j;
    j["schema"] = schema;
    j["model_id"] = model_id;
    j["dataset_id"] = dataset_id;
    j["layer"] = layer;
    j["token_of_interest"] = token_of_interest;
    j["dims"] = {{"D", dim}, {"M", samples}};
    Json files;
    files["hidden_states"] = hidden_states_file;
    if (unembedding_file) files["unembedding"] = *unembedding_file;
    if (vocab_file) files["vocab"] = *vocab_file;
    if (sample_ids_file) files["sample_ids"] = *sample_ids_file;
    j["files"] = files;
    j["created"] = created;
    return j;
  }

  static Manifest from_json(const Json& j) {
    auto need = [&](const Json& obj, const char* key) -> const Json& {
      if (!obj.is_object() || !obj.contains(key))
        fail(errc::kInvalidManifest, std::string("missing key '") + key + "'");
      return obj.at(key);
    };
    Manifest m;
    try {
      m.schema = need(j, "schema").get<std::string>();
      require(m.schema == kManifestSchema, errc::kInvalidManifest, "unsupported schema '" + m.schema + "'");
      m.model_id = need(j, "model_id").get<std::string>();
      m.dataset_id = need(j, "dataset_id").get<std::string>();
      m.layer = need(j, "layer").get<int>();
      m.token_of_interest = need(j, "token_of_interest").get<std::string>();
      const Json& dims = need(j, "dims");
      m.dim = need(dims, "D").get<Eigen::Index>();
      m.samples = need(dims, "M").get<Eigen::Index>();
      const Json& files = need(j, "files");
      m.hidden_states_file = need(files, "hidden_states").get<std::string>();
      if (files.contains("unembedding")) m.unembedding_file = files["unembedding"].get<std::string>();
      if (files.contains("vocab")) m.vocab_file = files["vocab"].get<std::string>();
      if (files.contains("sample_ids")) m.sample_ids_file = files["sample_ids"].get<std::string>();
      if (j.contains("created")) m.created = j["created"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(errc::kInvalidManifest, e.what());
    }
    require(m.layer >= 0, errc::kInvalidManifest, "layer must be >= 0");
    require(m.dim > 0 && m.samples > 0, errc::kInvalidManifest, "dims must be positive");
    require(m.unembedding_file.has_value() == m.vocab_file.has_value(), errc::kInvalidManifest,
            "unembedding and vocab must be declared together");
    return m;
  }

  /// Fingerprint of everything except the creation timestamp.
  std::string digest() const {
    Json j = to_json();
    j.erase("created");
    return digest_hex(j.dump());
  }
};

// ---------------------------------------------------------------------------
// NPY v1.0

namespace npy {

inline constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};
inline constexpr std::size_t kPreamble = 10;  // magic + version + header length
inline constexpr std::size_t kAlign = 64;
// numpy reserves room so the leading axis can grow in place; mirrored so
// headers are byte-identical to np.save output.
inline constexpr std::size_t kGrowthAxisDigits = 21;

inline std::string shape_repr(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

inline std::string make_header(const std::vector<std::size_t>& shape) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_repr(shape) + ", }";
  if (!shape.empty()) {
    const std::size_t digits = std::to_string(shape.front()).size();
    if (digits < kGrowthAxisDigits) dict.append(kGrowthAxisDigits - digits, ' ');
  }
  const std::size_t unpadded = kPreamble + dict.size() + 1;
  dict.append((kAlign - unpadded % kAlign) % kAlign, ' ');
  dict.push_back('\n');
  return dict;
}

struct Array {
  std::vector<std::size_t> shape;
  std::vector<float> values;  // C order
};

inline void write(const fs::path& path, const std::vector<std::size_t>& shape, const float* data,
                  std::size_t count) {
  const std::string header = make_header(shape);
  require(header.size() <= 0xFFFF, errc::kUnsupported, "header too large for NPY v1.0");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), errc::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(kMagic.data(), kMagic.size());
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  out.flush();
  require(out.good(), errc::kIo, "write to '" + path.string() + "' failed");
}

namespace detail {

inline std::string dict_value(const std::string& header, const std::string& key) {
  const std::string quoted = "'" + key + "'";
  const auto pos = header.find(quoted);
  require(pos != std::string::npos, errc::kUnsupported, "header lacks " + quoted);
  auto p = header.find(':', pos + quoted.size());
  require(p != std::string::npos, errc::kUnsupported, "malformed header near " + quoted);
  ++p;
  while (p < header.size() && header[p] == ' ') ++p;
  std::size_t end = p;
  if (p < header.size() && header[p] == '(') {
    end = header.find(')', p);
    require(end != std::string::npos, errc::kUnsupported, "unterminated shape tuple");
    ++end;
  } else if (p < header.size() && header[p] == '\'') {
    end = header.find('\'', p + 1);
    require(end != std::string::npos, errc::kUnsupported, "unterminated string");
    ++end;
  } else {
    while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
  }
  return header.substr(p, end - p);
}

inline std::vector<std::size_t> parse_shape(const std::string& tuple) {
  std::vector<std::size_t> shape;
  std::string inner = tuple.substr(1, tuple.size() - 2);
  std::stringstream ss(inner);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(' ');
    item = item.substr(b, e - b + 1);
    require(!item.empty() && std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; }),
            errc::kUnsupported, "bad shape entry '" + item + "'");
    shape.push_back(std::stoull(item));
  }
  return shape;
}

}  // namespace detail

inline Array read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), errc::kIo, "cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  // A short file that starts like NPY was cut off; anything else is not NPY at all.
  const std::size_t probe = std::min(bytes.size(), kMagic.size());
  require(std::equal(kMagic.begin(), kMagic.begin() + probe, bytes.begin()), errc::kBadMagic, path.string());
  require(bytes.size() >= kPreamble, errc::kTruncated, "file shorter than the NPY preamble");
  require(bytes[6] == 1 && bytes[7] == 0, errc::kUnsupported,
          "NPY version " + std::to_string(static_cast<int>(bytes[6])) + "." +
              std::to_string(static_cast<int>(bytes[7])));
  const std::size_t header_len =
      static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
  require(bytes.size() >= kPreamble + header_len, errc::kTruncated, "header extends past end of file");
  const std::string header = bytes.substr(kPreamble, header_len);

  const std::string descr = detail::dict_value(header, "descr");
  require(descr == "'<f4'", errc::kUnsupported, "dtype " + descr + " (only '<f4')");
  const std::string order = detail::dict_value(header, "fortran_order");
  require(order == "False", errc::kUnsupported, "fortran_order=" + order);

  Array arr;
  arr.shape = detail::parse_shape(detail::dict_value(header, "shape"));
  std::size_t count = 1;
  for (auto s : arr.shape) count *= s;
  const std::size_t expected = count * sizeof(float);
  const std::size_t payload = bytes.size() - kPreamble - header_len;
  require(payload >= expected, errc::kTruncated,
          "payload " + std::to_string(payload) + " bytes, header declares " + std::to_string(expected));
  require(payload == expected, errc::kSizeMismatch,
          "payload " + std::to_string(payload) + " bytes, header declares " + std::to_string(expected));
  arr.values.resize(count);
  if (count) std::memcpy(arr.values.data(), bytes.data() + kPreamble + header_len, expected);
  return arr;
}

}  // namespace npy

/// Writes a finite, non-empty D x M matrix as an NPY (D, M) array.
inline void save_matrix(const Matrix& m, const fs::path& path) {
  require(m.size() > 0, errc::kEmpty, "cannot save an empty matrix");
  require(m.allFinite(), errc::kNonFinite, "matrix contains NaN/Inf");
  // Eigen is column-major; NPY payload is C order.
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  npy::write(path, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, rm.data(),
             static_cast<std::size_t>(rm.size()));
}

inline Matrix load_matrix(const fs::path& path) {
  npy::Array arr = npy::read(path);
  require(arr.shape.size() == 2, errc::kUnsupported,
          "expected a 2-D array, got " + std::to_string(arr.shape.size()) + "-D");
  const auto rows = static_cast<Eigen::Index>(arr.shape[0]);
  const auto cols = static_cast<Eigen::Index>(arr.shape[1]);
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      arr.values.data(), rows, cols);
}

/// 1-D arrays (steering directions).
inline void save_vector(const Vector& v, const fs::path& path) {
  require(v.size() > 0, errc::kEmpty, "cannot save an empty vector");
  require(v.allFinite(), errc::kNonFinite, "vector contains NaN/Inf");
  npy::write(path, {static_cast<std::size_t>(v.size())}, v.data(), static_cast<std::size_t>(v.size()));
}

inline Vector load_vector(const fs::path& path) {
  npy::Array arr = npy::read(path);
  require(arr.shape.size() == 1, errc::kUnsupported, "expected a 1-D array");
  return Eigen::Map<const Vector>(arr.values.data(), static_cast<Eigen::Index>(arr.values.size()));
}

// ---------------------------------------------------------------------------
// Newline-delimited UTF-8 lists (vocab, sample ids, lexicons)

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), errc::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_lines(const std::vector<std::string>& lines, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), errc::kIo, "cannot open '" + path.string() + "' for writing");
  for (const auto& l : lines) {
    require(l.find('\n') == std::string::npos, errc::kInvalidArgument, "entry contains a newline");
    out << l << '\n';
  }
  require(out.good(), errc::kIo, "write to '" + path.string() + "' failed");
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), errc::kIo, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kInvalidArgument, path.string() + ": " + e.what());
  }
}

inline void write_json(const Json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), errc::kIo, "cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  require(out.good(), errc::kIo, "write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Bundles

struct Bundle {
  Manifest manifest;
  HiddenStates states;
  std::optional<Unembedding> unembedding;
};

inline Bundle load_bundle(const fs::path& manifest_path) {
  Bundle b;
  b.manifest = Manifest::from_json(read_json(manifest_path));
  const fs::path dir = manifest_path.parent_path();
  const Manifest& m = b.manifest;

  b.states.data = load_matrix(dir / m.hidden_states_file);
  require(b.states.data.rows() == m.dim && b.states.data.cols() == m.samples, errc::kDimMismatch,
          "manifest declares " + std::to_string(m.dim) + "x" + std::to_string(m.samples) + ", file holds " +
              std::to_string(b.states.data.rows()) + "x" + std::to_string(b.states.data.cols()));
  b.states.sample_ids = m.sample_ids_file ? read_lines(dir / *m.sample_ids_file) : default_sample_ids(m.samples);
  b.states.layer = m.layer;
  b.states.token_of_interest = m.token_of_interest;
  b.states.model_id = m.model_id;
  b.states.dataset_id = m.dataset_id;
  b.states.validate();

  if (m.unembedding_file) {
    Unembedding u;
    u.matrix = load_matrix(dir / *m.unembedding_file);
    require(u.matrix.cols() == m.dim, errc::kDimMismatch,
            "unembedding has " + std::to_string(u.matrix.cols()) + " columns, expected D=" + std::to_string(m.dim));
    u.vocab = read_lines(dir / *m.vocab_file);
    u.validate();
    b.unembedding = std::move(u);
  }
  return b;
}

/// Writes `<stem>.npy`, `<stem>_ids.txt` and (optionally) the unembedding and
/// vocab next to `<stem>.json`. Returns the manifest path.
inline fs::path save_bundle(const fs::path& dir, const std::string& stem, const HiddenStates& h,
                            const Unembedding* unembedding = nullptr, const std::string& created = {}) {
  h.validate();
  fs::create_directories(dir);
  Manifest m;
  m.model_id = h.model_id;
  m.dataset_id = h.dataset_id;
  m.layer = h.layer;
  m.token_of_interest = h.token_of_interest;
  m.dim = h.dim();
  m.samples = h.samples();
  m.hidden_states_file = stem + ".npy";
  m.sample_ids_file = stem + "_ids.txt";
  m.created = created;
  save_matrix(h.data, dir / m.hidden_states_file);
  write_lines(h.sample_ids, dir / *m.sample_ids_file);
  if (unembedding) {
    unembedding->validate();
    require(unembedding->matrix.cols() == h.dim(), errc::kDimMismatch, "unembedding width != D");
    m.unembedding_file = stem + "_unembedding.npy";
    m.vocab_file = stem + "_vocab.txt";
    save_matrix(unembedding->matrix, dir / *m.unembedding_file);
    write_lines(unembedding->vocab, dir / *m.vocab_file);
  }
  const fs::path manifest_path = dir / (stem + ".json");
  write_json(m.to_json(), manifest_path);
  return manifest_path;
}

}  // namespace clens
