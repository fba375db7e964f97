// include/ivkit/io.hpp

// Copyright 2026  ivkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// On-disk formats.
//
// I-vector archive (text), one record per line:
//   utt_id TAB speaker_id|- TAB language_id|- TAB partition TAB v1 v2 ... vd
// values printed with 17 significant digits.
//
// I-vector archive (binary): "IVEC1", u32 count, u32 dim, then per record
// utt/speaker/language as u32-length-prefixed strings ("-" when absent) and a
// u8 partition code, then count*dim float64 values. Little-endian throughout.
//
// Trial list: model_id TAB test_utt_id. Key: adds TAB target|nontarget.
// Enrollment list: model_id TAB utt_id[ SPACE utt_id ...].
// Score file: "model_id TAB test_utt_id TAB score" header, then one line per
// trial with the score printed to 6 decimal places.
//
// Model container: "SUTK1", u32 format version, u32 section count; each
// section has a name, a u32 version and typed named fields (float64 matrices
// row-major, strings, int64, float64).

#pragma once

#include "ivkit/common.hpp"
#include "ivkit/fusion.hpp"
#include "ivkit/gmm.hpp"
#include "ivkit/plda.hpp"
#include "ivkit/precondition.hpp"
#include "ivkit/scorenorm.hpp"
#include "ivkit/tv.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <variant>

namespace ivkit::io {

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

// Little-endian primitive I/O.
template <typename T>
void put(std::ostream& os, T v) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw DataError(std::string("truncated binary data reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

inline void put_string(std::ostream& os, std::string_view s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const char* what) {
  const auto n = get<std::uint32_t>(is, what);
  if (n > (1u << 30)) throw DataError(std::string("implausible string length reading ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw DataError(std::string("truncated binary data reading ") + what);
  return s;
}

inline void expect_magic(std::istream& is, std::string_view magic, const std::string& path) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(magic.size())) || got != magic)
    throw DataError("'" + path + "' is not a " + std::string(magic) + " file");
}

inline std::string label_or_dash(const std::optional<std::string>& s) { return s ? *s : "-"; }
inline std::optional<std::string> dash_to_optional(std::string_view s) {
  if (s == "-") return std::nullopt;
  return std::string(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// I-vector archives

inline void write_ivectors_text(std::ostream& os, const std::vector<LabeledIvector>& vs) {
  for (const auto& v : vs) {
    os << v.utt_id << '\t' << detail::label_or_dash(v.speaker_id) << '\t' << detail::label_or_dash(v.language_id)
       << '\t' << to_string(v.partition) << '\t';
    for (Index i = 0; i < v.vector.size(); ++i) {
      if (i) os << ' ';
      os << detail::format_g17(v.vector(i));
    }
    os << '\n';
  }
}

inline std::vector<LabeledIvector> read_ivectors_text(std::istream& is, const std::string& where = "ivector archive") {
  std::vector<LabeledIvector> out;
  std::string line;
  std::size_t lineno = 0;
  Index dim = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string loc = where + ":" + std::to_string(lineno);
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 5) throw DataError(loc + ": expected 5 tab-separated columns");
    LabeledIvector v;
    v.utt_id = std::string(cols[0]);
    v.speaker_id = detail::dash_to_optional(cols[1]);
    v.language_id = detail::dash_to_optional(cols[2]);
    v.partition = partition_from_string(cols[3]);
    const auto vals = detail::split(cols[4], ' ');
    v.vector.resize(static_cast<Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) v.vector(static_cast<Index>(i)) = detail::parse_double(vals[i], loc);
    if (dim >= 0 && v.vector.size() != dim) throw DataError(loc + ": inconsistent vector dimension");
    dim = v.vector.size();
    out.push_back(std::move(v));
  }
  validate_corpus(out);
  return out;
}

inline void write_ivectors_binary(std::ostream& os, const std::vector<LabeledIvector>& vs) {
  const Index dim = vs.empty() ? 0 : vs.front().vector.size();
  os.write("IVEC1", 5);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(vs.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
  for (const auto& v : vs) {
    if (v.vector.size() != dim) throw DataError("write_ivectors_binary: inconsistent dimensions");
    detail::put_string(os, v.utt_id);
    detail::put_string(os, detail::label_or_dash(v.speaker_id));
    detail::put_string(os, detail::label_or_dash(v.language_id));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(v.partition));
  }
  for (const auto& v : vs)
    for (Index i = 0; i < dim; ++i) detail::put<double>(os, v.vector(i));
}

inline std::vector<LabeledIvector> read_ivectors_binary(std::istream& is, const std::string& where = "ivector archive") {
  detail::expect_magic(is, "IVEC1", where);
  const auto count = detail::get<std::uint32_t>(is, "count");
  const auto dim = detail::get<std::uint32_t>(is, "dim");
  std::vector<LabeledIvector> out(count);
  for (auto& v : out) {
    v.utt_id = detail::get_string(is, "utt_id");
    v.speaker_id = detail::dash_to_optional(detail::get_string(is, "speaker_id"));
    v.language_id = detail::dash_to_optional(detail::get_string(is, "language_id"));
    const auto p = detail::get<std::uint8_t>(is, "partition");
    if (p > static_cast<std::uint8_t>(Partition::kTest)) throw DataError(where + ": bad partition code");
    v.partition = static_cast<Partition>(p);
  }
  for (auto& v : out) {
    v.vector.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) v.vector(i) = detail::get<double>(is, "vector payload");
  }
  validate_corpus(out);
  return out;
}

inline bool is_binary_archive(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  char magic[5] = {};
  in.read(magic, 5);
  return in.gcount() == 5 && std::memcmp(magic, "IVEC1", 5) == 0;
}

inline void save_ivectors(const std::filesystem::path& path, const std::vector<LabeledIvector>& vs,
                          bool binary = false) {
  auto out = detail::open_out(path, binary);
  binary ? write_ivectors_binary(out, vs) : write_ivectors_text(out, vs);
}

inline std::vector<LabeledIvector> load_ivectors(const std::filesystem::path& path) {
  if (is_binary_archive(path)) {
    auto in = detail::open_in(path, true);
    return read_ivectors_binary(in, path.string());
  }
  auto in = detail::open_in(path);
  return read_ivectors_text(in, path.string());
}

// ---------------------------------------------------------------------------
// Trials, keys, enrollment lists, scores

inline void save_trials(const std::filesystem::path& path, const std::vector<TrialId>& trials) {
  auto out = detail::open_out(path);
  for (const auto& t : trials) out << t.model_id << '\t' << t.test_id << '\n';
}

inline std::vector<TrialId> load_trials(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<TrialId> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split(line, '\t');
    if (cols.size() < 2)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected model_id<TAB>test_utt_id");
    out.push_back({std::string(cols[0]), std::string(cols[1])});
  }
  return out;
}

inline void save_key(const std::filesystem::path& path, const TrialKey& key) {
  auto out = detail::open_out(path);
  for (const auto& e : key.entries)
    out << e.model_id << '\t' << e.test_id << '\t' << (e.is_target ? "target" : "nontarget") << '\n';
}

inline TrialKey load_key(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  TrialKey key;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split(line, '\t');
    const std::string loc = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != 3) throw DataError(loc + ": expected model_id<TAB>test_utt_id<TAB>target|nontarget");
    if (cols[2] != "target" && cols[2] != "nontarget") throw DataError(loc + ": bad label '" + std::string(cols[2]) + "'");
    key.entries.push_back({std::string(cols[0]), std::string(cols[1]), cols[2] == "target"});
  }
  check_unique_trials(key.trials());
  return key;
}

inline void save_enrollment(const std::filesystem::path& path, const EnrollmentMap& enr) {
  auto out = detail::open_out(path);
  for (const auto& [model, utts] : enr) {
    out << model << '\t';
    for (std::size_t i = 0; i < utts.size(); ++i) out << (i ? " " : "") << utts[i];
    out << '\n';
  }
}

inline EnrollmentMap load_enrollment(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  EnrollmentMap enr;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 2 || cols[1].empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected model_id<TAB>utt_id ...");
    auto& v = enr[std::string(cols[0])];
    for (auto u : detail::split(cols[1], ' ')) v.emplace_back(u);
  }
  return enr;
}

inline constexpr std::string_view kScoreHeader = "model_id\ttest_utt_id\tscore";

inline void write_scores(std::ostream& os, const ScoreSet& scores) {
  os << kScoreHeader << '\n';
  for (const auto& e : scores.entries) os << e.model_id << '\t' << e.test_id << '\t' << detail::format_score(e.score) << '\n';
}

inline void save_scores(const std::filesystem::path& path, const ScoreSet& scores) {
  auto out = detail::open_out(path);
  write_scores(out, scores);
}

inline ScoreSet load_scores(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  ScoreSet s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line == kScoreHeader)) continue;
    const auto cols = detail::split(line, '\t');
    const std::string loc = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != 3) throw DataError(loc + ": expected model_id<TAB>test_utt_id<TAB>score");
    s.entries.push_back({std::string(cols[0]), std::string(cols[1]), detail::parse_double(cols[2], loc)});
  }
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Model container

using FieldValue = std::variant<Matrix, std::string, std::int64_t, double>;

struct Section {
  std::string name;
  std::uint32_t version = 1;
  std::vector<std::pair<std::string, FieldValue>> fields;

  Section& set(std::string key, FieldValue v) {
    fields.emplace_back(std::move(key), std::move(v));
    return *this;
  }

  const FieldValue& at(std::string_view key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return v;
    throw DataError("container section '" + name + "' has no field '" + std::string(key) + "'");
  }

  template <typename T>
  const T& get(std::string_view key) const {
    const auto& v = at(key);
    if (!std::holds_alternative<T>(v))
      throw DataError("container field '" + name + "." + std::string(key) + "' has the wrong type");
    return std::get<T>(v);
  }

  Vector vec(std::string_view key) const {
    const Matrix& m = get<Matrix>(key);
    if (m.cols() != 1 && m.rows() > 0) throw DataError("container field '" + std::string(key) + "' is not a vector");
    return m.col(0);
  }
  bool flag(std::string_view key) const { return get<std::int64_t>(key) != 0; }
};

inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::vector<Section> sections;

  void put(Section s) {
    std::erase_if(sections, [&](const Section& x) { return x.name == s.name; });
    sections.push_back(std::move(s));
  }
  bool has(std::string_view name) const {
    return std::any_of(sections.begin(), sections.end(), [&](const auto& s) { return s.name == name; });
  }
  const Section& section(std::string_view name) const {
    for (const auto& s : sections)
      if (s.name == name) return s;
    throw DataError("model container has no '" + std::string(name) + "' section");
  }
};

inline void write_container(std::ostream& os, const Container& c) {
  os.write("SUTK1", 5);
  detail::put<std::uint32_t>(os, kContainerVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.sections.size()));
  for (const auto& s : c.sections) {
    detail::put_string(os, s.name);
    detail::put<std::uint32_t>(os, s.version);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.fields.size()));
    for (const auto& [k, v] : s.fields) {
      detail::put_string(os, k);
      detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(v.index()));
      std::visit(
          [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Matrix>) {
              detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(x.rows()));
              detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(x.cols()));
              for (Index i = 0; i < x.rows(); ++i)
                for (Index j = 0; j < x.cols(); ++j) detail::put<double>(os, x(i, j));
            } else if constexpr (std::is_same_v<T, std::string>) {
              detail::put_string(os, x);
            } else {
              detail::put<T>(os, x);
            }
          },
          v);
    }
  }
}

inline Container read_container(std::istream& is, const std::string& where = "model container") {
  detail::expect_magic(is, "SUTK1", where);
  const auto version = detail::get<std::uint32_t>(is, "container version");
  if (version != kContainerVersion)
    throw DataError(where + ": unsupported container version " + std::to_string(version));
  Container c;
  const auto n = detail::get<std::uint32_t>(is, "section count");
  for (std::uint32_t i = 0; i < n; ++i) {
    Section s;
    s.name = detail::get_string(is, "section name");
    s.version = detail::get<std::uint32_t>(is, "section version");
    const auto nf = detail::get<std::uint32_t>(is, "field count");
    for (std::uint32_t f = 0; f < nf; ++f) {
      std::string key = detail::get_string(is, "field name");
      switch (detail::get<std::uint8_t>(is, "field type")) {
        case 0: {
          const auto r = detail::get<std::uint64_t>(is, "rows");
          const auto cc = detail::get<std::uint64_t>(is, "cols");
          if (r * cc > (1ull << 32)) throw DataError(where + ": implausible matrix size");
          Matrix m(static_cast<Index>(r), static_cast<Index>(cc));
          for (Index a = 0; a < m.rows(); ++a)
            for (Index b = 0; b < m.cols(); ++b) m(a, b) = detail::get<double>(is, "matrix payload");
          s.set(std::move(key), std::move(m));
          break;
        }
        case 1: s.set(std::move(key), detail::get_string(is, "string field")); break;
        case 2: s.set(std::move(key), detail::get<std::int64_t>(is, "int field")); break;
        case 3: s.set(std::move(key), detail::get<double>(is, "real field")); break;
        default: throw DataError(where + ": unknown field type");
      }
    }
    c.sections.push_back(std::move(s));
  }
  return c;
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  auto out = detail::open_out(path, true);
  write_container(out, c);
}

inline Container load_container(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  return read_container(in, path.string());
}

// ---------------------------------------------------------------------------
// Artifact <-> section

inline Matrix as_column(const Vector& v) { return v; }

inline Section to_section(const DiagGmm& g, std::string name = "diag_gmm") {
  Section s{std::move(name), 1, {}};
  s.set("weights", as_column(g.weights)).set("means", g.means).set("variances", g.variances);
  return s;
}

inline DiagGmm gmm_from_section(const Section& s) {
  DiagGmm g{s.vec("weights"), s.get<Matrix>("means"), s.get<Matrix>("variances")};
  g.validate();
  return g;
}

inline Section to_section(const TvModel& tv) {
  Section s{"tv_model", 1, {}};
  s.set("T", tv.T)
      .set("ubm.weights", as_column(tv.ubm.weights))
      .set("ubm.means", tv.ubm.means)
      .set("ubm.variances", tv.ubm.variances);
  return s;
}

inline TvModel tv_from_section(const Section& s) {
  TvModel tv{s.get<Matrix>("T"), {s.vec("ubm.weights"), s.get<Matrix>("ubm.means"), s.get<Matrix>("ubm.variances")}};
  tv.validate();
  return tv;
}

inline Section to_section(const PrecondChain& c) {
  Section s{"precond_chain", 1, {}};
  s.set("has_nap", std::int64_t{c.nap.has_value()});
  if (c.nap) s.set("nap.basis", c.nap->basis).set("nap.eigenvalues", as_column(c.nap->eigenvalues));
  s.set("center.mean", as_column(c.center.mean));
  s.set("normalize_before_projection", std::int64_t{c.normalize_before_projection});
  s.set("has_rlda", std::int64_t{c.rlda.has_value()});
  if (c.rlda)
    s.set("rlda.projection", c.rlda->projection)
        .set("rlda.eigenvalues", as_column(c.rlda->eigenvalues))
        .set("rlda.alpha", c.rlda->alpha)
        .set("rlda.beta", c.rlda->beta);
  s.set("normalize_output", std::int64_t{c.normalize_output});
  return s;
}

inline PrecondChain chain_from_section(const Section& s) {
  PrecondChain c;
  if (s.flag("has_nap")) c.nap = NapProjection{s.get<Matrix>("nap.basis"), s.vec("nap.eigenvalues")};
  c.center.mean = s.vec("center.mean");
  c.normalize_before_projection = s.flag("normalize_before_projection");
  if (s.flag("has_rlda"))
    c.rlda = RldaTransform{s.get<Matrix>("rlda.projection"), s.vec("rlda.eigenvalues"), s.get<double>("rlda.alpha"),
                           s.get<double>("rlda.beta")};
  c.normalize_output = s.flag("normalize_output");
  c.validate();
  return c;
}

inline Section to_section(const PldaModel& p) {
  Section s{"plda", 1, {}};
  s.set("mean", as_column(p.mean)).set("V", p.V).set("U", p.U).set("sigma", as_column(p.sigma));
  return s;
}

inline PldaModel plda_from_section(const Section& s) {
  PldaModel p{s.vec("mean"), s.get<Matrix>("V"), s.get<Matrix>("U"), s.vec("sigma")};
  p.validate();
  return p;
}

inline Section to_section(const FusionModel& f, std::string name = "fusion") {
  Section s{std::move(name), 1, {}};
  s.set("weights", as_column(f.weights)).set("offset", f.offset).set("prior", f.prior);
  return s;
}

inline FusionModel fusion_from_section(const Section& s) {
  return {s.vec("weights"), s.get<double>("offset"), s.get<double>("prior")};
}

inline std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "\n" : "") + v[i];
  return out;
}

// Enrolled speaker models, with their s-norm statistics when present.
inline Section to_section(const std::vector<SpeakerModel>& models, const std::vector<ModelNormStats>* norms) {
  Section s{"speaker_models", 1, {}};
  std::vector<std::string> ids;
  const Index m = models.empty() ? 0 : models.front().embedding.size();
  Matrix emb(static_cast<Index>(models.size()), m);
  Matrix sessions(static_cast<Index>(models.size()), 1);
  for (std::size_t i = 0; i < models.size(); ++i) {
    ids.push_back(models[i].model_id);
    emb.row(static_cast<Index>(i)) = models[i].embedding.transpose();
    sessions(static_cast<Index>(i), 0) = models[i].n_sessions;
  }
  s.set("ids", join_lines(ids)).set("embeddings", emb).set("n_sessions", sessions);
  s.set("has_norm", std::int64_t{norms != nullptr});
  if (norms) {
    Matrix stats(static_cast<Index>(norms->size()), 2);
    std::vector<double> flat, offsets{0.0};
    for (std::size_t i = 0; i < norms->size(); ++i) {
      stats(static_cast<Index>(i), 0) = (*norms)[i].mu_z;
      stats(static_cast<Index>(i), 1) = (*norms)[i].sigma_z;
      for (auto k : (*norms)[i].selected) flat.push_back(static_cast<double>(k));
      offsets.push_back(static_cast<double>(flat.size()));
    }
    s.set("norm.stats", stats)
        .set("norm.selected", Matrix(Eigen::Map<const Matrix>(flat.data(), static_cast<Index>(flat.size()), 1)))
        .set("norm.offsets", Matrix(Eigen::Map<const Matrix>(offsets.data(), static_cast<Index>(offsets.size()), 1)));
  }
  return s;
}

inline std::vector<SpeakerModel> speaker_models_from_section(const Section& s, std::vector<ModelNormStats>* norms) {
  const auto& id_blob = s.get<std::string>("ids");
  std::vector<std::string> ids;
  if (!id_blob.empty())
    for (auto v : detail::split(id_blob, '\n')) ids.emplace_back(v);
  const Matrix& emb = s.get<Matrix>("embeddings");
  const Matrix& sessions = s.get<Matrix>("n_sessions");
  if (static_cast<Index>(ids.size()) != emb.rows()) throw DataError("speaker_models: id count mismatch");
  std::vector<SpeakerModel> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.push_back({ids[i], emb.row(static_cast<Index>(i)).transpose(),
                   static_cast<int>(sessions(static_cast<Index>(i), 0))});
  if (norms && s.flag("has_norm")) {
    const Matrix& st = s.get<Matrix>("norm.stats");
    const Vector flat = s.vec("norm.selected");
    const Vector off = s.vec("norm.offsets");
    norms->clear();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ModelNormStats ns{ids[i], {}, st(static_cast<Index>(i), 0), st(static_cast<Index>(i), 1), false};
      for (auto k = static_cast<Index>(off(static_cast<Index>(i))); k < static_cast<Index>(off(static_cast<Index>(i) + 1)); ++k)
        ns.selected.push_back(static_cast<std::size_t>(flat(k)));
      norms->push_back(std::move(ns));
    }
  }
  return out;
}

}  // namespace ivkit::io
