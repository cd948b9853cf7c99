#pragma once

// Domain types shared by every module, plus the FVTN tensor format and
// CSV helpers.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fvit {

// Error categories map onto CLI exit codes (1 usage, 2 data, 3 invariant).
enum class ErrorKind { Usage = 1, Data = 2, Invariant = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& m) { throw Error(ErrorKind::Usage, m); }
[[noreturn]] inline void fail_data(const std::string& m) { throw Error(ErrorKind::Data, m); }
[[noreturn]] inline void fail_invariant(const std::string& m) {
  throw Error(ErrorKind::Invariant, m);
}

using Shape = std::vector<std::size_t>;

// Row-major array of finite 32-bit values.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
  }

  static Tensor zeros(Shape shape) {
    const auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
  }

  // Values are rounded to float; callers that need bit-exact storage should
  // pass float-representable doubles.
  static Tensor from_doubles(Shape shape, std::span<const double> values) {
    std::vector<float> data(values.begin(), values.end());
    return Tensor(std::move(shape), std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  const std::vector<float>& data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t ndim() const noexcept { return shape_.size(); }

  std::vector<double> to_doubles() const { return {data_.begin(), data_.end()}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t element_count(const Shape& shape) {
    if (shape.empty()) fail_data("tensor must have at least one dimension");
    std::size_t n = 1;
    for (auto d : shape) {
      if (d == 0) fail_data("dimension must be positive");
      n *= d;
    }
    return n;
  }

 private:
  void validate() const {
    if (element_count(shape_) != data_.size())
      fail_data("tensor data length does not match shape");
    for (float v : data_)
      if (!std::isfinite(v)) fail_data("non-finite value");
  }

  Shape shape_;
  std::vector<float> data_;
};

inline constexpr double kSimplexTolerance = 1e-6;

namespace detail {

inline void check_probability_vector(std::span<const double> v, const char* what) {
  if (v.empty()) fail_data(std::string(what) + " must be non-empty");
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) fail_data(std::string(what) + " has a negative or non-finite entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance)
    fail_data(std::string(what) + " does not sum to 1");
}

}  // namespace detail

// Probability vector over visual tokens.
class AttentionVector {
 public:
  AttentionVector() = default;
  explicit AttentionVector(std::vector<double> weights) : w_(std::move(weights)) {
    detail::check_probability_vector(w_, "attention vector");
  }
  std::span<const double> weights() const noexcept { return w_; }
  std::size_t size() const noexcept { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  friend bool operator==(const AttentionVector&, const AttentionVector&) = default;

 private:
  std::vector<double> w_;
};

// Probability vector over classes.
class PredictionDistribution {
 public:
  PredictionDistribution() = default;
  explicit PredictionDistribution(std::vector<double> probs) : p_(std::move(probs)) {
    detail::check_probability_vector(p_, "prediction distribution");
  }
  std::span<const double> probs() const noexcept { return p_; }
  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }

  // Smallest index among the maximal entries.
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(p_.begin(), p_.end()) - p_.begin());
  }
  friend bool operator==(const PredictionDistribution&, const PredictionDistribution&) = default;

 private:
  std::vector<double> p_;
};

// Negative entries are clamped to 0 before scaling onto the simplex.
inline AttentionVector normalize_simplex(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : out) {
    if (!std::isfinite(x)) fail_data("non-finite value");
    x = std::max(x, 0.0);
    sum += x;
  }
  if (!(sum > 0.0)) fail_data("cannot normalize zero vector");
  for (double& x : out) x /= sum;
  return AttentionVector(std::move(out));
}

enum class Norm { L2, LINF };
enum class ConfidenceMode { PLUGIN, BINOMIAL_CI };
// How the l-inf radius is derived from the l2 one.
enum class LinfDivisor { SQRT_D, D };

inline std::string_view to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

struct CertParams {
  double sigma = 0.25;
  std::size_t m = 1000;
  std::size_t k = 4;
  double beta = 0.75;
  Norm norm = Norm::L2;
  std::vector<double> alpha_grid;  // empty selects the default grid
  std::uint64_t seed = 0;
  ConfidenceMode confidence_mode = ConfidenceMode::PLUGIN;
  double ci_level = 0.99;
  LinfDivisor linf_divisor = LinfDivisor::SQRT_D;
  std::size_t refine_iters = 3;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) fail_usage("sigma must be positive");
    if (m < 1) fail_usage("m must be at least 1");
    if (k < 1) fail_usage("k must be at least 1");
    if (!(beta > 0.0 && beta <= 1.0)) fail_usage("beta must lie in (0, 1]");
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
      if (!(alpha_grid[i] > 1.0)) fail_usage("every alpha must exceed 1");
      if (i > 0 && !(alpha_grid[i] > alpha_grid[i - 1]))
        fail_usage("alpha grid must be strictly increasing");
    }
    if (confidence_mode == ConfidenceMode::BINOMIAL_CI && !(ci_level > 0.0 && ci_level < 1.0))
      fail_usage("ci level must lie in (0, 1)");
  }
};

struct CertificationResult {
  PredictionDistribution p_hat;
  AttentionVector w_tilde;
  double p1 = 0.0;  // after any confidence adjustment
  double p2 = 0.0;
  double P_bound = 0.0;
  double Q_bound = 0.0;
  double R_faithful = 0.0;
  double best_alpha_P = 0.0;
  double best_alpha_Q = 0.0;
  Norm norm = Norm::L2;
  bool argmax_certified = false;
};

// ---------------------------------------------------------------------------
// FVTN binary format:
//   "FVTN" | u32 version=1 | u32 ndim | u32 dims[ndim] | f32 data[...]
// All integers and floats little-endian.

inline constexpr char kFvtnMagic[4] = {'F', 'V', 'T', 'N'};
inline constexpr std::uint32_t kFvtnVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  std::string buf;
  buf.reserve(12 + 4 * t.ndim() + 4 * t.size());
  buf.append(kFvtnMagic, 4);
  detail::put_u32(buf, kFvtnVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  return buf;
}

inline Tensor decode_tensor(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) fail_data("unexpected end of file");
  };
  need(4);
  if (!std::equal(kFvtnMagic, kFvtnMagic + 4, bytes.begin())) fail_data("bad magic");
  pos += 4;
  need(4);
  if (detail::get_u32(p + pos) != kFvtnVersion) fail_data("unsupported version");
  pos += 4;
  need(4);
  const std::uint32_t ndim = detail::get_u32(p + pos);
  pos += 4;
  if (ndim == 0) fail_data("tensor must have at least one dimension");
  Shape shape(ndim);
  for (auto& d : shape) {
    need(4);
    d = detail::get_u32(p + pos);
    pos += 4;
  }
  const std::size_t count = Tensor::element_count(shape);
  if ((bytes.size() - pos) / 4 < count) fail_data("unexpected end of file");
  std::vector<float> data(count);
  for (auto& v : data) {
    v = std::bit_cast<float>(detail::get_u32(p + pos));
    pos += 4;
  }
  if (pos != bytes.size()) fail_data("trailing bytes after tensor payload");
  return Tensor(std::move(shape), std::move(data));
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  Tensor::element_count(t.shape());
  const std::string buf = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail_data("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

// Shortest round-trip decimal form; "inf" for +infinity.
inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    fail_data("not a number: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                          : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail_data("missing CSV column: " + std::string(name));
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  CsvTable table;
  std::size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    std::string_view line(text.data() + start,
                          (nl == std::string::npos ? text.size() : nl) - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = nl == std::string::npos ? text.size() : nl + 1;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != table.header.size())
        fail_data(path.string() + ": row width does not match header");
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) fail_data(path.string() + ": empty CSV");
  return table;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::string out;
  auto append_row = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += cells[i];
    }
    out.push_back('\n');
  };
  append_row(table.header);
  for (const auto& r : table.rows) append_row(r);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail_data("cannot open for writing: " + path.string());
  f << out;
  if (!f) fail_data("write failed: " + path.string());
}

// One value per row under a single header cell.
inline void write_vector_csv(const std::filesystem::path& path, std::span<const double> v,
                             const std::string& header = "value") {
  CsvTable t;
  t.header = {header};
  for (double x : v) t.rows.push_back({format_number(x)});
  write_csv(path, t);
}

inline std::vector<double> read_vector_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  if (t.header.size() != 1) fail_data(path.string() + ": expected a single column");
  std::vector<double> v;
  v.reserve(t.rows.size());
  for (const auto& r : t.rows) v.push_back(parse_number(r[0]));
  return v;
}

}  // namespace fvit
