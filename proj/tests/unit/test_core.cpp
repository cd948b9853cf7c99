#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fvit/core.hpp"
#include "fvit/random.hpp"

using namespace fvit;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fvit_core_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return static_cast<ErrorKind>(0);
}

template <typename F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Tensor, TwoByTwoRoundTripIs36Bytes) {
  const Tensor t({2, 2}, {1, 2, 3, 4});
  const auto path = temp_path("t22.fvtn");
  write_tensor(t, path);
  EXPECT_EQ(fs::file_size(path), 36u);
  EXPECT_EQ(read_tensor(path), t);
}

TEST(Tensor, HeaderLayout) {
  const auto bytes = encode_tensor(Tensor({3}, {0, 0, 0}));
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 12);
  EXPECT_EQ(bytes.substr(0, 4), "FVTN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);  // ndim
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
}

TEST(Tensor, ZeroTensorRoundTrip) {
  const auto t = Tensor::zeros({3});
  const auto back = decode_tensor(encode_tensor(t));
  EXPECT_EQ(back, t);
  double sum = 0;
  for (float v : back.data()) sum += v;
  EXPECT_EQ(sum, 0.0);
}

TEST(Tensor, ZeroDimensionRejected) {
  EXPECT_EQ(message_of([] { Tensor::zeros({0}); }), "dimension must be positive");
}

TEST(Tensor, NonFiniteRejectedOnConstruction) {
  EXPECT_EQ(kind_of([] { Tensor({1}, {std::nanf("")}); }), ErrorKind::Data);
}

TEST(Tensor, TruncatedFile) {
  auto bytes = encode_tensor(Tensor({2, 2}, {1, 2, 3, 4}));
  bytes.resize(bytes.size() - 1);
  EXPECT_EQ(message_of([&] { decode_tensor(bytes); }), "unexpected end of file");
  EXPECT_EQ(message_of([&] { decode_tensor(bytes.substr(0, 6)); }), "unexpected end of file");
}

TEST(Tensor, NaNPayload) {
  auto bytes = encode_tensor(Tensor({2}, {1, 2}));
  const float nan = std::nanf("");
  std::memcpy(bytes.data() + 16, &nan, 4);
  EXPECT_EQ(message_of([&] { decode_tensor(bytes); }), "non-finite value");
}

TEST(Tensor, BadMagicAndVersionAreDistinct) {
  auto bytes = encode_tensor(Tensor({1}, {1}));
  auto magic = bytes;
  magic[0] = 'X';
  auto version = bytes;
  version[4] = 2;
  const auto m1 = message_of([&] { decode_tensor(magic); });
  const auto m2 = message_of([&] { decode_tensor(version); });
  EXPECT_EQ(m1, "bad magic");
  EXPECT_EQ(m2, "unsupported version");
}

TEST(Tensor, ReadErrorNamesThePath) {
  const auto path = temp_path("missing.fvtn");
  fs::remove(path);
  EXPECT_NE(message_of([&] { read_tensor(path); }).find("missing.fvtn"), std::string::npos);
}

TEST(Tensor, RoundTripIsBitExactFor1000RandomTensors) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    Shape shape;
    const auto ndim = 1 + rng.below(3);
    for (std::uint64_t d = 0; d < ndim; ++d) shape.push_back(1 + rng.below(5));
    std::vector<float> data(Tensor::element_count(shape));
    for (auto& v : data) v = static_cast<float>((rng.uniform() - 0.5) * std::pow(10.0, 20.0 * rng.uniform() - 10));
    const Tensor t(shape, data);
    const auto back = decode_tensor(encode_tensor(t));
    ASSERT_EQ(back.shape(), t.shape());
    ASSERT_EQ(std::memcmp(back.data().data(), t.data().data(), data.size() * sizeof(float)), 0);
  }
}

TEST(Simplex, Examples) {
  EXPECT_EQ(vec(normalize_simplex(std::vector<double>{2, 2}).weights()), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(vec(normalize_simplex(std::vector<double>{1, 0, 0}).weights()), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(message_of([] { normalize_simplex(std::vector<double>{0, 0}); }), "cannot normalize zero vector");
}

TEST(Simplex, NegativesClampedToZero) {
  const auto w = normalize_simplex(std::vector<double>{-1, 1, 3});
  EXPECT_EQ(vec(w.weights()), (std::vector<double>{0, 0.25, 0.75}));
}

TEST(Simplex, OutputAlwaysValid) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(1 + rng.below(20));
    for (auto& x : v) x = rng.uniform() * 10 - 2;
    v[0] = 1.0;
    const auto w = normalize_simplex(v);
    double sum = 0;
    for (double x : w.weights()) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Probability, InvariantsEnforced) {
  EXPECT_THROW(AttentionVector({0.5, 0.6}), Error);
  EXPECT_THROW(AttentionVector({1.1, -0.1}), Error);
  EXPECT_NO_THROW(PredictionDistribution({0.25, 0.75}));
  EXPECT_EQ(PredictionDistribution({0.25, 0.75}).argmax(), 1u);
  EXPECT_EQ(PredictionDistribution({0.5, 0.5}).argmax(), 0u);
}

TEST(CertParams, Validation) {
  CertParams p;
  EXPECT_NO_THROW(p.validate());
  p.sigma = 0;
  EXPECT_EQ(kind_of([&] { p.validate(); }), ErrorKind::Usage);
  p = {};
  p.alpha_grid = {2, 1.5};
  EXPECT_THROW(p.validate(), Error);
  p.alpha_grid = {1.0, 2};
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.beta = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Csv, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5, 123456789.0})
    EXPECT_EQ(parse_number(format_number(v)), v);
  EXPECT_EQ(format_number(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_TRUE(std::isinf(parse_number("inf")));
  EXPECT_THROW(parse_number("1.0x"), Error);
}

TEST(Csv, TableRoundTrip) {
  const auto path = temp_path("table.csv");
  CsvTable t{{"a", "b"}, {{"1", "x"}, {"2", ""}}};
  write_csv(path, t);
  const auto back = read_csv(path);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.column("b"), 1u);
  EXPECT_THROW(back.column("c"), Error);
}

TEST(Csv, VectorRoundTrip) {
  const auto path = temp_path("vec.csv");
  const std::vector<double> v{0.1, 0.2, 1e-17};
  write_vector_csv(path, v);
  EXPECT_EQ(read_vector_csv(path), v);
}

TEST(Random, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a(derive_seed(5, 0)), b(derive_seed(5, 0)), c(derive_seed(5, 1));
  for (int i = 0; i < 10; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    EXPECT_NE(x, c.normal());
  }
}

TEST(Random, NormalMoments) {
  Rng rng(1);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
