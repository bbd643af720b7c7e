#include "pekit/serialize.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "pekit/io.hpp"
#include "pekit/rng.hpp"

namespace {

using namespace pekit;

TEST(ParamBlob, RoundTripPreservesNamesShapesBits) {
  Rng rng(31);
  std::vector<NamedTensor> params;
  params.push_back({"layer1.weight", Tensor({3, 4})});
  params.push_back({"layer1.bias", Tensor({4})});
  params.push_back({"head", Tensor({2, 2, 2})});
  for (auto& p : params) {
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      p.value.mutable_data()[i] = rng.normal() * std::pow(10.0, rng.uniform(-8, 8));
    }
  }
  params[0].value.mutable_data()[0] = -0.0;
  params[0].value.mutable_data()[1] = std::numeric_limits<double>::denorm_min();

  const auto bytes = serialize_params(params);
  const auto back = deserialize_params(bytes);
  ASSERT_EQ(back.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(back[i].name, params[i].name);
    ASSERT_EQ(back[i].value.shape(), params[i].value.shape());
    for (std::int64_t j = 0; j < params[i].value.size(); ++j) {
      // bit-exact, including signed zero
      EXPECT_EQ(std::memcmp(&back[i].value.data()[j], &params[i].value.data()[j], 8), 0);
    }
  }
}

TEST(ParamBlob, EmptySetRoundTrips) {
  const auto bytes = serialize_params({});
  EXPECT_TRUE(deserialize_params(bytes).empty());
}

TEST(ParamBlob, BadMagicRejected) {
  auto bytes = serialize_params({{"x", Tensor::scalar(1.0)}});
  bytes[0] = 'Q';
  EXPECT_THROW(deserialize_params(bytes), std::runtime_error);
}

TEST(ParamBlob, WrongVersionRejected) {
  auto bytes = serialize_params({{"x", Tensor::scalar(1.0)}});
  bytes[4] = 99;
  EXPECT_THROW(deserialize_params(bytes), std::runtime_error);
}

TEST(ParamBlob, TruncationRejected) {
  auto bytes = serialize_params({{"x", Tensor({2}, {1.0, 2.0})}});
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_params(bytes), std::runtime_error);
}

TEST(ParamBlob, TrailingBytesRejected) {
  auto bytes = serialize_params({{"x", Tensor::scalar(1.0)}});
  bytes.push_back(0);
  EXPECT_THROW(deserialize_params(bytes), std::runtime_error);
}

TEST(Base64, KnownVectors) {
  const auto enc = [](const std::string& s) {
    return base64_encode(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("M"), "TQ==");
  EXPECT_EQ(enc("Ma"), "TWE=");
  EXPECT_EQ(enc("Man"), "TWFu");
  EXPECT_EQ(enc("light work."), "bGlnaHQgd29yay4=");
}

TEST(Base64, RoundTripAllLengths) {
  Rng rng(32);
  for (std::size_t len = 0; len <= 32; ++len) {
    std::vector<std::uint8_t> bytes(len);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    const auto text = base64_encode(bytes);
    const auto back = base64_decode(text);
    EXPECT_EQ(back, bytes) << "len=" << len;
  }
}

TEST(Base64, RejectsGarbage) {
  EXPECT_THROW(base64_decode("TWE$"), std::runtime_error);
  EXPECT_THROW(base64_decode("TQ==TQ"), std::runtime_error);
}

TEST(Base64, DoublesRoundTripBitExact) {
  std::vector<double> values = {0.0, -0.0, 1.0, -1.5, 1e-300, 1e300, M_PI,
                                std::numeric_limits<double>::denorm_min()};
  const auto text = doubles_to_base64(values);
  const auto back = doubles_from_base64(text);
  ASSERT_EQ(back.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    EXPECT_EQ(std::memcmp(&back[i], &values[i], 8), 0);
  }
}

TEST(Base64, DoublesRejectsBadLength) {
  EXPECT_THROW(doubles_from_base64("TWFu"), std::runtime_error);  // 3 bytes
}

TEST(AtomicWrite, WritesAndReplacesWithoutPartialStates) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "pekit_io_test";
  fs::create_directories(dir);
  const auto path = dir / "artifact.txt";
  atomic_write_file(path, std::string("first"));
  EXPECT_EQ(read_file_text(path), "first");
  atomic_write_file(path, std::string("second"));
  EXPECT_EQ(read_file_text(path), "second");
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  fs::remove_all(dir);
}

}  // namespace
