#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "stcl/gradcheck.hpp"
#include "stcl/io.hpp"

using namespace stcl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stcl_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string hex(const std::string& bytes, std::size_t from, std::size_t n) {
  static const char* digits = "0123456789ABCDEF";
  std::string out;
  for (std::size_t i = from; i < from + n; ++i) {
    const auto b = static_cast<unsigned char>(bytes[i]);
    if (!out.empty()) out += ' ';
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

}  // namespace

TEST(ArrayFormat, OneEncodesAsLittleEndianFloat) {
  const std::string b = encode_array({{"dims", {1}}}, {1.0}, false);
  EXPECT_EQ(b.substr(0, 4), "STCL");
  EXPECT_EQ(hex(b, 4, 2), "01 00");
  EXPECT_EQ(hex(b, b.size() - 4, 4), "00 00 80 3F");
  const std::string d = encode_array({{"dims", {1}}}, {1.0}, true);
  EXPECT_EQ(hex(d, d.size() - 8, 8), "00 00 00 00 00 00 F0 3F");
}

TEST(ArrayFormat, HeaderLengthAndSortedKeys) {
  const std::string b = encode_array({{"zeta", 1}, {"alpha", 2}, {"dims", {2, 1}}}, {0.5, -2.0}, false);
  const std::uint32_t len = static_cast<unsigned char>(b[6]) | static_cast<unsigned char>(b[7]) << 8 |
                            static_cast<unsigned char>(b[8]) << 16 | static_cast<unsigned char>(b[9]) << 24;
  const std::string text = b.substr(10, len);
  EXPECT_EQ(b.size(), 10 + len + 8);
  EXPECT_LT(text.find("alpha"), text.find("dims"));
  EXPECT_LT(text.find("dtype"), text.find("zeta"));
}

TEST(ArrayFormat, RoundTripIsExact) {
  Rng rng(1);
  std::vector<double> v(37);
  for (double& x : v) x = rng.normal(0.0, 100.0);
  const ArrayFile f = decode_array(encode_array({{"dims", {37}}, {"note", "x"}}, v, true));
  EXPECT_EQ(f.values, v);
  EXPECT_EQ(f.meta["note"], "x");
  const ArrayFile g = decode_array(encode_array({{"dims", {37}}}, v, false));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(g.values[i], static_cast<double>(static_cast<float>(v[i])));
}

TEST(ArrayFormat, BadMagicIsRejectedAtOffsetZero) {
  std::string b = encode_array({{"dims", {1}}}, {1.0}, false);
  b[0] = 'X';
  try {
    decode_array(b);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
}

TEST(ArrayFormat, TruncationAndCorruptionAreFormatErrors) {
  const std::string b = encode_array({{"dims", {3}}}, {1.0, 2.0, 3.0}, false);
  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, std::size_t{14}, b.size() - 1})
    EXPECT_THROW(decode_array(b.substr(0, cut)), FormatError) << cut;
  EXPECT_THROW(decode_array(b + "x"), FormatError);
  std::string v = b;
  v[4] = 9;
  EXPECT_THROW(decode_array(v), FormatError);
  std::string j = b;
  j[10] = '[';
  EXPECT_THROW(decode_array(j), FormatError);
  EXPECT_THROW(encode_array({{"dims", {2}}}, {1.0}, false), ContractError);
}

TEST(Files, MissingFileIsIoError) {
  EXPECT_THROW(read_array("/nonexistent/stcl/none.stcl"), IoError);
}

TEST(Files, RecordRoundTrip) {
  const fs::path dir = scratch("record");
  const DatasetRecord r = generate_patient(21, 4);
  write_record(dir, r);
  EXPECT_TRUE(fs::exists(dir / "patient4_t1.stcl"));
  EXPECT_TRUE(fs::exists(dir / "patient4_t4.stcl"));
  EXPECT_EQ(read_record(dir, 4), r);
  fs::remove_all(dir);
}

TEST(Files, SegmentationCaseRoundTrip) {
  const fs::path dir = scratch("seg");
  SegmentationPhantomConfig pc;
  pc.size = 16;
  pc.slices = 4;
  const SegmentationCase c = generate_segmentation_case(3, pc);
  write_segmentation_case(dir, 0, 3, c);
  const SegmentationCase back = read_segmentation_case(dir, 0);
  EXPECT_EQ(back.labeled_times, c.labeled_times);
  EXPECT_EQ(back.masks.frames, c.masks.frames);
  for (int t = 0; t < c.images.times; ++t)
    for (int s = 0; s < c.images.slices; ++s)
      for (std::size_t i = 0; i < c.images.frame(s, t).size(); ++i)
        EXPECT_NEAR(back.images.frame(s, t)[i], c.images.frame(s, t)[i], 1e-6);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const NetworkConfig cfg = tiny_prediction_config();
  Checkpoint c;
  c.config = cfg;
  c.params = NetworkParams::initialize(cfg, 5);
  c.optimizer = OptimizerState::for_params(c.params);
  Rng rng(5);
  TrainingSample s = random_sample(cfg, 2, 2, rng);
  adam_step(c.params, sample_loss_and_grad(s, c.params, cfg).grads, c.optimizer);
  c.epoch = 3;
  c.seed = 77;
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.optimizer.first_moment, c.optimizer.first_moment);
  EXPECT_EQ(back.optimizer.second_moment, c.optimizer.second_moment);
  EXPECT_EQ(back.optimizer.step, 1);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(cfg));
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(c));
}

TEST(Checkpoint, WrongKindOrLengthIsFormatError) {
  EXPECT_THROW(decode_checkpoint(encode_array({{"dims", {1}}}, {1.0}, true)), FormatError);
  Checkpoint c;
  c.config = tiny_prediction_config();
  c.params = NetworkParams::initialize(c.config, 1);
  c.optimizer = OptimizerState::for_params(c.params);
  ArrayFile f = decode_array(encode_checkpoint(c));
  f.values.pop_back();
  f.meta["dims"] = {f.values.size()};
  EXPECT_THROW(decode_checkpoint(encode_array(f.meta, f.values, true)), FormatError);
}

TEST(Pgm, HeaderAndClamping) {
  Volume v(1, 2, 3, 1);
  v.at(0, 0, 0, 0) = 300.0f;
  v.at(0, 1, 2, 0) = 127.6f;
  const std::string p = encode_pgm(v, 0, 0);
  EXPECT_EQ(p.substr(0, 11), "P5\n3 2\n255\n");
  ASSERT_EQ(p.size(), 17u);
  EXPECT_EQ(static_cast<unsigned char>(p[11]), 255);
  EXPECT_EQ(static_cast<unsigned char>(p[16]), 128);
}
