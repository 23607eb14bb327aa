#include <gtest/gtest.h>

#include <filesystem>

#include "cbodd/checkpoint.hpp"
#include "cbodd/errors.hpp"

namespace cbodd {
namespace {

std::vector<CheckpointRecord> sample_records() {
  return {{"a/weight", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"b", {1}, {-0.125}}};
}

TEST(Checkpoint, RoundTripsExactly) {
  const auto records = sample_records();
  const auto decoded = decode_checkpoint(encode_checkpoint(records));
  ASSERT_EQ(decoded.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(decoded[i].name, records[i].name);
    EXPECT_EQ(decoded[i].shape, records[i].shape);
    EXPECT_EQ(decoded[i].values, records[i].values);
  }
}

TEST(Checkpoint, StartsWithMagic) {
  const auto bytes = encode_checkpoint(sample_records());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "CBODD01");
}

TEST(Checkpoint, RejectsBadMagicCorruptionAndTruncation) {
  auto bytes = encode_checkpoint(sample_records());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), DataError);
  auto flipped = bytes;
  flipped[20] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), DataError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  EXPECT_THROW(decode_checkpoint(truncated), DataError);
}

TEST(Checkpoint, FileRoundTripAndLoadInto) {
  const auto path = std::filesystem::temp_directory_path() / "cbodd_test_ckpt.bin";
  write_checkpoint(path, sample_records());
  Tensor w = Tensor::zeros({2, 3}, true);
  Tensor b = Tensor::zeros({1}, true);
  NamedParams params{{"a/weight", w}, {"b", b}};
  load_into(read_checkpoint(path), params);
  EXPECT_EQ(w.value(5), 6.0);
  EXPECT_EQ(b.value(0), -0.125);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LoadIntoRejectsMissingOrMisshapenRecords) {
  const auto records = sample_records();
  NamedParams missing{{"c", Tensor::zeros({1}, true)}};
  EXPECT_THROW(load_into(records, missing), ArtifactMismatchError);
  NamedParams misshapen{{"a/weight", Tensor::zeros({3, 2}, true)}};
  EXPECT_THROW(load_into(records, misshapen), ArtifactMismatchError);
}

}  // namespace
}  // namespace cbodd
