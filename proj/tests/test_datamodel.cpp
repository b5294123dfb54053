#include "ssbver/datamodel.hpp"
#include "ssbver/errors.hpp"

#include <gtest/gtest.h>

using namespace ssbver;

namespace {

ImageSample sample(int identity, int camera = 0) {
  ImageSample s;
  s.pixels = Image(32, 32, 0.5);
  s.identity = identity;
  s.camera = camera;
  return s;
}

std::vector<ImageSample> samples(std::initializer_list<int> ids) {
  std::vector<ImageSample> out;
  for (int id : ids) out.push_back(sample(id));
  return out;
}

}  // namespace

TEST(ImageSample, AcceptsValidPixels) { EXPECT_NO_THROW(sample(0).validate()); }

TEST(ImageSample, RejectsOutOfRangePixel) {
  auto s = sample(0);
  s.pixels.at(1, 3, 4) = 1.0001;
  EXPECT_THROW(s.validate(), DataError);
  s.pixels.at(1, 3, 4) = -0.1;
  EXPECT_THROW(s.validate(), DataError);
}

TEST(ImageSample, RejectsSmallImage) {
  auto s = sample(0);
  s.pixels = Image(31, 40, 0.2);
  EXPECT_THROW(s.validate(), DataError);
}

TEST(ImageSample, RejectsNegativeLabels) {
  EXPECT_THROW(sample(-1).validate(), DataError);
  EXPECT_THROW(sample(0, -2).validate(), DataError);
}

TEST(ValidateBatch, MinimalLayoutIsValid) {
  EXPECT_NO_THROW(make_batch(samples({5, 5, 9, 9}), {2, 2}));
}

TEST(ValidateBatch, WrongInstanceCount) {
  EXPECT_THROW(make_batch(samples({5, 5, 5, 9}), {2, 2}), IdentityCountError);
}

TEST(ValidateBatch, SingleInstanceForbidden) {
  EXPECT_THROW(make_batch(samples({3}), {1, 1}), BatchLayoutError);
}

TEST(ValidateBatch, SizeMismatch) {
  EXPECT_THROW(make_batch(samples({1, 1, 2, 2, 3}), {2, 2}), BatchLayoutError);
}

TEST(ValidateBatch, TooManyIdentities) {
  EXPECT_THROW(make_batch(samples({1, 1, 2, 2, 3, 3}), {2, 3}), IdentityCountError);
}

TEST(ValidateBatch, PositiveAndNegativeSetSizes) {
  const PkLayout layout{3, 4};
  const Batch b = make_batch(samples({0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2}), layout);
  const auto labels = b.labels();
  for (int a = 0; a < layout.batch_size(); ++a) {
    const auto pos = positive_indices(labels, a);
    const auto neg = negative_indices(labels, a);
    EXPECT_EQ(static_cast<int>(pos.size()), layout.instances - 1);
    EXPECT_EQ(static_cast<int>(neg.size()), (layout.identities - 1) * layout.instances);
    for (int p : pos) {
      EXPECT_NE(p, a);
      EXPECT_EQ(labels[p], labels[a]);
    }
    for (int n : neg) EXPECT_NE(labels[n], labels[a]);
  }
}

TEST(EmbeddingMatrix, RowsHaveUnitNorm) {
  Matrix x(3, 4);
  x << 1, 2, 3, 4, -1, 0, 0, 0, 0.001, 0.002, -0.003, 0.5;
  const auto e = l2_normalized(x);
  EXPECT_TRUE(e.normalized);
  EXPECT_EQ(e.count(), 3);
  EXPECT_EQ(e.dim(), 4);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(e.rows.row(i).norm(), 1.0, 1e-12);
}
