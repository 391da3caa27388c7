#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "usspine/annotations.hpp"
#include "usspine/volume.hpp"

using namespace usspine;

namespace {

Volume random_volume(int w, int h, int n, std::uint64_t seed) {
  std::mt19937 eng(static_cast<unsigned>(seed));
  std::vector<Slice> slices;
  for (int k = 0; k < n; ++k) {
    Slice s(w, h);
    for (auto& p : s.pixels()) p = static_cast<std::uint8_t>(eng() & 0xff);
    slices.push_back(std::move(s));
  }
  return Volume(std::move(slices), 1.5f, 0.25f);
}

}  // namespace

TEST(Image, RejectsNonPositiveSize) {
  EXPECT_THROW(Image(0, 4), ValidationError);
  EXPECT_THROW(Image(4, -1), ValidationError);
}

TEST(Volume, RejectsMismatchedSlices) {
  std::vector<Slice> s{Slice(4, 4), Slice(4, 5)};
  EXPECT_THROW(Volume(s, 1.0f, 1.0f), ValidationError);
  EXPECT_THROW(Volume({}, 1.0f, 1.0f), ValidationError);
}

TEST(VolumeIo, HeaderEcho) {
  oracle::TempDir dir("vol");
  write_volume(random_volume(320, 240, 100, 1), dir / "a.vol");
  const auto v = read_volume(dir / "a.vol");
  EXPECT_EQ(v.width(), 320);
  EXPECT_EQ(v.height(), 240);
  EXPECT_EQ(v.size(), 100);
}

TEST(VolumeIo, RoundTripIsBitExact) {
  oracle::TempDir dir("vol");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto v = random_volume(3 + static_cast<int>(seed), 7, 1 + static_cast<int>(seed) * 2, seed);
    write_volume(v, dir / "v.vol");
    EXPECT_EQ(read_volume(dir / "v.vol"), v);
  }
}

TEST(VolumeIo, SingleBlankSliceSize) {
  oracle::TempDir dir("vol");
  const Volume v({Slice(16, 8)}, 1.0f, 1.0f);
  write_volume(v, dir / "z.vol");
  EXPECT_EQ(std::filesystem::file_size(dir / "z.vol"), kVolumeHeaderBytes + 16u * 8u);
}

TEST(VolumeIo, WritesAreByteIdentical) {
  oracle::TempDir dir("vol");
  const auto v = random_volume(9, 5, 4, 3);
  write_volume(v, dir / "a.vol");
  write_volume(v, dir / "b.vol");
  EXPECT_EQ(detail::read_file(dir / "a.vol"), detail::read_file(dir / "b.vol"));
}

TEST(VolumeIo, BadMagicIsFormatError) {
  auto bytes = encode_volume(random_volume(4, 4, 3, 2));
  std::copy_n("XXXXXX", 6, bytes.begin());
  EXPECT_THROW(decode_volume(bytes), FormatError);
}

TEST(VolumeIo, TruncationIsCorruption) {
  auto bytes = encode_volume(random_volume(4, 4, 3, 2));
  bytes.pop_back();
  EXPECT_THROW(decode_volume(bytes), CorruptionError);
  bytes.resize(10);
  EXPECT_THROW(decode_volume(bytes), CorruptionError);
}

TEST(Annotations, FieldMapping) {
  std::istringstream in("12,100,50,110,52,160,30,210,52,220,50,1,1,1\n");
  const auto m = parse_annotations(in, 320, 240);
  ASSERT_EQ(m.size(), 1u);
  const auto& a = m.at(12);
  EXPECT_EQ(a.landmarks[Landmark::SP], (Point2{160, 30}));
  EXPECT_EQ(a.landmarks[Landmark::L0], (Point2{100, 50}));
  EXPECT_EQ(a.landmarks[Landmark::L3], (Point2{220, 50}));
  EXPECT_TRUE(a.all_real());
}

TEST(Annotations, EmptyInputGivesEmptyMap) {
  std::istringstream in("");
  EXPECT_TRUE(parse_annotations(in).empty());
}

TEST(Annotations, OutOfBoundsCoordinate) {
  std::istringstream in("12,320,50,110,52,160,30,210,52,220,50,1,1,1\n");
  EXPECT_THROW(parse_annotations(in, 320, 240), ValidationError);
}

TEST(Annotations, MalformedRowsReportTheirLine) {
  const std::vector<std::string> bad = {
      "1,2,3\n",                                          // field count
      "1,100,50,110,52,160,30,210,52,220,50,1,2,1\n",     // label value
      "1,100,5x,110,52,160,30,210,52,220,50,1,1,1\n",     // number
      "-1,100,50,110,52,160,30,210,52,220,50,1,1,1\n",    // slice index
  };
  for (const auto& row : bad) {
    std::istringstream in(std::string(kAnnotationHeader) + "\n\n" + row);
    try {
      parse_annotations(in);
      ADD_FAILURE() << "accepted " << row;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 3u) << row;
    }
  }
}

TEST(Annotations, DuplicateSliceRejected) {
  std::istringstream in("1,100,50,110,52,160,30,210,52,220,50,1,1,1\n1,100,50,110,52,160,30,210,52,220,50,1,1,1\n");
  EXPECT_THROW(parse_annotations(in), ParseError);
}

// Every row either parses or raises; parsed output round-trips.
TEST(Annotations, ParsingIsTotal) {
  std::mt19937 eng(5);
  std::uniform_real_distribution<double> coord(0, 239);
  AnnotationMap m;
  for (int k = 0; k < 200; ++k) {
    SliceAnnotation a;
    for (auto& p : a.landmarks.points) p = {coord(eng), coord(eng)};
    for (auto& l : a.labels) l = eng() & 1;
    m[k * 3] = a;
  }
  std::istringstream in(format_annotations(m));
  EXPECT_EQ(parse_annotations(in, 320, 240), m);
}

TEST(Detections, RoundTrip) {
  std::vector<DetectionResult> r(3);
  r[1].landmarks[2] = {10.25, 3.5};
  r[1].predicted_labels = {true, false, true};
  r[1].confidences = {0.75, 0.125, 0.5};
  std::istringstream in(format_detections(r));
  const auto m = parse_detections(in);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at(1), r[1]);
}
