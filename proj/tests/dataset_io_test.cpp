#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include "json.hpp"

#include "oracles.hpp"
#include "saliencytune/dataset_io.hpp"

using namespace saliencytune;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = FIXTURE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("saliencytune_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

}  // namespace

TEST(LoadDataset, MatchesFixture) {
  const auto samples = load_dataset(kFixtures / "isic_mini");
  std::ifstream in(kFixtures / "isic_mini_expected.json");
  const auto expected = nlohmann::json::parse(in);
  ASSERT_EQ(samples.size(), expected.size());
  for (const auto& s : samples) {
    ASSERT_TRUE(expected.contains(s.id)) << s.id;
    const auto& e = expected[s.id];
    EXPECT_EQ(default_class_names()[s.label], e["label"].get<std::string>());
    ASSERT_EQ(s.image.shape(), (Shape3{3, 16, 16}));
    const auto rgb = e["rgb"].get<std::vector<int>>();
    for (std::size_t i = 0; i < rgb.size(); ++i) ASSERT_DOUBLE_EQ(s.image[i], rgb[i] / 255.0) << s.id << " at " << i;
    ASSERT_TRUE(s.gt_mask);
    EXPECT_EQ(s.gt_mask->origin, MaskOrigin::ground_truth);
    const auto u = e["union"].get<std::vector<int>>();
    EXPECT_EQ(oracle::bits_of(*s.gt_mask), std::vector<std::uint8_t>(u.begin(), u.end())) << s.id;
  }
}

TEST(LoadDataset, CorruptImageIsSkipped) {
  const auto samples = load_dataset(kFixtures / "isic_mini");
  for (const auto& s : samples) EXPECT_NE(s.id, "ISIC_0000004");
}

TEST(LoadDataset, MissingAttributesContributeNothing) {
  const auto samples = load_dataset(kFixtures / "isic_mini");
  const auto it = std::find_if(samples.begin(), samples.end(), [](const auto& s) { return s.id == "ISIC_0000003"; });
  ASSERT_NE(it, samples.end());
  std::vector<ExplanationMask> present;
  for (const std::string name : {"pigment_network", "negative_network"})
    present.push_back(mask_from_mat(
        cv::imread((kFixtures / "isic_mini" / "masks" / ("ISIC_0000003_attribute_" + name + ".png")).string(),
                   cv::IMREAD_GRAYSCALE),
        16, 16));
  EXPECT_EQ(oracle::bits_of(*it->gt_mask), oracle::union_any({oracle::bits_of(present[0]), oracle::bits_of(present[1])}));
}

TEST(LoadDataset, ResizesImagesAndMasks) {
  LoadOptions opt;
  opt.resize_to = Shape3{3, 32, 32};
  const auto samples = load_dataset(kFixtures / "isic_mini", opt);
  for (const auto& s : samples) {
    EXPECT_EQ(s.image.shape(), (Shape3{3, 32, 32}));
    EXPECT_EQ(s.gt_mask->height(), 32u);
    EXPECT_EQ(s.gt_mask->width(), 32u);
    // Nearest-neighbour doubling keeps the marked fraction.
    const auto full = load_dataset(kFixtures / "isic_mini");
    const auto it = std::find_if(full.begin(), full.end(), [&](const auto& f) { return f.id == s.id; });
    EXPECT_EQ(s.gt_mask->count(), 4 * it->gt_mask->count());
  }
}

TEST(LoadDataset, BadInputsAreInputErrors) {
  TempDir dir;
  EXPECT_THROW(load_dataset(dir.path), InputError);
  write_text(dir.path / "labels.csv", "name,label\nx,MEL\n");
  EXPECT_THROW(load_dataset(dir.path), InputError);
  write_text(dir.path / "labels.csv", "id,label\nx,MEL\n");
  EXPECT_THROW(load_dataset(dir.path), InputError);
  write_text(dir.path / "labels.csv", "id,label\nx,SCC\n");
  cv::imwrite((dir.path / "images" / "x.png").string(), cv::Mat(4, 4, CV_8UC3, cv::Scalar(1, 2, 3)));
  EXPECT_THROW(load_dataset(dir.path), InputError);
}

TEST(LabelsCsv, ColumnsInAnyOrderWithWhitespace) {
  TempDir dir;
  write_text(dir.path / "labels.csv", "label, extra ,id\r\nMEL,1, a \r\n\r\nNV,2,b\n");
  const auto rows = read_labels_csv(dir.path / "labels.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].id, "a");
  EXPECT_EQ(rows[0].label, "MEL");
  EXPECT_EQ(rows[1].id, "b");
  EXPECT_EQ(rows[1].label, "NV");
}

TEST(WriteDataset, RoundTrip) {
  TempDir dir;
  const auto samples = generate_synthetic_dataset(30, 9);
  write_dataset(samples, dir.path);
  const auto back = load_dataset(dir.path);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].id, samples[i].id);
    EXPECT_EQ(back[i].label, samples[i].label);
    EXPECT_EQ(oracle::bits_of(*back[i].gt_mask), oracle::bits_of(*samples[i].gt_mask));
    double err = 0.0;
    for (std::size_t k = 0; k < samples[i].image.size(); ++k) err += std::abs(back[i].image[k] - samples[i].image[k]);
    EXPECT_LT(err / static_cast<double>(samples[i].image.size()), 0.02) << "JPEG error too large for " << samples[i].id;
  }
}

TEST(ImageIo, EightBitTensorRoundTripIsExact) {
  oracle::Rng rng(4);
  cv::Mat m(5, 7, CV_8UC3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) m.at<cv::Vec3b>(y, x)[c] = static_cast<std::uint8_t>(oracle::index(rng, 256));
  const auto t = tensor_from_mat(m);
  EXPECT_EQ(t.shape(), (Shape3{3, 5, 7}));
  EXPECT_DOUBLE_EQ(t(0, 2, 3), m.at<cv::Vec3b>(2, 3)[2] / 255.0);
  EXPECT_DOUBLE_EQ(t(2, 2, 3), m.at<cv::Vec3b>(2, 3)[0] / 255.0);
  const auto back = mat_from_tensor(t);
  EXPECT_EQ(cv::norm(back, m, cv::NORM_INF), 0.0);
  EXPECT_THROW(tensor_from_mat(cv::Mat()), InputError);
}

TEST(ImageIo, ResizeKeepsConstantImages) {
  Tensor t({3, 5, 9}, 0.25);
  const auto r = resize_image(t, 32, 32);
  EXPECT_EQ(r.shape(), (Shape3{3, 32, 32}));
  for (double v : r.values()) EXPECT_NEAR(v, 0.25, 1e-12);
  oracle::Rng rng(2);
  const auto same = oracle::random_image(rng, {3, 4, 4});
  const auto id = resize_image(same, 4, 4);
  for (std::size_t i = 0; i < same.size(); ++i) EXPECT_EQ(id[i], same[i]);
}

TEST(MaskPng, RoundTripPreservesEveryPixel) {
  oracle::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 1 + oracle::index(rng, 40), w = 1 + oracle::index(rng, 40);
    const auto m = oracle::random_mask(rng, h, w, oracle::uniform(rng));
    const auto back = decode_mask_png(encode_mask_png(m));
    EXPECT_EQ(back.height(), h);
    EXPECT_EQ(back.width(), w);
    EXPECT_EQ(oracle::bits_of(back), oracle::bits_of(m));
    EXPECT_EQ(back.origin, MaskOrigin::feedback);
  }
}

TEST(MaskPng, NonBinaryAndUndecodableAreRejected) {
  cv::Mat grey(4, 4, CV_8UC1, cv::Scalar(0));
  grey.at<std::uint8_t>(1, 1) = 128;
  EXPECT_THROW(decode_mask_png(encode_png(grey)), InputError);
  EXPECT_THROW(decode_mask_png("not a png"), InputError);
  EXPECT_THROW(decode_mask_png(""), InputError);
}

TEST(MaskPng, LenientDatasetReadThresholdsAt128) {
  cv::Mat grey(2, 2, CV_8UC1);
  grey.at<std::uint8_t>(0, 0) = 0;
  grey.at<std::uint8_t>(0, 1) = 127;
  grey.at<std::uint8_t>(1, 0) = 128;
  grey.at<std::uint8_t>(1, 1) = 255;
  EXPECT_EQ(oracle::bits_of(mask_from_mat(grey, 2, 2)), (std::vector<std::uint8_t>{0, 0, 1, 1}));
}

TEST(SaliencyPng, RendersEnlargedGreyLevels) {
  RealGrid g(2, 2, 0.0);
  g(0, 1) = 1.0;
  g(1, 0) = 0.5;
  const auto m = decode_image_bytes(encode_saliency_png(g, 4, 4), cv::IMREAD_GRAYSCALE);
  ASSERT_EQ(m.rows, 4);
  ASSERT_EQ(m.cols, 4);
  EXPECT_EQ(m.at<std::uint8_t>(0, 0), 0);
  EXPECT_EQ(m.at<std::uint8_t>(1, 3), 255);
  EXPECT_EQ(m.at<std::uint8_t>(3, 0), 128);
}

TEST(Base64, KnownVectors) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, encoded] : cases) {
    EXPECT_EQ(base64_encode(plain), encoded);
    EXPECT_EQ(base64_decode(encoded), plain);
  }
  EXPECT_EQ(base64_decode("Zm9v\nYmFy "), "foobar");
}

TEST(Base64, RandomBytesRoundTrip) {
  oracle::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::string bytes(oracle::index(rng, 300), '\0');
    for (auto& b : bytes) b = static_cast<char>(oracle::index(rng, 256));
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
}

TEST(Base64, MalformedInputIsInputError) {
  EXPECT_THROW(base64_decode("abc"), InputError);
  EXPECT_THROW(base64_decode("ab!?"), InputError);
}
