#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "d3/data.hpp"
#include "d3/discrepancy.hpp"
#include "d3/errors.hpp"
#include "d3/rng.hpp"

using namespace d3;

TEST_CASE("data: sigmoid target is tanh(x/2) and vanishes at 0") {
  CHECK(sigmoid_target(0.0) == doctest::Approx(0.0));
  for (double x : {-2.0, -0.5, 0.3, 1.7}) {
    CHECK(sigmoid_target(x) == doctest::Approx(std::tanh(x / 2.0)));
    CHECK(sigmoid_target(x) == doctest::Approx(2.0 / (1.0 + std::exp(-x)) - 1.0));
  }
}

TEST_CASE("data: literal pole form audit") {
  // The alternative form 2/(1-e^-x) - 1 diverges toward x=0; keeping it
  // callable documents why it cannot be the intended target on [-2,2].
  CHECK(sigmoid_target(1.0, true) == doctest::Approx(2.0 / (1.0 - std::exp(-1.0)) - 1.0));
  CHECK(std::abs(sigmoid_target(1e-8, true)) > 1e7);
}

TEST_CASE("data: sigmoid regression respects domain, sigma, and seed") {
  Dataset ds = gen_sigmoid_regression(100, -2.0, 2.0, 0.5, 11);
  REQUIRE(ds.n() == 100);
  REQUIRE(ds.task == Task::regression);
  REQUIRE(ds.has_clean());
  CHECK(ds.xs.minCoeff() >= -2.0);
  CHECK(ds.xs.maxCoeff() < 2.0);
  for (int i = 0; i < 100; ++i)
    CHECK(ds.ys_clean(i, 0) == doctest::Approx(sigmoid_target(ds.xs(i, 0))));
  CHECK(ds.noise.kind == NoiseMeta::Kind::gaussian);
  CHECK(ds.noise.sigma == 0.5);

  Dataset again = gen_sigmoid_regression(100, -2.0, 2.0, 0.5, 11);
  CHECK((again.xs - ds.xs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((again.ys_noisy - ds.ys_noisy).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("data: sigma zero means noisy equals clean") {
  Dataset ds = gen_sigmoid_regression(50, -2.0, 2.0, 0.0, 3);
  CHECK((ds.ys_noisy - ds.ys_clean).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(gen_sigmoid_regression(50, -2, 2, -0.1, 3), ConfigError);
  CHECK_THROWS_AS(gen_sigmoid_regression(0, -2, 2, 0.5, 3), ConfigError);
  CHECK_THROWS_AS(gen_sigmoid_regression(50, 2, -2, 0.5, 3), ConfigError);
}

TEST_CASE("data: blob generator basics") {
  Dataset ds = gen_blob_classification(500, 10, 16, 0.1, 21);
  REQUIRE(ds.n() == 500);
  REQUIRE(ds.task == Task::classification);
  CHECK(ds.num_classes == 10);
  CHECK(ds.xs.cols() == 16);
  auto labels = ds.labels_noisy();
  std::set<int> seen(labels.begin(), labels.end());
  CHECK(seen.size() == 10);  // every class present at N=500
  for (int l : labels) {
    CHECK(l >= 0);
    CHECK(l < 10);
  }

  Dataset again = gen_blob_classification(500, 10, 16, 0.1, 21);
  CHECK((again.xs - ds.xs).cwiseAbs().maxCoeff() == 0.0);
  CHECK(again.labels_noisy() == labels);
}

TEST_CASE("data: two tight far-apart blobs label by nearest center") {
  // Centers sit on a radius-2 circle; spread 0.01 makes overlap impossible,
  // so the stored label must equal the nearest-center assignment.
  Dataset ds = gen_blob_classification(200, 2, 2, 0.01, 5);
  auto labels = ds.labels_noisy();
  // Recover the two centers as per-class means.
  Mat c = Mat::Zero(2, 2);
  Eigen::Vector2i counts(0, 0);
  for (int i = 0; i < 200; ++i) {
    c.row(labels[static_cast<std::size_t>(i)]) += ds.xs.row(i);
    counts(labels[static_cast<std::size_t>(i)])++;
  }
  for (int k = 0; k < 2; ++k) c.row(k) /= counts(k);
  for (int i = 0; i < 200; ++i) {
    double d0 = (ds.xs.row(i) - c.row(0)).squaredNorm();
    double d1 = (ds.xs.row(i) - c.row(1)).squaredNorm();
    CHECK(labels[static_cast<std::size_t>(i)] == (d1 < d0 ? 1 : 0));
  }
}

TEST_CASE("data: corruption count and provenance") {
  Dataset base = gen_blob_classification(1000, 10, 4, 0.1, 8);
  Dataset cor = corrupt_labels(base, 0.3, 99);
  CHECK((cor.xs - base.xs).cwiseAbs().maxCoeff() == 0.0);
  auto lb = base.labels_noisy(), lc = cor.labels_noisy(), clean = cor.labels_clean();
  CHECK(clean == lb);  // clean targets survive corruption
  int changed_slots = 0;
  for (std::size_t i = 0; i < lb.size(); ++i)
    if (lb[i] != lc[i]) ++changed_slots;
  // Exactly round(0.3*1000)=300 redraws, each staying put w.p. 1/10:
  // E[changed] = 270, sd ~ 9. The realized count is recorded, not assumed.
  CHECK(changed_slots >= 230);
  CHECK(changed_slots <= 300);
  CHECK(cor.noise.kind == NoiseMeta::Kind::label_corruption);
  CHECK(cor.noise.corruption_rate == 0.3);
  CHECK(cor.noise.realized_e == doctest::Approx(changed_slots / 1000.0));
}

TEST_CASE("data: corruption rate zero is a no-op") {
  Dataset base = gen_blob_classification(300, 5, 2, 0.1, 8);
  Dataset cor = corrupt_labels(base, 0.0, 99);
  CHECK(cor.labels_noisy() == base.labels_noisy());
  CHECK(cor.noise.realized_e == 0.0);
}

TEST_CASE("data: corruption at rate 0.5, K=10 realizes E near 0.45") {
  // Each redrawn label stays correct w.p. 1/10, so E = 0.5 * 9/10 = 0.45,
  // binomial sd = sqrt(5000 * 0.9 * 0.1)/10000 ~ 0.0021; allow 3 sigma.
  Dataset base = gen_blob_classification(10000, 10, 4, 0.1, 13);
  Dataset cor = corrupt_labels(base, 0.5, 77);
  CHECK(std::abs(cor.noise.realized_e - 0.45) <= 3 * 0.00212);
}

TEST_CASE("data: full corruption keeps about one tenth correct") {
  Dataset base = gen_blob_classification(10000, 10, 4, 0.1, 29);
  Dataset cor = corrupt_labels(base, 1.0, 31);
  auto clean = cor.labels_clean(), noisy = cor.labels_noisy();
  int correct = 0;
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (clean[i] == noisy[i]) ++correct;
  const double frac = correct / 10000.0;
  CHECK(frac >= 0.09);
  CHECK(frac <= 0.11);
}

TEST_CASE("data: realized E equals the classification discrepancy to clean") {
  Dataset base = gen_blob_classification(2000, 10, 4, 0.1, 17);
  Dataset cor = corrupt_labels(base, 0.4, 3);
  double e = d_n_labels(cor.labels_noisy(), cor.labels_clean());
  CHECK(cor.noise.realized_e == doctest::Approx(e));
}

TEST_CASE("data: corrupt_labels rejects bad input") {
  Dataset reg = gen_sigmoid_regression(10, -2, 2, 0.5, 1);
  CHECK_THROWS_AS(corrupt_labels(reg, 0.5, 1), ConfigError);
  Dataset base = gen_blob_classification(100, 3, 2, 0.1, 1);
  CHECK_THROWS_AS(corrupt_labels(base, -0.1, 1), ConfigError);
  CHECK_THROWS_AS(corrupt_labels(base, 1.1, 1), ConfigError);
}

TEST_CASE("data: pgm round-trip is exact on 8-bit levels") {
  ImageGray img;
  img.width = 17;
  img.height = 9;
  img.pix.resize(17 * 9);
  Rng r(77);
  for (Eigen::Index i = 0; i < img.pix.size(); ++i)
    img.pix(i) = static_cast<double>(r.below(256)) / 255.0;
  const std::string path = "test_roundtrip.pgm";
  save_pgm(img, path);
  ImageGray back = load_pgm(path);
  REQUIRE(back.width == 17);
  REQUIRE(back.height == 9);
  CHECK((back.pix - img.pix).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("data: pgm save/load of a generated image quantizes once") {
  // Generated images carry arbitrary doubles; one save/load quantizes them
  // to the nearest 8-bit level and a second round trip is then exact.
  ImageGray img = make_image("checker", 16, 16);
  save_pgm(img, "test_quant.pgm");
  ImageGray once = load_pgm("test_quant.pgm");
  CHECK((once.pix - img.pix).cwiseAbs().maxCoeff() <= 0.5 / 255.0);
  save_pgm(once, "test_quant.pgm");
  ImageGray twice = load_pgm("test_quant.pgm");
  CHECK((twice.pix - once.pix).cwiseAbs().maxCoeff() == 0.0);
  std::remove("test_quant.pgm");
}

TEST_CASE("data: pgm rejects non-255 maxval and truncation") {
  {
    std::ofstream f("test_bad_maxval.pgm", std::ios::binary);
    f << "P5\n2 2\n65535\n";
    f.write("\0\0\0\0\0\0\0\0", 8);
  }
  CHECK_THROWS_AS(load_pgm("test_bad_maxval.pgm"), IoError);
  std::remove("test_bad_maxval.pgm");

  {
    std::ofstream f("test_truncated.pgm", std::ios::binary);
    f << "P5\n4 4\n255\n";
    f.write("\x01\x02", 2);
  }
  CHECK_THROWS_AS(load_pgm("test_truncated.pgm"), IoError);
  std::remove("test_truncated.pgm");
}

TEST_CASE("data: one-pixel pgm carries 128/255") {
  ImageGray img;
  img.width = img.height = 1;
  img.pix = Vec::Constant(1, 128.0 / 255.0);
  save_pgm(img, "test_single.pgm");
  ImageGray back = load_pgm("test_single.pgm");
  CHECK(back.pix(0) == doctest::Approx(128.0 / 255.0));
  std::remove("test_single.pgm");
}

TEST_CASE("data: builtin images are deterministic and in range") {
  for (const char* kind : {"ramp", "checker", "scene"}) {
    ImageGray a = make_image(kind, 32, 32);
    ImageGray b = make_image(kind, 32, 32);
    REQUIRE(a.pix.size() == 32 * 32);
    CHECK(a.pix.minCoeff() >= 0.0);
    CHECK(a.pix.maxCoeff() <= 1.0);
    CHECK((a.pix - b.pix).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(make_image("nope", 8, 8), ConfigError);
}

TEST_CASE("data: inr dataset geometry") {
  ImageGray img = make_image("ramp", 8, 4);
  Dataset ds = gen_inr_dataset(img, 0.0, 1);
  REQUIRE(ds.n() == 32);
  REQUIRE(ds.task == Task::inr);
  CHECK(ds.xs.cols() == 2);
  // Corner pixel (row 0, col 0) maps to (-1,-1); the far corner to (1,1).
  CHECK(ds.xs(0, 0) == doctest::Approx(-1.0));
  CHECK(ds.xs(0, 1) == doctest::Approx(-1.0));
  CHECK(ds.xs(31, 0) == doctest::Approx(1.0));
  CHECK(ds.xs(31, 1) == doctest::Approx(1.0));
  // sigma=0: noisy == clean == pixel values.
  CHECK((ds.ys_noisy - ds.ys_clean).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ds.ys_clean(9, 0) == doctest::Approx(img.at(1, 1)));
}

TEST_CASE("data: inr noise lands near the theoretical psnr") {
  // sigma=25 on 8-bit scale: PSNR ~ 20*log10(255/25) = 20.17 dB, nudged by
  // clipping at [0,1]. The spec-level expectation is 20.2 +- 0.3.
  ImageGray img = make_image("ramp", 64, 64);
  Dataset ds = gen_inr_dataset(img, 25.0, 7);
  CHECK(ds.ys_noisy.minCoeff() >= 0.0);
  CHECK(ds.ys_noisy.maxCoeff() <= 1.0);
  ImageGray noisy = image_from_outputs(ds.ys_noisy, 64, 64);
  double p = psnr(noisy, img);
  CHECK(p >= 19.9);
  CHECK(p <= 20.5);
}

TEST_CASE("data: image_from_outputs clips") {
  Mat out(4, 1);
  out << -0.5, 0.25, 0.75, 1.5;
  ImageGray img = image_from_outputs(out, 2, 2);
  CHECK(img.pix(0) == 0.0);
  CHECK(img.pix(1) == 0.25);
  CHECK(img.pix(3) == 1.0);
}

TEST_CASE("data: dataset csv export writes one row per sample") {
  Dataset ds = gen_sigmoid_regression(5, -2, 2, 0.5, 1);
  const std::string path = "test_export.csv";
  export_dataset_csv(ds, path);
  std::ifstream f(path);
  std::string line;
  int rows = 0;
  std::getline(f, line);  // header
  CHECK(line.find("x0") != std::string::npos);
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);
  std::remove(path.c_str());
}
