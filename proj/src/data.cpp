#include "d3/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "d3/csv.hpp"
#include "d3/rng.hpp"

namespace d3 {

// ---- Dataset helpers --------------------------------------------------------

std::vector<int> Dataset::labels_noisy() const {
  std::vector<int> out(static_cast<std::size_t>(ys_noisy.rows()));
  for (Eigen::Index i = 0; i < ys_noisy.rows(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<int>(ys_noisy(i, 0));
  return out;
}

std::vector<int> Dataset::labels_clean() const {
  std::vector<int> out(static_cast<std::size_t>(ys_clean.rows()));
  for (Eigen::Index i = 0; i < ys_clean.rows(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<int>(ys_clean(i, 0));
  return out;
}

void Dataset::validate() const {
  if (xs.rows() < 1) throw ConfigError("dataset: empty");
  if (ys_noisy.rows() != xs.rows()) throw ConfigError("dataset: xs/ys size mismatch");
  if (has_clean() && ys_clean.rows() != xs.rows())
    throw ConfigError("dataset: clean target size mismatch");
  if (task == Task::classification) {
    if (num_classes < 2) throw ConfigError("dataset: classification needs num_classes >= 2");
    for (Eigen::Index i = 0; i < ys_noisy.rows(); ++i) {
      const int y = static_cast<int>(ys_noisy(i, 0));
      if (y < 0 || y >= num_classes) throw ConfigError("dataset: label out of range");
    }
  }
}

// ---- regression ---------------------------------------------------------------

double sigmoid_target(double x, bool literal_pole_form) {
  if (literal_pole_form) return 2.0 / (1.0 - std::exp(-x)) - 1.0;
  return std::tanh(0.5 * x);
}

Dataset gen_sigmoid_regression(int N, double lo, double hi, double sigma, std::uint64_t seed,
                               bool literal_pole_form) {
  if (N < 1) throw ConfigError("sigmoid regression: N must be >= 1");
  if (lo >= hi) throw ConfigError("sigmoid regression: empty domain");
  if (sigma < 0.0) throw ConfigError("sigmoid regression: sigma must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.task = Task::regression;
  ds.xs.resize(N, 1);
  ds.ys_clean.resize(N, 1);
  ds.ys_noisy.resize(N, 1);
  for (int i = 0; i < N; ++i) {
    const double x = rng.uniform(lo, hi);
    ds.xs(i, 0) = x;
    ds.ys_clean(i, 0) = sigmoid_target(x, literal_pole_form);
  }
  // separate pass so the x-draws are unchanged when sigma varies
  for (int i = 0; i < N; ++i) ds.ys_noisy(i, 0) = ds.ys_clean(i, 0) + sigma * rng.normal();
  ds.noise.kind = sigma > 0.0 ? NoiseMeta::Kind::gaussian : NoiseMeta::Kind::none;
  ds.noise.sigma = sigma;
  ds.noise.noise_seed = seed;
  return ds;
}

// ---- classification -------------------------------------------------------------

Dataset gen_blob_classification(int N, int K, int input_dim, double spread, std::uint64_t seed) {
  if (K < 2) throw ConfigError("blobs: K must be >= 2");
  if (N < K) throw ConfigError("blobs: N must be >= K");
  if (input_dim < 1) throw ConfigError("blobs: input_dim must be >= 1");
  if (spread <= 0.0) throw ConfigError("blobs: spread must be positive");

  Mat centers = Mat::Zero(K, input_dim);
  constexpr double two_pi = 6.28318530717958647692;
  for (int k = 0; k < K; ++k) {
    if (input_dim == 1) {
      centers(k, 0) = -2.0 + 4.0 * static_cast<double>(k) / static_cast<double>(K - 1);
    } else {
      centers(k, 0) = 2.0 * std::cos(two_pi * k / K);
      centers(k, 1) = 2.0 * std::sin(two_pi * k / K);
    }
  }

  Rng rng(seed);
  Dataset ds;
  ds.task = Task::classification;
  ds.num_classes = K;
  ds.xs.resize(N, input_dim);
  ds.ys_noisy.resize(N, 1);
  ds.ys_clean.resize(N, 1);
  for (int i = 0; i < N; ++i) {
    const int k = i % K;  // equal priors, realized exactly
    for (int d = 0; d < input_dim; ++d) ds.xs(i, d) = centers(k, d) + spread * rng.normal();
    ds.ys_clean(i, 0) = k;
    ds.ys_noisy(i, 0) = k;
  }
  return ds;
}

Dataset corrupt_labels(const Dataset& ds, double rate, std::uint64_t seed) {
  if (ds.task != Task::classification) throw ConfigError("corrupt_labels: not a classification set");
  if (rate < 0.0 || rate > 1.0) throw ConfigError("corrupt_labels: rate must be in [0,1]");
  Dataset out = ds;
  const auto N = static_cast<std::size_t>(ds.n());
  const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(N)));
  Rng rng(seed);
  const auto picked = rng.sample_without_replacement(N, m);
  for (std::size_t idx : picked)
    out.ys_noisy(static_cast<Eigen::Index>(idx), 0) =
        static_cast<double>(rng.below(static_cast<std::uint64_t>(ds.num_classes)));
  Eigen::Index diff = 0;
  for (Eigen::Index i = 0; i < out.n(); ++i)
    if (out.ys_noisy(i, 0) != out.ys_clean(i, 0)) ++diff;
  out.noise.kind = NoiseMeta::Kind::label_corruption;
  out.noise.corruption_rate = rate;
  out.noise.realized_e = static_cast<double>(diff) / static_cast<double>(out.n());
  out.noise.noise_seed = seed;
  return out;
}

// ---- images ----------------------------------------------------------------------

ImageGray load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open '" + path + "'");
  auto next_token = [&f, &path]() -> std::string {
    std::string tok;
    for (;;) {
      int c = f.get();
      if (c == EOF) throw IoError("pgm: truncated header in '" + path + "'");
      if (c == '#') {  // comment to end of line
        while (c != EOF && c != '\n') c = f.get();
        continue;
      }
      if (std::isspace(c)) {
        if (tok.empty()) continue;
        return tok;
      }
      tok.push_back(static_cast<char>(c));
    }
  };
  if (next_token() != "P5") throw IoError("pgm: '" + path + "' is not a binary PGM (P5)");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w < 1 || h < 1) throw IoError("pgm: bad dimensions in '" + path + "'");
  if (maxval != 255) throw IoError("pgm: only maxval 255 is supported");
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw IoError("pgm: truncated payload in '" + path + "'");
  ImageGray img;
  img.width = w;
  img.height = h;
  img.pix.resize(static_cast<Eigen::Index>(buf.size()));
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.pix(static_cast<Eigen::Index>(i)) = buf[i] / 255.0;
  return img;
}

void save_pgm(const ImageGray& img, const std::string& path) {
  if (img.width < 1 || img.height < 1) throw ConfigError("pgm: empty image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open '" + path + "' for writing");
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    double v = std::clamp(img.pix(static_cast<Eigen::Index>(i)), 0.0, 1.0);
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("pgm: write failed for '" + path + "'");
}

ImageGray make_image(const std::string& kind, int w, int h) {
  if (w < 1 || h < 1) throw ConfigError("make_image: bad dimensions");
  ImageGray img;
  img.width = w;
  img.height = h;
  img.pix.resize(static_cast<Eigen::Index>(w) * h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double v = 0.0;
      if (kind == "ramp") {
        v = (w + h > 2) ? static_cast<double>(r + c) / static_cast<double>(w + h - 2) : 0.5;
      } else if (kind == "checker") {
        v = (((r / 8) + (c / 8)) % 2 == 0) ? 0.25 : 0.75;
      } else if (kind == "scene") {
        // smooth synthetic scene: slanted background plus three bumps
        const double x = (w > 1) ? static_cast<double>(c) / (w - 1) : 0.5;
        const double y = (h > 1) ? static_cast<double>(r) / (h - 1) : 0.5;
        auto bump = [x, y](double cx, double cy, double s, double a) {
          const double dx = x - cx, dy = y - cy;
          return a * std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
        };
        v = 0.25 + 0.2 * x + 0.1 * y + bump(0.30, 0.35, 0.15, 0.45) +
            bump(0.72, 0.28, 0.10, -0.15) + bump(0.65, 0.70, 0.20, 0.30);
        v = std::clamp(v, 0.0, 1.0);
      } else {
        throw ConfigError("make_image: unknown kind '" + kind + "'");
      }
      img.pix(static_cast<Eigen::Index>(r) * w + c) = v;
    }
  }
  return img;
}

Dataset gen_inr_dataset(const ImageGray& img, double sigma, std::uint64_t seed) {
  if (img.width < 1 || img.height < 1) throw ConfigError("inr dataset: empty image");
  if (sigma < 0.0) throw ConfigError("inr dataset: sigma must be >= 0");
  if (img.pix.minCoeff() < 0.0 || img.pix.maxCoeff() > 1.0)
    throw ConfigError("inr dataset: pixel values must lie in [0,1]");
  const int W = img.width, H = img.height;
  const Eigen::Index N = static_cast<Eigen::Index>(W) * H;
  Rng rng(seed);
  Dataset ds;
  ds.task = Task::inr;
  ds.xs.resize(N, 2);
  ds.ys_clean.resize(N, 1);
  ds.ys_noisy.resize(N, 1);
  const double sd = sigma / 255.0;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const Eigen::Index i = static_cast<Eigen::Index>(r) * W + c;
      ds.xs(i, 0) = (W > 1) ? -1.0 + 2.0 * c / (W - 1) : 0.0;
      ds.xs(i, 1) = (H > 1) ? -1.0 + 2.0 * r / (H - 1) : 0.0;
      const double clean = img.at(r, c);
      ds.ys_clean(i, 0) = clean;
      ds.ys_noisy(i, 0) = std::clamp(clean + sd * rng.normal(), 0.0, 1.0);
    }
  }
  ds.noise.kind = sigma > 0.0 ? NoiseMeta::Kind::gaussian : NoiseMeta::Kind::none;
  ds.noise.sigma = sigma;
  ds.noise.noise_seed = seed;
  return ds;
}

ImageGray image_from_outputs(const Mat& outputs, int width, int height) {
  if (outputs.rows() != static_cast<Eigen::Index>(width) * height || outputs.cols() != 1)
    throw ConfigError("image_from_outputs: shape mismatch");
  ImageGray img;
  img.width = width;
  img.height = height;
  img.pix = outputs.col(0).cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

void export_dataset_csv(const Dataset& ds, const std::string& path) {
  CsvWriter csv(path);
  std::vector<std::string> header;
  for (Eigen::Index d = 0; d < ds.xs.cols(); ++d) header.push_back("x" + std::to_string(d));
  for (Eigen::Index d = 0; d < ds.ys_noisy.cols(); ++d)
    header.push_back("y_noisy" + std::to_string(d));
  if (ds.has_clean())
    for (Eigen::Index d = 0; d < ds.ys_clean.cols(); ++d)
      header.push_back("y_clean" + std::to_string(d));
  csv.header(header);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    csv.begin_row();
    for (Eigen::Index d = 0; d < ds.xs.cols(); ++d) csv.field(ds.xs(i, d));
    for (Eigen::Index d = 0; d < ds.ys_noisy.cols(); ++d) csv.field(ds.ys_noisy(i, d));
    if (ds.has_clean())
      for (Eigen::Index d = 0; d < ds.ys_clean.cols(); ++d) csv.field(ds.ys_clean(i, d));
    csv.end_row();
  }
}

}  // namespace d3
