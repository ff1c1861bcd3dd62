#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3/nn.hpp"

namespace d3 {

enum class Task { regression, classification, inr };

struct NoiseMeta {
  enum class Kind { none, gaussian, label_corruption };
  Kind kind = Kind::none;
  double sigma = 0.0;            // gaussian
  double corruption_rate = 0.0;  // label_corruption, nominal rate
  double realized_e = 0.0;       // fraction of labels differing from clean
  std::uint64_t noise_seed = 0;
};

// Training set with an optional clean-target oracle. Classification stores
// the integer label in a 1-column matrix; labels_*() convert.
struct Dataset {
  Task task = Task::regression;
  Mat xs;        // N x input_dim
  Mat ys_noisy;  // N x output_dim
  Mat ys_clean;  // empty when no oracle is available
  int num_classes = 0;
  NoiseMeta noise;

  Eigen::Index n() const { return xs.rows(); }
  bool has_clean() const { return ys_clean.size() > 0; }
  std::vector<int> labels_noisy() const;
  std::vector<int> labels_clean() const;
  void validate() const;
};

// y = 2/(1+e^-x) - 1 = tanh(x/2). The variant selected by
// `literal_pole_form` evaluates 2/(1-e^-x) - 1 instead, which has a pole at
// x = 0; it exists only for audits of that formula and is never a default.
double sigmoid_target(double x, bool literal_pole_form = false);

Dataset gen_sigmoid_regression(int N, double lo, double hi, double sigma, std::uint64_t seed,
                               bool literal_pole_form = false);

// K equally likely Gaussian clusters; centers sit on a circle of radius 2 in
// the first two coordinates (evenly spaced on [-2,2] when input_dim == 1),
// so they stay well separated for any K. Clean label = cluster of origin.
Dataset gen_blob_classification(int N, int K, int input_dim, double spread, std::uint64_t seed);

// Replaces exactly round(rate*N) labels, chosen without replacement, by
// labels drawn uniformly over all K classes (the original class included).
Dataset corrupt_labels(const Dataset& ds, double rate, std::uint64_t seed);

// Grayscale image, row-major, values in [0,1].
struct ImageGray {
  int width = 0, height = 0;
  Vec pix;
  double at(int r, int c) const { return pix(static_cast<Eigen::Index>(r) * width + c); }
};

ImageGray load_pgm(const std::string& path);
void save_pgm(const ImageGray& img, const std::string& path);

// Deterministic test images: "ramp", "checker", "scene" (smooth bumps).
ImageGray make_image(const std::string& kind, int w, int h);

// Pixel-coordinate regression set for fitting an image: xs in [-1,1]^2
// (corner pixel at (-1,-1)), targets = intensities, noise N(0,(sigma/255)^2)
// added then clipped back to [0,1].
Dataset gen_inr_dataset(const ImageGray& img, double sigma, std::uint64_t seed);

ImageGray image_from_outputs(const Mat& outputs, int width, int height);  // clips to [0,1]

void export_dataset_csv(const Dataset& ds, const std::string& path);

}  // namespace d3
