#include "multibarf/encoding.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "multibarf/error.hpp"

namespace mbarf {

void EncodingConfig::validate() const {
  require(position_bands >= 1, "encoding: position_bands must be >= 1");
  require(direction_bands >= 0, "encoding: direction_bands must be >= 0");
}

double coarse_to_fine_weight(double alpha, int band) {
  const double offset = alpha - band;
  if (offset < 0.0) return 0.0;
  if (offset >= 1.0) return 1.0;
  return 0.5 * (1.0 - std::cos(offset * std::numbers::pi));
}

namespace {

std::vector<double> band_weights(double alpha, int bands) {
  std::vector<double> w(static_cast<size_t>(bands));
  for (int k = 0; k < bands; ++k) w[static_cast<size_t>(k)] = coarse_to_fine_weight(alpha, k);
  return w;
}

// Advances (sin p, cos p) to (sin 2p, cos 2p).
inline void step_band(double& s, double& c) {
  const double s2 = 2.0 * s * c;
  c = (c - s) * (c + s);
  s = s2;
}

}  // namespace

void encode_columns(const Eigen::MatrixXd& x, const EncodingConfig& cfg, double alpha,
                    int bands, Eigen::MatrixXd& out) {
  const Eigen::Index d = x.rows();
  const Eigen::Index n = x.cols();
  const Eigen::Index raw = cfg.include_raw ? d : 0;
  out.resize(cfg.encoded_dim(static_cast<int>(d), bands), n);
  if (cfg.include_raw) out.topRows(d) = x;
  const auto weights = band_weights(alpha, bands);
  int active = 0;
  while (active < bands && weights[static_cast<size_t>(active)] != 0.0) ++active;
  out.bottomRows(2 * d * (bands - active)).setZero();
  if (active == 0) return;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      double s = std::sin(std::numbers::pi * x(i, j));
      double c = std::cos(std::numbers::pi * x(i, j));
      for (int k = 0; k < active; ++k) {
        const Eigen::Index row = raw + 2 * d * k;
        const double w = weights[static_cast<size_t>(k)];
        out(row + i, j) = w * s;
        out(row + d + i, j) = w * c;
        step_band(s, c);
      }
    }
  }
}

void encode_columns_backward(const Eigen::MatrixXd& x, const EncodingConfig& cfg,
                             double alpha, int bands, const Eigen::MatrixXd& d_encoded,
                             Eigen::MatrixXd& d_x) {
  const Eigen::Index d = x.rows();
  const Eigen::Index n = x.cols();
  require(d_encoded.rows() == cfg.encoded_dim(static_cast<int>(d), bands) &&
              d_encoded.cols() == n,
          "encode_columns_backward: gradient shape mismatch");
  const Eigen::Index raw = cfg.include_raw ? d : 0;
  if (cfg.include_raw) {
    d_x = d_encoded.topRows(d);
  } else {
    d_x.setZero(d, n);
  }
  const auto weights = band_weights(alpha, bands);
  int active = 0;
  while (active < bands && weights[static_cast<size_t>(active)] != 0.0) ++active;
  if (active == 0) return;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      double s = std::sin(std::numbers::pi * x(i, j));
      double c = std::cos(std::numbers::pi * x(i, j));
      double acc = 0.0;
      double freq = std::numbers::pi;
      for (int k = 0; k < active; ++k) {
        const Eigen::Index row = raw + 2 * d * k;
        acc += weights[static_cast<size_t>(k)] * freq *
               (c * d_encoded(row + i, j) - s * d_encoded(row + d + i, j));
        step_band(s, c);
        freq *= 2.0;
      }
      d_x(i, j) += acc;
    }
  }
}

Eigen::VectorXd positional_encode(const Eigen::VectorXd& x, const EncodingConfig& cfg,
                                  double alpha, int bands) {
  require(x.allFinite(), "positional_encode: non-finite input");
  Eigen::MatrixXd out;
  encode_columns(x, cfg, alpha, bands, out);
  return out.col(0);
}

}  // namespace mbarf
