#pragma once

// Fourier-feature positional encoding with a coarse-to-fine band gate.
//
// Layout for an input x of dimension d and L bands:
//   [x (d, only when include_raw)] [sin(pi x) cos(pi x)] [sin(2 pi x) cos(2 pi x)] ...
// each band block holding d sine entries followed by d cosine entries, all
// scaled by that band's gate weight.

#include <Eigen/Core>

namespace mbarf {

struct EncodingConfig {
  int position_bands = 10;
  int direction_bands = 4;
  bool include_raw = true;

  void validate() const;
  int position_dim() const { return encoded_dim(3, position_bands); }
  int direction_dim() const { return encoded_dim(3, direction_bands); }
  int encoded_dim(int input_dim, int bands) const {
    return input_dim * ((include_raw ? 1 : 0) + 2 * bands);
  }
  bool operator==(const EncodingConfig&) const = default;
};

// Gate value for band k at schedule position alpha (in bands): a cosine ramp
// from 0 at alpha = k to 1 at alpha = k + 1.
double coarse_to_fine_weight(double alpha, int band);

// Encodes a single vector. `bands` selects L (position or direction count).
Eigen::VectorXd positional_encode(const Eigen::VectorXd& x, const EncodingConfig& cfg,
                                  double alpha, int bands);

// Batched encoding: each column of `x` is one input. Output has
// cfg.encoded_dim(x.rows(), bands) rows.
void encode_columns(const Eigen::MatrixXd& x, const EncodingConfig& cfg, double alpha,
                    int bands, Eigen::MatrixXd& out);

// Reverse mode of encode_columns: given d(loss)/d(encoded), returns
// d(loss)/d(x) column by column.
void encode_columns_backward(const Eigen::MatrixXd& x, const EncodingConfig& cfg,
                             double alpha, int bands, const Eigen::MatrixXd& d_encoded,
                             Eigen::MatrixXd& d_x);

}  // namespace mbarf
