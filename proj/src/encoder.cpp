#include "hyperagg/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace hyperagg {

namespace {

// Calls fn(k, c) for every embedding element k with c the index of the
// coefficient covering it. Order is fixed: stage, channel, spatial.
template <typename Fn>
void for_each_element(const Mask& mask, Fn&& fn) {
  const auto& stages = mask.stages();
  std::size_t k = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::size_t base = mask.stage_offset(s);
    const std::size_t channels = stages[s].channels;
    const std::size_t spatial = stages[s].spatial;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t p = 0; p < spatial; ++p, ++k) {
        std::size_t c = base;
        if (mask.resolution() == MaskResolution::PerChannel) c += ch;
        if (mask.resolution() == MaskResolution::PerFeature) c += ch * spatial + p;
        fn(k, c);
      }
    }
  }
}

struct Moments {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  double length = 0.0;
  bool x_constant = true;
  bool y_constant = true;
};

template <typename T>
Moments pair_moments(const Mask& mask, std::span<const T> coeffs, std::span<const float> fx,
                     std::span<const float> fy) {
  Moments m;
  m.length = static_cast<double>(fx.size());
  double sum_x = 0.0;
  double sum_y = 0.0;
  const double x0 = static_cast<double>(coeffs[mask.coefficient_index(0, 0)]) * fx[0];
  const double y0 = static_cast<double>(coeffs[mask.coefficient_index(0, 0)]) * fy[0];
  for_each_element(mask, [&](std::size_t k, std::size_t c) {
    const double b = static_cast<double>(coeffs[c]);
    const double x = b * fx[k];
    const double y = b * fy[k];
    sum_x += x;
    sum_y += y;
    m.x_constant = m.x_constant && x == x0;
    m.y_constant = m.y_constant && y == y0;
  });
  m.mean_x = sum_x / m.length;
  m.mean_y = sum_y / m.length;
  for_each_element(mask, [&](std::size_t k, std::size_t c) {
    const double b = static_cast<double>(coeffs[c]);
    const double dx = b * fx[k] - m.mean_x;
    const double dy = b * fy[k] - m.mean_y;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    m.sxy += dx * dy;
  });
  return m;
}

void check_inputs(const FeatureSet& features, const Mask& mask, std::size_t coeff_count,
                  PairIndex pair) {
  mask.check_compatible(features);
  if (coeff_count != mask.size()) {
    fail(ErrorCode::ShapeMismatch, "coefficient vector does not match the mask layout");
  }
  if (pair.i >= features.image_count() || pair.j >= features.image_count()) {
    fail(ErrorCode::InvalidArgument, "pair index out of range");
  }
  if (features.embedding_length() < 2) {
    fail(ErrorCode::DegenerateDataset, "embeddings need at least 2 elements");
  }
}

struct Correlation {
  double r = 0.0;
  double var_x = 0.0;  // guarded variances
  double var_y = 0.0;
  double denom = 0.0;
};

Correlation correlate(const Moments& m, const FeatureSet& features, PairIndex pair,
                      double epsilon) {
  if (epsilon <= 0.0) {
    if (m.x_constant || m.sxx == 0.0) {
      fail(ErrorCode::ZeroVariance,
           "embedding of image '" + features.image_ids()[pair.i] + "' is constant");
    }
    if (m.y_constant || m.syy == 0.0) {
      fail(ErrorCode::ZeroVariance,
           "embedding of image '" + features.image_ids()[pair.j] + "' is constant");
    }
  }
  Correlation c;
  c.var_x = m.sxx / m.length + epsilon;
  c.var_y = m.syy / m.length + epsilon;
  c.denom = std::sqrt(c.var_x * c.var_y);
  c.r = (m.sxy / m.length) / c.denom;
  return c;
}

double to_dissimilarity(double r) { return 1.0 - std::clamp(r, -1.0, 1.0); }

template <typename T>
double dissimilarity_impl(const FeatureSet& features, const Mask& mask, std::span<const T> coeffs,
                          PairIndex pair, double epsilon) {
  check_inputs(features, mask, coeffs.size(), pair);
  const auto m = pair_moments(mask, coeffs, features.row(pair.i), features.row(pair.j));
  return to_dissimilarity(correlate(m, features, pair, epsilon).r);
}

// d = 1 - r with r = cov / sqrt(var_x * var_y) over the embeddings x, y.
// Centering drops out of the cov term because the centered vectors sum to
// zero, leaving
//   dr/dx_k = (dy_k - (cov / var_x) * dx_k) / (L * denom)
// and symmetrically for y. Written this way it vanishes exactly for
// identical embeddings when epsilon is 0. Each embedding element is coefficient * feature,
// so the coefficient receives feature * dd/dx_k from both images.
template <typename T>
double gradient_impl(const FeatureSet& features, const Mask& mask, std::span<const T> coeffs,
                     PairIndex pair, double scale, std::span<double> gradient, double epsilon) {
  check_inputs(features, mask, coeffs.size(), pair);
  if (gradient.size() != mask.size()) {
    fail(ErrorCode::ShapeMismatch, "gradient buffer does not match the mask layout");
  }
  const auto fx = features.row(pair.i);
  const auto fy = features.row(pair.j);
  const auto m = pair_moments(mask, coeffs, fx, fy);
  const auto c = correlate(m, features, pair, epsilon);

  const double inv = 1.0 / (m.length * c.denom);
  const double cov = m.sxy / m.length;
  const double kappa_x = cov / c.var_x;
  const double kappa_y = cov / c.var_y;
  for_each_element(mask, [&](std::size_t k, std::size_t idx) {
    const double b = static_cast<double>(coeffs[idx]);
    const double dx = b * fx[k] - m.mean_x;
    const double dy = b * fy[k] - m.mean_y;
    const double dd_dx = -(dy - kappa_x * dx) * inv;
    const double dd_dy = -(dx - kappa_y * dy) * inv;
    gradient[idx] += scale * (dd_dx * fx[k] + dd_dy * fy[k]);
  });
  return to_dissimilarity(c.r);
}

}  // namespace

std::vector<double> embed(const FeatureSet& features, const Mask& mask, std::size_t image) {
  mask.check_compatible(features);
  if (image >= features.image_count()) fail(ErrorCode::InvalidArgument, "image index out of range");
  const auto f = features.row(image);
  const auto coeffs = mask.values();
  std::vector<double> out(f.size());
  for_each_element(mask, [&](std::size_t k, std::size_t c) {
    out[k] = static_cast<double>(coeffs[c]) * f[k];
  });
  return out;
}

double pair_dissimilarity(const FeatureSet& features, const Mask& mask, PairIndex pair,
                          double epsilon) {
  return dissimilarity_impl(features, mask, mask.values(), pair, epsilon);
}

double pair_dissimilarity(const FeatureSet& features, const Mask& layout,
                          std::span<const double> coefficients, PairIndex pair, double epsilon) {
  return dissimilarity_impl(features, layout, coefficients, pair, epsilon);
}

PairGradient pair_gradient(const FeatureSet& features, const Mask& mask, PairIndex pair,
                           double epsilon) {
  PairGradient out;
  out.gradient.assign(mask.size(), 0.0);
  out.dissimilarity =
      gradient_impl(features, mask, mask.values(), pair, 1.0, out.gradient, epsilon);
  return out;
}

PairGradient pair_gradient(const FeatureSet& features, const Mask& layout,
                           std::span<const double> coefficients, PairIndex pair, double epsilon) {
  PairGradient out;
  out.gradient.assign(layout.size(), 0.0);
  out.dissimilarity =
      gradient_impl(features, layout, coefficients, pair, 1.0, out.gradient, epsilon);
  return out;
}

double accumulate_pair_gradient(const FeatureSet& features, const Mask& mask, PairIndex pair,
                                double scale, std::span<double> gradient, double epsilon) {
  return gradient_impl(features, mask, mask.values(), pair, scale, gradient, epsilon);
}

}  // namespace hyperagg
