#ifndef EPITR_FUSION_HPP
#define EPITR_FUSION_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitr/common.hpp"
#include "epitr/geometry.hpp"
#include "epitr/parallel.hpp"
#include "epitr/sampler.hpp"

namespace epitr {

enum class FusionVariant : std::uint8_t { IdentityGaussian = 0, BottleneckEmbeddedGaussian = 1 };
enum class WeightMode : std::uint8_t { Softmax = 0, Max = 1 };

inline std::string to_string(FusionVariant v) {
  return v == FusionVariant::IdentityGaussian ? "identity" : "bottleneck";
}
inline std::string to_string(WeightMode m) { return m == WeightMode::Softmax ? "softmax" : "max"; }

/// Learnable weights of the fusion block.
///
/// IdentityGaussian: attention on raw features, output = ref + W agg with
/// `output_transform` C x C.
/// BottleneckEmbeddedGaussian: query/key/value embeddings are C x C/2 and
/// `output_transform` is the C/2 x C up-projection, applied as W^T v.
struct FusionParams {
  FusionVariant variant = FusionVariant::IdentityGaussian;
  WeightMode mode = WeightMode::Softmax;
  // Logits are divided by this; 1 means a plain dot product.
  double temperature = 1.0;
  Eigen::MatrixXd output_transform;
  Eigen::MatrixXd query_embedding;
  Eigen::MatrixXd key_embedding;
  Eigen::MatrixXd value_embedding;

  int channels() const {
    return variant == FusionVariant::IdentityGaussian ? static_cast<int>(output_transform.rows())
                                                      : static_cast<int>(output_transform.cols());
  }

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
    }
    auto finite = [](const Eigen::MatrixXd& m) { return m.allFinite(); };
    if (variant == FusionVariant::IdentityGaussian) {
      if (output_transform.rows() < 1 || output_transform.rows() != output_transform.cols()) {
        throw Error(ErrorKind::ShapeMismatch, "identity fusion needs a square C x C transform");
      }
      if (!finite(output_transform)) throw Error(ErrorKind::InvalidArgument, "non-finite fusion weights");
      return;
    }
    const auto c = output_transform.cols();
    if (c % 2 != 0) throw Error(ErrorKind::OddChannels, "bottleneck fusion needs an even channel count");
    const auto h = c / 2;
    if (c < 2 || output_transform.rows() != h) {
      throw Error(ErrorKind::ShapeMismatch, "bottleneck up-projection must be C/2 x C");
    }
    for (const auto* m : {&query_embedding, &key_embedding, &value_embedding}) {
      if (m->rows() != c || m->cols() != h) {
        throw Error(ErrorKind::ShapeMismatch, "bottleneck embeddings must be C x C/2");
      }
      if (!finite(*m)) throw Error(ErrorKind::InvalidArgument, "non-finite fusion weights");
    }
    if (!finite(output_transform)) throw Error(ErrorKind::InvalidArgument, "non-finite fusion weights");
  }
};

/// Zero output transform (the block starts as a no-op) and embeddings drawn
/// from uniform(-1/sqrt(C), 1/sqrt(C)).
inline FusionParams init_params(FusionVariant variant, WeightMode mode, int channels, std::uint64_t seed) {
  if (channels < 1) throw Error(ErrorKind::InvalidArgument, "channel count must be positive");
  FusionParams p;
  p.variant = variant;
  p.mode = mode;
  if (variant == FusionVariant::IdentityGaussian) {
    p.output_transform = Eigen::MatrixXd::Zero(channels, channels);
    return p;
  }
  if (channels % 2 != 0) throw Error(ErrorKind::OddChannels, "bottleneck fusion needs an even channel count");
  const int half = channels / 2;
  p.output_transform = Eigen::MatrixXd::Zero(half, channels);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto* m : {&p.query_embedding, &p.key_embedding, &p.value_embedding}) {
    m->resize(channels, half);
    for (Eigen::Index j = 0; j < m->cols(); ++j) {
      for (Eigen::Index i = 0; i < m->rows(); ++i) (*m)(i, j) = dist(rng);
    }
  }
  return p;
}

/// Normalizes logits into attention weights: a stable softmax, or a one-hot
/// at the first maximal entry.
inline Eigen::VectorXd attention_weights(const Eigen::VectorXd& logits, WeightMode mode) {
  const Eigen::Index k = logits.size();
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "need at least one sample");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < k; ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  if (mode == WeightMode::Max) {
    w(best) = 1.0;
    return w;
  }
  const double top = logits(best);
  for (Eigen::Index i = 0; i < k; ++i) w(i) = std::exp(logits(i) - top);
  return w / w.sum();
}

/// Dot-product similarity of `query` with each row of `samples` (K x C),
/// normalized by `mode`.
inline Eigen::VectorXd similarity_weights(const Eigen::VectorXd& query, const Eigen::MatrixXd& samples,
                                          WeightMode mode, double temperature = 1.0) {
  if (samples.cols() != query.size()) throw Error(ErrorKind::ShapeMismatch, "query/sample channel mismatch");
  return attention_weights(samples * query / temperature, mode);
}

/// Weighted sum of the sample rows.
inline Eigen::VectorXd aggregate(const Eigen::VectorXd& weights, const Eigen::MatrixXd& samples) {
  if (weights.size() != samples.rows()) throw Error(ErrorKind::ShapeMismatch, "weights/sample count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "aggregation weights must sum to 1");
  }
  return samples.transpose() * weights;
}

inline Eigen::VectorXd fuse_identity(const Eigen::VectorXd& ref_feat, const Eigen::VectorXd& agg,
                                     const FusionParams& params) {
  if (params.variant != FusionVariant::IdentityGaussian) {
    throw Error(ErrorKind::InvalidArgument, "fuse_identity needs identity parameters");
  }
  const auto c = params.output_transform.rows();
  if (ref_feat.size() != c || agg.size() != c || params.output_transform.cols() != c) {
    throw Error(ErrorKind::ShapeMismatch, "identity fusion shape mismatch");
  }
  return ref_feat + params.output_transform * agg;
}

/// Result of fusing a single query against its epipolar samples.
struct QueryFusion {
  Eigen::VectorXd output;
  Eigen::VectorXd dots;     // raw similarity before temperature
  Eigen::VectorXd weights;
};

namespace detail {

inline void check_bottleneck(const Eigen::VectorXd& ref_feat, const Eigen::MatrixXd& samples,
                             const FusionParams& params) {
  if (params.variant != FusionVariant::BottleneckEmbeddedGaussian) {
    throw Error(ErrorKind::InvalidArgument, "fuse_bottleneck needs bottleneck parameters");
  }
  if (ref_feat.size() % 2 != 0) throw Error(ErrorKind::OddChannels, "bottleneck fusion needs even C");
  if (params.output_transform.cols() != ref_feat.size() || samples.cols() != ref_feat.size() ||
      params.query_embedding.rows() != ref_feat.size()) {
    throw Error(ErrorKind::ShapeMismatch, "bottleneck fusion shape mismatch");
  }
}

}  // namespace detail

inline QueryFusion fuse_query(const Eigen::VectorXd& ref_feat, const Eigen::MatrixXd& samples,
                              const FusionParams& params) {
  QueryFusion r;
  if (params.variant == FusionVariant::IdentityGaussian) {
    if (samples.cols() != ref_feat.size() || params.output_transform.rows() != ref_feat.size()) {
      throw Error(ErrorKind::ShapeMismatch, "identity fusion shape mismatch");
    }
    r.dots = samples * ref_feat;
    r.weights = attention_weights(r.dots / params.temperature, params.mode);
    r.output = ref_feat + params.output_transform * (samples.transpose() * r.weights);
    return r;
  }
  detail::check_bottleneck(ref_feat, samples, params);
  const Eigen::VectorXd query = params.query_embedding.transpose() * ref_feat;
  const Eigen::MatrixXd keys = samples * params.key_embedding;       // K x C/2
  const Eigen::MatrixXd values = samples * params.value_embedding;   // K x C/2
  r.dots = keys * query;
  r.weights = attention_weights(r.dots / params.temperature, params.mode);
  const Eigen::VectorXd mixed = values.transpose() * r.weights;
  r.output = ref_feat + params.output_transform.transpose() * mixed;
  return r;
}

inline Eigen::VectorXd fuse_bottleneck(const Eigen::VectorXd& ref_feat, const Eigen::MatrixXd& samples,
                                       const FusionParams& params) {
  detail::check_bottleneck(ref_feat, samples, params);
  return fuse_query(ref_feat, samples, params).output;
}

/// Per-pixel attention record, kept for similarity-profile export.
struct PixelAttention {
  bool sampled = false;
  Segment2D segment;
  std::vector<Vec2> locations;
  Eigen::VectorXd dots;
  Eigen::VectorXd weights;
};

struct ForwardOptions {
  bool record_weights = false;
  bool keep_state = false;
  int threads = 1;
};

/// Everything transformer_backward needs: inputs plus the per-pixel sample
/// locations chosen in the forward pass.
struct ForwardState {
  FeatureMap ref;
  FeatureMap src;
  FusionParams params;
  int count = 0;
  std::vector<std::uint8_t> sampled;
  std::vector<Vec2> locations;  // pixel_count * count, valid where sampled
};

struct ForwardResult {
  FeatureMap fused;
  std::vector<PixelAttention> attention;  // empty unless record_weights
  std::shared_ptr<const ForwardState> state;
};

namespace detail {

inline Eigen::MatrixXd gather_samples(const FeatureMap& src, const Vec2* locations, int count) {
  Eigen::MatrixXd samples(count, src.channels());
  Eigen::VectorXd row(src.channels());
  for (int i = 0; i < count; ++i) {
    bilinear_sample_into(src, locations[i], row);
    samples.row(i) = row.transpose();
  }
  return samples;
}

}  // namespace detail

/// Dense fusion of every reference pixel with its epipolar samples in the
/// source map. Pixels whose epipolar line misses the source map pass through
/// unchanged. Cameras are rescaled to the feature-map resolutions.
inline ForwardResult transformer_forward(const FeatureMap& F_ref, const FeatureMap& F_src, const CameraView& ref,
                                         const CameraView& src, const FusionParams& params,
                                         int count = kDefaultSampleCount, const ForwardOptions& options = {}) {
  if (F_ref.channels() != F_src.channels()) {
    throw Error(ErrorKind::ChannelMismatch, "reference and source maps differ in channel count");
  }
  params.validate();
  if (params.channels() != F_ref.channels()) {
    throw Error(ErrorKind::ChannelMismatch, "fusion parameters do not match the feature channels");
  }
  if (count < 1) throw Error(ErrorKind::InvalidArgument, "sample count must be >= 1");
  validate_camera(ref);
  validate_camera(src);

  const EpipolarTransfer transfer(camera_for_map(ref, F_ref.width(), F_ref.height()),
                                  camera_for_map(src, F_src.width(), F_src.height()));
  const std::size_t pixels = F_ref.pixel_count();
  const int width = F_ref.width();

  ForwardResult result;
  result.fused = F_ref;
  if (options.record_weights) result.attention.resize(pixels);
  std::shared_ptr<ForwardState> state;
  if (options.keep_state) {
    state = std::make_shared<ForwardState>();
    state->count = count;
    state->sampled.assign(pixels, 0);
    state->locations.resize(pixels * static_cast<std::size_t>(count));
  }

  parallel_for(pixels, options.threads, [&](std::size_t idx) {
    const int y = static_cast<int>(idx / width);
    const int x = static_cast<int>(idx % width);
    const auto set = epipolar_samples(F_src, transfer, Vec2(x, y), count);
    if (!set) return;
    const QueryFusion q = fuse_query(F_ref.pixel(y, x), set->features, params);
    result.fused.pixel(y, x) = q.output;
    if (options.record_weights) {
      auto& rec = result.attention[idx];
      rec.sampled = true;
      rec.segment = set->segment;
      rec.locations = set->locations;
      rec.dots = q.dots;
      rec.weights = q.weights;
    }
    if (state) {
      state->sampled[idx] = 1;
      std::copy(set->locations.begin(), set->locations.end(),
                state->locations.begin() + static_cast<std::ptrdiff_t>(idx * count));
    }
  });

  if (state) {
    state->ref = F_ref;
    state->src = F_src;
    state->params = params;
    result.state = std::move(state);
  }
  return result;
}

struct FusionGradients {
  FeatureMap d_ref;
  FeatureMap d_src;
  Eigen::MatrixXd d_output_transform;
  Eigen::MatrixXd d_query_embedding;  // bottleneck only
  Eigen::MatrixXd d_key_embedding;
  Eigen::MatrixXd d_value_embedding;
};

namespace detail {

struct PixelGradient {
  Eigen::VectorXd d_ref;
  Eigen::MatrixXd d_samples;  // K x C
  Eigen::MatrixXd samples;    // K x C
  Eigen::VectorXd upstream;
  Eigen::VectorXd mixed;      // aggregated feature (identity) or embedded mix (bottleneck)
  Eigen::VectorXd d_query;    // bottleneck
  Eigen::MatrixXd d_keys;     // K x C/2
  Eigen::MatrixXd d_values;   // K x C/2
};

inline PixelGradient backward_pixel(const Eigen::VectorXd& ref_feat, Eigen::MatrixXd samples,
                                    const Eigen::VectorXd& upstream, const FusionParams& params) {
  PixelGradient g;
  g.upstream = upstream;
  const double inv_t = 1.0 / params.temperature;
  if (params.variant == FusionVariant::IdentityGaussian) {
    const Eigen::VectorXd dots = samples * ref_feat;
    const Eigen::VectorXd w = attention_weights(dots * inv_t, params.mode);
    g.mixed = samples.transpose() * w;
    const Eigen::VectorXd d_agg = params.output_transform.transpose() * upstream;
    const Eigen::VectorXd d_w = samples * d_agg;
    // Softmax Jacobian; vanishes identically for a one-hot weight vector.
    const Eigen::VectorXd d_logit = (w.array() * (d_w.array() - w.dot(d_w))).matrix() * inv_t;
    g.d_ref = upstream + samples.transpose() * d_logit;
    g.d_samples = w * d_agg.transpose() + d_logit * ref_feat.transpose();
    g.samples = std::move(samples);
    return g;
  }
  const Eigen::VectorXd query = params.query_embedding.transpose() * ref_feat;
  const Eigen::MatrixXd keys = samples * params.key_embedding;
  const Eigen::MatrixXd values = samples * params.value_embedding;
  const Eigen::VectorXd w = attention_weights(keys * query * inv_t, params.mode);
  g.mixed = values.transpose() * w;
  const Eigen::VectorXd d_mixed = params.output_transform * upstream;
  g.d_values = w * d_mixed.transpose();
  const Eigen::VectorXd d_w = values * d_mixed;
  const Eigen::VectorXd d_logit = (w.array() * (d_w.array() - w.dot(d_w))).matrix() * inv_t;
  g.d_query = keys.transpose() * d_logit;
  g.d_keys = d_logit * query.transpose();
  g.d_ref = upstream + params.query_embedding * g.d_query;
  g.d_samples = g.d_keys * params.key_embedding.transpose() + g.d_values * params.value_embedding.transpose();
  g.samples = std::move(samples);
  return g;
}

}  // namespace detail

/// Exact gradients of a recorded forward pass given dL/dF_fused. Source-map
/// gradients are scattered through each sample's bilinear footprint. Results
/// do not depend on the thread count: per-pixel terms are computed in
/// parallel blocks and reduced in pixel order.
inline FusionGradients transformer_backward(const std::shared_ptr<const ForwardState>& state,
                                            const FeatureMap& grad_fused, int threads = 1) {
  if (!state) throw Error(ErrorKind::StateMissing, "forward pass was run without keep_state");
  const ForwardState& s = *state;
  if (!grad_fused.same_shape(s.ref)) {
    throw Error(ErrorKind::ShapeMismatch, "upstream gradient must match the fused map shape");
  }
  const FusionParams& params = s.params;
  const int c = s.ref.channels();
  const int width = s.ref.width();
  const bool bottleneck = params.variant == FusionVariant::BottleneckEmbeddedGaussian;

  FusionGradients out;
  out.d_ref = FeatureMap(s.ref.height(), s.ref.width(), c);
  out.d_src = FeatureMap(s.src.height(), s.src.width(), c);
  out.d_output_transform = Eigen::MatrixXd::Zero(params.output_transform.rows(), params.output_transform.cols());
  if (bottleneck) {
    out.d_query_embedding = Eigen::MatrixXd::Zero(c, c / 2);
    out.d_key_embedding = Eigen::MatrixXd::Zero(c, c / 2);
    out.d_value_embedding = Eigen::MatrixXd::Zero(c, c / 2);
  }

  constexpr std::size_t kBlock = 256;
  const std::size_t pixels = s.ref.pixel_count();
  std::vector<std::optional<detail::PixelGradient>> block(kBlock);
  for (std::size_t begin = 0; begin < pixels; begin += kBlock) {
    const std::size_t n = std::min(kBlock, pixels - begin);
    parallel_for(n, threads, [&](std::size_t j) {
      const std::size_t idx = begin + j;
      const int y = static_cast<int>(idx / width);
      const int x = static_cast<int>(idx % width);
      if (!s.sampled[idx]) {
        block[j].reset();
        out.d_ref.pixel(y, x) = grad_fused.pixel(y, x);
        return;
      }
      const Vec2* locs = s.locations.data() + idx * static_cast<std::size_t>(s.count);
      block[j] = detail::backward_pixel(s.ref.pixel(y, x), detail::gather_samples(s.src, locs, s.count),
                                        grad_fused.pixel(y, x), params);
      out.d_ref.pixel(y, x) = block[j]->d_ref;
    });
    for (std::size_t j = 0; j < n; ++j) {
      if (!block[j]) continue;
      const detail::PixelGradient& g = *block[j];
      const Vec2* locs = s.locations.data() + (begin + j) * static_cast<std::size_t>(s.count);
      for (int i = 0; i < s.count; ++i) {
        const BilinearFootprint f = bilinear_footprint(s.src.width(), s.src.height(), locs[i]);
        for (int k = 0; k < 4; ++k) {
          if (f.w[k] != 0.0) out.d_src.pixel(f.y[k], f.x[k]) += f.w[k] * g.d_samples.row(i).transpose();
        }
      }
      if (bottleneck) {
        const int y = static_cast<int>((begin + j) / width);
        const int x = static_cast<int>((begin + j) % width);
        out.d_output_transform += g.mixed * g.upstream.transpose();
        out.d_query_embedding += s.ref.pixel(y, x) * g.d_query.transpose();
        out.d_key_embedding += g.samples.transpose() * g.d_keys;
        out.d_value_embedding += g.samples.transpose() * g.d_values;
      } else {
        out.d_output_transform += g.upstream * g.mixed.transpose();
      }
    }
  }
  return out;
}

inline FusionGradients transformer_backward(const ForwardResult& forward, const FeatureMap& grad_fused,
                                            int threads = 1) {
  return transformer_backward(forward.state, grad_fused, threads);
}

}  // namespace epitr

#endif  // EPITR_FUSION_HPP
