#include "psplat/feature_field.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace psplat {

Aabb Aabb::around(std::span<const Vec3> points, double margin) {
  if (points.empty()) throw ConfigError("cannot bound an empty point set");
  Aabb box{points[0], points[0]};
  for (const auto& p : points) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  Vec3 extent = box.hi - box.lo;
  const double floor_extent = std::max(1e-3 * extent.maxCoeff(), 1e-6);
  for (int a = 0; a < 3; ++a) {
    if (extent[a] < floor_extent) {
      const double grow = 0.5 * (floor_extent - extent[a]);
      box.lo[a] -= grow;
      box.hi[a] += grow;
      extent[a] = floor_extent;
    }
  }
  box.lo -= margin * extent;
  box.hi += margin * extent;
  return box;
}

Vec3 Aabb::normalized(const Vec3& p) const {
  Vec3 n;
  for (int a = 0; a < 3; ++a) n[a] = std::clamp((p[a] - lo[a]) / (hi[a] - lo[a]), 0.0, 1.0);
  return n;
}

void Aabb::validate() const {
  if (!lo.allFinite() || !hi.allFinite() || !((hi - lo).minCoeff() > 0.0)) {
    throw ConfigError("field bounds must have positive extent on every axis");
  }
}

PyramidTriPlane::PyramidTriPlane(const Aabb& aabb, std::vector<int> resolutions, int channels)
    : aabb_(aabb), channels_(channels) {
  aabb.validate();
  if (channels < 1) throw ConfigError("tri-plane needs at least one channel");
  if (resolutions.empty()) throw ConfigError("tri-plane needs at least one level");
  for (std::size_t l = 0; l < resolutions.size(); ++l) {
    if (resolutions[l] < 2) throw ConfigError("tri-plane resolution must be at least 2");
    if (l > 0 && resolutions[l] <= resolutions[l - 1]) {
      throw ConfigError("tri-plane resolutions must be strictly increasing");
    }
    TriPlaneLevel level;
    level.resolution = resolutions[l];
    const std::size_t size = static_cast<std::size_t>(resolutions[l]) * resolutions[l] * channels;
    for (auto& plane : level.planes) plane.assign(size, 0.0);
    levels_.push_back(std::move(level));
  }
}

void PyramidTriPlane::fill_uniform(Rng& rng, double scale) {
  for (auto& level : levels_) {
    for (auto& plane : level.planes) {
      for (double& x : plane) x = rng.uniform(-scale, scale);
    }
  }
}

void PyramidTriPlane::set_zero() {
  for (auto& level : levels_) {
    for (auto& plane : level.planes) std::fill(plane.begin(), plane.end(), 0.0);
  }
}

PlaneStencil PyramidTriPlane::stencil(const Vec3& position) const {
  const Vec3 n = aabb_.normalized(position);
  PlaneStencil st;
  st.taps.reserve(levels_.size() * 3);
  for (const auto& level : levels_) {
    const int r = level.resolution;
    for (const auto& axes : kPlaneAxes) {
      double u = n[axes[0]] * (r - 1);
      double v = n[axes[1]] * (r - 1);
      const int i0 = std::min(static_cast<int>(std::floor(u)), r - 2);
      const int j0 = std::min(static_cast<int>(std::floor(v)), r - 2);
      const double tx = u - i0;
      const double ty = v - j0;
      PlaneStencil::Tap tap;
      const auto node = [r](int a, int b) { return static_cast<std::size_t>(b) * r + a; };
      tap.node = {node(i0, j0), node(i0 + 1, j0), node(i0, j0 + 1), node(i0 + 1, j0 + 1)};
      tap.weight = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
      st.taps.push_back(tap);
    }
  }
  return st;
}

void PyramidTriPlane::query(const Vec3& position, std::span<double> latent) const {
  const PlaneStencil st = stencil(position);
  const auto c_count = static_cast<std::size_t>(channels_);
  for (std::size_t t = 0; t < st.taps.size(); ++t) {
    const auto& plane = levels_[t / 3].planes[t % 3];
    const auto& tap = st.taps[t];
    for (std::size_t c = 0; c < c_count; ++c) {
      double acc = tap.weight[0] * plane[tap.node[0] * c_count + c];
      for (int k = 1; k < 4; ++k) acc += tap.weight[k] * plane[tap.node[k] * c_count + c];
      latent[t * c_count + c] = acc;
    }
  }
}

std::vector<double> PyramidTriPlane::query(const Vec3& position) const {
  std::vector<double> latent(static_cast<std::size_t>(latent_dim()));
  query(position, latent);
  return latent;
}

void PyramidTriPlane::scatter(const PlaneStencil& st, std::span<const double> dlatent) {
  const auto c_count = static_cast<std::size_t>(channels_);
  for (std::size_t t = 0; t < st.taps.size(); ++t) {
    auto& plane = levels_[t / 3].planes[t % 3];
    const auto& tap = st.taps[t];
    for (int k = 0; k < 4; ++k) {
      if (tap.weight[k] == 0.0) continue;
      for (std::size_t c = 0; c < c_count; ++c) {
        plane[tap.node[k] * c_count + c] += tap.weight[k] * dlatent[t * c_count + c];
      }
    }
  }
}

std::vector<std::span<double>> PyramidTriPlane::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (auto& level : levels_) {
    for (auto& plane : level.planes) out.emplace_back(plane);
  }
  return out;
}

std::vector<std::span<const double>> PyramidTriPlane::parameter_blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& level : levels_) {
    for (const auto& plane : level.planes) out.emplace_back(plane);
  }
  return out;
}

FeatureDecoder::FeatureDecoder(int input_dim, int hidden, int output_dim) {
  if (input_dim < 1 || hidden < 1 || output_dim < 1) throw ConfigError("decoder widths must be positive");
  const int widths[4] = {input_dim, hidden, hidden, output_dim};
  for (int l = 0; l < 3; ++l) {
    auto& layer = layers_[static_cast<std::size_t>(l)];
    layer.inputs = widths[l];
    layer.outputs = widths[l + 1];
    layer.weight.assign(static_cast<std::size_t>(layer.inputs) * layer.outputs, 0.0);
    layer.bias.assign(static_cast<std::size_t>(layer.outputs), 0.0);
  }
}

void FeatureDecoder::init_glorot(Rng& rng) {
  for (auto& layer : layers_) {
    const double bound = std::sqrt(6.0 / (layer.inputs + layer.outputs));
    for (double& w : layer.weight) w = rng.uniform(-bound, bound);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

void FeatureDecoder::set_zero() {
  for (auto& layer : layers_) {
    std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

namespace {

void affine(const DenseLayer& layer, std::span<const double> in, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(layer.outputs));
  const auto n_in = static_cast<std::size_t>(layer.inputs);
  for (std::size_t o = 0; o < out.size(); ++o) {
    const double* w = layer.weight.data() + o * n_in;
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
}

void relu(const std::vector<double>& pre, std::vector<double>& out) {
  out.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

/// grad_in = W^T d; grad_W += d in^T; grad_b += d.
void affine_backward(const DenseLayer& layer, std::span<const double> in, std::span<const double> d,
                     DenseLayer& grad, std::span<double> grad_in) {
  const auto n_in = static_cast<std::size_t>(layer.inputs);
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (std::size_t o = 0; o < d.size(); ++o) {
    const double g = d[o];
    if (g == 0.0) continue;
    const double* w = layer.weight.data() + o * n_in;
    double* gw = grad.weight.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      gw[i] += g * in[i];
      grad_in[i] += w[i] * g;
    }
    grad.bias[o] += g;
  }
}

}  // namespace

void FeatureDecoder::forward(std::span<const double> latent, Trace& trace) const {
  if (latent.size() != static_cast<std::size_t>(input_dim())) {
    throw ConfigError("latent code has " + std::to_string(latent.size()) + " entries, decoder expects " +
                      std::to_string(input_dim()));
  }
  affine(layers_[0], latent, trace.pre1);
  relu(trace.pre1, trace.hidden1);
  affine(layers_[1], trace.hidden1, trace.pre2);
  relu(trace.pre2, trace.hidden2);
  affine(layers_[2], trace.hidden2, trace.output);
  trace.output_norm = norm(std::span<const double>(trace.output));
  trace.feature.assign(trace.output.size(), 0.0);
  if (trace.output_norm == 0.0 || !std::isfinite(trace.output_norm)) {
    trace.degenerate = true;
    trace.feature[0] = 1.0;
    return;
  }
  trace.degenerate = false;
  for (std::size_t i = 0; i < trace.output.size(); ++i) trace.feature[i] = trace.output[i] / trace.output_norm;
}

std::vector<double> FeatureDecoder::decode(std::span<const double> latent, bool* degenerate) const {
  Trace trace;
  forward(latent, trace);
  if (degenerate) *degenerate = trace.degenerate;
  return std::move(trace.feature);
}

void FeatureDecoder::backward(std::span<const double> latent, const Trace& trace,
                              std::span<const double> dfeature, FeatureDecoder& grad,
                              std::span<double> dlatent) const {
  const std::size_t out_dim = trace.output.size();
  std::vector<double> dout(out_dim, 0.0);
  if (!trace.degenerate) {
    // Jacobian of x / |x| is (I - y y^T) / |x|.
    double proj = 0.0;
    for (std::size_t i = 0; i < out_dim; ++i) proj += trace.feature[i] * dfeature[i];
    for (std::size_t i = 0; i < out_dim; ++i) {
      dout[i] = (dfeature[i] - trace.feature[i] * proj) / trace.output_norm;
    }
  }
  std::vector<double> dh2(trace.hidden2.size()), dh1(trace.hidden1.size());
  affine_backward(layers_[2], trace.hidden2, dout, grad.layers_[2], dh2);
  for (std::size_t i = 0; i < dh2.size(); ++i) {
    if (!(trace.pre2[i] > 0.0)) dh2[i] = 0.0;
  }
  affine_backward(layers_[1], trace.hidden1, dh2, grad.layers_[1], dh1);
  for (std::size_t i = 0; i < dh1.size(); ++i) {
    if (!(trace.pre1[i] > 0.0)) dh1[i] = 0.0;
  }
  affine_backward(layers_[0], latent, dh1, grad.layers_[0], dlatent);
}

std::vector<std::span<double>> FeatureDecoder::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weight);
    out.emplace_back(layer.bias);
  }
  return out;
}

std::vector<std::span<const double>> FeatureDecoder::parameter_blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers_) {
    out.emplace_back(layer.weight);
    out.emplace_back(layer.bias);
  }
  return out;
}

void FieldConfig::validate() const {
  if (resolutions.empty()) throw ConfigError("field.resolutions must not be empty");
  for (std::size_t l = 0; l < resolutions.size(); ++l) {
    if (resolutions[l] < 2 || (l > 0 && resolutions[l] <= resolutions[l - 1])) {
      throw ConfigError("field.resolutions must be >= 2 and strictly increasing");
    }
  }
  if (channels < 1) throw ConfigError("field.channels must be >= 1");
  if (hidden < 1) throw ConfigError("field.hidden must be >= 1");
  if (!(plane_init >= 0.0)) throw ConfigError("field.plane_init must be >= 0");
  if (!(aabb_margin >= 0.0)) throw ConfigError("field.aabb_margin must be >= 0");
}

LanguageField LanguageField::create(const FieldConfig& cfg, const Aabb& aabb, int output_dim,
                                    std::uint64_t seed) {
  cfg.validate();
  LanguageField f;
  f.planes = PyramidTriPlane(aabb, cfg.resolutions, cfg.channels);
  f.decoder = FeatureDecoder(f.planes.latent_dim(), cfg.hidden, output_dim);
  Rng rng(derive_seed(seed, 1));
  f.planes.fill_uniform(rng, cfg.plane_init);
  f.decoder.init_glorot(rng);
  return f;
}

LanguageField LanguageField::zeros_like() const {
  LanguageField z = *this;
  z.planes.set_zero();
  z.decoder.set_zero();
  return z;
}

std::vector<double> LanguageField::feature_at(const Vec3& position) const {
  return decoder.decode(planes.query(position));
}

std::vector<std::span<double>> LanguageField::parameter_blocks() {
  auto out = planes.parameter_blocks();
  auto dec = decoder.parameter_blocks();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::vector<std::span<const double>> LanguageField::parameter_blocks() const {
  auto out = planes.parameter_blocks();
  auto dec = decoder.parameter_blocks();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

namespace {

struct ItemGrad {
  PlaneStencil stencil;
  std::vector<double> dlatent;
};

double item_loss(const LanguageField& field, const DistillSample& s, FeatureDecoder::Trace& trace,
                 std::vector<double>& latent) {
  field.planes.query(s.position, latent);
  field.decoder.forward(latent, trace);
  const double tnorm = norm(s.target);
  if (tnorm == 0.0) return 0.0;
  double c = 0.0;
  for (std::size_t d = 0; d < trace.feature.size(); ++d) c += trace.feature[d] * s.target[d];
  c /= tnorm;
  return s.gamma * std::abs(1.0 - c);
}

double loss_chunked(const LanguageField& field, std::span<const DistillSample> batch, LanguageField* grad,
                    int chunks) {
  const std::size_t n = batch.size();
  const auto chunk_count = static_cast<std::size_t>(std::max(1, chunks));
  const auto latent_dim = static_cast<std::size_t>(field.planes.latent_dim());
  std::vector<double> chunk_loss(chunk_count, 0.0);
  std::vector<FeatureDecoder> chunk_dec;
  std::vector<ItemGrad> items;
  if (grad) {
    FeatureDecoder zero = field.decoder;
    zero.set_zero();
    chunk_dec.assign(chunk_count, zero);
    items.resize(n);
  }

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t sc = 0; sc < static_cast<std::ptrdiff_t>(chunk_count); ++sc) {
    const auto c = static_cast<std::size_t>(sc);
    const std::size_t begin = n * c / chunk_count;
    const std::size_t end = n * (c + 1) / chunk_count;
    FeatureDecoder::Trace trace;
    std::vector<double> latent(latent_dim), dfeature;
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = batch[i];
      acc += item_loss(field, s, trace, latent);
      if (!grad) continue;
      auto& item = items[i];
      item.dlatent.assign(latent_dim, 0.0);
      const double tnorm = norm(s.target);
      if (tnorm == 0.0 || s.gamma == 0.0) continue;
      // |1 - cos| is differentiated as (1 - cos); cos <= 1 for unit vectors.
      dfeature.assign(trace.feature.size(), 0.0);
      for (std::size_t d = 0; d < dfeature.size(); ++d) dfeature[d] = -s.gamma * s.target[d] / tnorm;
      field.decoder.backward(latent, trace, dfeature, chunk_dec[c], item.dlatent);
      item.stencil = field.planes.stencil(s.position);
    }
    chunk_loss[c] = acc;
  }

  double total = 0.0;
  for (double l : chunk_loss) total += l;
  if (grad) {
    auto dst = grad->decoder.parameter_blocks();
    for (const auto& cd : chunk_dec) {
      const auto src = cd.parameter_blocks();
      for (std::size_t b = 0; b < dst.size(); ++b) {
        for (std::size_t k = 0; k < dst[b].size(); ++k) dst[b][k] += src[b][k];
      }
    }
    for (const auto& item : items) {
      if (!item.stencil.taps.empty()) grad->planes.scatter(item.stencil, item.dlatent);
    }
  }
  return total;
}

constexpr int kDeterministicChunks = 16;

}  // namespace

double feature_loss(const LanguageField& field, std::span<const DistillSample> batch, LanguageField* grad) {
  return loss_chunked(field, batch, grad, kDeterministicChunks);
}

void DistillConfig::validate() const {
  if (iterations < 1) throw ConfigError("distill.iterations must be >= 1");
  if (batch < 1) throw ConfigError("distill.batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("distill.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("distill decay rates must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("distill.eps must be positive");
  if (eval_every < 0) throw ConfigError("distill.eval_every must be >= 0");
}

double dataset_loss(const LanguageField& field, const FusedFeatureCloud& fused, const PrimitiveCloud& cloud) {
  const std::size_t n = cloud.size();
  std::vector<double> per(n, 0.0);
#pragma omp parallel
  {
    FeatureDecoder::Trace trace;
    std::vector<double> latent(static_cast<std::size_t>(field.planes.latent_dim()));
#pragma omp for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
      const auto i = static_cast<std::size_t>(si);
      if (!fused.valid(i)) continue;
      per[i] = item_loss(field, {cloud.positions[i], fused.features.row(i), fused.confidence[i]}, trace, latent);
    }
  }
  double total = 0.0;
  for (double l : per) total += l;
  const std::size_t valid = fused.valid_count();
  return valid > 0 ? total / static_cast<double>(valid) : 0.0;
}

DistillReport distill(LanguageField& field, const FusedFeatureCloud& fused, const PrimitiveCloud& cloud,
                      const DistillConfig& cfg) {
  cfg.validate();
  if (fused.size() != cloud.size()) throw ConfigError("fused cloud does not match primitive cloud");
  if (fused.dim != static_cast<std::size_t>(field.decoder.output_dim())) {
    throw ConfigError("decoder output dimension does not match fused feature dimension");
  }
  std::vector<std::uint32_t> pool;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    if (fused.valid(i) && fused.confidence[i] > 0.0) pool.push_back(static_cast<std::uint32_t>(i));
  }
  if (pool.empty()) throw PipelineError("no valid primitives to distill");

  const int chunks = cfg.deterministic ? kDeterministicChunks : std::max(1, omp_get_max_threads());
  Rng rng(derive_seed(cfg.seed, 2));
  LanguageField grad = field.zeros_like();
  auto params = field.parameter_blocks();
  auto grads = grad.parameter_blocks();
  std::vector<std::vector<double>> m(params.size()), v(params.size());
  for (std::size_t b = 0; b < params.size(); ++b) {
    m[b].assign(params[b].size(), 0.0);
    v[b].assign(params[b].size(), 0.0);
  }

  DistillReport report;
  report.loss_history.reserve(static_cast<std::size_t>(cfg.iterations));
  std::vector<DistillSample> batch(static_cast<std::size_t>(cfg.batch));
  double beta1_t = 1.0, beta2_t = 1.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.eval_every > 0 && it % cfg.eval_every == 0) {
      report.full_loss.emplace_back(it, dataset_loss(field, fused, cloud));
    }
    for (auto& s : batch) {
      const std::uint32_t i = pool[rng.below(pool.size())];
      s = {cloud.positions[i], fused.features.row(i), fused.confidence[i]};
    }
    grad.planes.set_zero();
    grad.decoder.set_zero();
    const double loss = loss_chunked(field, batch, &grad, chunks);
    report.loss_history.push_back(loss / cfg.batch);

    beta1_t *= cfg.beta1;
    beta2_t *= cfg.beta2;
    const double inv_batch = 1.0 / cfg.batch;
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto p = params[b];
      const auto g = grads[b];
      auto& mb = m[b];
      auto& vb = v[b];
      const auto len = static_cast<std::ptrdiff_t>(p.size());
#pragma omp parallel for schedule(static) if (len > 65536)
      for (std::ptrdiff_t sk = 0; sk < len; ++sk) {
        const auto k = static_cast<std::size_t>(sk);
        const double gk = g[k] * inv_batch;
        mb[k] = cfg.beta1 * mb[k] + (1.0 - cfg.beta1) * gk;
        vb[k] = cfg.beta2 * vb[k] + (1.0 - cfg.beta2) * gk * gk;
        const double m_hat = mb[k] / (1.0 - beta1_t);
        const double v_hat = vb[k] / (1.0 - beta2_t);
        p[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
    }
  }
  if (cfg.eval_every > 0 && cfg.iterations % cfg.eval_every == 0) {
    report.full_loss.emplace_back(cfg.iterations, dataset_loss(field, fused, cloud));
  }
  return report;
}

FeatureMatrix field_features(const LanguageField& field, const PrimitiveCloud& cloud) {
  const auto dim = static_cast<std::size_t>(field.decoder.output_dim());
  FeatureMatrix out(cloud.size(), dim);
#pragma omp parallel
  {
    FeatureDecoder::Trace trace;
    std::vector<double> latent(static_cast<std::size_t>(field.planes.latent_dim()));
#pragma omp for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(cloud.size()); ++si) {
      const auto i = static_cast<std::size_t>(si);
      field.planes.query(cloud.positions[i], latent);
      field.decoder.forward(latent, trace);
      auto row = out.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] = static_cast<float>(trace.feature[d]);
    }
  }
  return out;
}

}  // namespace psplat
