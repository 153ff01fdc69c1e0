#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "psplat/common.hpp"
#include "psplat/fusion.hpp"
#include "psplat/geometry.hpp"

namespace psplat {

struct Aabb {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();

  /// Bounds of the points grown by `margin` of the extent on every side.
  /// Degenerate axes are widened to a minimum extent.
  static Aabb around(std::span<const Vec3> points, double margin);
  /// Position mapped into [0, 1]^3 with clamping.
  Vec3 normalized(const Vec3& p) const;
  void validate() const;
};

/// Axis pairs for the three planes: xy, yz, xz.
inline constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {1, 2}, {0, 2}}};

struct TriPlaneLevel {
  int resolution = 0;
  /// Node (a, b) of plane p lives at planes[p][(b * R + a) * C]; a indexes
  /// the first axis of the pair, b the second.
  std::array<std::vector<double>, 3> planes;
};

/// Bilinear weights and node indices for one position; one entry per
/// (level, plane).
struct PlaneStencil {
  struct Tap {
    std::array<std::size_t, 4> node;
    std::array<double, 4> weight;
  };
  std::vector<Tap> taps;
};

/// Multi-resolution tri-plane latent field. The latent code of a position
/// is [level0: xy | yz | xz, level1: ..., ...], C channels each.
class PyramidTriPlane {
 public:
  PyramidTriPlane() = default;
  PyramidTriPlane(const Aabb& aabb, std::vector<int> resolutions, int channels);

  int channels() const { return channels_; }
  int level_count() const { return static_cast<int>(levels_.size()); }
  int latent_dim() const { return 3 * channels_ * level_count(); }
  const Aabb& aabb() const { return aabb_; }
  std::vector<TriPlaneLevel>& levels() { return levels_; }
  const std::vector<TriPlaneLevel>& levels() const { return levels_; }

  void fill_uniform(Rng& rng, double scale);
  void set_zero();

  PlaneStencil stencil(const Vec3& position) const;
  void query(const Vec3& position, std::span<double> latent) const;
  std::vector<double> query(const Vec3& position) const;
  /// Accumulate d(loss)/d(latent) into plane gradients through a stencil.
  void scatter(const PlaneStencil& stencil, std::span<const double> dlatent);

  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;

 private:
  Aabb aabb_;
  int channels_ = 0;
  std::vector<TriPlaneLevel> levels_;
};

struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  /// outputs x inputs, row-major.
  std::vector<double> weight;
  std::vector<double> bias;
};

/// Three-layer perceptron, rectifier on the hidden layers, L2-normalized output.
class FeatureDecoder {
 public:
  struct Trace {
    std::vector<double> pre1, pre2, hidden1, hidden2, output;
    std::vector<double> feature;
    double output_norm = 0.0;
    bool degenerate = false;
  };

  FeatureDecoder() = default;
  FeatureDecoder(int input_dim, int hidden, int output_dim);

  int input_dim() const { return layers_[0].inputs; }
  int hidden_dim() const { return layers_[0].outputs; }
  int output_dim() const { return layers_[2].outputs; }
  std::array<DenseLayer, 3>& layers() { return layers_; }
  const std::array<DenseLayer, 3>& layers() const { return layers_; }

  /// Glorot-uniform weights, zero biases.
  void init_glorot(Rng& rng);
  void set_zero();

  /// A zero pre-normalization output decodes to e_1 with `degenerate` set.
  void forward(std::span<const double> latent, Trace& trace) const;
  std::vector<double> decode(std::span<const double> latent, bool* degenerate = nullptr) const;
  /// Given d(loss)/d(feature), accumulate parameter gradients into `grad`
  /// and write d(loss)/d(latent).
  void backward(std::span<const double> latent, const Trace& trace, std::span<const double> dfeature,
                FeatureDecoder& grad, std::span<double> dlatent) const;

  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;

 private:
  std::array<DenseLayer, 3> layers_;
};

struct FieldConfig {
  std::vector<int> resolutions{64, 128, 256};
  int channels = 8;
  int hidden = 128;
  double plane_init = 1e-4;
  double aabb_margin = 0.05;

  void validate() const;
};

/// Tri-plane field plus decoder; the learned language feature field.
struct LanguageField {
  PyramidTriPlane planes;
  FeatureDecoder decoder;

  static LanguageField create(const FieldConfig& cfg, const Aabb& aabb, int output_dim, std::uint64_t seed);
  LanguageField zeros_like() const;

  std::vector<double> feature_at(const Vec3& position) const;
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;
};

struct DistillSample {
  Vec3 position;
  std::span<const float> target;
  double gamma = 0.0;
};

/// Confidence-weighted cosine distance summed over the batch. When `grad`
/// is given, gradients of that sum are accumulated into it.
double feature_loss(const LanguageField& field, std::span<const DistillSample> batch,
                    LanguageField* grad = nullptr);

struct DistillConfig {
  int iterations = 30000;
  int batch = 4096;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  /// Full-dataset loss is evaluated every this many iterations (0 = never).
  int eval_every = 100;
  bool deterministic = true;

  void validate() const;
};

struct DistillReport {
  /// Mean per-sample batch loss at every iteration.
  std::vector<double> loss_history;
  /// (iteration, mean full-dataset loss) at 0, eval_every, 2*eval_every, ...
  std::vector<std::pair<int, double>> full_loss;
};

/// Mean confidence-weighted loss over all valid primitives.
double dataset_loss(const LanguageField& field, const FusedFeatureCloud& fused, const PrimitiveCloud& cloud);

/// Adaptive-moment descent on the batch-mean loss over primitives sampled
/// uniformly with replacement among those with positive confidence.
DistillReport distill(LanguageField& field, const FusedFeatureCloud& fused, const PrimitiveCloud& cloud,
                      const DistillConfig& cfg);

/// Decoded unit feature for every primitive position. OpenMP-parallel.
FeatureMatrix field_features(const LanguageField& field, const PrimitiveCloud& cloud);

}  // namespace psplat
