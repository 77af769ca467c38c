#include "stylediff/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stylediff/random.hpp"

namespace stylediff {

namespace {

Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

// Orthogonal factor of a Gaussian matrix with the column signs fixed so the
// result does not depend on the QR implementation's sign convention.
Eigen::MatrixXd random_orthogonal(Rng& rng, Eigen::Index n) {
  const Eigen::MatrixXd g = gaussian_matrix(rng, n, n, 1.0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

SynthWorld::SynthWorld(WorldConfig config) : config_(config) {
  const auto& c = config_;
  if (c.speakers == 0 || c.styles == 0 || c.clips_per_pair < 2 || c.train_speakers > c.speakers) {
    throw std::invalid_argument("synth world: need speakers, styles and at least two clips per pair");
  }
  if (c.phonetic_dim == 0 || c.phonetic_dim > c.feature_dim || c.mouth_dims == 0 ||
      c.mouth_dims > c.motion_dim) {
    throw std::invalid_argument("synth world: inconsistent feature or motion split");
  }
  const auto D = Eigen::Index(c.motion_dim), M = Eigen::Index(c.mouth_dims);
  const auto free_dims = D - M;
  const auto prosody = Eigen::Index(c.feature_dim - c.phonetic_dim);

  Rng rng = stream_rng(c.seed, 0);
  latent_map_ = gaussian_matrix(rng, M, Eigen::Index(c.phonetic_dim), c.latent_scale);
  response_map_.resize(D, M);
  response_map_.topRows(M) = random_orthogonal(rng, M);
  response_map_.bottomRows(free_dims) = gaussian_matrix(rng, free_dims, M, 1.0 / std::sqrt(double(M)));

  mean_linear_ = Eigen::MatrixXd::Zero(D, D);
  mean_offset_ = Eigen::VectorXd::Zero(D);
  for (std::size_t s = 0; s < c.styles; ++s) {
    StyleArchetype a;
    a.id = s;
    a.gain = Eigen::VectorXd::Ones(D);
    a.offset = Eigen::VectorXd::Zero(D);
    a.mix = Eigen::MatrixXd::Identity(D, D);
    for (Eigen::Index i = M; i < D; ++i) {
      a.gain(i) = uniform_real(rng, 0.6, 1.4);
      a.offset(i) = std::normal_distribution<double>(0.0, c.offset_scale)(rng);
    }
    // Cayley transform of a skew matrix: an exact rotation close to identity.
    const Eigen::MatrixXd g = gaussian_matrix(rng, free_dims, free_dims, c.mix_scale);
    const Eigen::MatrixXd skew = 0.5 * (g - g.transpose());
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(free_dims, free_dims);
    a.mix.bottomRightCorner(free_dims, free_dims) = (eye - skew).partialPivLu().solve(eye + skew);
    mean_linear_ += a.gain.asDiagonal() * a.mix;
    mean_offset_ += a.offset;
    archetypes_.push_back(std::move(a));
  }
  mean_linear_ /= double(c.styles);
  mean_offset_ /= double(c.styles);

  cue_codes_ = gaussian_matrix(rng, Eigen::Index(c.styles), prosody, 1.0);
  speaker_bias_ = gaussian_matrix(rng, Eigen::Index(c.speakers), Eigen::Index(c.feature_dim), c.speaker_bias);
  speaker_embedding_ = gaussian_matrix(rng, Eigen::Index(c.speakers), Eigen::Index(c.identity_dim), 1.0);
  identity_leak_ = gaussian_matrix(rng, Eigen::Index(c.styles), Eigen::Index(c.identity_dim), 1.0);
  cue_permutation_.resize(c.speakers);
  for (auto& perm : cue_permutation_) {
    perm.resize(c.styles);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    // Fisher-Yates with the shared generator; std::shuffle's algorithm is unspecified.
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }

  basis_ = FaceBasis::synthetic(splitmix64(c.seed ^ 0xfacefaceULL), 16, 4, c.motion_dim, c.mouth_dims);
}

std::uint64_t SynthWorld::clip_seed(std::size_t speaker, std::size_t style, std::size_t index) const {
  const std::uint64_t key = (std::uint64_t(speaker) << 40) ^ (std::uint64_t(style) << 20) ^ index;
  return splitmix64(config_.seed ^ splitmix64(key + 1));
}

std::size_t SynthWorld::clip_length(std::size_t speaker, std::size_t style, std::size_t index) const {
  Rng rng(clip_seed(speaker, style, index) ^ 0x1e57ULL);
  return config_.min_length + uniform_index(rng, config_.max_length - config_.min_length + 1);
}

SynthClip SynthWorld::dataset_clip(std::size_t speaker, std::size_t style, std::size_t index) const {
  SynthClip clip = generate_clip(speaker, style, clip_length(speaker, style, index),
                                 clip_seed(speaker, style, index));
  clip.index = index;
  return clip;
}

std::vector<SynthClip> SynthWorld::generate_dataset() const {
  std::vector<SynthClip> clips;
  clips.reserve(config_.speakers * config_.styles * config_.clips_per_pair);
  for (std::size_t k = 0; k < config_.speakers; ++k) {
    for (std::size_t s = 0; s < config_.styles; ++s) {
      for (std::size_t i = 0; i < config_.clips_per_pair; ++i) clips.push_back(dataset_clip(k, s, i));
    }
  }
  return clips;
}

SynthClip SynthWorld::generate_clip(std::size_t speaker, std::size_t style, std::size_t length,
                                    std::uint64_t seed) const {
  const auto& c = config_;
  if (speaker >= c.speakers || style >= c.styles) {
    throw std::invalid_argument("generate_clip: speaker " + std::to_string(speaker) + " / style " +
                                std::to_string(style) + " out of range");
  }
  if (length < 8 || length > 4096) {
    throw std::invalid_argument("generate_clip: length " + std::to_string(length) + " outside [8, 4096]");
  }
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double innovation = std::sqrt(1.0 - c.audio_rho * c.audio_rho);

  SynthClip clip;
  clip.speaker = speaker;
  clip.style = style;
  clip.audio = Tensor<float>::matrix(length, c.feature_dim);
  std::vector<double> state(c.feature_dim);
  for (auto& v : state) v = unit(rng);
  const std::size_t cue = cue_permutation_[speaker][style];
  for (std::size_t l = 0; l < length; ++l) {
    for (std::size_t f = 0; f < c.feature_dim; ++f) {
      if (l > 0) state[f] = c.audio_rho * state[f] + innovation * unit(rng);
      double v = f < c.phonetic_dim
                     ? state[f]
                     : cue_codes_(Eigen::Index(cue), Eigen::Index(f - c.phonetic_dim)) + c.cue_noise * state[f];
      v += speaker_bias_(Eigen::Index(speaker), Eigen::Index(f));
      clip.audio(l, f) = static_cast<float>(v);
    }
  }
  clip.motion = apply_style(base_response(clip.audio), style);
  clip.identity.resize(c.identity_dim);
  for (std::size_t i = 0; i < c.identity_dim; ++i) {
    clip.identity[i] = static_cast<float>(speaker_embedding_(Eigen::Index(speaker), Eigen::Index(i)) +
                                          c.identity_leak * identity_leak_(Eigen::Index(style), Eigen::Index(i)) +
                                          c.identity_noise * unit(rng));
  }
  return clip;
}

Tensor<float> SynthWorld::base_response(const Tensor<float>& audio) const {
  const auto& c = config_;
  if (audio.cols() != c.feature_dim) throw std::invalid_argument("base_response: feature width mismatch");
  const std::size_t L = audio.rows();
  const std::size_t w = c.half_window;
  Tensor<float> out = Tensor<float>::matrix(L, c.motion_dim);
  Eigen::VectorXd window(Eigen::Index(c.phonetic_dim));
  for (std::size_t l = 0; l < L; ++l) {
    window.setZero();
    for (std::size_t j = 0; j < 2 * w + 1; ++j) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(l + j) - std::ptrdiff_t(w), 0,
                                                            std::ptrdiff_t(L) - 1);
      for (std::size_t f = 0; f < c.phonetic_dim; ++f) window(Eigen::Index(f)) += audio(std::size_t(src), f);
    }
    window /= double(2 * w + 1);
    const Eigen::VectorXd m = (response_map_ * (latent_map_ * window)).array().tanh();
    for (std::size_t d = 0; d < c.motion_dim; ++d) out(l, d) = static_cast<float>(m(Eigen::Index(d)));
  }
  return out;
}

Tensor<float> SynthWorld::apply_style(const Tensor<float>& base, std::size_t style) const {
  const StyleArchetype& a = archetypes_.at(style);
  const Eigen::MatrixXd linear = a.gain.asDiagonal() * a.mix;
  Tensor<float> out = Tensor<float>::matrix(base.rows(), base.cols());
  for (std::size_t l = 0; l < base.rows(); ++l) {
    const Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXf>(base.row(l).data(), Eigen::Index(base.cols())).cast<double>();
    const Eigen::VectorXd y = linear * m + a.offset;
    for (std::size_t d = 0; d < base.cols(); ++d) out(l, d) = static_cast<float>(y(Eigen::Index(d)));
  }
  return out;
}

Tensor<float> SynthWorld::apply_mean_style(const Tensor<float>& base) const {
  Tensor<float> out = Tensor<float>::matrix(base.rows(), base.cols());
  for (std::size_t l = 0; l < base.rows(); ++l) {
    const Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXf>(base.row(l).data(), Eigen::Index(base.cols())).cast<double>();
    const Eigen::VectorXd y = mean_linear_ * m + mean_offset_;
    for (std::size_t d = 0; d < base.cols(); ++d) out(l, d) = static_cast<float>(y(Eigen::Index(d)));
  }
  return out;
}

Tensor<float> SynthWorld::base_from_mouth(const Tensor<float>& motion) const {
  const auto& c = config_;
  if (motion.cols() != c.motion_dim) throw std::invalid_argument("base_from_mouth: motion width mismatch");
  const auto M = Eigen::Index(c.mouth_dims);
  const Eigen::MatrixXd q_t = response_map_.topRows(M).transpose();
  Tensor<float> out = Tensor<float>::matrix(motion.rows(), c.motion_dim);
  Eigen::VectorXd pre(M);
  for (std::size_t l = 0; l < motion.rows(); ++l) {
    for (Eigen::Index d = 0; d < M; ++d) {
      pre(d) = std::atanh(std::clamp(double(motion(l, std::size_t(d))), -0.999, 0.999));
    }
    const Eigen::VectorXd m = (response_map_ * (q_t * pre)).array().tanh();
    for (std::size_t d = 0; d < c.motion_dim; ++d) out(l, d) = static_cast<float>(m(Eigen::Index(d)));
  }
  return out;
}

namespace {

double nonmouth_residual(const Tensor<float>& motion, const Tensor<float>& predicted, std::size_t mouth) {
  double acc = 0.0;
  for (std::size_t l = 0; l < motion.rows(); ++l) {
    for (std::size_t d = mouth; d < motion.cols(); ++d) {
      const double diff = double(motion(l, d)) - double(predicted(l, d));
      acc += diff * diff;
    }
  }
  return acc / double(std::max<std::size_t>(motion.rows(), 1));
}

}  // namespace

std::vector<double> SynthWorld::style_residuals(const Tensor<float>& motion) const {
  const Tensor<float> base = base_from_mouth(motion);
  std::vector<double> out(config_.styles);
  for (std::size_t s = 0; s < config_.styles; ++s) {
    out[s] = nonmouth_residual(motion, apply_style(base, s), config_.mouth_dims);
  }
  return out;
}

double SynthWorld::mean_style_residual(const Tensor<float>& motion) const {
  return nonmouth_residual(motion, apply_mean_style(base_from_mouth(motion)), config_.mouth_dims);
}

std::size_t SynthWorld::oracle_style_classify(const Tensor<float>& motion) const {
  const auto r = style_residuals(motion);
  return std::size_t(std::min_element(r.begin(), r.end()) - r.begin());
}

double SynthWorld::oracle_sync_score(const Tensor<float>& audio, const Tensor<float>& motion) const {
  if (audio.rows() != motion.rows()) throw std::invalid_argument("oracle_sync_score: length mismatch");
  if (motion.cols() != config_.motion_dim) throw std::invalid_argument("oracle_sync_score: motion width mismatch");
  const Tensor<float> truth = base_response(audio);
  double total = 0.0;
  std::vector<double> a(motion.rows()), b(motion.rows());
  for (std::size_t d = 0; d < config_.mouth_dims; ++d) {
    for (std::size_t l = 0; l < motion.rows(); ++l) {
      a[l] = motion(l, d);
      b[l] = truth(l, d);
    }
    total += pearson(a, b);
  }
  return total / double(config_.mouth_dims);
}

void FaceBasis::validate() const {
  if (mean_shape.rank() != 2 || mean_shape.cols() != 3) throw std::invalid_argument("face basis: mean shape must be V x 3");
  if (expr_bases.rows() != 3 * vertex_count()) throw std::invalid_argument("face basis: bases must have 3V rows");
  if (mouth_index.empty()) throw std::invalid_argument("face basis: empty mouth index");
  for (std::size_t v : mouth_index) {
    if (v >= vertex_count()) throw std::out_of_range("face basis: mouth vertex " + std::to_string(v) + " out of range");
  }
}

Tensor<float> FaceBasis::mouth_mean() const {
  validate();
  Tensor<float> out = Tensor<float>::matrix(1, mouth_coords());
  for (std::size_t i = 0; i < mouth_index.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) out[3 * i + a] = mean_shape(mouth_index[i], a);
  }
  return out;
}

Tensor<float> FaceBasis::mouth_bases_t() const {
  validate();
  Tensor<float> out = Tensor<float>::matrix(motion_dim(), mouth_coords());
  for (std::size_t i = 0; i < mouth_index.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      const std::size_t row = 3 * mouth_index[i] + a;
      for (std::size_t d = 0; d < motion_dim(); ++d) out(d, 3 * i + a) = expr_bases(row, d);
    }
  }
  return out;
}

void FaceBasis::store_into(TensorMap& out) const {
  validate();
  out["face_basis/mean_shape"] = mean_shape;
  out["face_basis/expr_bases"] = expr_bases;
  Tensor<float> idx({mouth_index.size()});
  for (std::size_t i = 0; i < mouth_index.size(); ++i) idx[i] = static_cast<float>(mouth_index[i]);
  out["face_basis/mouth_index"] = idx;
}

FaceBasis FaceBasis::load_from(const TensorMap& in) {
  auto find = [&in](const std::string& name) -> const Tensor<float>& {
    auto it = in.find(name);
    if (it == in.end()) throw std::runtime_error("checkpoint has no '" + name + "'");
    return it->second;
  };
  FaceBasis b;
  b.mean_shape = find("face_basis/mean_shape");
  b.expr_bases = find("face_basis/expr_bases");
  for (float v : find("face_basis/mouth_index").values()) b.mouth_index.push_back(std::size_t(v));
  b.validate();
  return b;
}

FaceBasis FaceBasis::synthetic(std::uint64_t seed, std::size_t vertices, std::size_t mouth_vertices_count,
                               std::size_t motion_dim, std::size_t mouth_dims) {
  if (mouth_vertices_count == 0 || mouth_vertices_count > vertices || mouth_dims > motion_dim) {
    throw std::invalid_argument("face basis: inconsistent synthetic layout");
  }
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  FaceBasis b;
  b.mean_shape = Tensor<float>::matrix(vertices, 3);
  for (auto& v : b.mean_shape.values()) v = static_cast<float>(unit(rng));
  b.expr_bases = Tensor<float>::matrix(3 * vertices, motion_dim);
  const double scale = 1.0 / std::sqrt(double(mouth_dims));
  for (std::size_t r = 0; r < 3 * vertices; ++r) {
    const bool mouth_row = r < 3 * mouth_vertices_count;
    for (std::size_t d = 0; d < motion_dim; ++d) {
      const double v = scale * unit(rng);
      b.expr_bases(r, d) = (mouth_row && d >= mouth_dims) ? 0.0f : static_cast<float>(v);
    }
  }
  for (std::size_t i = 0; i < mouth_vertices_count; ++i) b.mouth_index.push_back(i);
  return b;
}

Tensor<float> mouth_vertices(const Tensor<float>& motion, const FaceBasis& basis) {
  if (motion.cols() != basis.motion_dim()) throw std::invalid_argument("mouth_vertices: motion width mismatch");
  const Tensor<float> mean = basis.mouth_mean();
  const Tensor<float> bases = basis.mouth_bases_t();
  Tensor<float> out = Tensor<float>::matrix(motion.rows(), basis.mouth_coords());
  for (std::size_t l = 0; l < motion.rows(); ++l) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      double acc = mean[j];
      for (std::size_t d = 0; d < motion.cols(); ++d) acc += double(motion(l, d)) * double(bases(d, j));
      out(l, j) = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace stylediff
