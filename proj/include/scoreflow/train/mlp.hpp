#pragma once

// Small MLP standing in for F_theta. The network always sees frame-native
// inputs: c_in x for the EDM-style kinds, the trig-frame point for velocity
// models and the RF point for flow models, plus sinusoidal features of
// ln(sigma)/4 and, optionally, a condition.

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoreflow/param.hpp"
#include "scoreflow/train/tape.hpp"

namespace scoreflow::train {

enum class Conditioning { none, adaln, channel_concat };

inline std::string_view to_string(Conditioning c) {
  switch (c) {
    case Conditioning::none: return "none";
    case Conditioning::adaln: return "adaln";
    case Conditioning::channel_concat: return "channel_concat";
  }
  return "?";
}

inline std::optional<Conditioning> parse_conditioning(std::string_view s) {
  if (s == "none") return Conditioning::none;
  if (s == "adaln") return Conditioning::adaln;
  if (s == "channel_concat") return Conditioning::channel_concat;
  return std::nullopt;
}

inline constexpr std::size_t kEmbeddingFeatures = 16;
inline constexpr int kModelSchemaVersion = 1;

struct MlpSpec {
  std::size_t dim = 2;
  std::vector<std::size_t> hidden = {64, 64, 64};
  Conditioning conditioning = Conditioning::none;
  std::size_t cond_dim = 0;  // number of labels (adaln) or observation width (channel_concat)
  Parameterization kind = Parameterization::denoiser;
  double sigma_data = 0.5;

  void validate() const {
    if (dim == 0) throw InvalidParameter("mlp: dim must be >= 1");
    if (hidden.empty() || hidden.size() > 4) throw InvalidParameter("mlp: 1 to 4 hidden layers");
    for (auto w : hidden)
      if (w == 0 || w > 64) throw InvalidParameter("mlp: hidden width must be in [1, 64]");
    if ((conditioning == Conditioning::none) != (cond_dim == 0))
      throw InvalidParameter("mlp: cond_dim must be > 0 exactly when conditioning is enabled");
    if (kind == Parameterization::score) throw InvalidParameter("mlp: score parameterization is not trainable here");
    if (!(sigma_data > 0.0)) throw InvalidParameter("mlp: sigma_data must be > 0");
  }

  std::size_t input_width() const {
    return dim + kEmbeddingFeatures + (conditioning == Conditioning::channel_concat ? cond_dim : 0);
  }
};

/// Sinusoidal features of the noise input at frequencies 2^(k/2).
inline Mat noise_embedding(const ColVec& noise) {
  constexpr std::size_t half = kEmbeddingFeatures / 2;
  Mat out(noise.size(), kEmbeddingFeatures);
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::exp2(0.5 * static_cast<double>(k));
    out.col(k) = (w * noise.array()).sin();
    out.col(half + k) = (w * noise.array()).cos();
  }
  return out;
}

/// Network input for an EDM point (x, sigma) under the model's parameterization.
struct NetworkPoint {
  Vec x;
  double noise = 0.0;
  double t = 0.0;  // RF time, flow models only
};

inline NetworkPoint network_point(const MlpSpec& spec, std::span<const double> x, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("mlp: sigma must be finite and > 0");
  const double sd = spec.sigma_data;
  switch (spec.kind) {
    case Parameterization::denoiser:
    case Parameterization::epsilon:
      return {scaled(x, Preconditioner{sd}.c_in(sigma)), 0.25 * std::log(sigma), 0.0};
    case Parameterization::velocity: {
      const double s = sigma / sd;
      return {scaled(x, 1.0 / (sd * std::sqrt(1.0 + s * s))), 0.25 * std::log(s), 0.0};
    }
    case Parameterization::flow: {
      const double s = sigma / sd;
      const double t = s / (1.0 + s);
      return {scaled(x, (1.0 - t) / sd), 0.25 * std::log(s), t};
    }
    case Parameterization::score: break;
  }
  throw InvalidParameter("mlp: unsupported parameterization");
}

/// Maps a raw network output at (x, sigma) to the EDM denoiser value.
inline Vec output_to_denoiser(const MlpSpec& spec, std::span<const double> raw, std::span<const double> x,
                              double sigma) {
  const double sd = spec.sigma_data;
  switch (spec.kind) {
    case Parameterization::denoiser: {
      const Preconditioner pc{sd};
      return axpby(pc.c_skip(sigma), x, pc.c_out(sigma), raw);
    }
    case Parameterization::epsilon:
      return to_denoiser({Parameterization::epsilon, Vec(raw.begin(), raw.end())}, x, sigma);
    case Parameterization::velocity:
      return scaled(to_denoiser({Parameterization::velocity, Vec(raw.begin(), raw.end())}, scaled(x, 1.0 / sd), sigma / sd), sd);
    case Parameterization::flow: {
      const double s = sigma / sd;
      const FrameContext ctx{FrameKind::rf, s / (1.0 + s)};
      return scaled(to_denoiser({Parameterization::flow, Vec(raw.begin(), raw.end())}, scaled(x, 1.0 / sd), s, ctx), sd);
    }
    case Parameterization::score: break;
  }
  throw InvalidParameter("mlp: unsupported parameterization");
}

class MlpDenoiser {
 public:
  /// All parameters zero.
  explicit MlpDenoiser(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t in = spec_.input_width();
    for (std::size_t l = 0; l <= spec_.hidden.size(); ++l) {
      const std::size_t out = l < spec_.hidden.size() ? spec_.hidden[l] : spec_.dim;
      add("W" + std::to_string(l), in, out);
      add("b" + std::to_string(l), 1, out);
      in = out;
    }
    if (spec_.conditioning == Conditioning::adaln) {
      for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
        add("S" + std::to_string(l), spec_.cond_dim, spec_.hidden[l]);
        add("B" + std::to_string(l), spec_.cond_dim, spec_.hidden[l]);
      }
    }
  }

  /// Random init: weights ~ N(0, 1/fan_in), biases and modulation zero, output layer scaled down.
  MlpDenoiser(MlpSpec spec, Rng& rng) : MlpDenoiser(std::move(spec)) {
    const std::size_t layers = spec_.hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      Mat& w = params_[2 * l];
      const double scale = (l + 1 == layers ? 0.1 : 1.0) / std::sqrt(static_cast<double>(w.rows()));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::vector<Mat>& params() { return params_; }
  const std::vector<Mat>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  std::vector<Mat> zeros_like() const {
    std::vector<Mat> out;
    for (const auto& p : params_) out.push_back(Mat::Zero(p.rows(), p.cols()));
    return out;
  }

  /// Records the raw forward pass on `tape`. `cond` holds one condition row
  /// per input row (ignored when conditioning is none). Parameter gradients
  /// accumulate into *grads on backward.
  Tape::Id forward(Tape& tape, const Mat& x_in, const ColVec& noise, const Mat& cond, std::vector<Mat>* grads) const {
    check_inputs(x_in, noise, cond);
    auto leaf = [&](std::size_t i) { return grads ? tape.param(params_[i], &(*grads)[i]) : tape.constant(params_[i]); };
    Tape::Id h = tape.concat_cols(tape.constant(x_in), tape.constant(noise_embedding(noise)));
    if (spec_.conditioning == Conditioning::channel_concat) h = tape.concat_cols(h, tape.constant(cond));
    const Tape::Id c = spec_.conditioning == Conditioning::adaln ? tape.constant(cond) : 0;
    const std::size_t hidden = spec_.hidden.size();
    for (std::size_t l = 0; l < hidden; ++l) {
      Tape::Id pre = tape.add_row_bias(tape.matmul(h, leaf(2 * l)), leaf(2 * l + 1));
      if (spec_.conditioning == Conditioning::adaln) {
        const std::size_t base = 2 * (hidden + 1) + 2 * l;
        const Tape::Id scale = tape.matmul(c, leaf(base));
        const Tape::Id shift = tape.matmul(c, leaf(base + 1));
        pre = tape.add(tape.add(pre, tape.mul(pre, scale)), shift);
      }
      h = tape.silu(pre);
    }
    return tape.add_row_bias(tape.matmul(h, leaf(2 * hidden)), leaf(2 * hidden + 1));
  }

  /// Raw forward pass without recording.
  Mat forward(const Mat& x_in, const ColVec& noise, const Mat& cond) const {
    check_inputs(x_in, noise, cond);
    Mat h(x_in.rows(), x_in.cols() + static_cast<Eigen::Index>(kEmbeddingFeatures));
    h << x_in, noise_embedding(noise);
    if (spec_.conditioning == Conditioning::channel_concat) {
      Mat wide(h.rows(), h.cols() + cond.cols());
      wide << h, cond;
      h = std::move(wide);
    }
    const std::size_t hidden = spec_.hidden.size();
    for (std::size_t l = 0; l < hidden; ++l) {
      Mat pre = h * params_[2 * l];
      pre.rowwise() += params_[2 * l + 1].row(0);
      if (spec_.conditioning == Conditioning::adaln) {
        const std::size_t base = 2 * (hidden + 1) + 2 * l;
        pre = pre.cwiseProduct(Mat::Ones(pre.rows(), pre.cols()) + cond * params_[base]) + cond * params_[base + 1];
      }
      h = pre.array() / (1.0 + (-pre.array()).exp());
    }
    Mat out = h * params_[2 * hidden];
    out.rowwise() += params_[2 * hidden + 1].row(0);
    return out;
  }

  /// EDM denoiser for a fixed condition (empty or all-zeros = null condition).
  DenoiserFn denoiser(Vec condition = {}) const {
    if (spec_.conditioning != Conditioning::none && condition.empty()) condition.assign(spec_.cond_dim, 0.0);
    if (condition.size() != (spec_.conditioning == Conditioning::none ? 0 : spec_.cond_dim))
      throw DimensionMismatch("mlp: condition width");
    return [self = *this, condition](std::span<const double> x, double sigma) {
      if (x.size() != self.spec_.dim) throw DimensionMismatch("mlp: input dimension");
      const NetworkPoint p = self.network_point_of(x, sigma);
      Mat in = Eigen::Map<const Eigen::RowVectorXd>(p.x.data(), static_cast<Eigen::Index>(p.x.size()));
      ColVec noise = ColVec::Constant(1, p.noise);
      Mat cond(1, static_cast<Eigen::Index>(condition.size()));
      for (std::size_t i = 0; i < condition.size(); ++i) cond(0, static_cast<Eigen::Index>(i)) = condition[i];
      const Mat raw = self.forward(in, noise, cond);
      return output_to_denoiser(self.spec_, Vec(raw.data(), raw.data() + raw.size()), x, sigma);
    };
  }

  bool operator==(const MlpDenoiser& o) const {
    if (spec_.dim != o.spec_.dim || spec_.hidden != o.spec_.hidden || spec_.conditioning != o.spec_.conditioning ||
        spec_.cond_dim != o.spec_.cond_dim || spec_.kind != o.spec_.kind || spec_.sigma_data != o.spec_.sigma_data)
      return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i] != o.params_[i]) return false;
    return true;
  }

 private:
  NetworkPoint network_point_of(std::span<const double> x, double sigma) const { return network_point(spec_, x, sigma); }

  void add(std::string name, std::size_t rows, std::size_t cols) {
    names_.push_back(std::move(name));
    params_.push_back(Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  }

  void check_inputs(const Mat& x_in, const ColVec& noise, const Mat& cond) const {
    if (x_in.cols() != static_cast<Eigen::Index>(spec_.dim) || noise.size() != x_in.rows())
      throw DimensionMismatch("mlp: input shape");
    if (spec_.conditioning != Conditioning::none &&
        (cond.rows() != x_in.rows() || cond.cols() != static_cast<Eigen::Index>(spec_.cond_dim)))
      throw DimensionMismatch("mlp: condition shape");
  }

  MlpSpec spec_;
  std::vector<Mat> params_;
  std::vector<std::string> names_;
};

inline Vec one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw InvalidParameter("one_hot: label out of range");
  Vec v(classes, 0.0);
  v[label] = 1.0;
  return v;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const MlpDenoiser& m) {
  const auto& s = m.spec();
  nlohmann::json j;
  j["schema"] = "scoreflow.mlp";
  j["version"] = kModelSchemaVersion;
  j["dim"] = s.dim;
  j["hidden"] = s.hidden;
  j["activation"] = "silu";
  j["embedding_features"] = kEmbeddingFeatures;
  j["sigma_data"] = s.sigma_data;
  j["parameterization"] = std::string(to_string(s.kind));
  j["conditioning"] = std::string(to_string(s.conditioning));
  j["cond_dim"] = s.cond_dim;
  j["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const Mat& p = m.params()[i];
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(p.size()));
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) data.push_back(p(r, c));
    j["tensors"].push_back({{"name", m.names()[i]}, {"rows", p.rows()}, {"cols", p.cols()}, {"data", data}});
  }
  return j;
}

inline MlpDenoiser model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "scoreflow.mlp") throw InvalidParameter("model: unexpected schema");
    if (j.at("version").get<int>() != kModelSchemaVersion) throw InvalidParameter("model: unsupported version");
    if (j.at("activation") != "silu") throw InvalidParameter("model: unsupported activation");
    if (j.at("embedding_features").get<std::size_t>() != kEmbeddingFeatures)
      throw InvalidParameter("model: embedding width mismatch");
    MlpSpec s;
    s.dim = j.at("dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.sigma_data = j.at("sigma_data").get<double>();
    const auto kind = parse_parameterization(j.at("parameterization").get<std::string>());
    const auto cond = parse_conditioning(j.at("conditioning").get<std::string>());
    if (!kind || !cond) throw InvalidParameter("model: unknown parameterization or conditioning");
    s.kind = *kind;
    s.conditioning = *cond;
    s.cond_dim = j.at("cond_dim").get<std::size_t>();
    MlpDenoiser m(s);
    const auto& tensors = j.at("tensors");
    if (tensors.size() != m.params().size()) throw InvalidParameter("model: tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = tensors[i];
      Mat& p = m.params()[i];
      if (t.at("name") != m.names()[i] || t.at("rows").get<Eigen::Index>() != p.rows() ||
          t.at("cols").get<Eigen::Index>() != p.cols())
        throw InvalidParameter("model: tensor " + m.names()[i] + " has the wrong name or shape");
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != static_cast<std::size_t>(p.size())) throw InvalidParameter("model: tensor size mismatch");
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = data[k++];
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParameter(std::string("model: malformed document: ") + e.what());
  }
}

inline void save_model(const MlpDenoiser& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << model_to_json(m).dump(1) << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline MlpDenoiser load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParameter("model: " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace scoreflow::train
