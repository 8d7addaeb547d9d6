#pragma once

// Box-only transformer: shared per-box MLP, stacked self-attention encoder
// blocks, L2-normalized embeddings and a dot-product linking-score matrix.

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bott/autodiff.hpp"
#include "bott/config_json.hpp"
#include "bott/featurizer.hpp"
#include "bott/types.hpp"

namespace bott {

/// Symmetric N x N matrix of linking scores in [0, 1].
using LinkScoreMatrix = Eigen::MatrixXd;

/// Anything that turns a sliding window into linking scores.
using LinkScorer = std::function<LinkScoreMatrix(const SlidingWindow&)>;

struct NetworkConfig {
  std::vector<int> mlp_dims{1024, 1024, 1024, 512};
  int n_enc = 3;
  int n_heads = 8;
  std::vector<int> ffn_dims{1024, 512};
  int input_dim = kGeometricFeatures + 7;
  double ln_eps = 1e-5;
  // Multiplies the three center-offset features before the first layer.
  double position_scale = 1.0;

  int d() const { return mlp_dims.empty() ? 0 : mlp_dims.back(); }
  int num_classes() const { return input_dim - kGeometricFeatures; }

  void validate() const {
    if (mlp_dims.empty()) throw ConfigError("network: mlp_dims must not be empty");
    for (int w : mlp_dims)
      if (w <= 0) throw ConfigError("network: mlp widths must be positive");
    if (input_dim <= kGeometricFeatures) throw ConfigError("network: input_dim must exceed 9 (need >= 1 class)");
    if (n_enc < 0) throw ConfigError("network: n_enc must be >= 0");
    if (!(position_scale > 0)) throw ConfigError("network: position_scale must be positive");
    if (n_enc > 0) {
      if (n_heads <= 0 || d() % n_heads != 0) throw ConfigError("network: d must be divisible by n_heads");
      if (ffn_dims.empty() || ffn_dims.back() != d()) throw ConfigError("network: last ffn width must equal d");
      for (int w : ffn_dims)
        if (w <= 0) throw ConfigError("network: ffn widths must be positive");
    }
  }

  bool operator==(const NetworkConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"mlp_dims", c.mlp_dims}, {"n_enc", c.n_enc},         {"n_heads", c.n_heads},
       {"ffn_dims", c.ffn_dims}, {"input_dim", c.input_dim}, {"ln_eps", c.ln_eps},
       {"position_scale", c.position_scale}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  check_keys(j, {"mlp_dims", "n_enc", "n_heads", "ffn_dims", "input_dim", "ln_eps", "position_scale"}, "network");
  read_opt(j, "mlp_dims", c.mlp_dims);
  read_opt(j, "n_enc", c.n_enc);
  read_opt(j, "n_heads", c.n_heads);
  read_opt(j, "ffn_dims", c.ffn_dims);
  read_opt(j, "input_dim", c.input_dim);
  read_opt(j, "ln_eps", c.ln_eps);
  read_opt(j, "position_scale", c.position_scale);
}

template <typename T>
using Params = std::map<std::string, ad::Tensor<T>>;

namespace names {
inline std::string mlp(std::size_t i, const char* p) { return "mlp." + std::to_string(i) + "." + p; }
inline std::string enc(int b, const std::string& p) { return "enc." + std::to_string(b) + "." + p; }
}  // namespace names

/// Xavier-uniform weights, zero biases, unit layer-norm gains.
template <typename T = float, typename Rng>
Params<T> init_params(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  Params<T> p;
  auto weight = [&](const std::string& name, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    ad::Tensor<T> w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
    p[name] = std::move(w);
  };
  auto zeros = [&](const std::string& name, int n) { p[name] = ad::Tensor<T>::Zero(1, n); };
  auto ones = [&](const std::string& name, int n) { p[name] = ad::Tensor<T>::Ones(1, n); };

  int in = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.mlp_dims.size(); ++i) {
    weight(names::mlp(i, "weight"), in, cfg.mlp_dims[i]);
    zeros(names::mlp(i, "bias"), cfg.mlp_dims[i]);
    in = cfg.mlp_dims[i];
  }
  const int d = cfg.d();
  for (int b = 0; b < cfg.n_enc; ++b) {
    for (const char* m : {"q", "k", "v", "o"}) {
      weight(names::enc(b, std::string("attn.w") + m), d, d);
      zeros(names::enc(b, std::string("attn.b") + m), d);
    }
    ones(names::enc(b, "ln1.gain"), d);
    zeros(names::enc(b, "ln1.shift"), d);
    int fin = d;
    for (std::size_t k = 0; k < cfg.ffn_dims.size(); ++k) {
      weight(names::enc(b, "ffn." + std::to_string(k) + ".weight"), fin, cfg.ffn_dims[k]);
      zeros(names::enc(b, "ffn." + std::to_string(k) + ".bias"), cfg.ffn_dims[k]);
      fin = cfg.ffn_dims[k];
    }
    ones(names::enc(b, "ln2.gain"), d);
    zeros(names::enc(b, "ln2.shift"), d);
  }
  return p;
}

template <typename U, typename T>
Params<U> cast_params(const Params<T>& p) {
  Params<U> out;
  for (const auto& [k, v] : p) out[k] = v.template cast<U>();
  return out;
}

/// Throws std::domain_error when `p` does not match the shapes `cfg` implies.
template <typename T>
void check_params(const NetworkConfig& cfg, const Params<T>& p) {
  std::mt19937_64 rng(0);
  const auto ref = init_params<T>(cfg, rng);
  if (ref.size() != p.size()) throw std::domain_error("parameter set does not match network config");
  for (const auto& [k, v] : ref) {
    auto it = p.find(k);
    if (it == p.end()) throw std::domain_error("missing parameter " + k);
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols())
      throw std::domain_error("parameter " + k + " has the wrong shape");
    if (!it->second.allFinite()) throw std::domain_error("parameter " + k + " is not finite");
  }
}

using ParamVars = std::map<std::string, ad::Var>;

/// Places every parameter on the tape by reference.
template <typename T>
ParamVars bind_params(ad::Tape<T>& tape, const Params<T>& p, bool trainable) {
  ParamVars out;
  for (const auto& [k, v] : p) out[k] = trainable ? tape.parameter_ref(v) : tape.constant_ref(v);
  return out;
}

/// Attention weights captured during a forward pass, indexed
/// [layer][block * n_heads + head]; each entry is block_rows x block_rows.
template <typename T>
struct AttentionTrace {
  std::vector<ad::AttentionSink<T>> per_layer;
};

/// Feature rows as network input: center offsets multiplied by
/// position_scale, everything else unchanged.
template <typename T>
ad::Tensor<T> network_input(const Eigen::MatrixXd& features, const NetworkConfig& cfg) {
  ad::Tensor<T> x = features.cast<T>();
  x.leftCols(3) *= static_cast<T>(cfg.position_scale);
  return x;
}

/// Records the encoder on a tape. `features` has R = B * block_rows rows;
/// `pad_mask[r]` marks padding rows that must not be attended to.
template <typename T>
ad::Var encode_on_tape(ad::Tape<T>& tape, const NetworkConfig& cfg, const ParamVars& pv, ad::Var features,
                       Eigen::Index block_rows, const std::vector<bool>& pad_mask,
                       AttentionTrace<T>* trace = nullptr) {
  ad::Var h = features;
  for (std::size_t i = 0; i < cfg.mlp_dims.size(); ++i)
    h = ad::relu(tape, ad::linear(tape, h, pv.at(names::mlp(i, "weight")), pv.at(names::mlp(i, "bias"))));
  const T eps = static_cast<T>(cfg.ln_eps);
  for (int b = 0; b < cfg.n_enc; ++b) {
    auto P = [&](const std::string& s) { return pv.at(names::enc(b, s)); };
    const ad::AttentionVars av{P("attn.wq"), P("attn.bq"), P("attn.wk"), P("attn.bk"),
                               P("attn.wv"), P("attn.bv"), P("attn.wo"), P("attn.bo")};
    ad::AttentionSink<T>* sink = nullptr;
    if (trace) sink = &trace->per_layer.emplace_back();
    const ad::Var a = ad::multi_head_attention(tape, h, av, cfg.n_heads, block_rows, pad_mask, sink);
    h = ad::layer_norm(tape, ad::add(tape, h, a), P("ln1.gain"), P("ln1.shift"), eps);
    ad::Var f = h;
    for (std::size_t k = 0; k < cfg.ffn_dims.size(); ++k) {
      const std::string base = "ffn." + std::to_string(k);
      f = ad::relu(tape, ad::linear(tape, f, P(base + ".weight"), P(base + ".bias")));
    }
    h = ad::layer_norm(tape, ad::add(tape, h, f), P("ln2.gain"), P("ln2.shift"), eps);
  }
  return h;
}

/// Per-box embeddings (N x d). Padded rows' outputs are meaningless.
template <typename T>
ad::Tensor<T> encode_boxes(const Eigen::MatrixXd& features, const std::vector<bool>& pad_mask,
                           const Params<T>& params, const NetworkConfig& cfg, AttentionTrace<T>* trace = nullptr) {
  if (features.rows() == 0) throw std::domain_error("encode_boxes: no boxes");
  if (features.cols() != cfg.input_dim) throw std::domain_error("encode_boxes: feature width does not match input_dim");
  ad::Tape<T> tape;
  const ParamVars pv = bind_params(tape, params, false);
  const ad::Var x = tape.constant(network_input<T>(features, cfg));
  const ad::Var e = encode_on_tape(tape, cfg, pv, x, features.rows(), pad_mask, trace);
  return tape.value(e);
}

template <typename T>
ad::Tensor<T> encode_boxes(const RawFeatureMatrix& features, const Params<T>& params, const NetworkConfig& cfg,
                           AttentionTrace<T>* trace = nullptr) {
  return encode_boxes(features.values, std::vector<bool>(static_cast<std::size_t>(features.rows()), false), params,
                      cfg, trace);
}

/// (E_norm E_norm^T + 1) / 2, clamped to [0, 1].
template <typename T>
LinkScoreMatrix linking_scores(const ad::Tensor<T>& embeddings) {
  ad::Tape<T> tape;
  const ad::Var e = tape.constant_ref(embeddings);
  const ad::Var s = ad::pairwise_scores(tape, ad::l2_normalize_rows(tape, e));
  return tape.value(s).template cast<double>().cwiseMax(0.0).cwiseMin(1.0);
}

template <typename T>
LinkScoreMatrix forward(const SlidingWindow& window, const Params<T>& params, const NetworkConfig& cfg,
                        AttentionTrace<T>* trace = nullptr) {
  return linking_scores(encode_boxes(featurize(window), params, cfg, trace));
}

/// Feature rows of several windows zero-padded to a common block size.
struct PaddedBatch {
  Eigen::MatrixXd features;  // (B * block_rows) x input_dim
  std::vector<bool> pad_mask;
  Eigen::Index block_rows = 0;
  std::vector<Eigen::Index> n_real;

  std::size_t size() const { return n_real.size(); }
};

inline PaddedBatch pad_batch(const std::vector<RawFeatureMatrix>& items, Eigen::Index min_block_rows = 0) {
  PaddedBatch b;
  if (items.empty()) throw std::domain_error("pad_batch: empty batch");
  Eigen::Index width = items.front().values.cols();
  b.block_rows = min_block_rows;
  for (const auto& it : items) {
    if (it.values.cols() != width) throw std::domain_error("pad_batch: inconsistent feature width");
    b.block_rows = std::max(b.block_rows, it.rows());
  }
  if (b.block_rows == 0) throw std::domain_error("pad_batch: all windows are empty");
  const auto B = static_cast<Eigen::Index>(items.size());
  b.features = Eigen::MatrixXd::Zero(B * b.block_rows, width);
  b.pad_mask.assign(static_cast<std::size_t>(B * b.block_rows), true);
  for (Eigen::Index k = 0; k < B; ++k) {
    const auto& it = items[static_cast<std::size_t>(k)];
    b.features.middleRows(k * b.block_rows, it.rows()) = it.values;
    for (Eigen::Index r = 0; r < it.rows(); ++r) b.pad_mask[static_cast<std::size_t>(k * b.block_rows + r)] = false;
    b.n_real.push_back(it.rows());
  }
  return b;
}

/// Linking scores for every window of a zero-padded batch.
template <typename T>
std::vector<LinkScoreMatrix> forward_batch(const PaddedBatch& batch, const Params<T>& params,
                                           const NetworkConfig& cfg) {
  ad::Tape<T> tape;
  const ParamVars pv = bind_params(tape, params, false);
  const ad::Var x = tape.constant(network_input<T>(batch.features, cfg));
  const ad::Var e = encode_on_tape(tape, cfg, pv, x, batch.block_rows, batch.pad_mask);
  std::vector<LinkScoreMatrix> out;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const ad::Tensor<T> rows = tape.value(e).middleRows(static_cast<Eigen::Index>(k) * batch.block_rows, batch.n_real[k]);
    out.push_back(linking_scores(rows));
  }
  return out;
}

/// A trained network: configuration plus 32-bit parameters.
struct Model {
  NetworkConfig config;
  Params<float> params;
};

template <typename Rng>
Model make_model(const NetworkConfig& cfg, Rng& rng) {
  return Model{cfg, init_params<float>(cfg, rng)};
}

/// Scorer closure over a model; one network evaluation per call.
inline LinkScorer make_scorer(const Model& model) {
  return [&model](const SlidingWindow& w) { return forward(w, model.params, model.config); };
}

// ---------------------------------------------------------------------------
// Checkpoints: "BOTT1" | u32 count | per tensor {u32 name_len, name, u32 rank,
// u64 dims[rank]} | float32 payloads in manifest order. Little-endian.

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw std::runtime_error("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[5] = {'B', 'O', 'T', 'T', '1'};

inline void write_tensors(std::ostream& os, const Params<float>& tensors) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, 2);
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows()));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols()));
  }
  for (const auto& [name, t] : tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) detail::put_le<float>(os, t.data()[i]);
}

inline Params<float> read_tensors(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint: truncated manifest");
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank == 0 || rank > 2) throw std::runtime_error("checkpoint: unsupported tensor rank");
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[r + (2 - rank)] = detail::get_le<std::uint64_t>(is);
    manifest.push_back({name, {static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1])}});
  }
  Params<float> out;
  for (const auto& [name, shape] : manifest) {
    ad::Tensor<float> t(shape.first, shape.second);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = detail::get_le<float>(is);
    out[name] = std::move(t);
  }
  return out;
}

/// Writes `<path>` (tensors) and `<path>.json` (network config + `extra`).
inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const Params<float>& extra_tensors = {}, const nlohmann::json& extra = {}) {
  Params<float> all = model.params;
  for (const auto& [k, v] : extra_tensors) all[k] = v;
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    write_tensors(os, all);
  }
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["network"] = model.config;
  std::ofstream js(path.string() + ".json");
  js << meta.dump(2) << '\n';
}

struct LoadedCheckpoint {
  Model model;
  Params<float> extra_tensors;
  nlohmann::json meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  LoadedCheckpoint out;
  {
    std::ifstream js(path.string() + ".json");
    if (!js) throw std::runtime_error("missing checkpoint config " + path.string() + ".json");
    out.meta = nlohmann::json::parse(js);
  }
  out.model.config = out.meta.at("network").get<NetworkConfig>();
  out.model.config.validate();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  Params<float> all = read_tensors(is);
  for (auto& [k, v] : all) {
    if (k.rfind("mlp.", 0) == 0 || k.rfind("enc.", 0) == 0)
      out.model.params[k] = std::move(v);
    else
      out.extra_tensors[k] = std::move(v);
  }
  check_params(out.model.config, out.model.params);
  return out;
}

}  // namespace bott
