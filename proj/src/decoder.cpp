#include "geosid/decoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace geosid {

static_assert(std::endian::native == std::endian::little, "GSLM I/O assumes a little-endian host");

void TrainingExample::validate() const {
  if (tokens.size() < 2) throw Error("training example must have at least 2 tokens");
  if (loss_mask.size() != tokens.size()) throw Error("training example mask length mismatch");
  if (loss_mask[0]) throw Error("training example cannot score its first token");
  bool any = false;
  for (bool b : loss_mask) any = any || b;
  if (!any) throw Error("training example has no loss positions");
}

void DecoderConfig::validate() const {
  if (vocab < 2) throw Error("model vocab must be >= 2");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq < 2) throw Error("model dimensions must be positive");
  if (d_model % n_heads != 0) throw Error("model.d_model must be divisible by model.n_heads");
}

namespace {

using MapM = Eigen::Map<RowMatrixF>;
using CMapM = Eigen::Map<const RowMatrixF>;
using MapV = Eigen::Map<Eigen::RowVectorXf>;
using CMapV = Eigen::Map<const Eigen::RowVectorXf>;

constexpr float kLnEps = 1e-5f;
constexpr float kGeluK = 0.7978845608028654f;  // sqrt(2/pi)

float gelu(float x) { return 0.5f * x * (1.0f + std::tanh(kGeluK * (x + 0.044715f * x * x * x))); }

float gelu_grad(float x) {
  const float t = std::tanh(kGeluK * (x + 0.044715f * x * x * x));
  return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * kGeluK * (1.0f + 3.0f * 0.044715f * x * x);
}

void layer_norm(const RowMatrixF& x, const CMapV& g, const CMapV& b, RowMatrixF& xhat, Eigen::VectorXf& rstd,
                RowMatrixF& out) {
  const auto T = x.rows();
  const auto d = static_cast<float>(x.cols());
  xhat.resize(T, x.cols());
  rstd.resize(T);
  out.resize(T, x.cols());
  for (Eigen::Index r = 0; r < T; ++r) {
    const float mu = x.row(r).sum() / d;
    xhat.row(r) = x.row(r).array() - mu;
    const float var = xhat.row(r).squaredNorm() / d;
    rstd[r] = 1.0f / std::sqrt(var + kLnEps);
    xhat.row(r) *= rstd[r];
    out.row(r) = xhat.row(r).cwiseProduct(g) + b;
  }
}

/// dx += LN backward of dout; accumulates gain/bias gradients.
void layer_norm_backward(const RowMatrixF& dout, const RowMatrixF& xhat, const Eigen::VectorXf& rstd,
                         const CMapV& g, MapV dg, MapV db, RowMatrixF& dx) {
  const auto d = static_cast<float>(xhat.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    dg += dout.row(r).cwiseProduct(xhat.row(r));
    db += dout.row(r);
    const Eigen::RowVectorXf dxhat = dout.row(r).cwiseProduct(g);
    const float m1 = dxhat.sum() / d;
    const float m2 = dxhat.dot(xhat.row(r)) / d;
    dx.row(r) += rstd[r] * ((dxhat.array() - m1) - xhat.row(r).array() * m2).matrix();
  }
}

}  // namespace

struct TinyDecoder::Forward {
  struct Layer {
    RowMatrixF x_in, xhat1, a, qkv, o, x1, xhat2, c, u, g;
    Eigen::VectorXf rstd1, rstd2;
    std::vector<RowMatrixF> probs;  // per head, T x T (upper triangle zero)
  };
  std::vector<Layer> layers;
  RowMatrixF x_out, xhat_f, z;
  Eigen::VectorXf rstd_f;
};

TinyDecoder::TinyDecoder(const DecoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layout();
  init(cfg_.seed);
}

void TinyDecoder::layout() {
  const auto V = static_cast<std::size_t>(cfg_.vocab);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto S = static_cast<std::size_t>(cfg_.max_seq);
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const auto at = off;
    off += n;
    return at;
  };
  tok_emb_ = take(V * d);
  pos_emb_ = take(S * d);
  layers_.clear();
  for (int l = 0; l < cfg_.n_layers; ++l) {
    LayerOffsets o{};
    o.ln1_g = take(d);
    o.ln1_b = take(d);
    o.w_qkv = take(d * 3 * d);
    o.b_qkv = take(3 * d);
    o.w_o = take(d * d);
    o.b_o = take(d);
    o.ln2_g = take(d);
    o.ln2_b = take(d);
    o.w_1 = take(d * 4 * d);
    o.b_1 = take(4 * d);
    o.w_2 = take(4 * d * d);
    o.b_2 = take(d);
    layers_.push_back(o);
  }
  lnf_g_ = take(d);
  lnf_b_ = take(d);
  params_.assign(off, 0.0f);
}

void TinyDecoder::init(std::uint64_t seed) {
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  auto normal_fill = [&](std::size_t off, std::size_t n, double std) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = static_cast<float>(rng.normal() * std);
  };
  auto const_fill = [&](std::size_t off, std::size_t n, float v) { std::fill_n(params_.begin() + static_cast<long>(off), n, v); };
  const double base = 0.02;
  const double resid = base / std::sqrt(2.0 * cfg_.n_layers);
  normal_fill(tok_emb_, static_cast<std::size_t>(cfg_.vocab) * d, base);
  normal_fill(pos_emb_, static_cast<std::size_t>(cfg_.max_seq) * d, base);
  for (const auto& o : layers_) {
    const_fill(o.ln1_g, d, 1.0f);
    normal_fill(o.w_qkv, d * 3 * d, base);
    normal_fill(o.w_o, d * d, resid);
    const_fill(o.ln2_g, d, 1.0f);
    normal_fill(o.w_1, d * 4 * d, base);
    normal_fill(o.w_2, 4 * d * d, resid);
  }
  const_fill(lnf_g_, d, 1.0f);
}

void TinyDecoder::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw Error("decoder: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg_.max_seq)
    throw Error("decoder: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                std::to_string(cfg_.max_seq));
  for (int t : tokens) {
    if (t < 0 || t >= cfg_.vocab) throw Error("decoder: token id out of range");
  }
}

void TinyDecoder::forward(std::span<const int> tokens, Forward& f) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index H = cfg_.n_heads;
  const Eigen::Index dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const float* p = params_.data();
  const CMapM E(p + tok_emb_, cfg_.vocab, d);
  const CMapM P(p + pos_emb_, cfg_.max_seq, d);

  RowMatrixF x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = E.row(tokens[static_cast<std::size_t>(t)]) + P.row(t);

  f.layers.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& o = layers_[l];
    auto& L = f.layers[l];
    L.x_in = x;
    layer_norm(x, CMapV(p + o.ln1_g, d), CMapV(p + o.ln1_b, d), L.xhat1, L.rstd1, L.a);
    L.qkv.noalias() = L.a * CMapM(p + o.w_qkv, d, 3 * d);
    L.qkv.rowwise() += CMapV(p + o.b_qkv, 3 * d);
    L.o.resize(T, d);
    L.probs.resize(static_cast<std::size_t>(H));
    for (Eigen::Index h = 0; h < H; ++h) {
      auto Q = L.qkv.middleCols(h * dh, dh);
      auto K = L.qkv.middleCols(d + h * dh, dh);
      auto Vh = L.qkv.middleCols(2 * d + h * dh, dh);
      RowMatrixF& Pr = L.probs[static_cast<std::size_t>(h)];
      Pr.noalias() = (Q * K.transpose()) * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        auto row = Pr.row(i);
        const float m = row.head(i + 1).maxCoeff();
        float z = 0;
        for (Eigen::Index j = 0; j <= i; ++j) z += row[j] = std::exp(row[j] - m);
        row.head(i + 1) /= z;
        row.tail(T - i - 1).setZero();
      }
      L.o.middleCols(h * dh, dh).noalias() = Pr * Vh;
    }
    L.x1 = x;
    L.x1.noalias() += L.o * CMapM(p + o.w_o, d, d);
    L.x1.rowwise() += CMapV(p + o.b_o, d);
    layer_norm(L.x1, CMapV(p + o.ln2_g, d), CMapV(p + o.ln2_b, d), L.xhat2, L.rstd2, L.c);
    L.u.noalias() = L.c * CMapM(p + o.w_1, d, 4 * d);
    L.u.rowwise() += CMapV(p + o.b_1, 4 * d);
    L.g = L.u.unaryExpr([](float v) { return gelu(v); });
    x = L.x1;
    x.noalias() += L.g * CMapM(p + o.w_2, 4 * d, d);
    x.rowwise() += CMapV(p + o.b_2, d);
  }
  f.x_out = x;
  layer_norm(x, CMapV(p + lnf_g_, d), CMapV(p + lnf_b_, d), f.xhat_f, f.rstd_f, f.z);
}

RowMatrixF TinyDecoder::logits(std::span<const int> tokens) const {
  check_tokens(tokens);
  Forward f;
  forward(tokens, f);
  const CMapM E(params_.data() + tok_emb_, cfg_.vocab, cfg_.d_model);
  return f.z * E.transpose();
}

double TinyDecoder::accumulate_gradients(const TrainingExample& ex, std::span<float> grad) const {
  ex.validate();
  check_tokens(ex.tokens);
  if (grad.size() != params_.size()) throw Error("gradient buffer size mismatch");
  const auto T = static_cast<Eigen::Index>(ex.tokens.size());
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index H = cfg_.n_heads;
  const Eigen::Index dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const float* p = params_.data();
  float* gp = grad.data();
  const CMapM E(p + tok_emb_, cfg_.vocab, d);
  MapM dE(gp + tok_emb_, cfg_.vocab, d);
  MapM dP(gp + pos_emb_, cfg_.max_seq, d);

  Forward f;
  forward(ex.tokens, f);

  // Output layer over the scored positions only.
  std::vector<Eigen::Index> rows;
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    if (ex.loss_mask[static_cast<std::size_t>(t + 1)]) rows.push_back(t);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  RowMatrixF zp(n, d);
  for (Eigen::Index i = 0; i < n; ++i) zp.row(i) = f.z.row(rows[static_cast<std::size_t>(i)]);
  RowMatrixF dlogits = zp * E.transpose();
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = dlogits.row(i);
    const int target = ex.tokens[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)] + 1)];
    const float m = row.maxCoeff();
    double z = 0;
    for (Eigen::Index v = 0; v < row.size(); ++v) z += std::exp(static_cast<double>(row[v] - m));
    loss += -(static_cast<double>(row[target] - m) - std::log(z));
    for (Eigen::Index v = 0; v < row.size(); ++v)
      row[v] = static_cast<float>(std::exp(static_cast<double>(row[v] - m)) / z);
    row[target] -= 1.0f;
  }
  dE.noalias() += dlogits.transpose() * zp;
  RowMatrixF dz = RowMatrixF::Zero(T, d);
  {
    const RowMatrixF dzp = dlogits * E;
    for (Eigen::Index i = 0; i < n; ++i) dz.row(rows[static_cast<std::size_t>(i)]) = dzp.row(i);
  }

  RowMatrixF dx = RowMatrixF::Zero(T, d);
  layer_norm_backward(dz, f.xhat_f, f.rstd_f, CMapV(p + lnf_g_, d), MapV(gp + lnf_g_, d), MapV(gp + lnf_b_, d), dx);

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& o = layers_[li];
    const auto& L = f.layers[li];
    // Feed-forward block: x_out = x1 + gelu(c W1 + b1) W2 + b2.
    MapV(gp + o.b_2, d) += dx.colwise().sum();
    MapM(gp + o.w_2, 4 * d, d).noalias() += L.g.transpose() * dx;
    RowMatrixF du = dx * CMapM(p + o.w_2, 4 * d, d).transpose();
    du.array() *= L.u.unaryExpr([](float v) { return gelu_grad(v); }).array();
    MapV(gp + o.b_1, 4 * d) += du.colwise().sum();
    MapM(gp + o.w_1, d, 4 * d).noalias() += L.c.transpose() * du;
    const RowMatrixF dc = du * CMapM(p + o.w_1, d, 4 * d).transpose();
    RowMatrixF dx1 = dx;
    layer_norm_backward(dc, L.xhat2, L.rstd2, CMapV(p + o.ln2_g, d), MapV(gp + o.ln2_g, d), MapV(gp + o.ln2_b, d), dx1);

    // Attention block: x1 = x_in + attn(LN1(x_in)) Wo + bo.
    MapV(gp + o.b_o, d) += dx1.colwise().sum();
    MapM(gp + o.w_o, d, d).noalias() += L.o.transpose() * dx1;
    const RowMatrixF dO = dx1 * CMapM(p + o.w_o, d, d).transpose();
    RowMatrixF dqkv(T, 3 * d);
    for (Eigen::Index h = 0; h < H; ++h) {
      auto Q = L.qkv.middleCols(h * dh, dh);
      auto K = L.qkv.middleCols(d + h * dh, dh);
      auto Vh = L.qkv.middleCols(2 * d + h * dh, dh);
      const RowMatrixF& Pr = L.probs[static_cast<std::size_t>(h)];
      const auto dOh = dO.middleCols(h * dh, dh);
      RowMatrixF dPr = dOh * Vh.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = Pr.transpose() * dOh;
      for (Eigen::Index i = 0; i < T; ++i) {
        const float s = Pr.row(i).dot(dPr.row(i));
        dPr.row(i) = (Pr.row(i).array() * (dPr.row(i).array() - s)).matrix() * scale;
      }
      dqkv.middleCols(h * dh, dh).noalias() = dPr * K;
      dqkv.middleCols(d + h * dh, dh).noalias() = dPr.transpose() * Q;
    }
    MapV(gp + o.b_qkv, 3 * d) += dqkv.colwise().sum();
    MapM(gp + o.w_qkv, d, 3 * d).noalias() += L.a.transpose() * dqkv;
    const RowMatrixF da = dqkv * CMapM(p + o.w_qkv, d, 3 * d).transpose();
    dx = dx1;
    layer_norm_backward(da, L.xhat1, L.rstd1, CMapV(p + o.ln1_g, d), MapV(gp + o.ln1_g, d), MapV(gp + o.ln1_b, d), dx);
  }

  for (Eigen::Index t = 0; t < T; ++t) {
    dE.row(ex.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    dP.row(t) += dx.row(t);
  }
  return loss;
}

DecoderState TinyDecoder::start(std::span<const int> prompt) const {
  check_tokens(prompt);
  Forward f;
  forward(prompt, f);
  const Eigen::Index d = cfg_.d_model;
  auto cache = std::make_shared<PromptCache>();
  cache->length = static_cast<int>(prompt.size());
  for (const auto& L : f.layers) {
    cache->keys.emplace_back(L.qkv.middleCols(d, d));
    cache->values.emplace_back(L.qkv.middleCols(2 * d, d));
  }
  DecoderState s;
  s.prompt = std::move(cache);
  s.keys.assign(layers_.size(), RowMatrixF(0, d));
  s.values.assign(layers_.size(), RowMatrixF(0, d));
  s.length = static_cast<int>(prompt.size());
  const CMapM E(params_.data() + tok_emb_, cfg_.vocab, d);
  s.logits = E * f.z.row(f.z.rows() - 1).transpose();
  return s;
}

void TinyDecoder::step(DecoderState& s, int token) const {
  if (token < 0 || token >= cfg_.vocab) throw Error("decoder: token id out of range");
  if (s.length >= cfg_.max_seq) throw Error("decoder: sequence exceeds max_seq during decoding");
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index H = cfg_.n_heads;
  const Eigen::Index dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const float* p = params_.data();
  const CMapM E(p + tok_emb_, cfg_.vocab, d);
  const CMapM P(p + pos_emb_, cfg_.max_seq, d);

  RowMatrixF x = E.row(token) + P.row(s.length);
  RowMatrixF xhat, a, c;
  Eigen::VectorXf rstd;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& o = layers_[l];
    layer_norm(x, CMapV(p + o.ln1_g, d), CMapV(p + o.ln1_b, d), xhat, rstd, a);
    RowMatrixF qkv = a * CMapM(p + o.w_qkv, d, 3 * d);
    qkv.rowwise() += CMapV(p + o.b_qkv, 3 * d);
    auto& K = s.keys[l];
    auto& V = s.values[l];
    K.conservativeResize(K.rows() + 1, d);
    V.conservativeResize(V.rows() + 1, d);
    K.row(K.rows() - 1) = qkv.middleCols(d, d);
    V.row(V.rows() - 1) = qkv.middleCols(2 * d, d);
    const auto& PK = s.prompt->keys[l];
    const auto& PV = s.prompt->values[l];
    const Eigen::Index np = PK.rows();
    const Eigen::Index ns = K.rows();
    RowMatrixF out(1, d);
    for (Eigen::Index h = 0; h < H; ++h) {
      const auto q = qkv.middleCols(h * dh, dh);
      Eigen::RowVectorXf sc(np + ns);
      sc.head(np).noalias() = (q * PK.middleCols(h * dh, dh).transpose()) * scale;
      sc.tail(ns).noalias() = (q * K.middleCols(h * dh, dh).transpose()) * scale;
      const float m = sc.maxCoeff();
      sc = (sc.array() - m).exp();
      sc /= sc.sum();
      out.middleCols(h * dh, dh).noalias() = sc.head(np) * PV.middleCols(h * dh, dh);
      out.middleCols(h * dh, dh).noalias() += sc.tail(ns) * V.middleCols(h * dh, dh);
    }
    x.noalias() += out * CMapM(p + o.w_o, d, d);
    x += CMapV(p + o.b_o, d);
    layer_norm(x, CMapV(p + o.ln2_g, d), CMapV(p + o.ln2_b, d), xhat, rstd, c);
    RowMatrixF u = c * CMapM(p + o.w_1, d, 4 * d);
    u += CMapV(p + o.b_1, 4 * d);
    const RowMatrixF g = u.unaryExpr([](float v) { return gelu(v); });
    x.noalias() += g * CMapM(p + o.w_2, 4 * d, d);
    x += CMapV(p + o.b_2, d);
  }
  RowMatrixF z;
  layer_norm(x, CMapV(p + lnf_g_, d), CMapV(p + lnf_b_, d), xhat, rstd, z);
  s.logits = E * z.transpose();
  ++s.length;
}

namespace {

constexpr char kMagic[4] = {'G', 'S', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated model checkpoint");
  return v;
}

}  // namespace

void TinyDecoder::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.vocab));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.d_model));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.n_layers));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.n_heads));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.max_seq));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(stage_));
  out.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(params_.size() * sizeof(float)));
}

TinyDecoder TinyDecoder::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing artifact: " + path.filename().string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error("model checkpoint magic mismatch");
  if (get<std::uint32_t>(in) != kVersion) throw Error("unsupported model checkpoint version");
  DecoderConfig cfg;
  cfg.vocab = static_cast<int>(get<std::uint32_t>(in));
  cfg.d_model = static_cast<int>(get<std::uint32_t>(in));
  cfg.n_layers = static_cast<int>(get<std::uint32_t>(in));
  cfg.n_heads = static_cast<int>(get<std::uint32_t>(in));
  cfg.max_seq = static_cast<int>(get<std::uint32_t>(in));
  const auto stage = get<std::uint8_t>(in);
  if (stage > 2) throw Error("model checkpoint has unknown stage");
  TinyDecoder m(cfg);
  m.stage_ = static_cast<Stage>(stage);
  if (!in.read(reinterpret_cast<char*>(m.params_.data()), static_cast<std::streamsize>(m.params_.size() * sizeof(float))))
    throw Error("truncated model checkpoint");
  if (in.peek() != std::char_traits<char>::eof()) throw Error("model checkpoint has trailing bytes");
  return m;
}

bool TinyDecoder::operator==(const TinyDecoder& o) const {
  return cfg_.vocab == o.cfg_.vocab && cfg_.d_model == o.cfg_.d_model && cfg_.n_layers == o.cfg_.n_layers &&
         cfg_.n_heads == o.cfg_.n_heads && cfg_.max_seq == o.cfg_.max_seq && stage_ == o.stage_ &&
         params_ == o.params_;
}

}  // namespace geosid
