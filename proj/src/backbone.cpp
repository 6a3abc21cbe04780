#include "streamid/backbone.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "streamid/kernels.hpp"

namespace streamid {

using nlohmann::json;
namespace ker = streamid::kernels;

void BackboneConfig::validate() const {
  if (in_channels < 1 || input_len < 4 || head_hidden < 1 || embedding_dim < 1) {
    throw std::runtime_error("backbone config: bad dimensions");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::runtime_error("backbone config: kernel_size must be odd");
  }
  if (block_channels.empty()) {
    throw std::runtime_error("backbone config: block_channels empty");
  }
  for (std::size_t i = 1; i < block_channels.size(); ++i) {
    if (block_channels[i] <= block_channels[i - 1]) {
      throw std::runtime_error(
          "backbone config: block_channels must be strictly increasing");
    }
  }
  if (convs_per_block < 1) {
    throw std::runtime_error("backbone config: convs_per_block must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::runtime_error("backbone config: dropout must be in [0,1)");
  }
  int len = input_len;
  for (std::size_t i = 0; i + 1 < block_channels.size(); ++i) len /= 2;
  if (len < 1) {
    throw std::runtime_error("backbone config: input_len too short for pooling");
  }
}

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct ConvParams {
  int cin = 0, cout = 0, k = 0;
  std::vector<double> w, b, dw, db;
};

struct BnParams {
  int ch = 0;
  std::vector<double> gamma, beta, dgamma, dbeta;
  std::vector<double> running_mean, running_var;
  std::vector<double> batch_mean, batch_var;  // last training forward
};

struct DenseParams {
  int in = 0, out = 0;
  std::vector<double> w, b, dw, db;
};

enum class OpKind { kConv, kRelu, kBn, kMaxPool, kGap, kDense, kDropout };

struct Op {
  OpKind kind;
  int idx = -1;           // index into the conv/bn/dense arrays
  int ch_in = 0, ch_out = 0;
  int len_in = 0, len_out = 0;  // 1 for flat vectors after GAP
  std::vector<double> out;      // activation after this op
  std::vector<double> dx;       // gradient w.r.t. this op's input
  std::vector<int> argmax;      // maxpool
  std::vector<double> xhat;     // batch norm
  std::vector<double> mask;     // dropout
};

}  // namespace

struct EmbeddingModel::Impl {
  std::vector<ConvParams> convs;
  std::vector<BnParams> bns;
  std::vector<DenseParams> denses;
  std::vector<Op> ops;
  std::vector<double> input;  // cached model input (training backward)
  int last_batch = 0;
  bool last_training = false;
};

namespace {

void build_ops(const BackboneConfig& cfg, EmbeddingModel::Impl& im) {
  int ch = cfg.in_channels;
  int len = cfg.input_len;
  const int n_blocks = static_cast<int>(cfg.block_channels.size());
  for (int blk = 0; blk < n_blocks; ++blk) {
    const int out_ch = cfg.block_channels[static_cast<std::size_t>(blk)];
    for (int c = 0; c < cfg.convs_per_block; ++c) {
      ConvParams conv;
      conv.cin = c == 0 ? ch : out_ch;
      conv.cout = out_ch;
      conv.k = cfg.kernel_size;
      im.convs.push_back(std::move(conv));
      Op op;
      op.kind = OpKind::kConv;
      op.idx = static_cast<int>(im.convs.size()) - 1;
      op.ch_in = c == 0 ? ch : out_ch;
      op.ch_out = out_ch;
      op.len_in = len;
      op.len_out = len;
      im.ops.push_back(std::move(op));

      BnParams bn;
      bn.ch = out_ch;
      im.bns.push_back(std::move(bn));
      const int bn_idx = static_cast<int>(im.bns.size()) - 1;
      Op relu{OpKind::kRelu, -1, out_ch, out_ch, len, len};
      Op bnop{OpKind::kBn, bn_idx, out_ch, out_ch, len, len};
      if (cfg.bn_order == BnOrder::kConvReluBn) {
        im.ops.push_back(std::move(relu));
        im.ops.push_back(std::move(bnop));
      } else {
        im.ops.push_back(std::move(bnop));
        im.ops.push_back(std::move(relu));
      }
    }
    ch = out_ch;
    if (blk + 1 < n_blocks) {
      Op pool{OpKind::kMaxPool, -1, ch, ch, len, len / 2};
      im.ops.push_back(std::move(pool));
      len /= 2;
    } else {
      Op gap{OpKind::kGap, -1, ch, ch, len, 1};
      im.ops.push_back(std::move(gap));
      len = 1;
    }
  }
  // head: hidden + ReLU (+ dropout), then the linear embedding map
  {
    DenseParams d;
    d.in = ch;
    d.out = cfg.head_hidden;
    im.denses.push_back(std::move(d));
    Op op{OpKind::kDense, 0, ch, cfg.head_hidden, 1, 1};
    im.ops.push_back(std::move(op));
    Op relu{OpKind::kRelu, -1, cfg.head_hidden, cfg.head_hidden, 1, 1};
    im.ops.push_back(std::move(relu));
    if (cfg.dropout > 0.0) {
      Op drop{OpKind::kDropout, -1, cfg.head_hidden, cfg.head_hidden, 1, 1};
      im.ops.push_back(std::move(drop));
    }
    DenseParams d2;
    d2.in = cfg.head_hidden;
    d2.out = cfg.embedding_dim;
    im.denses.push_back(std::move(d2));
    Op op2{OpKind::kDense, 1, cfg.head_hidden, cfg.embedding_dim, 1, 1};
    im.ops.push_back(std::move(op2));
  }
}

void init_params(EmbeddingModel::Impl& im, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& c : im.convs) {
    const std::size_t wn = static_cast<std::size_t>(c.cout) * c.cin * c.k;
    c.w.resize(wn);
    const double scale = std::sqrt(2.0 / (static_cast<double>(c.cin) * c.k));
    for (auto& v : c.w) v = scale * rng.normal();
    c.b.assign(static_cast<std::size_t>(c.cout), 0.0);
    c.dw.assign(wn, 0.0);
    c.db.assign(static_cast<std::size_t>(c.cout), 0.0);
  }
  for (auto& bn : im.bns) {
    const auto n = static_cast<std::size_t>(bn.ch);
    bn.gamma.assign(n, 1.0);
    bn.beta.assign(n, 0.0);
    bn.dgamma.assign(n, 0.0);
    bn.dbeta.assign(n, 0.0);
    bn.running_mean.assign(n, 0.0);
    bn.running_var.assign(n, 1.0);
    bn.batch_mean.assign(n, 0.0);
    bn.batch_var.assign(n, 0.0);
  }
  for (auto& d : im.denses) {
    const std::size_t wn = static_cast<std::size_t>(d.out) * d.in;
    d.w.resize(wn);
    const double scale = std::sqrt(2.0 / static_cast<double>(d.in));
    for (auto& v : d.w) v = scale * rng.normal();
    d.b.assign(static_cast<std::size_t>(d.out), 0.0);
    d.dw.assign(wn, 0.0);
    d.db.assign(static_cast<std::size_t>(d.out), 0.0);
  }
}

}  // namespace

EmbeddingModel::EmbeddingModel(BackboneConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  build_ops(cfg_, *impl_);
  init_params(*impl_, init_seed);
}

EmbeddingModel::~EmbeddingModel() = default;
EmbeddingModel::EmbeddingModel(EmbeddingModel&&) noexcept = default;
EmbeddingModel& EmbeddingModel::operator=(EmbeddingModel&&) noexcept = default;

std::size_t EmbeddingModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : impl_->convs) n += c.w.size() + c.b.size();
  for (const auto& bn : impl_->bns) n += bn.gamma.size() + bn.beta.size();
  for (const auto& d : impl_->denses) n += d.w.size() + d.b.size();
  return n;
}

std::vector<ParamView> EmbeddingModel::parameters() {
  std::vector<ParamView> views;
  for (std::size_t i = 0; i < impl_->convs.size(); ++i) {
    auto& c = impl_->convs[i];
    const std::string base = "conv" + std::to_string(i);
    views.push_back({base + ".weight", c.w.data(), c.dw.data(), c.w.size()});
    views.push_back({base + ".bias", c.b.data(), c.db.data(), c.b.size()});
  }
  for (std::size_t i = 0; i < impl_->bns.size(); ++i) {
    auto& bn = impl_->bns[i];
    const std::string base = "bn" + std::to_string(i);
    views.push_back(
        {base + ".gamma", bn.gamma.data(), bn.dgamma.data(), bn.gamma.size()});
    views.push_back(
        {base + ".beta", bn.beta.data(), bn.dbeta.data(), bn.beta.size()});
  }
  for (std::size_t i = 0; i < impl_->denses.size(); ++i) {
    auto& d = impl_->denses[i];
    const std::string base = "dense" + std::to_string(i);
    views.push_back({base + ".weight", d.w.data(), d.dw.data(), d.w.size()});
    views.push_back({base + ".bias", d.b.data(), d.db.data(), d.b.size()});
  }
  return views;
}

std::vector<ParamView> EmbeddingModel::running_stats() {
  std::vector<ParamView> views;
  for (std::size_t i = 0; i < impl_->bns.size(); ++i) {
    auto& bn = impl_->bns[i];
    const std::string base = "bn" + std::to_string(i);
    views.push_back({base + ".running_mean", bn.running_mean.data(), nullptr,
                     bn.running_mean.size()});
    views.push_back({base + ".running_var", bn.running_var.data(), nullptr,
                     bn.running_var.size()});
  }
  return views;
}

void EmbeddingModel::zero_grad() {
  for (auto& c : impl_->convs) {
    std::fill(c.dw.begin(), c.dw.end(), 0.0);
    std::fill(c.db.begin(), c.db.end(), 0.0);
  }
  for (auto& bn : impl_->bns) {
    std::fill(bn.dgamma.begin(), bn.dgamma.end(), 0.0);
    std::fill(bn.dbeta.begin(), bn.dbeta.end(), 0.0);
  }
  for (auto& d : impl_->denses) {
    std::fill(d.dw.begin(), d.dw.end(), 0.0);
    std::fill(d.db.begin(), d.db.end(), 0.0);
  }
}

std::vector<double> EmbeddingModel::forward(const std::vector<double>& x,
                                            int batch, bool training,
                                            Rng* dropout_rng) {
  const std::size_t expected =
      static_cast<std::size_t>(batch) * cfg_.in_channels * cfg_.input_len;
  if (x.size() != expected) {
    throw std::runtime_error("forward: input shape mismatch");
  }
  for (const double v : x) {
    if (!std::isfinite(v)) throw std::runtime_error("forward: non-finite input");
  }
  auto& im = *impl_;
  im.input = x;
  im.last_batch = batch;
  im.last_training = training;

  const std::vector<double>* cur = &im.input;
  for (auto& op : im.ops) {
    const auto out_n = static_cast<std::size_t>(batch) * op.ch_out * op.len_out;
    op.out.resize(out_n);
    switch (op.kind) {
      case OpKind::kConv: {
        auto& c = im.convs[static_cast<std::size_t>(op.idx)];
        ker::conv1d_forward(cur->data(), c.w.data(), c.b.data(), op.out.data(),
                            batch, c.cin, c.cout, op.len_in, c.k);
        break;
      }
      case OpKind::kRelu:
        ker::relu_forward(cur->data(), op.out.data(), out_n);
        break;
      case OpKind::kBn: {
        auto& bn = im.bns[static_cast<std::size_t>(op.idx)];
        if (training) {
          ker::bn_stats(cur->data(), batch, bn.ch, op.len_in,
                        bn.batch_mean.data(), bn.batch_var.data());
          for (int c = 0; c < bn.ch; ++c) {
            bn.running_mean[static_cast<std::size_t>(c)] =
                (1.0 - kBnMomentum) * bn.running_mean[static_cast<std::size_t>(c)] +
                kBnMomentum * bn.batch_mean[static_cast<std::size_t>(c)];
            bn.running_var[static_cast<std::size_t>(c)] =
                (1.0 - kBnMomentum) * bn.running_var[static_cast<std::size_t>(c)] +
                kBnMomentum * bn.batch_var[static_cast<std::size_t>(c)];
          }
          op.xhat.resize(out_n);
          ker::bn_apply(cur->data(), op.out.data(), op.xhat.data(),
                        bn.batch_mean.data(), bn.batch_var.data(),
                        bn.gamma.data(), bn.beta.data(), kBnEps, batch, bn.ch,
                        op.len_in);
        } else {
          ker::bn_apply(cur->data(), op.out.data(), nullptr,
                        bn.running_mean.data(), bn.running_var.data(),
                        bn.gamma.data(), bn.beta.data(), kBnEps, batch, bn.ch,
                        op.len_in);
        }
        break;
      }
      case OpKind::kMaxPool:
        op.argmax.resize(out_n);
        ker::maxpool2_forward(cur->data(), op.out.data(), op.argmax.data(),
                              batch, op.ch_in, op.len_in);
        break;
      case OpKind::kGap:
        ker::global_avgpool_forward(cur->data(), op.out.data(), batch, op.ch_in,
                                    op.len_in);
        break;
      case OpKind::kDense: {
        auto& d = im.denses[static_cast<std::size_t>(op.idx)];
        ker::dense_forward(cur->data(), d.w.data(), d.b.data(), op.out.data(),
                           batch, d.in, d.out);
        break;
      }
      case OpKind::kDropout: {
        op.mask.resize(out_n);
        if (training) {
          if (dropout_rng == nullptr) {
            throw std::runtime_error("dropout requires an rng in training mode");
          }
          const double p = cfg_.dropout;
          const double keep_scale = 1.0 / (1.0 - p);
          for (std::size_t i = 0; i < out_n; ++i) {
            op.mask[i] = dropout_rng->uniform() >= p ? keep_scale : 0.0;
            op.out[i] = (*cur)[i] * op.mask[i];
          }
        } else {
          for (std::size_t i = 0; i < out_n; ++i) op.out[i] = (*cur)[i];
        }
        break;
      }
    }
    cur = &op.out;
  }
  return *cur;
}

void EmbeddingModel::backward(const std::vector<double>& d_embedding) {
  auto& im = *impl_;
  if (!im.last_training) {
    throw std::runtime_error("backward requires a training-mode forward");
  }
  const int batch = im.last_batch;
  const std::vector<double>* dcur = &d_embedding;
  for (std::size_t oi = im.ops.size(); oi-- > 0;) {
    auto& op = im.ops[oi];
    const std::vector<double>& input =
        oi == 0 ? im.input : im.ops[oi - 1].out;
    const auto in_n = static_cast<std::size_t>(batch) * op.ch_in * op.len_in;
    op.dx.resize(in_n);
    switch (op.kind) {
      case OpKind::kConv: {
        auto& c = im.convs[static_cast<std::size_t>(op.idx)];
        ker::conv1d_backward_params(dcur->data(), input.data(), c.dw.data(),
                                    c.db.data(), batch, c.cin, c.cout,
                                    op.len_in, c.k);
        ker::conv1d_backward_data(dcur->data(), c.w.data(), op.dx.data(), batch,
                                  c.cin, c.cout, op.len_in, c.k);
        break;
      }
      case OpKind::kRelu:
        ker::relu_backward(dcur->data(), op.out.data(), op.dx.data(), in_n);
        break;
      case OpKind::kBn: {
        auto& bn = im.bns[static_cast<std::size_t>(op.idx)];
        ker::bn_backward(dcur->data(), op.xhat.data(), bn.gamma.data(),
                         bn.batch_var.data(), kBnEps, op.dx.data(),
                         bn.dgamma.data(), bn.dbeta.data(), batch, bn.ch,
                         op.len_in);
        break;
      }
      case OpKind::kMaxPool:
        ker::maxpool2_backward(dcur->data(), op.argmax.data(), op.dx.data(),
                               batch, op.ch_in, op.len_in);
        break;
      case OpKind::kGap:
        ker::global_avgpool_backward(dcur->data(), op.dx.data(), batch,
                                     op.ch_in, op.len_in);
        break;
      case OpKind::kDense: {
        auto& d = im.denses[static_cast<std::size_t>(op.idx)];
        ker::dense_backward_params(dcur->data(), input.data(), d.dw.data(),
                                   d.db.data(), batch, d.in, d.out);
        ker::dense_backward_data(dcur->data(), d.w.data(), op.dx.data(), batch,
                                 d.in, d.out);
        break;
      }
      case OpKind::kDropout:
        for (std::size_t i = 0; i < in_n; ++i) {
          op.dx[i] = (*dcur)[i] * op.mask[i];
        }
        break;
    }
    dcur = &op.dx;
  }
}

namespace {

json config_to_json(const BackboneConfig& c) {
  json j;
  j["in_channels"] = c.in_channels;
  j["input_len"] = c.input_len;
  j["block_channels"] = c.block_channels;
  j["kernel_size"] = c.kernel_size;
  j["convs_per_block"] = c.convs_per_block;
  j["head_hidden"] = c.head_hidden;
  j["embedding_dim"] = c.embedding_dim;
  j["bn_order"] =
      c.bn_order == BnOrder::kConvReluBn ? "conv_relu_bn" : "conv_bn_relu";
  j["dropout"] = c.dropout;
  return j;
}

}  // namespace

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig c;
  c.in_channels = j.value("in_channels", 2);
  c.input_len = j.value("input_len", 240);
  if (j.contains("block_channels")) {
    c.block_channels = j.at("block_channels").get<std::vector<int>>();
  }
  c.kernel_size = j.value("kernel_size", 7);
  c.convs_per_block = j.value("convs_per_block", 2);
  c.head_hidden = j.value("head_hidden", 1024);
  c.embedding_dim = j.value("embedding_dim", 1024);
  const std::string order = j.value("bn_order", "conv_relu_bn");
  if (order == "conv_relu_bn") {
    c.bn_order = BnOrder::kConvReluBn;
  } else if (order == "conv_bn_relu") {
    c.bn_order = BnOrder::kConvBnRelu;
  } else {
    throw std::runtime_error("bad bn_order: " + order);
  }
  c.dropout = j.value("dropout", 0.0);
  c.validate();
  return c;
}

void EmbeddingModel::save(const std::string& path) const {
  json j;
  j["format"] = "streamid-checkpoint/1";
  j["config"] = config_to_json(cfg_);
  json params = json::object();
  auto* self = const_cast<EmbeddingModel*>(this);
  for (const auto& v : self->parameters()) {
    params[v.name] = std::vector<double>(v.value, v.value + v.size);
  }
  j["parameters"] = std::move(params);
  json running = json::object();
  for (const auto& v : self->running_stats()) {
    running[v.name] = std::vector<double>(v.value, v.value + v.size);
  }
  j["running_stats"] = std::move(running);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << j.dump() << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

EmbeddingModel EmbeddingModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid checkpoint: " + e.what());
  }
  if (j.value("format", "") != "streamid-checkpoint/1") {
    throw std::runtime_error(path + ": incompatible artifacts: not a checkpoint");
  }
  const BackboneConfig cfg = backbone_config_from_json(j.at("config"));
  EmbeddingModel model(cfg, 0);
  const auto& params = j.at("parameters");
  for (auto& v : model.parameters()) {
    if (!params.contains(v.name)) {
      throw std::runtime_error(path + ": incompatible artifacts: missing " + v.name);
    }
    const auto arr = params.at(v.name).get<std::vector<double>>();
    if (arr.size() != v.size) {
      throw std::runtime_error(path + ": incompatible artifacts: size mismatch for " +
                               v.name);
    }
    std::copy(arr.begin(), arr.end(), v.value);
  }
  const auto& running = j.at("running_stats");
  for (auto& v : model.running_stats()) {
    if (!running.contains(v.name)) {
      throw std::runtime_error(path + ": incompatible artifacts: missing " + v.name);
    }
    const auto arr = running.at(v.name).get<std::vector<double>>();
    if (arr.size() != v.size) {
      throw std::runtime_error(path + ": incompatible artifacts: size mismatch for " +
                               v.name);
    }
    std::copy(arr.begin(), arr.end(), v.value);
  }
  return model;
}

double embedding_shift_distance(EmbeddingModel& model,
                                const std::vector<double>& features,
                                int shift) {
  const auto& cfg = model.config();
  const int len = cfg.input_len;
  const int ch = cfg.in_channels;
  if (features.size() != static_cast<std::size_t>(ch) * len) {
    throw std::runtime_error("shift distance: feature shape mismatch");
  }
  const int s = ((shift % len) + len) % len;
  std::vector<double> batch(2 * features.size());
  std::copy(features.begin(), features.end(), batch.begin());
  for (int c = 0; c < ch; ++c) {
    const double* src = features.data() + static_cast<std::size_t>(c) * len;
    double* dst = batch.data() + features.size() + static_cast<std::size_t>(c) * len;
    for (int t = 0; t < len; ++t) dst[(t + s) % len] = src[t];
  }
  const auto emb = model.forward(batch, 2, false);
  const int dim = cfg.embedding_dim;
  double acc = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double diff = emb[static_cast<std::size_t>(d)] -
                        emb[static_cast<std::size_t>(dim + d)];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

std::vector<double> shift_sensitivity(EmbeddingModel& model,
                                      const std::vector<double>& features,
                                      int max_shift_buckets) {
  if (max_shift_buckets >= model.config().input_len) {
    throw std::runtime_error("max_shift_buckets must be < input_len");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max(0, max_shift_buckets)));
  for (int s = 1; s <= max_shift_buckets; ++s) {
    out.push_back(embedding_shift_distance(model, features, s));
  }
  return out;
}

}  // namespace streamid
